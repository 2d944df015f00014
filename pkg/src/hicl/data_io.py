"""File formats, synthetic task streams, and model-state persistence.

Embedding file layout (little-endian, no padding)::

    magic   4 bytes  b"HIDE"
    version u16      currently 1
    dim     u32      feature dimension
    count   u32      number of samples
    classes u32      number of distinct class ids (ids must be < classes)
    records count x { class_id u32, task_id u32, dim x f32 }

Features are f32 on disk and widened to f64 in memory. Parsers reject bad
magic, truncation, count mismatches, and trailing bytes, reporting the
byte offset of the first inconsistency.

Model-state files carry a magic/version header, a canonical JSON manifest,
and raw f64/i64 array payloads; loading a state reproduces bit-identical
predictions. Backbone weights are not stored: they are regenerated from
the recorded seed and configuration, which is exact by construction.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .evaluation import check_scenario
from .validation import as_matrix

EMBED_MAGIC = b"HIDE"
EMBED_VERSION = 1
STATE_MAGIC = b"HCST"
STATE_VERSION = 1


@dataclass
class EmbeddingDataset:
    X: np.ndarray            # (n, dim) float64
    class_ids: np.ndarray    # (n,) int64
    task_ids: np.ndarray     # (n,) int64
    class_count: int

    def __eq__(self, other):
        return (isinstance(other, EmbeddingDataset)
                and self.class_count == other.class_count
                and np.array_equal(self.X, other.X)
                and np.array_equal(self.class_ids, other.class_ids)
                and np.array_equal(self.task_ids, other.task_ids))


def write_embeddings(path: str, X, class_ids, task_ids,
                     class_count: int | None = None) -> None:
    X = as_matrix(X, "X")
    class_ids = np.asarray(class_ids, dtype=np.uint32)
    task_ids = np.asarray(task_ids, dtype=np.uint32)
    n, dim = X.shape
    if len(class_ids) != n or len(task_ids) != n:
        raise DataError("class_ids and task_ids must match the sample count")
    if class_count is None:
        class_count = int(class_ids.max()) + 1 if n else 0
    if n and int(class_ids.max()) >= class_count:
        raise DataError("class ids must be < class_count")
    rec = np.zeros(n, dtype=_record_dtype(dim))
    rec["class_id"] = class_ids
    rec["task_id"] = task_ids
    rec["vec"] = X.astype(np.float32)
    header = EMBED_MAGIC + struct.pack("<HIII", EMBED_VERSION, dim, n,
                                       class_count)
    _atomic_write(path, header + rec.tobytes())


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("class_id", "<u4"), ("task_id", "<u4"),
                     ("vec", "<f4", (dim,))])


def load_embeddings(path: str) -> EmbeddingDataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != EMBED_MAGIC:
        raise FormatError(f"bad magic, expected {EMBED_MAGIC!r}", offset=0)
    if len(data) < 18:
        raise FormatError("truncated header", offset=len(data))
    version, dim, count, classes = struct.unpack_from("<HIII", data, 4)
    if version != EMBED_VERSION:
        raise FormatError(f"unsupported embedding file version {version}",
                          offset=4)
    if dim < 1:
        raise FormatError("dim must be >= 1", offset=6)
    expected = 18 + count * (8 + 4 * dim)
    if len(data) < expected:
        raise FormatError(
            f"truncated payload: need {expected} bytes, have {len(data)}",
            offset=len(data))
    if len(data) > expected:
        raise FormatError("trailing bytes after declared payload",
                          offset=expected)
    rec = np.frombuffer(data, dtype=_record_dtype(dim), count=count, offset=18)
    class_ids = rec["class_id"].astype(np.int64)
    if count and int(class_ids.max()) >= classes:
        bad = int(np.argmax(class_ids >= classes))
        raise FormatError(
            f"class id {int(class_ids[bad])} >= declared class count {classes}",
            offset=18 + bad * (8 + 4 * dim))
    return EmbeddingDataset(X=rec["vec"].astype(np.float64),
                            class_ids=class_ids,
                            task_ids=rec["task_id"].astype(np.int64),
                            class_count=int(classes))


# ---------------------------------------------------------------------------
# task streams


@dataclass
class Task:
    task_id: int
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    label_set: tuple[int, ...]
    dataset_id: int = 0


@dataclass
class TaskStream:
    scenario: str
    tasks: list[Task]

    def __post_init__(self):
        if not self.tasks:
            raise DataError("a task stream needs at least one task")
        check_scenario(self.scenario, [t.label_set for t in self.tasks])

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def test_sets(self, up_to: int | None = None):
        """(X, y, task_index) triples for tasks 0..up_to inclusive."""
        upper = self.num_tasks if up_to is None else up_to + 1
        return [(t.test_x, t.test_y, i)
                for i, t in enumerate(self.tasks[:upper])]


def stream_to_datasets(stream: TaskStream
                       ) -> tuple[EmbeddingDataset, EmbeddingDataset]:
    """Flatten a stream into (train, test) datasets with task-id records."""
    def build(xs, ys, ts):
        X = np.concatenate(xs)
        y = np.concatenate(ys)
        t = np.concatenate(ts)
        return EmbeddingDataset(X, y.astype(np.int64), t.astype(np.int64),
                                int(y.max()) + 1)
    train = build([t.train_x for t in stream.tasks],
                  [t.train_y for t in stream.tasks],
                  [np.full(len(t.train_y), t.task_id) for t in stream.tasks])
    test = build([t.test_x for t in stream.tasks],
                 [t.test_y for t in stream.tasks],
                 [np.full(len(t.test_y), t.task_id) for t in stream.tasks])
    return train, test


def stream_from_datasets(train: EmbeddingDataset, test: EmbeddingDataset,
                         scenario: str) -> TaskStream:
    """Group flat datasets by task id (ascending) into an ordered stream."""
    task_ids = sorted(set(train.task_ids.tolist()))
    if sorted(set(test.task_ids.tolist())) != task_ids:
        raise DataError("train and test files declare different task sets")
    tasks = []
    for tid in task_ids:
        tr = train.task_ids == tid
        te = test.task_ids == tid
        labels = tuple(sorted(set(train.class_ids[tr].tolist())))
        tasks.append(Task(task_id=int(tid),
                          train_x=train.X[tr], train_y=train.class_ids[tr],
                          test_x=test.X[te], test_y=test.class_ids[te],
                          label_set=labels))
    return TaskStream(scenario=scenario, tasks=tasks)


def save_stream(stream: TaskStream, train_path: str, test_path: str) -> None:
    train, test = stream_to_datasets(stream)
    count = max(train.class_count, test.class_count)
    write_embeddings(train_path, train.X, train.class_ids, train.task_ids, count)
    write_embeddings(test_path, test.X, test.class_ids, test.task_ids, count)


def load_stream(train_path: str, test_path: str, scenario: str) -> TaskStream:
    return stream_from_datasets(load_embeddings(train_path),
                                load_embeddings(test_path), scenario)


# ---------------------------------------------------------------------------
# synthetic streams


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic Gaussian-cluster task stream.

    Per class a unit-variance Gaussian cluster is placed so that class
    means are pairwise at least ``separation`` apart; samples are split
    80/20 into train/test deterministically. ``distractor_dim`` appends
    pure-noise coordinates with scale ``distractor_sigma`` that carry no
    class signal (useful for studying shared-adapter transfer).
    """

    tasks: int = 10
    classes_per_task: int = 2
    dim: int = 64
    samples_per_class: int = 50
    separation: float = 4.0
    scenario: str = "cil"
    distractor_dim: int = 0
    distractor_sigma: float = 3.0

    def __post_init__(self):
        for name in ("tasks", "classes_per_task", "dim", "samples_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.separation < 0 or self.distractor_dim < 0:
            raise ConfigError("separation and distractor_dim must be >= 0")
        if self.scenario not in ("cil", "dil", "til"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")

    @property
    def input_dim(self) -> int:
        return self.dim + self.distractor_dim


def _min_pairwise(points: np.ndarray) -> float:
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    return float(dist[np.triu_indices(len(points), k=1)].min())


def _rescale_min(points: np.ndarray, target: float) -> np.ndarray:
    if len(points) < 2 or target == 0:
        return points * (0.0 if target == 0 else 1.0)
    return points * (target / _min_pairwise(points))


# inter-task centers sit this many separations apart so each task forms a
# coherent region (as dataset/domain slices do in real streams); a linear
# task-identity stage cannot represent a task whose classes are scattered
# between other tasks' classes
TASK_SPREAD = 2.5


SUBSPACE_DIM = 8


def _stream_geometry(rng: np.random.Generator, dim: int, tasks: int):
    """Two orthogonal low-dimensional subspaces shared by a stream.

    Task centers live in the first (where a stream places its tasks) and
    class offsets in the second (the class-discriminative directions).
    Drawn first from the generator, so an episode generator can replay
    them from the stream seed alone.
    """
    k_center = min(SUBSPACE_DIM, dim, max(tasks, 1))
    k_offset = min(SUBSPACE_DIM, max(dim - k_center, 1))
    q = np.linalg.qr(rng.standard_normal((dim, dim)))[0]
    center_basis = q[:, :k_center]
    if dim > k_center:
        offset_basis = q[:, k_center:k_center + k_offset]
    else:
        offset_basis = q[:, :k_offset]
    return center_basis, offset_basis


def _cluster_means(rng: np.random.Generator, tasks: int, per_task: int,
                   dim: int, separation: float,
                   geometry=None) -> np.ndarray:
    """Class means grouped by task, min pairwise distance == separation.

    Task centers spread ``TASK_SPREAD`` separations apart in the center
    subspace; each task's class means sit around its center one separation
    apart along the shared offset subspace. A final global rescale pins
    the minimum pairwise class-mean distance exactly at ``separation``.
    Returns an array of shape (tasks * per_task, dim), task-major.
    """
    center_basis, offset_basis = geometry or _stream_geometry(rng, dim, tasks)
    centers = rng.standard_normal((tasks, center_basis.shape[1])) @ center_basis.T
    if tasks > 1:
        centers = _rescale_min(centers, TASK_SPREAD * separation)
    means = np.zeros((tasks * per_task, dim))
    for t in range(tasks):
        offsets = rng.standard_normal((per_task, offset_basis.shape[1])) @ offset_basis.T
        offsets -= offsets.mean(axis=0)
        if per_task > 1:
            offsets = _rescale_min(offsets, separation)
        means[t * per_task:(t + 1) * per_task] = centers[t] + offsets
    if tasks * per_task > 1:
        means = _rescale_min(means, separation)
    return means


def _sample_class(rng, mean, n, distractor_dim, distractor_sigma):
    signal = mean + rng.standard_normal((n, mean.size))
    if distractor_dim:
        noise = distractor_sigma * rng.standard_normal((n, distractor_dim))
        return np.concatenate([signal, noise], axis=1)
    return signal


def synth_stream(seed: int, spec: SynthSpec) -> TaskStream:
    """Generate a deterministic synthetic stream for the given spec."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5f]))
    means = _cluster_means(rng, spec.tasks, spec.classes_per_task, spec.dim,
                           spec.separation)
    tasks = []
    n_test = max(1, round(0.2 * spec.samples_per_class))
    n_train = spec.samples_per_class - n_test
    if n_train < 1:
        raise ConfigError("samples_per_class too small for an 80/20 split")
    for t in range(spec.tasks):
        xs_train, ys_train, xs_test, ys_test = [], [], [], []
        for j in range(spec.classes_per_task):
            cluster = t * spec.classes_per_task + j
            label = j if spec.scenario == "dil" else cluster
            samples = _sample_class(rng, means[cluster], spec.samples_per_class,
                                    spec.distractor_dim, spec.distractor_sigma)
            xs_train.append(samples[:n_train])
            ys_train.append(np.full(n_train, label, dtype=np.int64))
            xs_test.append(samples[n_train:])
            ys_test.append(np.full(n_test, label, dtype=np.int64))
        labels = tuple(range(spec.classes_per_task)) if spec.scenario == "dil" \
            else tuple(range(t * spec.classes_per_task,
                             (t + 1) * spec.classes_per_task))
        tasks.append(Task(task_id=t,
                          train_x=np.concatenate(xs_train),
                          train_y=np.concatenate(ys_train),
                          test_x=np.concatenate(xs_test),
                          test_y=np.concatenate(ys_test),
                          label_set=labels))
    return TaskStream(scenario=spec.scenario, tasks=tasks)


def synth_episode(seed: int, spec: SynthSpec, n_way: int, k_shot: int,
                  n_query: int = 15, stream_seed: int | None = None):
    """A few-shot episode over classes unseen in the stream for ``spec``.

    Draws ``n_way`` fresh cluster means as one new task with the same
    generative structure (same dim, separation, distractors). When
    ``stream_seed`` is given the episode's task center is placed in that
    stream's class-mean subspace, so the unseen classes share the stream's
    structure; the class means themselves are new. Returns
    (support_x, support_y, query_x, query_y) with labels 0..n_way-1.
    """
    if n_way < 2 or k_shot < 1:
        raise ConfigError("need n_way >= 2 and k_shot >= 1")
    geometry = None
    if stream_seed is not None:
        stream_rng = np.random.default_rng(
            np.random.SeedSequence([stream_seed, 0x5f]))
        geometry = _stream_geometry(stream_rng, spec.dim, spec.tasks)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE9]))
    means = _cluster_means(rng, 1, n_way, spec.dim, spec.separation,
                           geometry=geometry)
    sx, sy, qx, qy = [], [], [], []
    for c in range(n_way):
        samples = _sample_class(rng, means[c], k_shot + n_query,
                                spec.distractor_dim, spec.distractor_sigma)
        sx.append(samples[:k_shot])
        sy.append(np.full(k_shot, c, dtype=np.int64))
        qx.append(samples[k_shot:])
        qy.append(np.full(n_query, c, dtype=np.int64))
    return (np.concatenate(sx), np.concatenate(sy),
            np.concatenate(qx), np.concatenate(qy))


# ---------------------------------------------------------------------------
# run configuration


_RUN_CONFIG_KEYS = {"seed", "scenario", "paths", "train", "synth", "fewshot"}
_PATH_KEYS = {"train", "test", "state", "metrics"}


@dataclass
class RunConfig:
    """Parsed run configuration (see README for the JSON schema)."""

    seed: int = 0
    scenario: str = "cil"
    paths: dict[str, str] = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    fewshot: dict = field(default_factory=dict)

    def synth_spec(self) -> SynthSpec:
        try:
            return SynthSpec(scenario=self.scenario, **self.synth)
        except TypeError as exc:
            raise ConfigError(f"invalid synth section: {exc}") from exc


def parse_run_config(text: str) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - _RUN_CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    paths = doc.get("paths", {})
    if not isinstance(paths, dict):
        raise ConfigError("'paths' must be an object")
    bad = set(paths) - _PATH_KEYS
    if bad:
        raise ConfigError(f"unknown path keys: {sorted(bad)}")
    cfg = RunConfig(seed=int(doc.get("seed", 0)),
                    scenario=doc.get("scenario", "cil"),
                    paths=dict(paths),
                    train=dict(doc.get("train", {})),
                    synth=dict(doc.get("synth", {})),
                    fewshot=dict(doc.get("fewshot", {})))
    if cfg.scenario not in ("cil", "dil", "til"):
        raise ConfigError(f"unknown scenario {cfg.scenario!r}")
    return cfg


def load_run_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_run_config(fh.read())


# ---------------------------------------------------------------------------
# model-state persistence


def _atomic_write(path: str, payload: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def save_state(state, path: str) -> None:
    """Serialize a trained model state; loading reproduces predictions
    bit-identically."""
    from .engine import ModelState  # deferred to avoid an import cycle

    assert isinstance(state, ModelState)
    arrays: list[tuple[str, np.ndarray]] = []

    def put(name: str, arr: np.ndarray):
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in (np.float64, np.int64):
            arr = arr.astype(np.float64)
        arrays.append((name, arr))

    for k, adapter in enumerate(state.task_adapters):
        for tname in sorted(adapter.tensors):
            put(f"peft.{k}.{tname}", adapter.tensors[tname])
    for ds_id in sorted(state.shared_adapters):
        adapter = state.shared_adapters[ds_id]
        for tname in sorted(adapter.tensors):
            put(f"shared.{ds_id}.{tname}", adapter.tensors[tname])
    probe_meta = {}
    for ds_id in sorted(state.shared_probes):
        probe = state.shared_probes[ds_id]
        probe_meta[str(ds_id)] = [int(c) for c in probe["classes"]]
        put(f"probe.{ds_id}.w", probe["w"])
        put(f"probe.{ds_id}.b", probe["b"])
    put("head.task_w", state.task_head_w)
    put("head.task_b", state.task_head_b)
    put("head.class_w", state.class_head_w)
    put("head.class_b", state.class_head_b)
    stats_meta = {"unadapted": [], "adapted": []}
    for split in ("unadapted", "adapted"):
        store = getattr(state.stats, split)
        for (t, c) in sorted(store):
            st = store[(t, c)]
            stats_meta[split].append([t, c, st.noise_sigma])
            prefix = f"stats.{split[0]}.{t}.{c}"
            put(f"{prefix}.centroids", st.centroids)
            put(f"{prefix}.counts", st.counts.astype(np.int64))
            put(f"{prefix}.mean", st.mean)

    manifest = {
        "format": STATE_VERSION,
        "backbone": {"seed": state.backbone.seed,
                     "config": asdict(state.backbone.config)},
        "peft": {"kind": state.peft_config.kind,
                 "config": asdict(state.peft_config)},
        "scenario": state.scenario,
        "class_order": [int(c) for c in state.class_order],
        "task_label_sets": [[int(c) for c in s] for s in state.task_label_sets],
        "task_datasets": [int(d) for d in state.task_datasets],
        "train_config": state.config_snapshot,
        "stats": stats_meta,
        "shared_probes": probe_meta,
        "arrays": [{"name": n, "shape": list(a.shape), "dtype": a.dtype.str}
                   for n, a in arrays],
    }
    blob = json.dumps(manifest, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    out = [STATE_MAGIC, struct.pack("<HQ", STATE_VERSION, len(blob)), blob]
    out.extend(a.tobytes() for _, a in arrays)
    _atomic_write(path, b"".join(out))


def load_state(path: str):
    from .backbone import BackboneConfig, BackboneSurrogate
    from .engine import ModelState
    from .peft import PeftConfig, PeftParams
    from .stats import ClassStatistics, StatStore

    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != STATE_MAGIC:
        raise FormatError(f"bad magic, expected {STATE_MAGIC!r}", offset=0)
    if len(data) < 14:
        raise FormatError("truncated header", offset=len(data))
    version, json_len = struct.unpack_from("<HQ", data, 4)
    if version > STATE_VERSION:
        raise FormatError(
            f"state file version {version} is newer than supported "
            f"{STATE_VERSION}", offset=4)
    if len(data) < 14 + json_len:
        raise FormatError("truncated manifest", offset=len(data))
    manifest = json.loads(data[14:14 + json_len].decode("utf-8"))

    offset = 14 + json_len
    loaded: dict[str, np.ndarray] = {}
    for meta in manifest["arrays"]:
        dtype = np.dtype(meta["dtype"])
        shape = tuple(meta["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
        if len(data) < offset + nbytes:
            raise FormatError(f"truncated array {meta['name']!r}",
                              offset=len(data))
        loaded[meta["name"]] = np.frombuffer(
            data, dtype=dtype, count=int(np.prod(shape)),
            offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise FormatError("trailing bytes after declared arrays", offset=offset)

    bb_cfg = BackboneConfig(**manifest["backbone"]["config"])
    backbone = BackboneSurrogate(bb_cfg, seed=manifest["backbone"]["seed"])
    peft_cfg = PeftConfig(**manifest["peft"]["config"])

    def gather(prefix: str) -> dict[str, np.ndarray]:
        plen = len(prefix)
        return {n[plen:]: a for n, a in loaded.items() if n.startswith(prefix)}

    adapters = []
    k = 0
    while True:
        tensors = gather(f"peft.{k}.")
        if not tensors:
            break
        adapters.append(PeftParams(peft_cfg.kind, peft_cfg, tensors))
        k += 1
    shared = {}
    for name in loaded:
        if name.startswith("shared."):
            ds_id = int(name.split(".")[1])
            if ds_id not in shared:
                shared[ds_id] = PeftParams(
                    "lora", PeftConfig(kind="lora",
                                       lora_rank=peft_cfg.lora_rank),
                    gather(f"shared.{ds_id}."))
    stats = StatStore()
    for split, add in (("unadapted", stats.add_unadapted),
                       ("adapted", stats.add_adapted)):
        for t, c, sigma in manifest["stats"][split]:
            prefix = f"stats.{split[0]}.{t}.{c}"
            add(int(t), int(c), ClassStatistics(
                centroids=loaded[f"{prefix}.centroids"],
                counts=loaded[f"{prefix}.counts"],
                noise_sigma=float(sigma),
                mean=loaded[f"{prefix}.mean"],
                class_id=int(c), task_id=int(t)))
    probes = {}
    for ds_key, classes in manifest.get("shared_probes", {}).items():
        ds_id = int(ds_key)
        probes[ds_id] = {"w": loaded[f"probe.{ds_id}.w"],
                         "b": loaded[f"probe.{ds_id}.b"],
                         "classes": [int(c) for c in classes]}

    return ModelState(
        backbone=backbone,
        peft_config=peft_cfg,
        task_adapters=adapters,
        shared_adapters=shared,
        shared_probes=probes,
        task_head_w=loaded["head.task_w"],
        task_head_b=loaded["head.task_b"],
        class_head_w=loaded["head.class_w"],
        class_head_b=loaded["head.class_b"],
        stats=stats,
        class_order=[int(c) for c in manifest["class_order"]],
        task_label_sets=[tuple(s) for s in manifest["task_label_sets"]],
        task_datasets=[int(d) for d in manifest["task_datasets"]],
        scenario=manifest["scenario"],
        config_snapshot=manifest["train_config"],
    )

"""Sequential training engine and two-stage inference.

Per task the engine

1. fits unadapted per-class statistics from the frozen backbone,
2. initializes the task's adapter from the previous task's (knowledge
   transfer) or freshly for the first task,
3. for each epoch optimizes, in order: the task adapter plus the current
   task's class-head slice with the within-task loss; the task-identity
   head on pseudo representations sampled from unadapted statistics; the
   full class head on pseudo representations sampled from adapted
   statistics,
4. fits adapted per-class statistics with the final adapter.

Earlier tasks' adapters are never touched. Inference predicts the task
with the task head over the unadapted representation, then the label with
the class head over the representation adapted by the predicted task's
adapter.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from .backbone import BackboneConfig, BackboneSurrogate
from .data_io import Task, TaskStream
from .errors import ConfigError, DataError, ScenarioError, StateError
from .evaluation import AccuracyMatrix, evaluate_scenario
from .numerics import Adam, softmax
from .objectives import CRConfig, _linear_ce, tap_loss, tii_loss, wtp_loss
from .peft import PeftConfig, PeftParams, init_peft
from .stats import StatStore, fit_class_statistics, sample_pseudo
from .theory import ProbTable

# paper-scale training values; the desk-scale defaults below finish in
# minutes on a laptop
PAPER_SCALE = {"epochs": 50, "batch_size": 128, "learning_rate": 0.005}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.005
    peft_kind: str = "lora"
    prompt_len: int = 20
    lora_rank: int = 8
    adapter_dim: int = 8
    kmeans_k: int = 5
    noise_sigma: float | None = None      # None: per-class automatic scale
    pseudo_per_class: int = 64
    head_steps_per_epoch: int = 8
    resample_each_epoch: bool = True
    tap_post_hoc: bool = False
    wtp_global_softmax: bool = False
    cr_temperature: float = 0.8
    cr_weight: float = 0.1
    train_shared_adapter: bool = False
    shared_lora_rank: int = 8
    shared_learning_rate: float | None = None  # None: use learning_rate
    shared_probe_decay: float = 0.0
    seed: int = 0
    backbone_seed: int = 1234
    num_layers: int = 2
    num_tokens: int = 4
    token_dim: int = 16
    ff_dim: int = 32
    output_mode: str = "concat"
    input_dim: int | None = None

    def __post_init__(self):
        for name in ("epochs", "batch_size", "kmeans_k", "pseudo_per_class",
                     "head_steps_per_epoch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        return cls(**{**PAPER_SCALE, **overrides})

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def backbone_config(self, input_dim: int | None = None) -> BackboneConfig:
        return BackboneConfig(num_layers=self.num_layers,
                              num_tokens=self.num_tokens,
                              token_dim=self.token_dim,
                              ff_dim=self.ff_dim,
                              input_dim=input_dim if input_dim is not None
                              else self.input_dim,
                              output_mode=self.output_mode)

    def peft_config(self) -> PeftConfig:
        return PeftConfig(kind=self.peft_kind, prompt_len=self.prompt_len,
                          lora_rank=self.lora_rank,
                          adapter_dim=self.adapter_dim)


@dataclass
class ModelState:
    backbone: BackboneSurrogate
    peft_config: PeftConfig
    task_adapters: list[PeftParams] = field(default_factory=list)
    shared_adapters: dict[int, PeftParams] = field(default_factory=dict)
    # per-dataset probe heads for sequential fine-tuning of shared adapters
    shared_probes: dict[int, dict] = field(default_factory=dict)
    task_head_w: np.ndarray | None = None
    task_head_b: np.ndarray | None = None
    class_head_w: np.ndarray | None = None
    class_head_b: np.ndarray | None = None
    stats: StatStore = field(default_factory=StatStore)
    class_order: list[int] = field(default_factory=list)
    task_label_sets: list[tuple[int, ...]] = field(default_factory=list)
    task_datasets: list[int] = field(default_factory=list)
    scenario: str = "cil"
    config_snapshot: dict = field(default_factory=dict)
    events: list[tuple] = field(default_factory=list)

    def __post_init__(self):
        d = self.backbone.output_dim
        if self.task_head_w is None:
            self.task_head_w = np.zeros((0, d))
            self.task_head_b = np.zeros(0)
        if self.class_head_w is None:
            self.class_head_w = np.zeros((0, d))
            self.class_head_b = np.zeros(0)

    @property
    def num_tasks(self) -> int:
        return len(self.task_adapters)

    @property
    def class_to_row(self) -> dict[int, int]:
        return {c: i for i, c in enumerate(self.class_order)}

    def task_rows(self, task_idx: int) -> list[int]:
        c2r = self.class_to_row
        return [c2r[c] for c in sorted(self.task_label_sets[task_idx])]


@dataclass
class Prediction:
    labels: np.ndarray       # (n,) predicted global class ids
    task_ids: np.ndarray     # (n,) predicted task indices
    task_probs: np.ndarray   # (n, num_tasks)
    class_probs: np.ndarray  # (n, num_classes)


def _seed_int(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def new_state(cfg: TrainConfig, scenario: str = "cil",
              input_dim: int | None = None) -> ModelState:
    backbone = BackboneSurrogate(cfg.backbone_config(input_dim),
                                 seed=cfg.backbone_seed)
    return ModelState(backbone=backbone, peft_config=cfg.peft_config(),
                      scenario=scenario, config_snapshot=cfg.to_dict())


def prepare_task(state: ModelState, task: Task, cfg: TrainConfig) -> int:
    """Pre-epoch half of a task: statistics, head growth, adapter init.

    Unadapted statistics are fitted before the adapter exists, matching
    the training algorithm's line order; the event log records the steps.
    Returns the new task's index.
    """
    t = state.num_tasks
    labels = tuple(sorted(task.label_set))
    if state.scenario in ("cil", "til"):
        collision = set(labels) & set(state.class_order)
        if collision:
            raise ScenarioError(
                f"{state.scenario} forbids reusing classes {sorted(collision)}")
    if len(task.train_y) == 0:
        raise DataError("task has no training data")
    for cls in labels:
        if not np.any(task.train_y == cls):
            raise DataError(f"class {cls} has no training samples")
    bad = set(task.train_y.tolist()) - set(labels)
    if bad:
        raise DataError(f"training labels {sorted(bad)} outside the task's set")

    unadapted = state.backbone.forward(task.train_x)
    for cls in labels:
        reps = unadapted[task.train_y == cls]
        state.stats.add_unadapted(t, cls, fit_class_statistics(
            reps, k=min(cfg.kmeans_k, len(reps)), noise_sigma=cfg.noise_sigma,
            seed=_seed_int(cfg.seed, 1, t, cls), class_id=cls, task_id=t))
    state.events.append(("fit_unadapted", t))

    d = state.backbone.output_dim
    state.task_head_w = np.vstack([state.task_head_w, np.zeros((1, d))])
    state.task_head_b = np.concatenate([state.task_head_b, [0.0]])
    new_classes = [c for c in labels if c not in state.class_to_row]
    if new_classes:
        state.class_head_w = np.vstack(
            [state.class_head_w, np.zeros((len(new_classes), d))])
        state.class_head_b = np.concatenate(
            [state.class_head_b, np.zeros(len(new_classes))])
        state.class_order.extend(new_classes)

    previous = state.task_adapters[-1] if t > 0 else None
    adapter = init_peft(cfg.peft_kind, state.backbone.config.num_layers,
                        state.backbone.config.token_dim, cfg.peft_config(),
                        seed=_seed_int(cfg.seed, 2, t), previous=previous)
    state.task_adapters.append(adapter)
    state.events.append(("init_adapter", t,
                         "copied" if previous is not None else "fresh"))

    if cfg.train_shared_adapter:
        if task.dataset_id not in state.shared_adapters:
            state.shared_adapters[task.dataset_id] = init_peft(
                "lora", state.backbone.config.num_layers,
                state.backbone.config.token_dim,
                PeftConfig(kind="lora", lora_rank=cfg.shared_lora_rank),
                seed=_seed_int(cfg.seed, 3, task.dataset_id))
            state.shared_probes[task.dataset_id] = {
                "w": np.zeros((0, state.backbone.output_dim)),
                "b": np.zeros(0), "classes": []}
        probe = state.shared_probes[task.dataset_id]
        fresh = [c for c in labels if c not in probe["classes"]]
        if fresh:
            probe["w"] = np.vstack(
                [probe["w"],
                 np.zeros((len(fresh), state.backbone.output_dim))])
            probe["b"] = np.concatenate([probe["b"], np.zeros(len(fresh))])
            probe["classes"].extend(fresh)

    state.task_label_sets.append(labels)
    state.task_datasets.append(task.dataset_id)
    return t


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _pseudo_batches(stat_items, per_class: int, seed_parts) -> dict:
    return {(task_id, cls): sample_pseudo(
        st, per_class, seed=_seed_int(*seed_parts, task_id, cls))
        for (task_id, cls), st in stat_items}


def _provisional_adapted_stats(state: ModelState, task: Task, t: int,
                               cfg: TrainConfig, epoch: int):
    """Adapted statistics for the in-progress task, refitted from the
    current adapter each epoch. Never stored: the persistent adapted
    statistics are only recorded once the task finishes training."""
    adapted = state.backbone.forward(task.train_x, state.task_adapters[t])
    items = []
    for cls in sorted(task.label_set):
        reps = adapted[task.train_y == cls]
        items.append(((t, cls), fit_class_statistics(
            reps, k=min(cfg.kmeans_k, len(reps)), noise_sigma=cfg.noise_sigma,
            seed=_seed_int(cfg.seed, 4, t, epoch, cls),
            class_id=cls, task_id=t)))
    return items


def _tii_phase(state: ModelState, opt: Adam, t: int, cfg: TrainConfig,
               epoch: int) -> float:
    draw = epoch if cfg.resample_each_epoch else 0
    batches = _pseudo_batches(state.stats.unadapted_items(t),
                              cfg.pseudo_per_class, (cfg.seed, 6, t, draw))
    loss = float("nan")
    for _ in range(cfg.head_steps_per_epoch):
        loss, grads = tii_loss(state.task_head_w, state.task_head_b, batches)
        opt.step({"task_w": grads["head_w"], "task_b": grads["head_b"]})
    return loss


def _tap_phase(state: ModelState, opt: Adam, items, cfg: TrainConfig,
               seed_parts) -> float:
    batches = _pseudo_batches(items, cfg.pseudo_per_class, seed_parts)
    c2r = state.class_to_row
    loss = float("nan")
    for _ in range(cfg.head_steps_per_epoch):
        loss, grads = tap_loss(state.class_head_w, state.class_head_b,
                               batches, c2r)
        opt.step({"class_w": grads["head_w"], "class_b": grads["head_b"]})
    return loss


def train_task(state: ModelState, task: Task, cfg: TrainConfig,
               progress: Callable[[dict], None] | None = None) -> ModelState:
    t = prepare_task(state, task, cfg)
    adapter = state.task_adapters[t]
    rows_t = state.task_rows(t)
    local_of = {c: i for i, c in enumerate(sorted(task.label_set))}
    local_targets = np.array([local_of[c] for c in task.train_y])
    global_rows = np.array([state.class_to_row[c] for c in task.train_y])
    old_means = state.stats.old_class_means(before_task=t)
    cr_cfg = CRConfig(cfg.cr_temperature, cfg.cr_weight)

    opt_wtp = Adam({**adapter.tensors,
                    "class_w": state.class_head_w,
                    "class_b": state.class_head_b}, cfg.learning_rate)
    opt_tii = Adam({"task_w": state.task_head_w,
                    "task_b": state.task_head_b}, cfg.learning_rate)
    opt_tap = Adam({"class_w": state.class_head_w,
                    "class_b": state.class_head_b}, cfg.learning_rate)
    shared = probe = probe_rows = opt_shared = None
    if cfg.train_shared_adapter:
        shared = state.shared_adapters[task.dataset_id]
        probe = state.shared_probes[task.dataset_id]
        probe_rows = np.array([probe["classes"].index(c)
                               for c in task.train_y])
        opt_shared = Adam({**{f"s.{k}": v for k, v in shared.tensors.items()},
                           "probe_w": probe["w"], "probe_b": probe["b"]},
                          cfg.shared_learning_rate or cfg.learning_rate)

    state.events.append(("epochs_start", t))
    n = len(task.train_y)
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, 5, t, epoch]))
        wtp_total, count = 0.0, 0
        for idx in _minibatches(n, cfg.batch_size, rng):
            reps, tape = state.backbone.forward(task.train_x[idx], adapter,
                                                need_tape=True)
            if cfg.wtp_global_softmax:
                bundle, _ = wtp_loss(reps, global_rows[idx],
                                     state.class_head_w, state.class_head_b,
                                     old_means, cr_cfg)
                gw_full = bundle.grads["head_w"]
                gb_full = bundle.grads["head_b"]
                keep = np.zeros(len(state.class_order), dtype=bool)
                keep[rows_t] = True
                gw_full[~keep] = 0.0
                gb_full[~keep] = 0.0
            else:
                bundle, _ = wtp_loss(reps, local_targets[idx],
                                     state.class_head_w[rows_t],
                                     state.class_head_b[rows_t],
                                     old_means, cr_cfg)
                gw_full = np.zeros_like(state.class_head_w)
                gb_full = np.zeros_like(state.class_head_b)
                gw_full[rows_t] = bundle.grads["head_w"]
                gb_full[rows_t] = bundle.grads["head_b"]
            adapter_grads = state.backbone.backward(tape, bundle.grads["reps"])
            opt_wtp.step({**adapter_grads, "class_w": gw_full,
                          "class_b": gb_full})
            wtp_total += bundle.loss * len(idx)
            count += len(idx)

            if shared is not None:
                s_reps, s_tape = state.backbone.forward(
                    task.train_x[idx], shared, need_tape=True)
                _, s_dreps, s_dw, s_db = _linear_ce(
                    s_reps, probe_rows[idx], probe["w"], probe["b"])
                s_grads = state.backbone.backward(s_tape, s_dreps)
                # decaying the probe keeps cross-entropy pressure on the
                # adapter instead of letting the head absorb it
                opt_shared.step({**{f"s.{k}": v for k, v in s_grads.items()},
                                 "probe_w": s_dw
                                 + cfg.shared_probe_decay * probe["w"],
                                 "probe_b": s_db})

        tii_mean = _tii_phase(state, opt_tii, t, cfg, epoch)
        tap_mean = float("nan")
        if not cfg.tap_post_hoc:
            draw = epoch if cfg.resample_each_epoch else 0
            items = (state.stats.adapted_items(t - 1)
                     + _provisional_adapted_stats(state, task, t, cfg, epoch))
            tap_mean = _tap_phase(state, opt_tap, items, cfg,
                                  (cfg.seed, 7, t, draw))
        if progress is not None:
            progress({"event": "epoch", "task": t, "epoch": epoch,
                      "wtp_loss": wtp_total / max(count, 1),
                      "tii_loss": tii_mean, "tap_loss": tap_mean})
    state.events.append(("epochs_end", t))

    adapted = state.backbone.forward(task.train_x, adapter)
    for cls in sorted(task.label_set):
        reps = adapted[task.train_y == cls]
        state.stats.add_adapted(t, cls, fit_class_statistics(
            reps, k=min(cfg.kmeans_k, len(reps)), noise_sigma=cfg.noise_sigma,
            seed=_seed_int(cfg.seed, 8, t, cls), class_id=cls, task_id=t))
    state.events.append(("fit_adapted", t))

    if cfg.tap_post_hoc:
        for epoch in range(cfg.epochs):
            _tap_phase(state, opt_tap, state.stats.adapted_items(t), cfg,
                       (cfg.seed, 9, t, epoch))
    return state


def train_sequence(stream: TaskStream, cfg: TrainConfig,
                   progress: Callable[[dict], None] | None = None
                   ) -> tuple[ModelState, AccuracyMatrix]:
    """Train every task in order, evaluating all seen test sets after each."""
    state = new_state(cfg, stream.scenario,
                      input_dim=stream.tasks[0].train_x.shape[1])
    matrix = AccuracyMatrix()
    for i, task in enumerate(stream.tasks):
        train_task(state, task, cfg, progress)
        row = evaluate_scenario(state, stream.test_sets(up_to=i),
                                stream.scenario)
        matrix.add_row(row)
        if progress is not None:
            progress({"event": "task_done", "task": i, "accuracies": row})
    return state, matrix


# ---------------------------------------------------------------------------
# inference


def _require_trained(state: ModelState):
    if state.num_tasks == 0:
        raise StateError("model has no trained tasks")


def predict(state: ModelState, X) -> Prediction:
    """Two-stage prediction: task identity first, then the label."""
    _require_trained(state)
    X = np.asarray(X, dtype=np.float64)
    unadapted = state.backbone.forward(X)
    task_logits = unadapted @ state.task_head_w.T + state.task_head_b
    task_probs = softmax(task_logits)
    pred_task = np.argmax(task_logits, axis=1)  # ties -> lowest task index

    n = len(pred_task)
    class_probs = np.zeros((n, len(state.class_order)))
    labels = np.zeros(n, dtype=np.int64)
    order = np.array(state.class_order)
    for t in np.unique(pred_task):
        mask = pred_task == t
        adapted = state.backbone.forward(X[mask], state.task_adapters[t])
        logits = adapted @ state.class_head_w.T + state.class_head_b
        class_probs[mask] = softmax(logits)
        labels[mask] = order[np.argmax(logits, axis=1)]
    return Prediction(labels=labels, task_ids=pred_task,
                      task_probs=task_probs, class_probs=class_probs)


def predict_til(state: ModelState, X, task_idx: int) -> np.ndarray:
    """Prediction with the task identity given: restrict to its classes."""
    _require_trained(state)
    if not 0 <= task_idx < state.num_tasks:
        raise StateError(f"task {task_idx} not trained")
    adapted = state.backbone.forward(X, state.task_adapters[task_idx])
    rows = state.task_rows(task_idx)
    logits = adapted @ state.class_head_w[rows].T + state.class_head_b[rows]
    classes = np.array(sorted(state.task_label_sets[task_idx]))
    return classes[np.argmax(logits, axis=1)]


def predict_dil(state: ModelState, X) -> np.ndarray:
    """Domain-incremental prediction: marginalize the per-task class
    distributions with the task-identity probabilities as weights."""
    _require_trained(state)
    unadapted = state.backbone.forward(X)
    task_probs = softmax(unadapted @ state.task_head_w.T + state.task_head_b)
    mixture = np.zeros((len(task_probs), len(state.class_order)))
    for t in range(state.num_tasks):
        adapted = state.backbone.forward(X, state.task_adapters[t])
        logits = adapted @ state.class_head_w.T + state.class_head_b
        mixture += task_probs[:, t:t + 1] * softmax(logits)
    order = np.array(state.class_order)
    return order[np.argmax(mixture, axis=1)]


def build_prob_table(state: ModelState, X, y) -> ProbTable:
    """Probability table from the model's actual softmax outputs.

    Task probabilities come from the task head on unadapted
    representations, within-task tables from the class head restricted to
    each task's label slice on that task's adapted representations, and
    the all-class table from the full class head on the representation
    adapted with the predicted task.
    """
    _require_trained(state)
    if state.scenario != "cil":
        raise ScenarioError("probability tables are built for cil states")
    y = np.asarray(y)
    pred = predict(state, X)
    wtp_list = []
    for t in range(state.num_tasks):
        adapted = state.backbone.forward(X, state.task_adapters[t])
        rows = state.task_rows(t)
        logits = adapted @ state.class_head_w[rows].T + state.class_head_b[rows]
        wtp_list.append(softmax(logits))
    class_of_task = {c: t for t, labels in enumerate(state.task_label_sets)
                     for c in labels}
    missing = set(y.tolist()) - set(class_of_task)
    if missing:
        raise DataError(f"labels {sorted(missing)} never observed in training")
    truth_task = np.array([class_of_task[c] for c in y])
    truth_within = np.array(
        [sorted(state.task_label_sets[t]).index(c)
         for t, c in zip(truth_task, y)])
    return ProbTable(task_probs=pred.task_probs, wtp_probs=wtp_list,
                     class_probs=pred.class_probs, truth_task=truth_task,
                     truth_within=truth_within)


# ---------------------------------------------------------------------------
# few-shot protocol (upstream accumulation)


@dataclass(frozen=True)
class FewShotConfig:
    steps: int = 150
    learning_rate: float = 0.05
    use_shared_adapter: bool = True
    episode_adapter: bool = False
    episode_adapter_rank: int = 4

    def __post_init__(self):
        if self.steps < 1 or self.learning_rate <= 0:
            raise ConfigError("steps must be >= 1 and learning_rate > 0")


def select_shared_adapter(state: ModelState, support_x) -> int | None:
    """Pick the dataset whose tasks receive the most task-identity mass."""
    if not state.shared_adapters:
        return None
    if len(state.shared_adapters) == 1:
        return next(iter(state.shared_adapters))
    unadapted = state.backbone.forward(support_x)
    probs = softmax(unadapted @ state.task_head_w.T + state.task_head_b)
    mass = {ds: 0.0 for ds in state.shared_adapters}
    for t, ds in enumerate(state.task_datasets):
        if ds in mass:
            mass[ds] += float(probs[:, t].sum())
    return max(sorted(mass), key=lambda ds: mass[ds])


def few_shot_eval(state: ModelState, support_x, support_y, query_x, query_y,
                  fs: FewShotConfig = FewShotConfig(), seed: int = 0) -> float:
    """Fit a fresh episode head on the support set; report query accuracy.

    Features come from the frozen backbone composed with the accumulated
    shared adapter (selected by the task head when several datasets were
    seen); optionally a fresh episode-local low-rank adapter is trained
    alongside the head.
    """
    support_y = np.asarray(support_y)
    query_y = np.asarray(query_y)
    classes = np.unique(support_y)
    if len(classes) < 2:
        raise DataError("need at least 2 support classes")
    if set(query_y.tolist()) - set(classes.tolist()):
        raise DataError("query classes must match support classes")
    local = {c: i for i, c in enumerate(classes.tolist())}
    s_targets = np.array([local[c] for c in support_y])

    shared = None
    if fs.use_shared_adapter:
        ds = select_shared_adapter(state, support_x)
        if ds is not None:
            shared = state.shared_adapters[ds]

    episode = None
    if fs.episode_adapter:
        episode = init_peft("lora", state.backbone.config.num_layers,
                            state.backbone.config.token_dim,
                            PeftConfig(kind="lora",
                                       lora_rank=fs.episode_adapter_rank),
                            seed=_seed_int(seed, 10))

    head_w = np.zeros((len(classes), state.backbone.output_dim))
    head_b = np.zeros(len(classes))
    params = {"head_w": head_w, "head_b": head_b}
    if episode is not None:
        params.update(episode.tensors)
    opt = Adam(params, fs.learning_rate)

    if episode is None:
        s_feats = state.backbone.forward(support_x, shared)
        for _ in range(fs.steps):
            _, _, d_w, d_b = _linear_ce(s_feats, s_targets, head_w, head_b)
            opt.step({"head_w": d_w, "head_b": d_b})
        q_feats = state.backbone.forward(query_x, shared)
    else:
        deltas = value_deltas_from_lora(shared) if shared is not None else None
        for _ in range(fs.steps):
            s_feats, tape = state.backbone.forward(
                support_x, episode, need_tape=True, value_deltas=deltas)
            _, d_reps, d_w, d_b = _linear_ce(s_feats, s_targets, head_w,
                                             head_b)
            grads = state.backbone.backward(tape, d_reps)
            opt.step({**grads, "head_w": d_w, "head_b": d_b})
        q_feats = state.backbone.forward(query_x, episode,
                                         value_deltas=deltas)
    logits = q_feats @ head_w.T + head_b
    pred = classes[np.argmax(logits, axis=1)]
    return float(np.mean(pred == query_y))


def value_deltas_from_lora(adapter: PeftParams) -> list[np.ndarray]:
    """Frozen per-layer additive deltas on the value projection."""
    if adapter.kind != "lora":
        raise ConfigError("value deltas only exist for low-rank adapters")
    scale = 1.0 / adapter.config.lora_rank
    out = []
    layer = 0
    while f"lora.{layer}.A" in adapter.tensors:
        out.append(scale * (adapter.tensors[f"lora.{layer}.A"]
                            @ adapter.tensors[f"lora.{layer}.B"]))
        layer += 1
    return out

import json
import struct

import numpy as np
import pytest

from hicl.data_io import (EMBED_MAGIC, SynthSpec, load_embeddings,
                          load_state, load_stream, parse_run_config,
                          save_state, save_stream, stream_from_datasets,
                          stream_to_datasets, synth_episode, synth_stream,
                          write_embeddings)
from hicl.engine import TrainConfig, predict, train_sequence, train_task, new_state
from hicl.errors import ConfigError, FormatError, ScenarioError
from hicl.evaluation import evaluate_scenario


class TestEmbeddingFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((7, 5)).astype(np.float32).astype(np.float64)
        path = str(tmp_path / "e.bin")
        write_embeddings(path, X, [0, 1, 2, 0, 1, 2, 0],
                         [0, 0, 0, 1, 1, 1, 1], class_count=3)
        ds = load_embeddings(path)
        assert np.array_equal(ds.X, X)
        assert ds.class_ids.tolist() == [0, 1, 2, 0, 1, 2, 0]
        assert ds.task_ids.tolist() == [0, 0, 0, 1, 1, 1, 1]
        # second write of the loaded data is byte-identical
        path2 = str(tmp_path / "e2.bin")
        write_embeddings(path2, ds.X, ds.class_ids, ds.task_ids, 3)
        assert (tmp_path / "e.bin").read_bytes() == (tmp_path / "e2.bin").read_bytes()

    def test_minimal_hand_built_file(self, tmp_path):
        floats = [1.5, -2.25, 0.0, 8.0]
        payload = (EMBED_MAGIC + struct.pack("<HIII", 1, 4, 1, 3)
                   + struct.pack("<II", 2, 0)
                   + struct.pack("<4f", *floats))
        path = tmp_path / "one.bin"
        path.write_bytes(payload)
        ds = load_embeddings(str(path))
        assert ds.X.shape == (1, 4)
        np.testing.assert_array_equal(ds.X[0], floats)
        assert ds.class_ids[0] == 2 and ds.task_ids[0] == 0

    def test_bad_magic_offset_zero(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + bytes(14))
        with pytest.raises(FormatError) as err:
            load_embeddings(str(path))
        assert err.value.offset == 0

    def test_truncated_payload(self, tmp_path):
        path = str(tmp_path / "t.bin")
        write_embeddings(path, np.zeros((3, 4)), [0, 0, 0], [0, 0, 0], 1)
        data = open(path, "rb").read()
        open(path, "wb").write(data[:-5])
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = str(tmp_path / "t.bin")
        write_embeddings(path, np.zeros((2, 3)), [0, 0], [0, 0], 1)
        with open(path, "ab") as fh:
            fh.write(b"\x00")
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_class_id_bound_checked(self, tmp_path):
        payload = (EMBED_MAGIC + struct.pack("<HIII", 1, 2, 1, 1)
                   + struct.pack("<II", 5, 0) + struct.pack("<2f", 0, 0))
        path = tmp_path / "b.bin"
        path.write_bytes(payload)
        with pytest.raises(FormatError) as err:
            load_embeddings(str(path))
        assert err.value.offset == 18

    def test_unknown_version(self, tmp_path):
        payload = EMBED_MAGIC + struct.pack("<HIII", 9, 1, 0, 1)
        path = tmp_path / "v.bin"
        path.write_bytes(payload)
        with pytest.raises(FormatError):
            load_embeddings(str(path))


class TestSynthStream:
    def test_cil_structure(self):
        stream = synth_stream(0, SynthSpec(tasks=10, classes_per_task=2,
                                           dim=16, samples_per_class=20))
        labels = [t.label_set for t in stream.tasks]
        flat = [c for ls in labels for c in ls]
        assert len(flat) == 20 and len(set(flat)) == 20

    def test_separation_zero_gives_chance(self):
        spec = SynthSpec(tasks=4, classes_per_task=2, dim=16,
                         samples_per_class=40, separation=0.0)
        stream = synth_stream(1, spec)
        # nearest-empirical-mean on raw inputs should be ~chance
        X = np.concatenate([t.train_x for t in stream.tasks])
        y = np.concatenate([t.train_y for t in stream.tasks])
        Xt = np.concatenate([t.test_x for t in stream.tasks])
        yt = np.concatenate([t.test_y for t in stream.tasks])
        means = np.stack([X[y == c].mean(0) for c in range(8)])
        pred = ((Xt[:, None, :] - means[None]) ** 2).sum(2).argmin(1)
        assert np.mean(pred == yt) < 0.35  # chance is 0.125

    def test_seed_determinism(self):
        spec = SynthSpec(tasks=3, classes_per_task=2, dim=8,
                         samples_per_class=10)
        a = synth_stream(5, spec)
        b = synth_stream(5, spec)
        for ta, tb in zip(a.tasks, b.tasks):
            assert np.array_equal(ta.train_x, tb.train_x)
            assert np.array_equal(ta.test_y, tb.test_y)

    def test_pairwise_separation_invariant(self):
        spec = SynthSpec(tasks=5, classes_per_task=3, dim=24,
                         samples_per_class=30, separation=2.5)
        stream = synth_stream(3, spec)
        means = []
        for t in stream.tasks:
            for c in t.label_set:
                means.append(t.train_x[t.train_y == c].mean(axis=0))
        means = np.stack(means)
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff ** 2).sum(2))
        iu = np.triu_indices(len(means), k=1)
        # empirical means drift from true means by ~sigma/sqrt(n)
        assert dist[iu].min() > 2.5 - 0.75

    def test_dil_labels_identical(self):
        spec = SynthSpec(tasks=3, classes_per_task=2, dim=8,
                         samples_per_class=10, scenario="dil")
        stream = synth_stream(2, spec)
        assert all(t.label_set == (0, 1) for t in stream.tasks)

    def test_distractor_dims_appended(self):
        spec = SynthSpec(tasks=2, classes_per_task=2, dim=8,
                         samples_per_class=10, distractor_dim=3)
        stream = synth_stream(2, spec)
        assert stream.tasks[0].train_x.shape[1] == 11

    def test_bad_spec_rejected(self):
        with pytest.raises(ConfigError):
            SynthSpec(tasks=0)

    def test_file_roundtrip(self, tmp_path):
        spec = SynthSpec(tasks=3, classes_per_task=2, dim=8,
                         samples_per_class=10)
        stream = synth_stream(4, spec)
        tr, te = str(tmp_path / "tr.bin"), str(tmp_path / "te.bin")
        save_stream(stream, tr, te)
        loaded = load_stream(tr, te, "cil")
        assert loaded.num_tasks == 3
        for ta, tb in zip(stream.tasks, loaded.tasks):
            assert ta.label_set == tb.label_set
            np.testing.assert_allclose(ta.train_x, tb.train_x, atol=1e-6)

    def test_scenario_mismatch_on_load(self):
        spec = SynthSpec(tasks=2, classes_per_task=2, dim=8,
                         samples_per_class=10, scenario="dil")
        stream = synth_stream(1, spec)
        train, test = stream_to_datasets(stream)
        with pytest.raises(ScenarioError):
            stream_from_datasets(train, test, "cil")

    def test_episode_shapes(self):
        spec = SynthSpec(tasks=2, classes_per_task=2, dim=8,
                         samples_per_class=10)
        sx, sy, qx, qy = synth_episode(0, spec, n_way=3, k_shot=2, n_query=4)
        assert sx.shape == (6, 8) and qx.shape == (12, 8)
        assert sorted(set(sy.tolist())) == [0, 1, 2]


class TestRunConfig:
    def test_defaults(self):
        cfg = parse_run_config("{}")
        assert cfg.seed == 0 and cfg.scenario == "cil"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_run_config(json.dumps({"sede": 1}))

    def test_unknown_path_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_run_config(json.dumps({"paths": {"stat": "x"}}))

    def test_invalid_json(self):
        with pytest.raises(FormatError):
            parse_run_config("{")

    def test_bad_scenario(self):
        with pytest.raises(ConfigError):
            parse_run_config(json.dumps({"scenario": "owl"}))

    def test_synth_section(self):
        cfg = parse_run_config(json.dumps(
            {"synth": {"tasks": 3, "classes_per_task": 2, "dim": 8,
                       "samples_per_class": 10}}))
        assert cfg.synth_spec().tasks == 3

    def test_unknown_synth_key(self):
        cfg = parse_run_config(json.dumps({"synth": {"taskz": 3}}))
        with pytest.raises(ConfigError):
            cfg.synth_spec()


def small_trained_state(tmp_path, seed=3, shared=False):
    spec = SynthSpec(tasks=3, classes_per_task=2, dim=16,
                     samples_per_class=20, separation=4.0)
    stream = synth_stream(seed, spec)
    cfg = TrainConfig(epochs=3, seed=seed, train_shared_adapter=shared)
    state, matrix = train_sequence(stream, cfg)
    return stream, cfg, state, matrix


class TestStatePersistence:
    def test_predict_equivalence_on_random_inputs(self, tmp_path):
        _, _, state, _ = small_trained_state(tmp_path, shared=True)
        path = str(tmp_path / "s.bin")
        save_state(state, path)
        loaded = load_state(path)
        X = np.random.default_rng(1).standard_normal((100, 16)) * 3
        a, b = predict(state, X), predict(loaded, X)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.task_probs, b.task_probs)
        assert np.array_equal(a.class_probs, b.class_probs)

    def test_truncated_file_no_partial_state(self, tmp_path):
        _, _, state, _ = small_trained_state(tmp_path)
        path = str(tmp_path / "s.bin")
        save_state(state, path)
        data = open(path, "rb").read()
        open(path, "wb").write(data[:len(data) - 16])
        with pytest.raises(FormatError):
            load_state(path)

    def test_future_version_rejected(self, tmp_path):
        _, _, state, _ = small_trained_state(tmp_path)
        path = str(tmp_path / "s.bin")
        save_state(state, path)
        data = bytearray(open(path, "rb").read())
        data[4:6] = struct.pack("<H", 99)
        open(path, "wb").write(bytes(data))
        with pytest.raises(FormatError) as err:
            load_state(path)
        assert "version" in str(err.value)

    def test_resume_equals_uninterrupted(self, tmp_path):
        stream, cfg, full_state, full_matrix = small_trained_state(tmp_path)
        # train first two tasks, persist, resume, train the third
        partial = new_state(cfg, "cil", input_dim=16)
        for task in stream.tasks[:2]:
            train_task(partial, task, cfg)
        path = str(tmp_path / "mid.bin")
        save_state(partial, path)
        resumed = load_state(path)
        train_task(resumed, stream.tasks[2], cfg)
        row = evaluate_scenario(resumed, stream.test_sets(up_to=2), "cil")
        assert row == full_matrix.rows[2]

    def test_trailing_bytes_rejected(self, tmp_path):
        _, _, state, _ = small_trained_state(tmp_path)
        path = str(tmp_path / "s.bin")
        save_state(state, path)
        with open(path, "ab") as fh:
            fh.write(b"x")
        with pytest.raises(FormatError):
            load_state(path)

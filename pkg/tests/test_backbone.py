import numpy as np
import pytest

from hicl.backbone import BackboneConfig, BackboneSurrogate, init_backbone
from hicl.errors import ConfigError, DimensionError
from hicl.numerics import finite_diff_check
from hicl.peft import PEFT_KINDS, PeftConfig, init_peft

SMALL = BackboneConfig(num_layers=2, num_tokens=3, token_dim=5, ff_dim=7,
                       output_mode="mean")


def null_adapter(kind, cfg):
    """Adapter parameters that leave the forward pass untouched."""
    pc = {"lora": PeftConfig(kind="lora"),
          "film": PeftConfig(kind="film"),
          "adapter": PeftConfig(kind="adapter"),
          "prompt": PeftConfig(kind="prompt", prompt_len=0)}[kind]
    return init_peft(kind, cfg.num_layers, cfg.token_dim, pc, seed=5)


class TestConstruction:
    def test_same_seed_bit_identical(self):
        a = init_backbone(42, SMALL)
        b = init_backbone(42, SMALL)
        assert a.weights_bytes() == b.weights_bytes()

    def test_different_seeds_differ(self):
        assert (init_backbone(1, SMALL).weights_bytes()
                != init_backbone(2, SMALL).weights_bytes())

    def test_weights_frozen(self):
        bb = init_backbone(0, SMALL)
        with pytest.raises(ValueError):
            bb.layers[0]["wq"][0, 0] = 1.0

    def test_zero_config_rejected(self):
        with pytest.raises(ConfigError):
            BackboneConfig(num_tokens=0)

    def test_zero_weights_zero_input_constant_output(self):
        # hand trace: all projections zero, layer norms at identity
        # parameters, zero input -> every block emits zeros and the guarded
        # final standardization maps the zero vector to zeros
        bb = BackboneSurrogate(SMALL, seed=0, zero_weights=True)
        out = bb.forward(np.zeros((3, SMALL.flat_dim)))
        assert np.all(np.isfinite(out))
        np.testing.assert_array_equal(out, np.zeros((3, SMALL.token_dim)))


class TestEmbedTokens:
    def test_reshape_definition(self):
        bb = init_backbone(0, BackboneConfig(num_tokens=2, token_dim=2))
        np.testing.assert_array_equal(bb.embed_tokens([1, 2, 3, 4]),
                                      [[1, 2], [3, 4]])

    def test_roundtrip(self):
        bb = init_backbone(0, SMALL)
        x = np.arange(SMALL.flat_dim, dtype=float)
        np.testing.assert_array_equal(bb.embed_tokens(x).ravel(), x)

    def test_length_mismatch(self):
        bb = init_backbone(0, BackboneConfig(num_tokens=2, token_dim=2))
        with pytest.raises(DimensionError):
            bb.embed_tokens([1, 2, 3, 4, 5])


class TestForward:
    def test_purity(self):
        bb = init_backbone(3, SMALL)
        x = np.random.default_rng(0).standard_normal((4, SMALL.flat_dim))
        np.testing.assert_array_equal(bb.forward(x), bb.forward(x))

    def test_output_dim(self):
        for mode, dim in (("mean", SMALL.token_dim),
                          ("concat", SMALL.flat_dim)):
            cfg = BackboneConfig(num_layers=2, num_tokens=3, token_dim=5,
                                 ff_dim=7, output_mode=mode)
            bb = init_backbone(3, cfg)
            x = np.random.default_rng(1).standard_normal((6, cfg.flat_dim))
            assert bb.forward(x).shape == (6, dim)

    def test_separated_clusters_less_similar_than_self(self):
        bb = init_backbone(4, SMALL)
        rng = np.random.default_rng(2)
        a = rng.standard_normal(SMALL.flat_dim) + 6.0
        b = rng.standard_normal(SMALL.flat_dim) - 6.0
        reps = bb.forward(np.stack([a, b]))
        norm = reps / np.linalg.norm(reps, axis=1, keepdims=True)
        cross = float(norm[0] @ norm[1])
        assert cross < 0.99
        assert abs(float(norm[0] @ norm[0]) - 1.0) < 1e-12

    def test_input_projection_for_other_dims(self):
        cfg = BackboneConfig(num_layers=1, num_tokens=3, token_dim=5,
                             ff_dim=7, input_dim=11)
        bb = init_backbone(5, cfg)
        x = np.random.default_rng(3).standard_normal((2, 11))
        assert bb.forward(x).shape == (2, 5)
        with pytest.raises(DimensionError):
            bb.forward(np.zeros((2, 15)))

    def test_nonfinite_input_rejected(self):
        bb = init_backbone(0, SMALL)
        bad = np.zeros((1, SMALL.flat_dim))
        bad[0, 0] = np.inf
        with pytest.raises(Exception):
            bb.forward(bad)


class TestNullEquivalence:
    @pytest.mark.parametrize("kind", PEFT_KINDS)
    def test_null_setting_is_exact(self, kind):
        bb = init_backbone(7, SMALL)
        adapter = null_adapter(kind, SMALL)
        x = np.random.default_rng(4).standard_normal((100, SMALL.flat_dim))
        plain = bb.forward(x)
        adapted = bb.forward(x, adapter)
        assert np.array_equal(plain, adapted)  # 0 ulp

    def test_prompt_changes_length_not_dim(self):
        bb = init_backbone(7, SMALL)
        adapter = init_peft("prompt", SMALL.num_layers, SMALL.token_dim,
                            PeftConfig(kind="prompt", prompt_len=6), seed=1)
        x = np.random.default_rng(5).standard_normal((3, SMALL.flat_dim))
        assert bb.forward(x, adapter).shape == (3, SMALL.token_dim)


class TestInitPeft:
    def test_copy_semantics(self):
        prev = init_peft("lora", 2, 5, PeftConfig(kind="lora"), seed=1)
        prev.tensors["lora.0.B"] += 0.5
        new = init_peft("lora", 2, 5, PeftConfig(kind="lora"), seed=99,
                        previous=prev)
        assert new.to_bytes() == prev.to_bytes()
        new.tensors["lora.0.B"] += 1.0  # deep copy: previous untouched
        assert new.to_bytes() != prev.to_bytes()

    def test_fresh_lora_zero_delta(self):
        bb = init_backbone(8, SMALL)
        adapter = init_peft("lora", SMALL.num_layers, SMALL.token_dim,
                            PeftConfig(kind="lora"), seed=3)
        x = np.random.default_rng(6).standard_normal((5, SMALL.flat_dim))
        assert np.array_equal(bb.forward(x), bb.forward(x, adapter))

    def test_fresh_adapter_zero_delta(self):
        bb = init_backbone(8, SMALL)
        adapter = init_peft("adapter", SMALL.num_layers, SMALL.token_dim,
                            PeftConfig(kind="adapter"), seed=3)
        x = np.random.default_rng(7).standard_normal((5, SMALL.flat_dim))
        assert np.array_equal(bb.forward(x), bb.forward(x, adapter))

    def test_prompt_seed_determinism(self):
        a = init_peft("prompt", 2, 5, PeftConfig(kind="prompt"), seed=11)
        b = init_peft("prompt", 2, 5, PeftConfig(kind="prompt"), seed=11)
        assert a.to_bytes() == b.to_bytes()

    def test_kind_mismatch(self):
        prev = init_peft("lora", 2, 5, PeftConfig(kind="lora"), seed=1)
        with pytest.raises(ConfigError):
            init_peft("film", 2, 5, PeftConfig(kind="film"), previous=prev)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            PeftConfig(kind="prefix")


class TestGradients:
    @pytest.mark.parametrize("kind", PEFT_KINDS)
    def test_adapted_forward_matches_finite_differences(self, kind):
        rng = np.random.default_rng(17)
        pc = {"lora": PeftConfig(kind="lora", lora_rank=3),
              "film": PeftConfig(kind="film"),
              "adapter": PeftConfig(kind="adapter", adapter_dim=3),
              "prompt": PeftConfig(kind="prompt", prompt_len=3)}[kind]
        bb = init_backbone(9, SMALL)
        adapter = init_peft(kind, SMALL.num_layers, SMALL.token_dim, pc,
                            seed=2)
        for name in adapter.tensors:  # move off the zero-delta init point
            adapter.tensors[name] = (adapter.tensors[name]
                                     + 0.3 * rng.standard_normal(
                                         adapter.tensors[name].shape))
        x = rng.standard_normal((4, SMALL.flat_dim))
        probe = rng.standard_normal((4, SMALL.output_dim))
        reps, tape = bb.forward(x, adapter, need_tape=True)
        grads = bb.backward(tape, probe)

        def loss_fn(params):
            trial = adapter.copy()
            trial.tensors = params
            return float((bb.forward(x, trial) * probe).sum())

        err = finite_diff_check(loss_fn, {k: v.copy() for k, v in
                                          adapter.tensors.items()},
                                grads, max_coords_per_param=16, seed=0)
        assert err < 1e-4

    def test_frozen_weights_after_training_use(self):
        bb = init_backbone(10, SMALL)
        before = bb.weights_bytes()
        adapter = init_peft("lora", SMALL.num_layers, SMALL.token_dim,
                            PeftConfig(kind="lora"), seed=0)
        x = np.random.default_rng(8).standard_normal((4, SMALL.flat_dim))
        reps, tape = bb.forward(x, adapter, need_tape=True)
        bb.backward(tape, np.ones_like(reps))
        assert bb.weights_bytes() == before

    def test_adapter_shape_mismatch_rejected(self):
        bb = init_backbone(11, SMALL)
        wrong = init_peft("lora", SMALL.num_layers, SMALL.token_dim + 1,
                          PeftConfig(kind="lora"), seed=0)
        x = np.zeros((1, SMALL.flat_dim))
        with pytest.raises(ConfigError):
            bb.forward(x, wrong)

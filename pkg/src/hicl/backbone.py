"""Frozen transformer surrogate producing unadapted and adapted representations.

The surrogate is a small pre-norm transformer encoder over a short token
sequence. Ingested embedding vectors are reshaped (or projected through a
frozen seeded linear map) into tokens, run through the layers, pooled, and
standardized. All backbone weights are created once from a seeded PRNG and
are write-protected afterwards.

Adapted forwards thread one :class:`~hicl.peft.PeftParams` through the
layers; the backward pass is hand-derived for exactly this graph and
returns gradients for the adapter tensors only (the backbone is frozen,
inputs are data).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .peft import PeftConfig, PeftParams
from .validation import as_matrix

OUTPUT_MODES = ("mean", "concat")


@dataclass(frozen=True)
class BackboneConfig:
    num_layers: int = 2
    num_tokens: int = 4
    token_dim: int = 16
    ff_dim: int = 32
    input_dim: int | None = None  # None -> num_tokens * token_dim
    output_mode: str = "mean"
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("num_layers", "num_tokens", "token_dim", "ff_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.input_dim is not None and self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if self.output_mode not in OUTPUT_MODES:
            raise ConfigError(f"output_mode must be one of {OUTPUT_MODES}")

    @property
    def flat_dim(self) -> int:
        return self.num_tokens * self.token_dim

    @property
    def output_dim(self) -> int:
        return self.token_dim if self.output_mode == "mean" else self.flat_dim


def _layer_norm(x, gamma, beta, eps):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    scale = np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normed = centered / scale
    return gamma * normed + beta, (normed, scale, gamma)


def _layer_norm_backward(dy, cache):
    normed, scale, gamma = cache
    dn = dy * gamma
    dcentered = (dn - normed * (dn * normed).mean(axis=-1, keepdims=True)) / scale
    return dcentered - dcentered.mean(axis=-1, keepdims=True)


def _softmax_rows(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_rows_backward(p, dp):
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


class BackboneSurrogate:
    """Frozen backbone; identical ``(seed, config)`` gives identical weights."""

    def __init__(self, config: BackboneConfig | None = None, seed: int = 0,
                 zero_weights: bool = False):
        self.config = config or BackboneConfig()
        self.seed = int(seed)
        cfg = self.config
        rng = np.random.default_rng(self.seed)
        d, f = cfg.token_dim, cfg.ff_dim

        def mat(rows, cols, gain=1.0):
            if zero_weights:
                return np.zeros((rows, cols))
            return gain * rng.standard_normal((rows, cols)) / np.sqrt(rows)

        # output projections are damped so the residual stream dominates
        # and ingested geometry survives the frozen layers
        self.layers: list[dict[str, np.ndarray]] = []
        for _ in range(cfg.num_layers):
            layer = {
                "wq": mat(d, d), "wk": mat(d, d), "wv": mat(d, d),
                "wo": mat(d, d, gain=0.5),
                "w1": mat(d, f), "b1": np.zeros(f),
                "w2": mat(f, d, gain=0.5), "b2": np.zeros(d),
                "ln1_g": np.ones(d), "ln1_b": np.zeros(d),
                "ln2_g": np.ones(d), "ln2_b": np.zeros(d),
            }
            self.layers.append(layer)
        in_dim = cfg.input_dim if cfg.input_dim is not None else cfg.flat_dim
        self.input_dim = in_dim
        self.input_proj = None
        if in_dim != cfg.flat_dim:
            self.input_proj = mat(in_dim, cfg.flat_dim)
        self._freeze()

    def _freeze(self):
        for layer in self.layers:
            for arr in layer.values():
                arr.flags.writeable = False
        if self.input_proj is not None:
            self.input_proj.flags.writeable = False

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    def weights_bytes(self) -> bytes:
        """Deterministic byte image of all weights (freeze checks)."""
        chunks = []
        for layer in self.layers:
            chunks.extend(layer[k].tobytes() for k in sorted(layer))
        if self.input_proj is not None:
            chunks.append(self.input_proj.tobytes())
        return b"".join(chunks)

    def embed_tokens(self, x) -> np.ndarray:
        """Reshape one ingested vector into the (num_tokens, token_dim) grid."""
        arr = np.asarray(x, dtype=np.float64).ravel()
        cfg = self.config
        if arr.size != cfg.flat_dim:
            raise DimensionError(
                f"expected length {cfg.flat_dim} "
                f"({cfg.num_tokens}x{cfg.token_dim}), got {arr.size}")
        return arr.reshape(cfg.num_tokens, cfg.token_dim)

    def _check_adapter(self, adapter: PeftParams | None):
        if adapter is None:
            return
        cfg = self.config
        d = cfg.token_dim
        expect: dict[str, tuple[int, int]] = {}
        pc: PeftConfig = adapter.config
        for layer in range(cfg.num_layers):
            if adapter.kind == "prompt":
                expect[f"prompt.{layer}"] = (pc.prompt_len, d)
            elif adapter.kind == "lora":
                expect[f"lora.{layer}.A"] = (d, pc.lora_rank)
                expect[f"lora.{layer}.B"] = (pc.lora_rank, d)
            elif adapter.kind == "film":
                expect[f"film.{layer}.gamma"] = (1, d)
                expect[f"film.{layer}.beta"] = (1, d)
            elif adapter.kind == "adapter":
                expect[f"adapter.{layer}.down"] = (d, pc.adapter_dim)
                expect[f"adapter.{layer}.up"] = (pc.adapter_dim, d)
            else:
                raise ConfigError(f"unknown peft kind {adapter.kind!r}")
        if set(expect) != set(adapter.tensors):
            raise ConfigError("adapter tensors do not match backbone layout")
        for name, shape in expect.items():
            if adapter.tensors[name].shape != shape:
                raise ConfigError(
                    f"adapter tensor {name!r} has shape "
                    f"{adapter.tensors[name].shape}, expected {shape}")

    def forward(self, X, adapter: PeftParams | None = None,
                need_tape: bool = False,
                value_deltas: list[np.ndarray] | None = None):
        """Representations for a batch; optionally keep a tape for backward.

        Returns ``reps`` of shape (batch, output_dim), or ``(reps, tape)``
        when ``need_tape`` is set. The tape is consumed by :meth:`backward`.
        ``value_deltas`` are frozen per-layer additive deltas applied to the
        value projections (used to compose a fixed low-rank adapter with a
        trainable one); no gradients flow to them.
        """
        X = as_matrix(X, "X")
        if X.shape[1] != self.input_dim:
            raise DimensionError(
                f"X has {X.shape[1]} features, backbone ingests {self.input_dim}")
        self._check_adapter(adapter)
        if value_deltas is not None and len(value_deltas) != self.config.num_layers:
            raise DimensionError("need one value delta per layer")
        cfg = self.config
        d = cfg.token_dim
        L = cfg.num_tokens
        eps = cfg.ln_eps
        kind = adapter.kind if adapter is not None else None
        tensors = adapter.tensors if adapter is not None else {}

        flat = X if self.input_proj is None else X @ self.input_proj
        H = flat.reshape(-1, L, d)
        caches = []
        for li, lw in enumerate(self.layers):
            cache: dict = {}
            if kind == "prompt":
                prompt = tensors[f"prompt.{li}"]
                Z = np.concatenate(
                    [np.broadcast_to(prompt, (H.shape[0],) + prompt.shape), H],
                    axis=1)
                cache["n_prompt"] = prompt.shape[0]
            else:
                Z = H
                cache["n_prompt"] = 0
            S = Z.shape[1]
            N1, ln1 = _layer_norm(Z, lw["ln1_g"], lw["ln1_b"], eps)
            Q = N1 @ lw["wq"]
            K = N1 @ lw["wk"]
            wv_eff = lw["wv"]
            if value_deltas is not None:
                wv_eff = wv_eff + value_deltas[li]
            if kind == "lora":
                A = tensors[f"lora.{li}.A"]
                B = tensors[f"lora.{li}.B"]
                scale = 1.0 / adapter.config.lora_rank
                wv_eff = wv_eff + scale * (A @ B)
                cache["lora_scale"] = scale
                cache["U"] = N1 @ A
            V = N1 @ wv_eff
            scores = (Q @ K.transpose(0, 2, 1)) / np.sqrt(d)
            P = _softmax_rows(scores)
            attn = (P @ V) @ lw["wo"]
            R1 = Z + attn
            N2, ln2 = _layer_norm(R1, lw["ln2_g"], lw["ln2_b"], eps)
            T1 = np.tanh(N2 @ lw["w1"] + lw["b1"])
            R2 = R1 + T1 @ lw["w2"] + lw["b2"]
            if kind == "adapter":
                down = tensors[f"adapter.{li}.down"]
                up = tensors[f"adapter.{li}.up"]
                A1 = np.tanh(R2 @ down)
                R3 = R2 + A1 @ up
                cache["A1"] = A1
            elif kind == "film":
                gamma = tensors[f"film.{li}.gamma"]
                beta = tensors[f"film.{li}.beta"]
                R3 = R2 * gamma + beta
            else:
                R3 = R2
            H = R3[:, S - L:, :]
            if need_tape:
                cache.update(N1=N1, ln1=ln1, ln2=ln2, Q=Q, K=K, V=V, P=P,
                             wv_eff=wv_eff, T1=T1, R2=R2)
                caches.append(cache)

        if cfg.output_mode == "mean":
            pooled = H.mean(axis=1)
        else:
            pooled = H.reshape(H.shape[0], -1)
        mean = pooled.mean(axis=-1, keepdims=True)
        centered = pooled - mean
        scale_out = np.sqrt((centered * centered).mean(axis=-1, keepdims=True)
                            + eps)
        reps = centered / scale_out

        if not need_tape:
            return reps
        tape = {"caches": caches, "reps": reps, "scale_out": scale_out,
                "kind": kind, "adapter": adapter, "batch": X.shape[0]}
        return reps, tape

    def backward(self, tape, dreps: np.ndarray) -> dict[str, np.ndarray]:
        """Push a gradient at the representations back to adapter tensors."""
        cfg = self.config
        d = cfg.token_dim
        L = cfg.num_tokens
        kind = tape["kind"]
        adapter: PeftParams | None = tape["adapter"]
        grads: dict[str, np.ndarray] = {}
        if adapter is not None:
            grads = {k: np.zeros_like(v) for k, v in adapter.tensors.items()}

        # final standardization
        reps = tape["reps"]
        scale_out = tape["scale_out"]
        dcentered = (dreps - reps * (dreps * reps).mean(axis=-1, keepdims=True)
                     ) / scale_out
        dpooled = dcentered - dcentered.mean(axis=-1, keepdims=True)
        if cfg.output_mode == "mean":
            dH = np.repeat(dpooled[:, None, :], L, axis=1) / L
        else:
            dH = dpooled.reshape(-1, L, d)

        for li in range(cfg.num_layers - 1, -1, -1):
            lw = self.layers[li]
            cache = tape["caches"][li]
            n_prompt = cache["n_prompt"]
            S_total = cache["N1"].shape[1]
            dR3 = np.zeros((dH.shape[0], S_total, d))
            dR3[:, S_total - L:, :] = dH

            if kind == "adapter":
                tensors = adapter.tensors
                A1 = cache["A1"]
                up = tensors[f"adapter.{li}.up"]
                down = tensors[f"adapter.{li}.down"]
                grads[f"adapter.{li}.up"] += np.einsum("bsk,bsd->kd", A1, dR3)
                dA0 = (dR3 @ up.T) * (1.0 - A1 * A1)
                grads[f"adapter.{li}.down"] += np.einsum(
                    "bsd,bsk->dk", cache["R2"], dA0)
                dR2 = dR3 + dA0 @ down.T
            elif kind == "film":
                tensors = adapter.tensors
                gamma = tensors[f"film.{li}.gamma"]
                grads[f"film.{li}.gamma"] += (
                    (dR3 * cache["R2"]).sum(axis=(0, 1))[None, :])
                grads[f"film.{li}.beta"] += dR3.sum(axis=(0, 1))[None, :]
                dR2 = dR3 * gamma
            else:
                dR2 = dR3

            # feed-forward block
            T1 = cache["T1"]
            dT1 = dR2 @ lw["w2"].T
            dG = dT1 * (1.0 - T1 * T1)
            dN2 = dG @ lw["w1"].T
            dR1 = dR2 + _layer_norm_backward(dN2, cache["ln2"])

            # attention block
            dO = dR1 @ lw["wo"].T
            P, V, Q, K = cache["P"], cache["V"], cache["Q"], cache["K"]
            dP = dO @ V.transpose(0, 2, 1)
            dV = P.transpose(0, 2, 1) @ dO
            dscores = _softmax_rows_backward(P, dP)
            dQ = (dscores @ K) / np.sqrt(d)
            dK = (dscores.transpose(0, 2, 1) @ Q) / np.sqrt(d)
            dN1 = dQ @ lw["wq"].T + dK @ lw["wk"].T + dV @ cache["wv_eff"].T
            if kind == "lora":
                scale = cache["lora_scale"]
                U = cache["U"]
                B = adapter.tensors[f"lora.{li}.B"]
                grads[f"lora.{li}.B"] += scale * np.einsum(
                    "bsr,bsd->rd", U, dV)
                dU = scale * (dV @ B.T)
                grads[f"lora.{li}.A"] += np.einsum(
                    "bsd,bsr->dr", cache["N1"], dU)
            dZ = dR1 + _layer_norm_backward(dN1, cache["ln1"])

            if n_prompt:
                grads[f"prompt.{li}"] += dZ[:, :n_prompt, :].sum(axis=0)
                dH = dZ[:, n_prompt:, :]
            else:
                dH = dZ
        return grads


def init_backbone(seed: int, config: BackboneConfig | None = None
                  ) -> BackboneSurrogate:
    return BackboneSurrogate(config=config, seed=seed)

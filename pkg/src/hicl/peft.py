"""Task-specific adapter parameter sets steering the frozen backbone.

Four families are supported:

* ``prompt``  -- learnable tokens prepended to each layer's input sequence
* ``lora``    -- low-rank additive delta on each layer's value projection,
  scaled by 1/rank
* ``film``    -- per-layer per-channel scale and shift on the layer output
* ``adapter`` -- per-layer bottleneck (down, tanh, up) with a residual

``lora`` and ``adapter`` initialize with a zero-output branch and ``film``
with identity modulation, so a freshly initialized adapter leaves the
backbone function unchanged. ``prompt`` has no identity setting other than
an empty prompt (length 0).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

PEFT_KINDS = ("prompt", "lora", "film", "adapter")


@dataclass(frozen=True)
class PeftConfig:
    kind: str = "lora"
    prompt_len: int = 20
    lora_rank: int = 8
    adapter_dim: int = 8
    init_scale: float = 0.02

    def __post_init__(self):
        if self.kind not in PEFT_KINDS:
            raise ConfigError(f"unknown peft kind {self.kind!r}")
        if self.prompt_len < 0:
            raise ConfigError("prompt_len must be >= 0")
        if self.lora_rank < 1 or self.adapter_dim < 1:
            raise ConfigError("lora_rank and adapter_dim must be >= 1")

    def with_kind(self, kind: str) -> "PeftConfig":
        return replace(self, kind=kind)


@dataclass
class PeftParams:
    """One task's trainable adapter tensors, keyed by layer and role."""

    kind: str
    config: PeftConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "PeftParams":
        return PeftParams(self.kind, self.config,
                          {k: v.copy() for k, v in self.tensors.items()})

    def n_params(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def to_bytes(self) -> bytes:
        """Deterministic byte image of all tensors (for freeze checks)."""
        return b"".join(self.tensors[k].tobytes() for k in sorted(self.tensors))


def init_peft(kind: str, num_layers: int, token_dim: int,
              config: PeftConfig | None = None, seed: int = 0,
              previous: PeftParams | None = None) -> PeftParams:
    """Create adapter parameters, copying ``previous`` when given.

    A fresh ``lora`` starts with B = 0 and a fresh ``adapter`` with up = 0,
    so their initial forward delta is exactly zero. ``film`` starts at
    scale 1, shift 0. ``prompt`` tokens are drawn from the seeded PRNG.
    """
    config = config or PeftConfig(kind=kind)
    if config.kind != kind:
        config = config.with_kind(kind)
    if previous is not None:
        if previous.kind != kind:
            raise ConfigError(
                f"cannot initialize {kind!r} adapter from {previous.kind!r}")
        if previous.config != config:
            raise ConfigError("previous adapter has a different configuration")
        return previous.copy()

    rng = np.random.default_rng(seed)
    d = token_dim
    tensors: dict[str, np.ndarray] = {}
    for layer in range(num_layers):
        if kind == "prompt":
            tensors[f"prompt.{layer}"] = (
                config.init_scale * rng.standard_normal((config.prompt_len, d)))
        elif kind == "lora":
            r = config.lora_rank
            tensors[f"lora.{layer}.A"] = (
                rng.standard_normal((d, r)) / np.sqrt(d))
            tensors[f"lora.{layer}.B"] = np.zeros((r, d))
        elif kind == "film":
            tensors[f"film.{layer}.gamma"] = np.ones((1, d))
            tensors[f"film.{layer}.beta"] = np.zeros((1, d))
        elif kind == "adapter":
            b = config.adapter_dim
            tensors[f"adapter.{layer}.down"] = (
                rng.standard_normal((d, b)) / np.sqrt(d))
            tensors[f"adapter.{layer}.up"] = np.zeros((b, d))
    return PeftParams(kind, config, tensors)

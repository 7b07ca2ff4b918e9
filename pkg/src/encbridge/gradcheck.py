"""Finite-difference check of the autograd gradients of a full bridged model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ModelConfig, Seq2Seq


def tiny_config() -> ModelConfig:
    return ModelConfig(vocab_size=12, d_model=8, n_heads=2, d_ff=16, n_enc_layers=2,
                       n_dec_layers=2, max_seq_len=6)


def central_difference(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d arr by perturbing ``arr`` in place, one entry at a time."""
    out = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        out.reshape(-1)[i] = (up - down) / (2 * h)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-5) -> float:
    """``|a - b| / max(|a|, |b|, floor)`` in the 2-norm.

    The floor keeps gradients that vanish analytically (attention key biases)
    from turning finite-difference round-off into a relative error of 1.
    """
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    threshold: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def worst(self) -> str:
        return max(self.errors, key=self.errors.get)

    @property
    def passed(self) -> bool:
        return self.max_error < self.threshold


def random_batch(cfg: ModelConfig, rng: np.random.Generator, batch: int = 2):
    lo = 3  # skip pad/bos/eos
    src = rng.integers(lo, cfg.vocab_size, size=(batch, cfg.max_seq_len - 1))
    src[:, -1] = cfg.eos_id
    src[0, -3:] = (cfg.eos_id, cfg.pad_id, cfg.pad_id)
    tgt = rng.integers(lo, cfg.vocab_size, size=(batch, cfg.max_seq_len - 2))
    tgt_in = np.concatenate([np.full((batch, 1), cfg.bos_id), tgt], axis=1)
    tgt_out = np.concatenate([tgt, np.full((batch, 1), cfg.eos_id)], axis=1)
    tgt_out[0, -1] = cfg.pad_id
    return src, tgt_in, tgt_out


def gradcheck_model(config: ModelConfig | None = None, seed: int = 0, threshold: float = 1e-4,
                    h: float = 1e-5, bridge_init: str = "xavier") -> GradcheckReport:
    """Compare autograd with central differences for every named parameter, at 64-bit."""
    cfg = config or tiny_config()
    model = Seq2Seq.create(cfg, seed=seed, bridge_init=bridge_init, dtype=np.float64)
    src, tgt_in, tgt_out = random_batch(cfg, np.random.default_rng(seed))
    model.zero_grad()
    model.loss(src, tgt_in, tgt_out).backward(model.parameters().values())

    def f() -> float:
        return float(model.loss(src, tgt_in, tgt_out).item())

    errors = {}
    for name, p in model.parameters().items():
        errors[name] = relative_error(p.grad, central_difference(f, p.data, h))
    return GradcheckReport(errors, threshold)

"""Bridge and body weight initializations.

``original`` routes every decoder layer to the last encoder layer, ``gca``
routes decoder layer ``i`` to encoder layer ``L_enc - 1 - i`` (clamped at 0),
``ones`` fills with ones and ``xavier`` draws Glorot-uniform values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

VARIANTS = ("original", "gca", "ones", "xavier")


@dataclass(frozen=True)
class InitScheme:
    variant: str = "original"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown init variant {self.variant!r}; expected one of {VARIANTS}")


def _routing_matrix(n_enc: int, d_model: int, enc_layer: int, dtype) -> np.ndarray:
    w = np.zeros((n_enc * d_model, d_model), dtype=dtype)
    w[enc_layer * d_model:(enc_layer + 1) * d_model] = np.eye(d_model, dtype=dtype)
    return w


def gca_source_layer(n_enc: int, dec_layer: int) -> int:
    """Encoder layer that decoder layer ``dec_layer`` reads under GCA routing."""
    return max(0, n_enc - 1 - dec_layer)


def init_original_connection(n_enc: int, n_dec: int, d_model: int, dtype=np.float32):
    from .model import BridgeWeights

    _check_dims(n_enc, n_dec, d_model)
    return BridgeWeights([
        Tensor(_routing_matrix(n_enc, d_model, n_enc - 1, dtype), requires_grad=True)
        for _ in range(n_dec)
    ])


def init_gca(n_enc: int, n_dec: int, d_model: int, dtype=np.float32):
    from .model import BridgeWeights

    _check_dims(n_enc, n_dec, d_model)
    return BridgeWeights([
        Tensor(_routing_matrix(n_enc, d_model, gca_source_layer(n_enc, i), dtype),
               requires_grad=True)
        for i in range(n_dec)
    ])


def init_constant_one(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def xavier_bound(shape) -> float:
    fan_in, fan_out = shape[0], shape[-1]
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_random_xavier(shape, seed: int, dtype=np.float32) -> Tensor:
    rng = np.random.default_rng(seed)
    a = xavier_bound(shape)
    return Tensor(rng.uniform(-a, a, size=shape).astype(dtype), requires_grad=True)


def init_bridge(scheme: InitScheme | str, n_enc: int, n_dec: int, d_model: int,
                dtype=np.float32):
    """Build a full set of bridge matrices for any of the four schemes."""
    from .model import BridgeWeights

    if isinstance(scheme, str):
        scheme = InitScheme(scheme)
    if scheme.variant == "original":
        return init_original_connection(n_enc, n_dec, d_model, dtype)
    if scheme.variant == "gca":
        return init_gca(n_enc, n_dec, d_model, dtype)
    _check_dims(n_enc, n_dec, d_model)
    shape = (n_enc * d_model, d_model)
    if scheme.variant == "ones":
        return BridgeWeights([init_constant_one(shape, dtype) for _ in range(n_dec)])
    return BridgeWeights([init_random_xavier(shape, scheme.seed + i, dtype) for i in range(n_dec)])


def _check_dims(n_enc, n_dec, d_model):
    if min(n_enc, n_dec, d_model) < 1:
        raise ValueError(f"dimensions must be positive, got L_enc={n_enc} L_dec={n_dec} d={d_model}")

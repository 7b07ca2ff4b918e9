"""Block-norm summaries of bridge matrices and heatmap export.

Each bridge matrix is split into ``L_enc`` row blocks of ``d_model x d_model``;
block ``(i, j)`` is the slice of decoder layer ``i``'s matrix that reads
encoder layer ``j``. Heatmaps show one cell per block.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import BridgeWeights, ModelConfig


@dataclass
class BlockNormMatrix:
    values: np.ndarray  # n_dec x n_enc, float64
    step: int | None = None
    scheme: str | None = None

    @property
    def shape(self):
        return self.values.shape


def _as_arrays(bridge) -> list[np.ndarray]:
    if isinstance(bridge, BridgeWeights):
        return bridge.arrays()
    return [np.asarray(getattr(w, "data", w)) for w in bridge]


def _blocks(w: np.ndarray, d_model: int) -> np.ndarray:
    rows, cols = w.shape
    if cols != d_model or rows % d_model:
        raise ValueError(f"bridge matrix {w.shape} is not a stack of {d_model}x{d_model} blocks")
    return w.astype(np.float64).reshape(rows // d_model, d_model, d_model)


def block_norms(bridge, config: ModelConfig | None = None, step: int | None = None,
                scheme: str | None = None) -> BlockNormMatrix:
    mats = _as_arrays(bridge)
    if not mats:
        raise ValueError("bridge has no matrices")
    d = mats[0].shape[1] if config is None else config.d_model
    if config is not None:
        expected = (config.n_enc_layers * d, d)
        if len(mats) != config.n_dec_layers or any(m.shape != expected for m in mats):
            raise ValueError(f"bridge of {len(mats)} matrices shaped {mats[0].shape} does not match "
                             f"{config.n_dec_layers} x {expected}")
    grid = np.stack([np.sqrt((_blocks(m, d) ** 2).sum(axis=(1, 2))) for m in mats])
    return BlockNormMatrix(grid, step, scheme)


def weight_drift(before, after) -> np.ndarray:
    """Frobenius norm of each block of ``after - before``."""
    a, b = _as_arrays(before), _as_arrays(after)
    if len(a) != len(b) or any(x.shape != y.shape for x, y in zip(a, b)):
        raise ValueError("bridge weights to compare differ in shape")
    diff = [y.astype(np.float64) - x.astype(np.float64) for x, y in zip(a, b)]
    return block_norms(diff).values


def scale_to_bytes(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Linear map of ``values`` onto 0..255; a constant grid maps to 255."""
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.full(values.shape, 255, dtype=np.uint8), lo, hi
    pix = np.rint((values - lo) / (hi - lo) * 255.0)
    return pix.astype(np.uint8), lo, hi


def write_pgm(values: np.ndarray, path, upscale: int = 1) -> tuple[float, float]:
    """Binary P5 image of a 2-D grid, with ``minmax.txt`` written alongside."""
    if upscale < 1:
        raise ValueError(f"upscale must be >= 1, got {upscale}")
    path = Path(path)
    pix, lo, hi = scale_to_bytes(np.asarray(values, dtype=np.float64))
    pix = np.kron(pix, np.ones((upscale, upscale), dtype=np.uint8))
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
    (path.parent / "minmax.txt").write_text(f"{lo!r}\n{hi!r}\n")
    return lo, hi


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(raw[len(raw) - w * h:], dtype=np.uint8).reshape(h, w)


def write_csv(values: np.ndarray, path) -> None:
    values = np.atleast_2d(values)
    lines = [",".join(f"enc{j}" for j in range(values.shape[1]))]
    lines += [",".join(f"{x:.9g}" for x in row) for row in values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def export_heatmap(m: BlockNormMatrix | np.ndarray, path, format: str = "pgm",
                   upscale: int = 1) -> Path:
    values = m.values if isinstance(m, BlockNormMatrix) else np.asarray(m)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if format == "csv":
        write_csv(values, path)
    elif format == "pgm":
        write_pgm(values, path, upscale)
    else:
        raise ValueError(f"unknown heatmap format {format!r}")
    return path


def export_raw_matrix(w, path, upscale: int = 1) -> Path:
    """PGM of a raw weight matrix, one pixel per entry."""
    write_pgm(np.asarray(getattr(w, "data", w), dtype=np.float64), path, upscale)
    return Path(path)

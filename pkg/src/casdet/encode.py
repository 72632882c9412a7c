"""Sinusoidal position encodings and the anchor-to-positional-query mapping.

Anchors are treated as constants of the computation (they are refined in
value space between decoder layers), so the raw encodings are plain numpy;
only the MLP on top participates in differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class PeConfig:
    """Per-coordinate encoding width and frequency spacing.

    ``dim_per_coord`` must be even; four encoded coordinates are concatenated,
    so the query MLP input width is ``4 * dim_per_coord``.
    """

    dim_per_coord: int = 32
    temperature: float = 10000.0

    def __post_init__(self):
        if self.dim_per_coord <= 0 or self.dim_per_coord % 2 != 0:
            raise ValueError(f"dim_per_coord must be a positive even integer, got {self.dim_per_coord}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def pe_frequencies(cfg: PeConfig) -> np.ndarray:
    """Geometrically decreasing frequencies, ratio temperature**(-1/n_bands)."""
    n = cfg.dim_per_coord // 2
    return cfg.temperature ** (-np.arange(n) / n)


def sinusoidal_pe(coord, cfg: PeConfig) -> np.ndarray:
    """Encode scalar coordinates as interleaved sin/cos bands.

    ``coord`` may be a scalar or any array; output appends an axis of length
    ``dim_per_coord``. Even slots are sines (0 at coord 0), odd slots cosines.
    """
    coord = np.asarray(coord, dtype=np.float64)
    angles = 2.0 * np.pi * coord[..., None] * pe_frequencies(cfg)
    out = np.empty(coord.shape + (cfg.dim_per_coord,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def box_pe_vector(boxes: np.ndarray, cfg: PeConfig) -> np.ndarray:
    """Concatenate the encodings of (cx, cy, w, h): (..., 4) -> (..., 4*dim)."""
    boxes = np.asarray(boxes, dtype=np.float64)
    parts = [sinusoidal_pe(boxes[..., i], cfg) for i in range(4)]
    return np.concatenate(parts, axis=-1)


def grid_pe(height: int, width: int, d_model: int, temperature: float = 10000.0) -> np.ndarray:
    """2D encodings of cell centers, x then y halves: (height*width, d_model)."""
    if d_model % 4 != 0:
        raise ValueError("d_model must be divisible by 4 for 2D encodings")
    cfg = PeConfig(dim_per_coord=d_model // 2, temperature=temperature)
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    px = sinusoidal_pe(xs, cfg)
    py = sinusoidal_pe(ys, cfg)
    out = np.concatenate(
        [np.broadcast_to(px[None, :, :], (height, width, cfg.dim_per_coord)),
         np.broadcast_to(py[:, None, :], (height, width, cfg.dim_per_coord))],
        axis=-1,
    )
    return out.reshape(height * width, d_model)


def init_positional_query(params: dict, rng: np.random.Generator, prefix: str, d_model: int) -> None:
    """Allocate the query MLP: 2*d_model -> d_model with one ReLU hidden layer."""
    n_in = 2 * d_model

    def w(shape):
        return Tensor(rng.normal(0.0, np.sqrt(2.0 / sum(shape)), size=shape), requires_grad=True)

    params[f"{prefix}.w1"] = w((n_in, d_model))
    params[f"{prefix}.b1"] = Tensor(np.zeros(d_model), requires_grad=True)
    params[f"{prefix}.w2"] = w((d_model, d_model))
    params[f"{prefix}.b2"] = Tensor(np.zeros(d_model), requires_grad=True)


def positional_query(anchors: np.ndarray, params: dict, prefix: str, cfg: PeConfig) -> Tensor:
    """Map anchor boxes to positional queries through a one-hidden-layer MLP.

    ``anchors`` has shape (..., 4); the result has shape (..., d_model) where
    d_model is the output width of ``{prefix}.w2``.
    """
    raw = box_pe_vector(anchors, cfg)
    single = raw.ndim == 1
    pe = Tensor(raw[None] if single else raw)
    h = T.relu(pe @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"])
    out = h @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"]
    return out[0] if single else out


def inv_sigmoid(p: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Logit of p, clamped to [eps, 1-eps] first so the result stays finite."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    return np.log(p / (1.0 - p))


def np_sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    e = np.exp(-ax)
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

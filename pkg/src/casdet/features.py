"""Toy backbone, encoder with dense feature fusion, RoI pooling and neck.

Feature grids are tensors of shape (H', W', C). The backbone is a
non-overlapping patch embedding; the encoder is a small pre-computed-position
transformer over flattened cells; RoI pooling is channelwise max over a
non-overlapping partition of the covered cell range.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor, accumulate_grad, custom_op
from .geom import box_cxcywh_to_xyxy


# parameter helpers ----------------------------------------------------------


def init_linear(params: dict, rng: np.random.Generator, name: str, n_in: int, n_out: int,
                zero: bool = False, bias: float = 0.0) -> None:
    if zero:
        w = np.zeros((n_in, n_out))
    else:
        w = rng.normal(0.0, math.sqrt(2.0 / (n_in + n_out)), size=(n_in, n_out))
    params[f"{name}.w"] = Tensor(w, requires_grad=True)
    params[f"{name}.b"] = Tensor(np.full(n_out, bias, dtype=np.float64), requires_grad=True)


def linear(x: Tensor, params: dict, name: str) -> Tensor:
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def init_layer_norm(params: dict, name: str, dim: int) -> None:
    params[f"{name}.g"] = Tensor(np.ones(dim), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(dim), requires_grad=True)


def apply_layer_norm(x: Tensor, params: dict, name: str) -> Tensor:
    return T.layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def init_mha(params: dict, rng: np.random.Generator, name: str, d_model: int) -> None:
    for part in ("q", "k", "v", "o"):
        init_linear(params, rng, f"{name}.{part}", d_model, d_model)


def multi_head_attention(q_in: Tensor, k_in: Tensor, v_in: Tensor, params: dict, name: str,
                         n_heads: int) -> Tensor:
    """Projected multi-head attention.

    Inputs are (..., n, d_model); leading batch axes are carried through all
    heads. Key/value inputs without the batch axes broadcast against them.
    """
    d_model = q_in.shape[-1]
    if d_model % n_heads != 0:
        raise ShapeError(f"d_model {d_model} not divisible by n_heads {n_heads}")
    dh = d_model // n_heads

    def split(x: Tensor) -> Tensor:
        n = x.shape[-2]
        return x.reshape(x.shape[:-2] + (n, n_heads, dh)).swapaxes(-2, -3)  # (..., h, n, dh)

    q = split(linear(q_in, params, f"{name}.q"))
    k = split(linear(k_in, params, f"{name}.k"))
    v = split(linear(v_in, params, f"{name}.v"))
    att = T.attention(q, k, v)  # (..., h, n, dh)
    n = att.shape[-2]
    merged = att.swapaxes(-2, -3).reshape(att.shape[:-3] + (n, d_model))
    return linear(merged, params, f"{name}.o")


def init_ffn(params: dict, rng: np.random.Generator, name: str, d_model: int, hidden: int) -> None:
    init_linear(params, rng, f"{name}.1", d_model, hidden)
    init_linear(params, rng, f"{name}.2", hidden, d_model)


def ffn(x: Tensor, params: dict, name: str) -> Tensor:
    return linear(T.relu(linear(x, params, f"{name}.1")), params, f"{name}.2")


# backbone and encoder --------------------------------------------------------


def patch_embed(image: np.ndarray, patch: int, params: dict, name: str = "patch") -> Tensor:
    """Project non-overlapping pixel patches to feature cells.

    The image (H, W, 3) is zero-padded on the bottom/right to a multiple of
    ``patch``; output is (H/patch, W/patch, C).
    """
    image = np.asarray(image, dtype=np.float64)
    h, w, c = image.shape
    ph = (patch - h % patch) % patch
    pw = (patch - w % patch) % patch
    if ph or pw:
        image = np.pad(image, ((0, ph), (0, pw), (0, 0)))
    gh, gw = image.shape[0] // patch, image.shape[1] // patch
    tiles = image.reshape(gh, patch, gw, patch, c).transpose(0, 2, 1, 3, 4).reshape(gh * gw, patch * patch * c)
    out = linear(Tensor(tiles), params, name)
    return out.reshape(gh, gw, out.shape[-1])


def encode_features(grid: Tensor, n_layers: int, params: dict, pe: np.ndarray, n_heads: int,
                    name: str = "enc") -> Tensor:
    """Self-attention encoder over flattened cells with 2D position bias.

    Zero layers is the identity. Position encodings are added to queries and
    keys only; spatial dims are preserved.
    """
    if n_layers == 0:
        return grid
    h, w, d = grid.shape
    x = grid.reshape(h * w, d)
    pe_t = Tensor(pe)
    for i in range(n_layers):
        qk = x + pe_t
        x = apply_layer_norm(x + multi_head_attention(qk, qk, x, params, f"{name}{i}.attn", n_heads),
                             params, f"{name}{i}.ln1")
        x = apply_layer_norm(x + ffn(x, params, f"{name}{i}.ffn"), params, f"{name}{i}.ln2")
    return x.reshape(h, w, d)


def dense_fusion(enc: Tensor, backbone: Tensor, params: dict, name: str = "fuse") -> Tensor:
    """Channel-concatenate encoder and backbone grids, project back to d_model."""
    if enc.shape[:2] != backbone.shape[:2]:
        raise ShapeError(f"spatial dims differ: {enc.shape[:2]} vs {backbone.shape[:2]}")
    cat = T.concat([enc, backbone], axis=-1)
    return linear(cat, params, name)


# RoI pooling ------------------------------------------------------------------


def _bin_bounds(lo: float, hi: float, n_cells: int, n_bins: int) -> tuple[int, int, np.ndarray]:
    """Covered cell range and non-overlapping integer bin boundaries."""
    c0 = int(np.clip(np.floor(lo), 0, n_cells - 1))
    c1 = int(np.clip(np.ceil(hi), c0 + 1, n_cells))
    span = c1 - c0
    bounds = np.array([(k * span) // n_bins for k in range(n_bins)], dtype=np.intp)
    return c0, c1, bounds


def roi_pool_batch(grid: Tensor, boxes: np.ndarray, out_hw: tuple[int, int] = (7, 7)) -> Tensor:
    """Channelwise max-pool fixed-size region features for a batch of boxes.

    ``boxes`` is (n, 4) cxcywh in normalized image coordinates; the result is
    (n, H_roi, W_roi, C). The covered cell range of each box is partitioned
    into contiguous bins; a bin left empty by a small box takes the value of
    the boundary cell, so tiny boxes replicate their single covered cell.
    Gradients flow to the grid cells that supplied each bin maximum; box
    coordinates are constants of the op.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    hb, wb = out_hw
    h, w, c = grid.shape
    data = grid.data
    n = boxes.shape[0]
    out = np.empty((n, hb, wb, c), dtype=np.float64)
    meta = []
    xyxy = np.clip(box_cxcywh_to_xyxy(boxes), 0.0, 1.0)
    for i in range(n):
        x0, y0, x1, y1 = xyxy[i]
        r0, r1, rb = _bin_bounds(y0 * h, y1 * h, h, hb)
        c0, c1, cb = _bin_bounds(x0 * w, x1 * w, w, wb)
        sub = data[r0:r1, c0:c1]
        pooled = np.maximum.reduceat(sub, rb, axis=0)
        pooled = np.maximum.reduceat(pooled, cb, axis=1)
        out[i] = pooled
        meta.append((r0, r1, rb, c0, c1, cb))

    def backward(o: Tensor) -> None:
        if not grid.requires_grad:
            return
        buf = np.zeros_like(data)
        g = o.grad
        for i, (r0, r1, rb, c0, c1, cb) in enumerate(meta):
            sub = data[r0:r1, c0:c1]
            nr, nc = sub.shape[:2]
            rstops = np.append(rb[1:], nr)
            cstops = np.append(cb[1:], nc)
            for bi in range(hb):
                rs, re = rb[bi], max(rstops[bi], rb[bi] + 1)
                for bj in range(wb):
                    cs, ce = cb[bj], max(cstops[bj], cb[bj] + 1)
                    seg = sub[rs:re, cs:ce].reshape(-1, c)
                    am = np.argmax(seg, axis=0)
                    rr = rs + am // (ce - cs)
                    cc = cs + am % (ce - cs)
                    np.add.at(buf[r0:r1, c0:c1], (rr, cc, np.arange(c)), g[i, bi, bj])
        accumulate_grad(grid, buf)

    return custom_op(out, (grid,), backward)


def roi_pool(grid: Tensor, box: np.ndarray, out_hw: tuple[int, int] = (7, 7)) -> Tensor:
    """Single-box RoI pooling; see roi_pool_batch."""
    return roi_pool_batch(grid, np.asarray(box)[None], out_hw)[0]


def neck(region: Tensor, params: dict, name: str = "neck") -> Tensor:
    """Flatten region features and project to the model width via two linears."""
    flat_dim = region.shape[-3] * region.shape[-2] * region.shape[-1]
    flat = region.reshape(region.shape[:-3] + (flat_dim,))
    return linear(T.relu(linear(flat, params, f"{name}.1")), params, f"{name}.2")

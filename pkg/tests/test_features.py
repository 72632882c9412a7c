import numpy as np
import pytest

from casdet import tensor as T
from casdet.encode import grid_pe
from casdet.features import (
    dense_fusion,
    encode_features,
    init_layer_norm,
    init_linear,
    init_mha,
    init_ffn,
    multi_head_attention,
    neck,
    patch_embed,
    roi_pool,
    roi_pool_batch,
)
from casdet.tensor import ShapeError, Tensor


def make_patch_params(rng, patch=8, c=16, zero=False):
    params = {}
    init_linear(params, rng, "patch", patch * patch * 3, c, zero=zero)
    return params


def make_encoder_params(rng, d, layers=1, ffn_dim=32):
    params = {}
    for i in range(layers):
        init_mha(params, rng, f"enc{i}.attn", d)
        init_ffn(params, rng, f"enc{i}.ffn", d, ffn_dim)
        init_layer_norm(params, f"enc{i}.ln1", d)
        init_layer_norm(params, f"enc{i}.ln2", d)
    return params


def test_patch_embed_shape():
    rng = np.random.default_rng(0)
    params = make_patch_params(rng, patch=8, c=16)
    out = patch_embed(rng.random((32, 32, 3)), 8, params)
    assert out.shape == (4, 4, 16)


def test_patch_embed_pads_odd_sizes():
    rng = np.random.default_rng(1)
    params = make_patch_params(rng, patch=8, c=16)
    out = patch_embed(rng.random((33, 40, 3)), 8, params)
    assert out.shape == (5, 5, 16)


def test_patch_embed_zero_image_zero_bias():
    rng = np.random.default_rng(2)
    params = make_patch_params(rng, patch=4, c=8)
    out = patch_embed(np.zeros((16, 16, 3)), 4, params)
    np.testing.assert_array_equal(out.data, 0.0)


def test_patch_embed_grad_check():
    rng = np.random.default_rng(3)
    params = make_patch_params(rng, patch=4, c=6)
    img = rng.random((8, 8, 3))
    wrt = list(params.values())
    err = T.grad_check(lambda: (patch_embed(img, 4, params) ** 2).sum(), wrt)
    assert err < 1e-6


def test_encoder_zero_layers_identity():
    rng = np.random.default_rng(4)
    grid = Tensor(rng.normal(size=(3, 5, 8)))
    out = encode_features(grid, 0, {}, grid_pe(3, 5, 8), n_heads=2)
    assert out is grid


def test_encoder_preserves_shape_and_changes_values():
    rng = np.random.default_rng(5)
    d = 8
    params = make_encoder_params(rng, d, layers=2)
    grid = Tensor(rng.normal(size=(4, 4, d)))
    pe = grid_pe(4, 4, d)
    out = encode_features(grid, 2, params, pe, n_heads=2)
    assert out.shape == (4, 4, d)
    assert not np.allclose(out.data, grid.data)


def test_encoder_grad_flows():
    rng = np.random.default_rng(6)
    d = 8
    params = make_encoder_params(rng, d, layers=1)
    grid = Tensor(rng.normal(size=(2, 3, d)), requires_grad=True)
    pe = grid_pe(2, 3, d)
    err = T.grad_check(lambda: (encode_features(grid, 1, params, pe, n_heads=2) ** 2).sum(), grid)
    assert err < 1e-5


def test_mha_batched_matches_per_group():
    rng = np.random.default_rng(7)
    d = 8
    params = {}
    init_mha(params, rng, "attn", d)
    x = rng.normal(size=(3, 5, d))
    batched = multi_head_attention(Tensor(x), Tensor(x), Tensor(x), params, "attn", 2).data
    for g in range(3):
        single = multi_head_attention(Tensor(x[g]), Tensor(x[g]), Tensor(x[g]), params, "attn", 2).data
        np.testing.assert_allclose(batched[g], single, atol=1e-12)


def test_fusion_output_channels_and_shape_error():
    rng = np.random.default_rng(8)
    d = 8
    params = {}
    init_linear(params, rng, "fuse", 2 * d, d)
    enc = Tensor(rng.normal(size=(3, 4, d)))
    bb = Tensor(rng.normal(size=(3, 4, d)))
    assert dense_fusion(enc, bb, params).shape == (3, 4, d)
    with pytest.raises(ShapeError):
        dense_fusion(enc, Tensor(rng.normal(size=(4, 3, d))), params)


def test_fusion_linearity_with_zero_bias():
    rng = np.random.default_rng(9)
    d = 6
    params = {}
    init_linear(params, rng, "fuse", 2 * d, d)
    params["fuse.b"].data[:] = 0.0
    enc = Tensor(rng.normal(size=(2, 2, d)))
    bb = Tensor(rng.normal(size=(2, 2, d)))
    a = dense_fusion(enc, bb, params).data
    b = dense_fusion(Tensor(3.0 * enc.data), Tensor(3.0 * bb.data), params).data
    np.testing.assert_allclose(b, 3.0 * a, atol=1e-12)


def test_roi_constant_grid():
    grid = Tensor(np.full((8, 8, 4), 2.5))
    box = np.array([0.4, 0.5, 0.3, 0.35])
    out = roi_pool(grid, box)
    assert out.shape == (7, 7, 4)
    np.testing.assert_array_equal(out.data, 2.5)


def test_roi_identity_on_exact_bin_grid():
    rng = np.random.default_rng(10)
    grid = Tensor(rng.normal(size=(8, 8, 3)))
    # box covering cell rows 1..7, cols 0..6 of the 8x8 grid: one cell per bin
    box_xyxy = np.array([0.0, 1 / 8, 7 / 8, 1.0])
    box = np.array(
        [(box_xyxy[0] + box_xyxy[2]) / 2, (box_xyxy[1] + box_xyxy[3]) / 2, box_xyxy[2] - box_xyxy[0], box_xyxy[3] - box_xyxy[1]]
    )
    out = roi_pool(grid, box)
    np.testing.assert_array_equal(out.data, grid.data[1:8, 0:7])


def test_roi_tiny_box_replicates_single_cell():
    rng = np.random.default_rng(11)
    grid = Tensor(rng.normal(size=(8, 8, 5)))
    box = np.array([3.5 / 8, 2.5 / 8, 0.01, 0.01])  # inside cell (row 2, col 3)
    out = roi_pool(grid, box)
    np.testing.assert_array_equal(out.data, np.broadcast_to(grid.data[2, 3], (7, 7, 5)))


def brute_force_roi(data, box, out_hw=(7, 7)):
    """Independent bin enumeration: same partition rule, plain loops."""
    import math

    h, w, c = data.shape
    x0, y0 = box[0] - box[2] / 2, box[1] - box[3] / 2
    x1, y1 = box[0] + box[2] / 2, box[1] + box[3] / 2
    x0, y0, x1, y1 = max(x0, 0), max(y0, 0), min(x1, 1), min(y1, 1)

    def cells(lo, hi, n):
        c0 = min(max(int(math.floor(lo)), 0), n - 1)
        c1 = min(max(int(math.ceil(hi)), c0 + 1), n)
        return c0, c1

    r0, r1 = cells(y0 * h, y1 * h, h)
    c0, c1 = cells(x0 * w, x1 * w, w)
    nr, nc = r1 - r0, c1 - c0
    out = np.empty(out_hw + (c,))
    for bi in range(out_hw[0]):
        rs = (bi * nr) // out_hw[0]
        re = ((bi + 1) * nr) // out_hw[0]
        if re <= rs:
            re = rs + 1
        for bj in range(out_hw[1]):
            cs = (bj * nc) // out_hw[1]
            ce = ((bj + 1) * nc) // out_hw[1]
            if ce <= cs:
                ce = cs + 1
            seg = data[r0 + rs : r0 + re, c0 + cs : c0 + ce].reshape(-1, c)
            out[bi, bj] = seg.max(axis=0)
    return out


def test_roi_matches_brute_force_enumeration():
    rng = np.random.default_rng(12)
    grid = Tensor(rng.normal(size=(8, 8, 4)))
    for _ in range(40):
        box = np.array(
            [rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.02, 0.6), rng.uniform(0.02, 0.6)]
        )
        out = roi_pool(grid, box).data
        np.testing.assert_array_equal(out, brute_force_roi(grid.data, box))


def test_roi_bin_indices_pure_function_of_cell_range():
    rng = np.random.default_rng(13)
    grid = Tensor(rng.normal(size=(8, 8, 3)))
    # both boxes cover cell rows 2..5, cols 2..5; outputs must be identical
    a = np.array([0.47, 0.47, 0.32, 0.32])
    b = np.array([0.48, 0.46, 0.33, 0.34])
    np.testing.assert_array_equal(roi_pool(grid, a).data, roi_pool(grid, b).data)


def test_roi_batch_matches_singles_and_grad():
    rng = np.random.default_rng(14)
    grid = Tensor(rng.normal(size=(6, 6, 3)), requires_grad=True)
    boxes = np.stack(
        [np.array([0.3, 0.3, 0.3, 0.4]), np.array([0.7, 0.6, 0.2, 0.2]), np.array([0.5, 0.5, 0.9, 0.9])]
    )
    batch = roi_pool_batch(grid, boxes, out_hw=(3, 3))
    for i in range(3):
        np.testing.assert_array_equal(batch.data[i], roi_pool_batch(grid, boxes[i][None], out_hw=(3, 3)).data[0])
    w = rng.normal(size=batch.shape)
    err = T.grad_check(lambda: (roi_pool_batch(grid, boxes, out_hw=(3, 3)) * w).sum(), grid)
    assert err < 1e-5


def test_neck_shapes_zero_and_grad():
    rng = np.random.default_rng(15)
    c, d_hidden, d_model = 4, 12, 8
    params = {}
    init_linear(params, rng, "neck.1", 7 * 7 * c, d_hidden)
    init_linear(params, rng, "neck.2", d_hidden, d_model)
    region = Tensor(rng.normal(size=(5, 7, 7, c)))
    out = neck(region, params)
    assert out.shape == (5, d_model)
    assert np.all(np.isfinite(out.data))

    zero_params = {k: Tensor(np.zeros_like(v.data)) for k, v in params.items()}
    np.testing.assert_array_equal(neck(Tensor(np.zeros((2, 7, 7, c))), zero_params).data, 0.0)

    wrt = list(params.values())
    err = T.grad_check(lambda: (neck(region, params) ** 2).sum(), wrt)
    assert err < 1e-5

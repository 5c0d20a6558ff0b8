"""Attention blocks: decomposition, invariances, and hand examples."""

import numpy as np
import pytest

from conddet import tensor as T
from conddet.attention import (
    AdditiveCrossAttention,
    ConditionalCrossAttention,
    MultiHeadSelfAttention,
)
from conddet.encoder import MemoryFeatures
from conddet.rng import Rng


def _memory(rng, n_keys, d, grid=(1, None)):
    h = grid[0]
    w = n_keys // h if grid[1] is None else grid[1]
    return MemoryFeatures(
        content=T.Tensor(rng.normal((n_keys, d)), requires_grad=True),
        positions=T.Tensor(rng.normal((n_keys, d))),
        grid_h=h,
        grid_w=w,
    )


# --- self-attention ----------------------------------------------------

def test_self_attention_singleton_is_value_path():
    rng = Rng(0)
    blk = MultiHeadSelfAttention(Rng(1), d=8, num_heads=2)
    x = T.Tensor(rng.normal((1, 8)))
    pos = T.Tensor(rng.normal((1, 8)))
    out = blk(x, pos)
    # Softmax over one key is 1, so attention reduces to out(v(x)).
    direct = blk.out(blk.v(x))
    assert np.allclose(out.data, direct.data, atol=1e-15)


def test_self_attention_permutation_equivariant():
    rng = Rng(2)
    blk = MultiHeadSelfAttention(Rng(3), d=8, num_heads=2)
    x, pos = rng.normal((5, 8)), rng.normal((5, 8))
    perm = np.array([4, 2, 0, 1, 3])
    out = blk(T.Tensor(x), T.Tensor(pos)).data
    out_p = blk(T.Tensor(x[perm]), T.Tensor(pos[perm])).data
    assert np.allclose(out_p, out[perm], atol=1e-12)


def test_self_attention_identical_rows_get_identical_outputs():
    rng = Rng(4)
    blk = MultiHeadSelfAttention(Rng(5), d=8, num_heads=2)
    row = rng.normal((1, 8))
    x = T.Tensor(np.vstack([row, row]))
    pos = T.Tensor(np.zeros((2, 8)))
    out = blk(x, pos).data
    assert np.array_equal(out[0], out[1])


# --- additive cross-attention -------------------------------------------

def test_additive_zero_positions_reduce_to_content_attention():
    rng = Rng(6)
    blk = AdditiveCrossAttention(Rng(7), d=8, num_heads=2)
    content = T.Tensor(rng.normal((3, 8)))
    mem = _memory(rng, 6, 8)
    mem.positions = T.Tensor(np.zeros((6, 8)))
    _, maps = blk(content, T.Tensor(np.zeros((3, 8))), mem, record_maps=True)
    assert np.all(maps.spatial_logits == 0.0)
    assert np.array_equal(maps.combined_logits, maps.content_logits)


def test_additive_logits_equal_four_term_expansion():
    # The projected query is W_q c + b_q + W_q o and the key splits into
    # (W_k m + b_k) + W_k p, so each head's combined logit must equal the
    # sum of the four pairwise dot products, scaled.
    rng = Rng(8)
    d, M = 8, 2
    hd = d // M
    blk = AdditiveCrossAttention(Rng(9), d, M)
    content = rng.normal((4, d))
    query_pos = rng.normal((4, d))
    mem = _memory(rng, 6, d)
    _, maps = blk(T.Tensor(content), T.Tensor(query_pos), mem, record_maps=True)

    qc = content @ blk.q.w.data + blk.q.b.data
    qo = query_pos @ blk.q.w.data
    kc = mem.content.data @ blk.k.w.data + blk.k.b.data
    ks = mem.positions.data @ blk.k.w.data
    for h in range(M):
        s = slice(h * hd, (h + 1) * hd)
        four = (
            qc[:, s] @ kc[:, s].T
            + qc[:, s] @ ks[:, s].T
            + qo[:, s] @ kc[:, s].T
            + qo[:, s] @ ks[:, s].T
        ) / np.sqrt(hd)
        assert np.max(np.abs(maps.combined_logits[h] - four)) < 1e-12


def test_additive_uniform_memory_gives_uniform_weights():
    rng = Rng(10)
    blk = AdditiveCrossAttention(Rng(11), d=8, num_heads=2)
    key = rng.normal((1, 8))
    pos = rng.normal((1, 8))
    mem = MemoryFeatures(
        content=T.Tensor(np.tile(key, (5, 1))),
        positions=T.Tensor(np.tile(pos, (5, 1))),
        grid_h=1,
        grid_w=5,
    )
    _, maps = blk(T.Tensor(rng.normal((3, 8))), T.Tensor(rng.normal((3, 8))), mem,
                  record_maps=True)
    assert np.allclose(maps.combined, 0.2, atol=1e-15)


# --- conditional cross-attention ----------------------------------------

def _conditional_inputs(seed, n=4, k=6, d=8):
    rng = Rng(seed)
    return (
        T.Tensor(rng.normal((n, d)), requires_grad=True),
        T.Tensor(rng.normal((n, d))),
        _memory(rng, k, d),
    )


def test_conditional_combined_is_exact_sum():
    content, spatial, mem = _conditional_inputs(12)
    blk = ConditionalCrossAttention(Rng(13), d=8, num_heads=2)
    _, maps = blk(content, spatial, mem, record_maps=True)
    assert np.array_equal(
        maps.combined_logits, maps.content_logits + maps.spatial_logits
    )
    assert np.array_equal(maps.full_combined.argmax(axis=-1).shape, (4,))


def test_conditional_spatial_maps_ignore_content():
    blk = ConditionalCrossAttention(Rng(14), d=8, num_heads=2)
    content, spatial, mem = _conditional_inputs(15)
    _, maps_a = blk(content, spatial, mem, record_maps=True)

    rng = Rng(99)
    content2 = T.Tensor(content.data + rng.normal(content.data.shape))
    mem2 = MemoryFeatures(
        content=T.Tensor(rng.normal(mem.content.data.shape)),
        positions=mem.positions,
        grid_h=mem.grid_h,
        grid_w=mem.grid_w,
    )
    _, maps_b = blk(content2, spatial, mem2, record_maps=True)
    assert maps_a.spatial_logits.tobytes() == maps_b.spatial_logits.tobytes()
    assert maps_a.spatial.tobytes() == maps_b.spatial.tobytes()
    assert maps_a.full_spatial.tobytes() == maps_b.full_spatial.tobytes()


def test_conditional_content_maps_ignore_positions():
    blk = ConditionalCrossAttention(Rng(16), d=8, num_heads=2)
    content, spatial, mem = _conditional_inputs(17)
    _, maps_a = blk(content, spatial, mem, record_maps=True)
    rng = Rng(98)
    mem2 = MemoryFeatures(
        content=mem.content,
        positions=T.Tensor(rng.normal(mem.positions.data.shape)),
        grid_h=mem.grid_h,
        grid_w=mem.grid_w,
    )
    _, maps_b = blk(content, T.Tensor(rng.normal(spatial.data.shape)), mem2,
                    record_maps=True)
    assert maps_a.content_logits.tobytes() == maps_b.content_logits.tobytes()
    assert maps_a.full_content.tobytes() == maps_b.full_content.tobytes()


def test_conditional_zero_spatial_query_means_uniform_spatial_map():
    # No bias on the spatial projections, so p_q = 0 forces zero spatial
    # logits and the combined map collapses onto the content map.
    blk = ConditionalCrossAttention(Rng(18), d=8, num_heads=2)
    content, _, mem = _conditional_inputs(19)
    _, maps = blk(content, T.Tensor(np.zeros((4, 8))), mem, record_maps=True)
    assert np.all(maps.spatial_logits == 0.0)
    assert np.allclose(maps.spatial, 1.0 / 6.0, atol=1e-15)
    assert np.array_equal(maps.combined, maps.content)


def test_conditional_identity_projection_hand_values():
    # d=2, one head, identity projections, zero biases. Content product
    # is 2, spatial is 3, and the scale is 1/sqrt(2*head_dim) = 1/2.
    blk = ConditionalCrossAttention(Rng(20), d=2, num_heads=1)
    for lin in (blk.q_content, blk.q_spatial, blk.k_content, blk.k_spatial, blk.v, blk.out):
        lin.w.data[:] = np.eye(2)
        if lin.b is not None:
            lin.b.data[:] = 0.0
    mem = MemoryFeatures(
        content=T.Tensor(np.array([[2.0, 0.0]])),
        positions=T.Tensor(np.array([[0.0, 3.0]])),
        grid_h=1,
        grid_w=1,
    )
    out, maps = blk(
        T.Tensor(np.array([[1.0, 0.0]])),
        T.Tensor(np.array([[0.0, 1.0]])),
        mem,
        record_maps=True,
    )
    assert maps.content_logits[0, 0, 0] == pytest.approx(2.0 * 0.5, abs=1e-15)
    assert maps.spatial_logits[0, 0, 0] == pytest.approx(3.0 * 0.5, abs=1e-15)
    assert maps.combined_logits[0, 0, 0] == pytest.approx(2.5, abs=1e-15)
    # Single key: the output is exactly the value vector.
    assert np.allclose(out.data, [[2.0, 0.0]], atol=1e-15)


def test_maps_row_normalized():
    content, spatial, mem = _conditional_inputs(21)
    blk = ConditionalCrossAttention(Rng(22), d=8, num_heads=2)
    _, maps = blk(content, spatial, mem, record_maps=True)
    for kind, arr in maps.kinds().items():
        assert np.max(np.abs(arr.sum(axis=-1) - 1.0)) < 1e-12, kind
        assert arr.min() >= 0.0
    for arr in (maps.full_content, maps.full_spatial, maps.full_combined):
        assert np.max(np.abs(arr.sum(axis=-1) - 1.0)) < 1e-12


def test_maps_are_off_by_default():
    content, spatial, mem = _conditional_inputs(23)
    blk = ConditionalCrossAttention(Rng(24), d=8, num_heads=2)
    _, maps = blk(content, spatial, mem)
    assert maps is None


def test_output_width_is_model_dim():
    content, spatial, mem = _conditional_inputs(25)
    blk = ConditionalCrossAttention(Rng(26), d=8, num_heads=4)
    out, _ = blk(content, spatial, mem)
    assert out.data.shape == (4, 8)


def test_width_mismatch_raises():
    with pytest.raises(ValueError):
        ConditionalCrossAttention(Rng(27), d=10, num_heads=4)
    with pytest.raises(ValueError):
        MultiHeadSelfAttention(Rng(28), d=6, num_heads=4)

"""Patchify and encoder stack contracts."""

import numpy as np
import pytest

from conddet import tensor as T
from conddet.encoder import Encoder, patches_from_image
from conddet.posenc import grid_embeddings
from conddet.rng import Rng


def test_patchify_shape_and_order():
    img = np.arange(32 * 32, dtype=np.float64).reshape(32, 32)
    flat = patches_from_image(img, 8)
    assert flat.shape == (16, 64)
    # First patch is the top-left 8x8 block, pixels row-major.
    assert np.array_equal(flat[0], img[:8, :8].reshape(-1))
    # Patch grid is row-major: patch 1 sits to the right of patch 0.
    assert np.array_equal(flat[1], img[:8, 8:16].reshape(-1))
    assert np.array_equal(flat[4], img[8:16, :8].reshape(-1))


def test_patchify_rejects_indivisible_image():
    with pytest.raises(ValueError):
        patches_from_image(np.zeros((30, 32)), 8)


def test_zero_image_zero_bias_gives_zero_embeddings():
    enc = Encoder(Rng(0), d=8, num_heads=2, num_layers=0, patch_size=8,
                  grid_h=2, grid_w=2)
    mem = enc(np.zeros((16, 16)))
    assert np.array_equal(mem.content.data, np.zeros((4, 8)))


def test_one_patch_difference_is_local_before_attention():
    enc = Encoder(Rng(1), d=8, num_heads=2, num_layers=0, patch_size=8,
                  grid_h=2, grid_w=2)
    a = np.zeros((16, 16))
    b = a.copy()
    b[8:16, 0:8] += 1.0  # patch index 2 in row-major patch order
    diff = enc(b).content.data - enc(a).content.data
    changed = np.flatnonzero(np.abs(diff).sum(axis=1))
    assert changed.tolist() == [2]


def test_zero_layers_pass_content_through():
    enc = Encoder(Rng(2), d=8, num_heads=2, num_layers=0, patch_size=4,
                  grid_h=3, grid_w=3)
    img = Rng(3).uniform(0, 1, (12, 12))
    mem = enc(img)
    direct = patches_from_image(img, 4) @ enc.embed.w.data + enc.embed.b.data
    assert np.array_equal(mem.content.data, direct)


def test_positions_are_exact_grid_embeddings_and_fixed():
    enc = Encoder(Rng(4), d=8, num_heads=2, num_layers=2, patch_size=8,
                  grid_h=2, grid_w=2)
    assert np.array_equal(enc.positions.data, grid_embeddings(2, 2, 8))
    assert not enc.positions.requires_grad
    mem = enc(Rng(5).uniform(0, 1, (16, 16)))
    loss = T.tsum(T.mul(mem.content, mem.content))
    loss.backward()
    assert enc.positions.grad is None


def test_output_length_and_width_stable_across_depths():
    for layers in (0, 1, 3):
        enc = Encoder(Rng(6), d=8, num_heads=2, num_layers=layers, patch_size=4,
                      grid_h=2, grid_w=4)
        mem = enc(Rng(7).uniform(0, 1, (8, 16)))
        assert mem.content.data.shape == (8, 8)


def test_wrong_grid_rejected():
    enc = Encoder(Rng(8), d=8, num_heads=2, num_layers=0, patch_size=8,
                  grid_h=2, grid_w=2)
    with pytest.raises(ValueError):
        enc(np.zeros((8, 8)))


def test_encoder_gradient_on_two_by_two_grid():
    # The encoder owns its parameters, so check by hand: backward once,
    # then nudge a few coordinates of each parameter in place and compare
    # against central differences of a fresh forward.
    enc = Encoder(Rng(9), d=8, num_heads=2, num_layers=1, patch_size=8,
                  grid_h=2, grid_w=2)
    img = Rng(10).uniform(0, 1, (16, 16))

    def value():
        mem = enc(img)
        return T.tsum(T.mul(mem.content, mem.content))

    value().backward()
    h = 1e-5
    worst = 0.0
    rng = Rng(11)
    for name, p in enc.named_params("enc"):
        grad = p.grad.reshape(-1)
        flat = p.data.reshape(-1)
        for ci in rng.choice(flat.size, min(3, flat.size)):
            old = flat[ci]
            flat[ci] = old + h
            f_plus = value().item()
            flat[ci] = old - h
            f_minus = value().item()
            flat[ci] = old
            fd = (f_plus - f_minus) / (2 * h)
            worst = max(worst, abs(grad[ci] - fd) / max(1.0, abs(fd)))
    assert worst < 1e-4

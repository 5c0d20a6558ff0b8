"""Image-to-memory pipeline: patch embedding plus a small transformer
encoder stack. The output is a MemoryFeatures bundle pairing the encoded
content sequence with the fixed sinusoidal embedding of each grid cell."""

from dataclasses import dataclass

import numpy as np

from . import posenc
from . import tensor as T
from .attention import MultiHeadSelfAttention
from .nn import FFN, LayerNorm, Linear


@dataclass
class MemoryFeatures:
    """Encoded key-side features for cross-attention.

    content: (grid_h * grid_w, d) Tensor of encoder outputs, row-major.
    positions: (grid_h * grid_w, d) constant Tensor of grid embeddings.
    """

    content: T.Tensor
    positions: T.Tensor
    grid_h: int
    grid_w: int


def patches_from_image(image, patch_size):
    """Cut an (H, W) image into flattened non-overlapping patches.

    Returns (n_patches, patch_size**2), patches ordered row-major over the
    patch grid, pixels row-major within each patch.
    """
    image = np.asarray(image, dtype=np.float64)
    H, W = image.shape
    if H % patch_size or W % patch_size:
        raise ValueError(f"image {image.shape} not divisible into {patch_size}-pixel patches")
    gh, gw = H // patch_size, W // patch_size
    tiles = image.reshape(gh, patch_size, gw, patch_size)
    return tiles.transpose(0, 2, 1, 3).reshape(gh * gw, patch_size * patch_size)


class EncoderLayer:
    """Self-attention then feedforward, each with residual and post-norm."""

    def __init__(self, rng, d, num_heads, ffn_hidden):
        self.attn = MultiHeadSelfAttention(rng, d, num_heads)
        self.ffn = FFN(rng, [d, ffn_hidden, d])
        self.norm1 = LayerNorm(d)
        self.norm2 = LayerNorm(d)

    def __call__(self, x, pos):
        x = self.norm1(T.add(x, self.attn(x, pos)))
        x = self.norm2(T.add(x, self.ffn(x)))
        return x

    def named_params(self, prefix):
        out = self.attn.named_params(f"{prefix}.attn")
        out.extend(self.ffn.named_params(f"{prefix}.ffn"))
        out.extend(self.norm1.named_params(f"{prefix}.norm1"))
        out.extend(self.norm2.named_params(f"{prefix}.norm2"))
        return out


class Encoder:
    """Patch embedding plus a stack of encoder layers.

    The same grid embedding table serves as the positional term inside
    every encoder layer and as the spatial keys handed to the decoder.
    """

    def __init__(self, rng, d, num_heads, num_layers, patch_size, grid_h, grid_w, temperature=10000.0):
        self.patch_size = patch_size
        self.grid_h = grid_h
        self.grid_w = grid_w
        self.embed = Linear(rng, patch_size * patch_size, d)
        self.positions = T.Tensor(posenc.grid_embeddings(grid_h, grid_w, d, temperature))
        self.layers = [EncoderLayer(rng, d, num_heads, 4 * d) for _ in range(num_layers)]

    def __call__(self, image):
        flat = patches_from_image(image, self.patch_size)
        if flat.shape[0] != self.grid_h * self.grid_w:
            raise ValueError(
                f"image yields {flat.shape[0]} patches, grid expects {self.grid_h * self.grid_w}"
            )
        x = self.embed(T.Tensor(flat))
        for layer in self.layers:
            x = layer(x, self.positions)
        return MemoryFeatures(
            content=x, positions=self.positions, grid_h=self.grid_h, grid_w=self.grid_w
        )

    def named_params(self, prefix):
        out = self.embed.named_params(f"{prefix}.embed")
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_params(f"{prefix}.layer{i}"))
        return out

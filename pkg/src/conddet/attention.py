"""Multi-head attention blocks.

Two cross-attention designs read the same encoded memory:

* ``AdditiveCrossAttention`` sums content and positional parts before the
  projections, classic detection-transformer style. The query is
  W_q(content + query_pos) + b_q and the keys likewise combine memory
  content with the key grid embedding, so one dot product mixes all four
  content/positional pairings.

* ``ConditionalCrossAttention`` keeps the two channels apart. Content
  query/key and spatial query/key go through separate projections, each
  head concatenates its content and spatial slices, and the logit becomes
  an exact sum of a content term and a spatial term. Values come from
  content only. Because concatenation doubles the effective width, logits
  are scaled by 1/sqrt(2 * head_dim) instead of 1/sqrt(head_dim).

Both blocks can record ``AttentionMaps``: per-head logits and softmaxed
maps for the content, spatial, and combined terms, plus projection-free
full-width maps taken directly on the unprojected streams (those are what
localization diagnostics use, since random projections need not preserve
which key a query is nearest to).
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear


def softmax_rows(x):
    """Numerically stable row softmax on a numpy array."""
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class AttentionMaps:
    """Attention diagnostics for one cross-attention call.

    Per-head arrays have shape (heads, n_queries, n_keys) and hold raw
    logits plus their softmax over keys. ``full_*`` are (n_queries, n_keys)
    maps computed on the unprojected content/spatial streams, scaled by
    1/sqrt(model_dim). ``grid_h``/``grid_w`` let callers fold the key axis
    back into the 2-d feature grid.
    """

    grid_h: int
    grid_w: int
    content_logits: np.ndarray
    spatial_logits: np.ndarray
    combined_logits: np.ndarray
    content: np.ndarray
    spatial: np.ndarray
    combined: np.ndarray
    full_content: np.ndarray
    full_spatial: np.ndarray
    full_combined: np.ndarray

    def kinds(self):
        return {"content": self.content, "spatial": self.spatial, "combined": self.combined}


def _heads(x, num_heads, head_dim):
    return [T.slice_axis(x, 1, h * head_dim, (h + 1) * head_dim) for h in range(num_heads)]


def _record_maps(grid_h, grid_w, lc_list, ls_list, lcomb_list, full_c, full_s):
    content_logits = np.stack([t.data for t in lc_list])
    spatial_logits = np.stack([t.data for t in ls_list])
    combined_logits = np.stack([t.data for t in lcomb_list])
    return AttentionMaps(
        grid_h=grid_h,
        grid_w=grid_w,
        content_logits=content_logits,
        spatial_logits=spatial_logits,
        combined_logits=combined_logits,
        content=softmax_rows(content_logits),
        spatial=softmax_rows(spatial_logits),
        combined=softmax_rows(combined_logits),
        full_content=softmax_rows(full_c),
        full_spatial=softmax_rows(full_s),
        full_combined=softmax_rows(full_c + full_s),
    )


class MultiHeadSelfAttention:
    """Self-attention where queries and keys carry an additive positional
    term and values do not."""

    def __init__(self, rng, d, num_heads):
        if d % num_heads != 0:
            raise ValueError(f"model dim {d} not divisible by {num_heads} heads")
        self.d = d
        self.num_heads = num_heads
        self.head_dim = d // num_heads
        self.q = Linear(rng, d, d)
        self.k = Linear(rng, d, d)
        self.v = Linear(rng, d, d)
        self.out = Linear(rng, d, d)

    def __call__(self, x, pos):
        xp = T.add(x, pos)
        q = self.q(xp)
        k = self.k(xp)
        v = self.v(x)
        scale = 1.0 / np.sqrt(self.head_dim)
        outs = []
        for qh, kh, vh in zip(
            _heads(q, self.num_heads, self.head_dim),
            _heads(k, self.num_heads, self.head_dim),
            _heads(v, self.num_heads, self.head_dim),
        ):
            logits = T.mul(T.matmul(qh, T.transpose(kh)), scale)
            outs.append(T.matmul(T.softmax(logits, axis=1), vh))
        return self.out(T.concat(outs, axis=1))

    def named_params(self, prefix):
        out = []
        for tag, lin in (("q", self.q), ("k", self.k), ("v", self.v), ("out", self.out)):
            out.extend(lin.named_params(f"{prefix}.{tag}"))
        return out


class AdditiveCrossAttention:
    """Cross-attention with positional terms added into queries and keys.

    The projected query splits as W_q*content + b_q plus W_q*query_pos, and
    the projected key as W_k*memory + b_k plus W_k*key_pos, so the logit is
    the sum of a content-key term and a spatial-key term; both are recorded
    separately for diagnostics. Values are projected memory content only.
    """

    def __init__(self, rng, d, num_heads):
        if d % num_heads != 0:
            raise ValueError(f"model dim {d} not divisible by {num_heads} heads")
        self.d = d
        self.num_heads = num_heads
        self.head_dim = d // num_heads
        self.q = Linear(rng, d, d)
        self.k = Linear(rng, d, d)
        self.v = Linear(rng, d, d)
        self.out = Linear(rng, d, d)

    def __call__(self, content, query_pos, memory, record_maps=False):
        q = T.add(self.q(content), self.q.weight_only(query_pos))
        k_content = self.k(memory.content)
        k_spatial = self.k.weight_only(memory.positions)
        v = self.v(memory.content)
        scale = 1.0 / np.sqrt(self.head_dim)
        outs = []
        lc_all, ls_all, lcomb_all = [], [], []
        for qh, kch, ksh, vh in zip(
            _heads(q, self.num_heads, self.head_dim),
            _heads(k_content, self.num_heads, self.head_dim),
            _heads(k_spatial, self.num_heads, self.head_dim),
            _heads(v, self.num_heads, self.head_dim),
        ):
            lc = T.mul(T.matmul(qh, T.transpose(kch)), scale)
            ls = T.mul(T.matmul(qh, T.transpose(ksh)), scale)
            logits = T.add(lc, ls)
            outs.append(T.matmul(T.softmax(logits, axis=1), vh))
            if record_maps:
                lc_all.append(lc)
                ls_all.append(ls)
                lcomb_all.append(logits)
        result = self.out(T.concat(outs, axis=1))
        maps = None
        if record_maps:
            raw_q = content.data + query_pos.data
            fs = 1.0 / np.sqrt(self.d)
            maps = _record_maps(
                memory.grid_h,
                memory.grid_w,
                lc_all,
                ls_all,
                lcomb_all,
                raw_q @ memory.content.data.T * fs,
                raw_q @ memory.positions.data.T * fs,
            )
        return result, maps

    def named_params(self, prefix):
        out = []
        for tag, lin in (("q", self.q), ("k", self.k), ("v", self.v), ("out", self.out)):
            out.extend(lin.named_params(f"{prefix}.{tag}"))
        return out


class ConditionalCrossAttention:
    """Cross-attention with separate content and spatial channels.

    Spatial projections carry no bias: a bias there would give every
    query the same additive logit shift regardless of position, blurring
    the channel separation the design is after. Content projections keep
    their bias.
    """

    def __init__(self, rng, d, num_heads):
        if d % num_heads != 0:
            raise ValueError(f"model dim {d} not divisible by {num_heads} heads")
        self.d = d
        self.num_heads = num_heads
        self.head_dim = d // num_heads
        self.q_content = Linear(rng, d, d)
        self.q_spatial = Linear(rng, d, d, bias=False)
        self.k_content = Linear(rng, d, d)
        self.k_spatial = Linear(rng, d, d, bias=False)
        self.v = Linear(rng, d, d)
        self.out = Linear(rng, d, d)

    def __call__(self, content, spatial_query, memory, record_maps=False):
        qc = self.q_content(content)
        qs = self.q_spatial(spatial_query)
        kc = self.k_content(memory.content)
        ks = self.k_spatial(memory.positions)
        v = self.v(memory.content)
        # concatenating content and spatial doubles the dot-product width
        scale = 1.0 / np.sqrt(2.0 * self.head_dim)
        outs = []
        lc_all, ls_all, lcomb_all = [], [], []
        for qch, qsh, kch, ksh, vh in zip(
            _heads(qc, self.num_heads, self.head_dim),
            _heads(qs, self.num_heads, self.head_dim),
            _heads(kc, self.num_heads, self.head_dim),
            _heads(ks, self.num_heads, self.head_dim),
            _heads(v, self.num_heads, self.head_dim),
        ):
            lc = T.mul(T.matmul(qch, T.transpose(kch)), scale)
            ls = T.mul(T.matmul(qsh, T.transpose(ksh)), scale)
            logits = T.add(lc, ls)
            outs.append(T.matmul(T.softmax(logits, axis=1), vh))
            if record_maps:
                lc_all.append(lc)
                ls_all.append(ls)
                lcomb_all.append(logits)
        result = self.out(T.concat(outs, axis=1))
        maps = None
        if record_maps:
            fs = 1.0 / np.sqrt(self.d)
            maps = _record_maps(
                memory.grid_h,
                memory.grid_w,
                lc_all,
                ls_all,
                lcomb_all,
                content.data @ memory.content.data.T * fs,
                spatial_query.data @ memory.positions.data.T * fs,
            )
        return result, maps

    def named_params(self, prefix):
        out = []
        for tag, lin in (
            ("q_content", self.q_content),
            ("q_spatial", self.q_spatial),
            ("k_content", self.k_content),
            ("k_spatial", self.k_spatial),
            ("v", self.v),
            ("out", self.out),
        ):
            out.extend(lin.named_params(f"{prefix}.{tag}"))
        return out

"""Decoder stack with per-query reference points and configurable spatial
query construction.

Each layer runs self-attention over the queries (object query embeddings
as the positional term), then cross-attention into the encoder memory,
then a feedforward block, with residual + post-norm around each.

For conditional cross-attention the spatial query p_q is built from two
ingredients: the sinusoidal embedding p_s of the query's normalized
reference point, and a transformation predicted from decoder content. The
``spatial_query`` mode picks the recipe:

    transformed            p_q = transform(f_prev) applied to p_s (default)
    position_only          p_q = p_s, no transformation
    transform_only         p_q = the transformation vector itself
    content                p_q = f_prev reused as the spatial query
    self_attn_transformed  like transformed, but predicted from the current
                           layer's self-attention output instead of f_prev

Except for self_attn_transformed, layer L's spatial query depends only on
layer L-1's embedding and the reference point; it never reads layer L's
own output. On the first layer there is no decoder content yet, so the
transformation is pinned to identity (p_q = p_s, or the ones vector for
transform_only).

The transformation itself comes in five forms: identity (no parameters),
diagonal (one scale per channel), single (one scalar per query), block
(one (d/M, d/M) matrix per head), and full (one d-by-d matrix per query).

Box and class heads are shared across layers (deep supervision trains one
head through every layer). Boxes are sigmoid(FFN(f) + [s, 0, 0]): the raw
reference point offsets the center channels, unless offset regression is
disabled, in which case the offset is zero.
"""

from dataclasses import dataclass, field

import numpy as np

from . import posenc
from . import tensor as T
from .attention import AdditiveCrossAttention, ConditionalCrossAttention, MultiHeadSelfAttention
from .nn import FFN, LayerNorm, Linear

ATTENTION_VARIANTS = ("additive", "conditional")
SPATIAL_QUERY_MODES = (
    "transformed",
    "position_only",
    "transform_only",
    "content",
    "self_attn_transformed",
)
PROJECTION_FORMS = ("identity", "diagonal", "single", "block", "full")
REFERENCE_MODES = ("fixed", "learned", "predicted")


class ReferencePoints:
    """Per-query unnormalized 2-d reference coordinates.

    fixed: all zeros (sigmoid maps them to the image center).
    learned: free parameters, initialized so sigmoid(s) spreads uniformly
             over the central (0.05, 0.95) square.
    predicted: linear + ReLU + linear applied to the object queries, final
               layer zero-initialized so training starts at the center.
    """

    def __init__(self, rng, mode, num_queries, d):
        if mode not in REFERENCE_MODES:
            raise ValueError(f"unknown reference mode {mode!r}")
        self.mode = mode
        self.num_queries = num_queries
        if mode == "learned":
            u = rng.uniform(0.05, 0.95, (num_queries, 2))
            self.s = T.Tensor(np.log(u / (1.0 - u)), requires_grad=True)
        elif mode == "predicted":
            self.head = FFN(rng, [d, d, 2], zero_final=True)

    def __call__(self, object_queries):
        if self.mode == "fixed":
            return T.zeros((self.num_queries, 2))
        if self.mode == "learned":
            return self.s
        return self.head(object_queries)

    def named_params(self, prefix):
        if self.mode == "learned":
            return [(f"{prefix}.s", self.s)]
        if self.mode == "predicted":
            return self.head.named_params(f"{prefix}.head")
        return []


class TransformationHead:
    """Predicts the spatial-query transformation from decoder content with
    a linear + ReLU + linear head; output size depends on the form."""

    def __init__(self, rng, d, num_heads, form):
        if form not in PROJECTION_FORMS:
            raise ValueError(f"unknown projection form {form!r}")
        self.form = form
        self.d = d
        self.num_heads = num_heads
        self.head_dim = d // num_heads
        if form == "identity":
            self.ffn = None
            return
        out_dim = {
            "diagonal": d,
            "single": 1,
            "block": num_heads * self.head_dim * self.head_dim,
            "full": d * d,
        }[form]
        self.ffn = FFN(rng, [d, d, out_dim])

    def __call__(self, content):
        """Raw transformation values, or None for the identity form."""
        if self.ffn is None:
            return None
        return self.ffn(content)

    def apply(self, transform, base):
        """Apply a predicted transformation to per-query base vectors."""
        if self.form == "identity":
            return base
        n = base.shape[0]
        if self.form == "diagonal":
            return T.mul(transform, base)
        if self.form == "single":
            return T.scale_rows(base, transform)
        if self.form == "block":
            hd = self.head_dim
            mats = T.reshape(transform, (n * self.num_heads, hd, hd))
            vecs = T.reshape(base, (n * self.num_heads, hd, 1))
            return T.reshape(T.matmul(mats, vecs), (n, self.d))
        mats = T.reshape(transform, (n, self.d, self.d))
        vecs = T.reshape(base, (n, self.d, 1))
        return T.reshape(T.matmul(mats, vecs), (n, self.d))

    def named_params(self, prefix):
        if self.ffn is None:
            return []
        return self.ffn.named_params(f"{prefix}.ffn")


class DecoderLayer:
    def __init__(self, rng, d, num_heads, variant):
        if variant not in ATTENTION_VARIANTS:
            raise ValueError(f"unknown attention variant {variant!r}")
        self.variant = variant
        self.self_attn = MultiHeadSelfAttention(rng, d, num_heads)
        if variant == "additive":
            self.cross = AdditiveCrossAttention(rng, d, num_heads)
        else:
            self.cross = ConditionalCrossAttention(rng, d, num_heads)
        self.ffn = FFN(rng, [d, 4 * d, d])
        self.norm1 = LayerNorm(d)
        self.norm2 = LayerNorm(d)
        self.norm3 = LayerNorm(d)

    def __call__(self, f_in, object_queries, memory, spatial_query_fn, record_maps):
        f_sa = self.norm1(T.add(f_in, self.self_attn(f_in, object_queries)))
        if self.variant == "additive":
            spatial_query, transform = None, None
            attended, maps = self.cross(f_sa, object_queries, memory, record_maps)
        else:
            spatial_query, transform = spatial_query_fn(f_in, f_sa)
            attended, maps = self.cross(f_sa, spatial_query, memory, record_maps)
        f = self.norm2(T.add(f_sa, attended))
        f = self.norm3(T.add(f, self.ffn(f)))
        return f, spatial_query, transform, maps

    def named_params(self, prefix):
        out = self.self_attn.named_params(f"{prefix}.self_attn")
        out.extend(self.cross.named_params(f"{prefix}.cross"))
        out.extend(self.ffn.named_params(f"{prefix}.ffn"))
        out.extend(self.norm1.named_params(f"{prefix}.norm1"))
        out.extend(self.norm2.named_params(f"{prefix}.norm2"))
        out.extend(self.norm3.named_params(f"{prefix}.norm3"))
        return out


@dataclass
class DecoderOutputs:
    """Per-layer predictions and state from one decoder forward pass."""

    logits: list = field(default_factory=list)  # (N, C) Tensors
    boxes: list = field(default_factory=list)  # (N, 4) Tensors, cxcywh in (0,1)
    embeddings: list = field(default_factory=list)  # (N, d) Tensors
    spatial_queries: list = field(default_factory=list)  # (N, d) Tensor or None
    transformations: list = field(default_factory=list)  # raw head output or None
    maps: list = field(default_factory=list)  # AttentionMaps or None
    references: T.Tensor = None  # (N, 2) unnormalized


class Decoder:
    def __init__(
        self,
        rng,
        d,
        num_heads,
        num_layers,
        num_queries,
        num_classes,
        variant="conditional",
        spatial_query="transformed",
        projection_form="diagonal",
        reference_mode="learned",
        offset_regression=True,
        temperature=10000.0,
    ):
        if spatial_query not in SPATIAL_QUERY_MODES:
            raise ValueError(f"unknown spatial query mode {spatial_query!r}")
        self.d = d
        self.num_queries = num_queries
        self.variant = variant
        self.spatial_query = spatial_query
        self.offset_regression = offset_regression
        self.temperature = temperature
        self.object_queries = T.Tensor(rng.normal((num_queries, d)), requires_grad=True)
        self.refs = ReferencePoints(rng, reference_mode, num_queries, d)
        self.layers = [DecoderLayer(rng, d, num_heads, variant) for _ in range(num_layers)]
        self.transform_head = None
        if variant == "conditional" and spatial_query in (
            "transformed",
            "transform_only",
            "self_attn_transformed",
        ):
            self.transform_head = TransformationHead(rng, d, num_heads, projection_form)
        self.box_head = FFN(rng, [d, d, d, 4])
        self.class_head = Linear(rng, d, num_classes)

    def _spatial_query_fn(self, layer_idx, position_embed):
        """Build the (p_q, transform) callback for one layer."""
        mode = self.spatial_query

        def build(f_prev, f_self_attn):
            if mode == "position_only":
                return position_embed, None
            if mode == "content":
                return f_prev, None
            base = (
                T.ones((self.num_queries, self.d))
                if mode == "transform_only"
                else position_embed
            )
            if layer_idx == 0 or self.transform_head.form == "identity":
                # first layer: no decoder content yet, transformation is identity
                return base, None
            source = f_self_attn if mode == "self_attn_transformed" else f_prev
            transform = self.transform_head(source)
            return self.transform_head.apply(transform, base), transform

        return build

    def __call__(self, memory, record_maps=False):
        oq = self.object_queries
        s = self.refs(oq)
        out = DecoderOutputs(references=s)
        position_embed = None
        if self.variant == "conditional" and self.spatial_query != "content":
            position_embed = posenc.embed_points_op(T.sigmoid(s), self.d, self.temperature)
        if self.offset_regression:
            offset = T.concat([s, T.zeros((self.num_queries, 2))], axis=1)
        else:
            offset = None
        f = T.zeros((self.num_queries, self.d))
        for idx, layer in enumerate(self.layers):
            f, p_q, transform, maps = layer(
                f, oq, memory, self._spatial_query_fn(idx, position_embed), record_maps
            )
            raw_box = self.box_head(f)
            if offset is not None:
                raw_box = T.add(raw_box, offset)
            out.logits.append(self.class_head(f))
            out.boxes.append(T.sigmoid(raw_box))
            out.embeddings.append(f)
            out.spatial_queries.append(p_q)
            out.transformations.append(transform)
            out.maps.append(maps)
        return out

    def named_params(self, prefix="decoder"):
        out = [(f"{prefix}.object_queries", self.object_queries)]
        out.extend(self.refs.named_params(f"{prefix}.refs"))
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_params(f"{prefix}.layer{i}"))
        if self.transform_head is not None:
            out.extend(self.transform_head.named_params(f"{prefix}.transform"))
        out.extend(self.box_head.named_params(f"{prefix}.box_head"))
        out.extend(self.class_head.named_params(f"{prefix}.class_head"))
        return out

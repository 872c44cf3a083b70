"""Token fusion core.

The two modality globals are mixed by a tiny two-token attention block; the
mixed vector is attached to rest-pose template coordinates to form one query
token per joint and coarse vertex. Query and local tokens then pass through
a joint self-attention stack (queries attend to locals and to each other in
one mechanism); every block emits an auxiliary coarse-coordinate prediction
through its own linear head. The final query tokens are decoded to 3D by two
graph-convolution layers over the joint-tree + coarse-mesh graph, and the
coarse vertices are lifted to the full mesh by a learned linear map seeded
from the template's barycentric upsampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .body import BodyTemplate
from .nn import init_layer_norm, init_linear, layer_norm, linear

HIDDEN_DIM = 64
NUM_HEADS = 4
DEPTH = 3
FF_DIM = 128


@dataclass(frozen=True)
class MaskConfig:
    """Training-time masking: drop one modality, then a fraction of tokens."""

    modality_prob: float = 0.3
    max_token_frac: float = 0.3
    enabled: bool = True


@dataclass
class MaskDecision:
    modality_masked: str | None          # None | "image" | "points"
    token_mask: np.ndarray | None        # bool over local tokens, True = masked

    @classmethod
    def none(cls) -> "MaskDecision":
        return cls(None, None)


def draw_mask_decision(rng: np.random.Generator, config: MaskConfig,
                       n_image_tokens: int, n_point_tokens: int,
                       force_modality: str | None = None) -> MaskDecision:
    """Sample which modality (if any) and which local tokens to zero."""
    if force_modality is not None:
        masked = force_modality
    elif rng.random() < config.modality_prob:
        masked = "image" if rng.random() < 0.5 else "points"
    else:
        masked = None

    n_total = n_image_tokens + n_point_tokens
    token_mask = np.zeros(n_total, dtype=bool)
    if masked == "image":
        live = np.arange(n_image_tokens, n_total)
    elif masked == "points":
        live = np.arange(0, n_image_tokens)
    else:
        live = np.arange(n_total)
    frac = rng.uniform(0.0, config.max_token_frac)
    k = int(frac * len(live))
    if k > 0:
        token_mask[rng.choice(live, size=k, replace=False)] = True
    return MaskDecision(masked, token_mask)


def apply_mmm(l_im: T.Array, g_im: T.Array, l_pc: T.Array, g_pc: T.Array,
              rng: np.random.Generator, config: MaskConfig, training: bool,
              force_modality: str | None = None):
    """Mask computed tokens per a fresh decision; identity outside training.

    Masked-modality tokens and global are replaced by literal zero constants
    (not multiplied), so downstream values carry no trace of the content.
    """
    if not training or not config.enabled:
        return l_im, g_im, l_pc, g_pc, MaskDecision.none()
    decision = draw_mask_decision(rng, config, l_im.shape[0], l_pc.shape[0], force_modality)
    n_im = l_im.shape[0]
    if decision.modality_masked == "image":
        l_im = T.constant(np.zeros(l_im.shape, dtype=np.float32))
        g_im = T.constant(np.zeros(g_im.shape, dtype=np.float32))
    elif decision.modality_masked == "points":
        l_pc = T.constant(np.zeros(l_pc.shape, dtype=np.float32))
        g_pc = T.constant(np.zeros(g_pc.shape, dtype=np.float32))
    if decision.token_mask is not None and decision.token_mask.any():
        keep_im = ~decision.token_mask[:n_im]
        keep_pc = ~decision.token_mask[n_im:]
        if not keep_im.all():
            l_im = T.mask_rows(l_im, keep_im)
        if not keep_pc.all():
            l_pc = T.mask_rows(l_pc, keep_pc)
    return l_im, g_im, l_pc, g_pc, decision


# ---------------------------------------------------------------------------
# global mixer


def init_global_mixer(rng: np.random.Generator, params: dict, prefix: str, dim: int) -> None:
    init_layer_norm(params, f"{prefix}.ln", dim)
    for name in ("wq", "wk", "wv", "wo"):
        init_linear(rng, params, f"{prefix}.{name}", dim, dim, scale=0.5)


def fuse_globals(p: dict[str, T.Array], prefix: str, g_im: T.Array, g_pc: T.Array) -> T.Array:
    """Two-token self-attention block over the modality globals, mean-pooled.

    A masked modality arrives as a zero vector; with both zero the output is
    the block's bias response, identical across samples.
    """
    if g_im.shape != g_pc.shape:
        raise T.ShapeError(f"fuse_globals: dim mismatch {g_im.shape} vs {g_pc.shape}")
    x = T.concat([g_im, g_pc], axis=0)                  # (2,D)
    h = layer_norm(p, f"{prefix}.ln", x)
    q = linear(p, f"{prefix}.wq", h)
    k = linear(p, f"{prefix}.wk", h)
    v = linear(p, f"{prefix}.wv", h)
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(q.shape[1]))
    attn = T.softmax(scores, axis=-1)
    ctx = linear(p, f"{prefix}.wo", T.matmul(attn, v))
    out = T.add(x, ctx)
    return T.reshape(T.mean_axis(out, axis=0), (1, x.shape[1]))


def mean_globals(g_im: T.Array, g_pc: T.Array) -> T.Array:
    """Ablation path: element-wise mean instead of the learned mixer."""
    return T.scale(T.add(g_im, g_pc), 0.5)


def attach_template_positions(g: T.Array, template_coords: np.ndarray) -> T.Array:
    """One query token per joint/coarse vertex: rest coordinates then the
    fused global, replicated per row."""
    n = template_coords.shape[0]
    ones = T.constant(np.ones((n, 1), dtype=np.float32))
    replicated = T.matmul(ones, g)
    return T.concat([T.constant(template_coords.astype(np.float32)), replicated], axis=1)


# ---------------------------------------------------------------------------
# fusion transformer


def init_fusion_transformer(rng: np.random.Generator, params: dict, prefix: str,
                            token_dim: int, hidden: int = HIDDEN_DIM,
                            depth: int = DEPTH, heads: int = NUM_HEADS,
                            ff_dim: int = FF_DIM) -> None:
    init_linear(rng, params, f"{prefix}.in_proj", token_dim, hidden)
    head_dim = hidden // heads
    for b in range(depth):
        init_layer_norm(params, f"{prefix}.b{b}.ln1", hidden)
        init_layer_norm(params, f"{prefix}.b{b}.ln2", hidden)
        for h in range(heads):
            for name in ("wq", "wk", "wv"):
                init_linear(rng, params, f"{prefix}.b{b}.h{h}.{name}", hidden, head_dim, scale=0.7)
        init_linear(rng, params, f"{prefix}.b{b}.wo", hidden, hidden, scale=0.7)
        init_linear(rng, params, f"{prefix}.b{b}.ff1", hidden, ff_dim)
        init_linear(rng, params, f"{prefix}.b{b}.ff2", ff_dim, hidden, scale=0.7)
        # zero-init: block predictions start at the template anchor
        init_linear(rng, params, f"{prefix}.head{b}", hidden, 3, scale=0.0)


def attention_block(p: dict[str, T.Array], prefix: str, x: T.Array,
                    heads: int = NUM_HEADS, attn_sink: list | None = None) -> T.Array:
    h = layer_norm(p, f"{prefix}.ln1", x)
    head_dim = x.shape[1] // heads
    ctx_parts = []
    for i in range(heads):
        q = linear(p, f"{prefix}.h{i}.wq", h)
        k = linear(p, f"{prefix}.h{i}.wk", h)
        v = linear(p, f"{prefix}.h{i}.wv", h)
        scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(head_dim))
        attn = T.softmax(scores, axis=-1)
        if attn_sink is not None:
            attn_sink.append(attn.data)
        ctx_parts.append(T.matmul(attn, v))
    ctx = linear(p, f"{prefix}.wo", T.concat(ctx_parts, axis=1))
    x = T.add(x, ctx)
    h2 = layer_norm(p, f"{prefix}.ln2", x)
    ff = linear(p, f"{prefix}.ff2", T.relu(linear(p, f"{prefix}.ff1", h2)))
    return T.add(x, ff)


def fusion_transformer(p: dict[str, T.Array], prefix: str, queries: T.Array,
                       l_im: T.Array | None, l_pc: T.Array | None,
                       depth: int = DEPTH, heads: int = NUM_HEADS,
                       attn_sink: list | None = None):
    """Joint self-attention over [queries; image tokens; point tokens].

    Returns (refined queries, refined image tokens, refined point tokens,
    per-block coarse predictions). Token sets must share their last dim; the
    per-block heads read the query rows only. The last block's output rows
    are exactly the tensor later handed to the graph decoder.
    """
    parts = [queries]
    sizes = [queries.shape[0]]
    for tok in (l_im, l_pc):
        if tok is not None:
            if tok.shape[1] != queries.shape[1]:
                raise T.ShapeError(
                    f"fusion_transformer: token dim {tok.shape[1]} != query dim {queries.shape[1]}")
            parts.append(tok)
            sizes.append(tok.shape[0])
    x = T.concat(parts, axis=0) if len(parts) > 1 else queries
    x = linear(p, f"{prefix}.in_proj", x)

    nq = sizes[0]
    per_layer = []
    for b in range(depth):
        x = attention_block(p, f"{prefix}.b{b}", x, heads=heads, attn_sink=attn_sink)
        per_layer.append(linear(p, f"{prefix}.head{b}", T.narrow(x, 0, nq)))

    q_out = T.narrow(x, 0, nq)
    offs = nq
    lim_out = lpc_out = None
    idx = 1
    if l_im is not None:
        lim_out = T.narrow(x, offs, offs + sizes[idx])
        offs += sizes[idx]
        idx += 1
    if l_pc is not None:
        lpc_out = T.narrow(x, offs, offs + sizes[idx])
    return q_out, lim_out, lpc_out, per_layer


# ---------------------------------------------------------------------------
# decoding


def init_graph_decoder(rng: np.random.Generator, params: dict, prefix: str,
                       hidden: int = HIDDEN_DIM) -> None:
    init_linear(rng, params, f"{prefix}.gc1", hidden, 32)
    # zero-init: decoded residuals start at zero
    init_linear(rng, params, f"{prefix}.gc2", 32, 3, scale=0.0)


def graph_conv_decode(p: dict[str, T.Array], prefix: str, queries: T.Array,
                      adjacency: np.ndarray):
    """Two graph-conv layers (64 -> 32 -> 3) over the query graph.

    Returns (joints (22,3), verts_coarse (Vc,3)). ``adjacency`` must already
    be symmetrically normalized with self-loops.
    """
    a = T.constant(adjacency.astype(np.float32))
    if a.shape != (queries.shape[0], queries.shape[0]):
        raise T.ShapeError(f"graph_conv_decode: adjacency {a.shape} does not match "
                           f"{queries.shape[0]} query tokens")
    h = T.relu(T.matmul(a, linear(p, f"{prefix}.gc1", queries)))
    out = T.matmul(a, linear(p, f"{prefix}.gc2", h))
    joints = T.narrow(out, 0, 22)
    verts_coarse = T.narrow(out, 22, out.shape[0])
    return joints, verts_coarse


def init_upsampler(params: dict, prefix: str, template: BodyTemplate) -> None:
    # seeded from the template's barycentric lift so the map starts sensible
    params[f"{prefix}.w"] = template.u_full.copy()


def upsample_mesh(p: dict[str, T.Array], prefix: str, verts_coarse: T.Array) -> T.Array:
    """Learned linear lift from coarse to full vertices, per coordinate."""
    return T.matmul(p[f"{prefix}.w"], verts_coarse)

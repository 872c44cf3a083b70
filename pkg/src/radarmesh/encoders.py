"""Modality backbones: point-cluster encoder and convolutional image encoder.

The point side samples 32 seeds by farthest-point sampling, gathers ball
neighborhoods, runs a shared MLP over (offset, coordinate) rows and
max-pools per cluster; a further MLP over the cluster-wise max gives the
global vector. The image side is a stack of stride-2 convolutions down to a
7x7 grid (49 local tokens) with a spatial-mean + MLP global head. Token
counts (32 clusters, 49 grid cells) are architecture constants.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .nn import conv, init_conv, init_layer_norm, init_linear, linear

NUM_SEED_POINTS = 32
GRID_SIDE = 7
NUM_GRID_TOKENS = GRID_SIDE * GRID_SIDE
DEFAULT_BALL_RADIUS = 0.3
DEFAULT_MAX_GROUP = 32


# ---------------------------------------------------------------------------
# geometric sampling


def fps(points: np.ndarray, k: int) -> np.ndarray:
    """Greedy max-min farthest point sampling, deterministic.

    Starts at the point farthest from the centroid; ties resolve by
    lexicographically smallest coordinates, then lowest index. Returns the
    selection order as indices into ``points``.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if not 1 <= k <= n:
        raise ValueError(f"fps: need 1 <= k <= {n}, got k={k}")
    centroid = pts.mean(axis=0)
    score = ((pts - centroid) ** 2).sum(axis=1)
    first = _argmax_tiebreak(score, pts)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = first
    mind = ((pts - pts[first]) ** 2).sum(axis=1)
    mind[first] = -np.inf
    for i in range(1, k):
        nxt = _argmax_tiebreak(mind, pts)
        chosen[i] = nxt
        mind = np.minimum(mind, ((pts - pts[nxt]) ** 2).sum(axis=1))
        mind[chosen[:i + 1]] = -np.inf
    return chosen


def _argmax_tiebreak(score: np.ndarray, pts: np.ndarray) -> int:
    best = score.max()
    cand = np.flatnonzero(score == best)
    if len(cand) == 1:
        return int(cand[0])
    order = np.lexsort((cand, pts[cand, 2], pts[cand, 1], pts[cand, 0]))
    return int(cand[order[0]])


def ball_group(points: np.ndarray, seeds: np.ndarray, radius: float = DEFAULT_BALL_RADIUS,
               max_group: int = DEFAULT_MAX_GROUP) -> list[np.ndarray]:
    """Per-seed neighbor indices within ``radius``, nearest first, truncated.

    The seed itself is always within radius zero, so groups are never empty;
    a defensive fallback keeps the contract anyway.
    """
    pts = np.asarray(points, dtype=np.float64)
    r2 = float(radius) ** 2
    groups = []
    for s in seeds:
        d2 = ((pts - pts[s]) ** 2).sum(axis=1)
        within = np.flatnonzero(d2 <= r2)
        order = np.argsort(d2[within], kind="stable")
        group = within[order][:max_group]
        if len(group) == 0:
            group = np.array([s], dtype=np.int64)
        groups.append(group.astype(np.int64))
    return groups


# ---------------------------------------------------------------------------
# point encoder


def init_point_encoder(rng: np.random.Generator, params: dict, prefix: str,
                       feature_dim: int, in_dim: int = 6) -> None:
    hidden = 2 * feature_dim
    init_linear(rng, params, f"{prefix}.mlp1", in_dim, hidden)
    init_linear(rng, params, f"{prefix}.mlp2", hidden, feature_dim)
    init_linear(rng, params, f"{prefix}.glob1", feature_dim, 2 * feature_dim)
    init_linear(rng, params, f"{prefix}.glob2", 2 * feature_dim, feature_dim)


def encode_points(p: dict[str, T.Array], prefix: str, cloud: np.ndarray,
                  radius: float = DEFAULT_BALL_RADIUS, max_group: int = DEFAULT_MAX_GROUP,
                  extra_feats: T.Array | np.ndarray | None = None,
                  n_seeds: int = NUM_SEED_POINTS):
    """Cluster features from a point cloud.

    Returns (seed_coords (32,3) ndarray, cluster_feats (32,D) Array,
    global_vec (1,D) Array). The MLP input per neighbor is its offset from
    the seed plus its coordinates centered on the cloud centroid, so feature
    channels are translation invariant while seed coordinates carry the
    absolute placement. Optional per-point ``extra_feats`` (decorations) are
    gathered per neighbor and appended.
    """
    cloud = np.asarray(cloud, dtype=np.float32)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise T.ShapeError(f"encode_points: cloud must be (n,3), got {cloud.shape}")
    seeds = fps(cloud, n_seeds)
    groups = ball_group(cloud, seeds, radius, max_group)
    seg_ids = np.concatenate([np.full(len(g), i, dtype=np.int64) for i, g in enumerate(groups)])
    nbr_idx = np.concatenate(groups)
    seed_coords = cloud[seeds]
    offsets = cloud[nbr_idx] - seed_coords[seg_ids]
    centered = cloud[nbr_idx] - cloud.mean(axis=0)
    base = np.concatenate([offsets, centered], axis=1)

    if extra_feats is None:
        x = T.constant(base)
    elif isinstance(extra_feats, T.Array):
        x = T.concat([T.constant(base), T.take(extra_feats, nbr_idx)], axis=1)
    else:
        x = T.constant(np.concatenate(
            [base, np.asarray(extra_feats, dtype=np.float32)[nbr_idx]], axis=1))

    h = T.relu(linear(p, f"{prefix}.mlp1", x))
    h = linear(p, f"{prefix}.mlp2", h)
    clusters = T.segment_max(h, seg_ids, n_seeds)

    pooled = T.segment_max(clusters, np.zeros(n_seeds, dtype=np.int64), 1)
    g = T.relu(linear(p, f"{prefix}.glob1", pooled))
    g = linear(p, f"{prefix}.glob2", g)
    return seed_coords, clusters, g


# ---------------------------------------------------------------------------
# image encoder


def conv_stages(image_size: int) -> list[tuple[int, int]]:
    """(c_in, c_out) per stride-2 stage from ``image_size`` down to 7x7."""
    stages = int(round(math.log2(image_size / GRID_SIDE)))
    if GRID_SIDE * (2 ** stages) != image_size:
        raise T.ShapeError(f"image size {image_size} is not 7 * 2^k")
    chans = [3] + [min(512, 32 * (2 ** i)) for i in range(stages)]
    return list(zip(chans[:-1], chans[1:]))


def init_image_encoder(rng: np.random.Generator, params: dict, prefix: str,
                       image_size: int, feature_dim: int) -> None:
    stages = conv_stages(image_size)
    for i, (cin, cout) in enumerate(stages):
        init_conv(rng, params, f"{prefix}.conv{i}", cin, cout, 3)
    init_conv(rng, params, f"{prefix}.proj", stages[-1][1], feature_dim, 1)
    init_linear(rng, params, f"{prefix}.glob1", feature_dim, 2 * feature_dim)
    init_linear(rng, params, f"{prefix}.glob2", 2 * feature_dim, feature_dim)


def grid_coords(n: int = NUM_GRID_TOKENS) -> np.ndarray:
    """Normalized (u, v, 0) centers of the 7x7 grid, row-major."""
    side = int(math.isqrt(n))
    rows, cols = np.divmod(np.arange(n), side)
    return np.stack([(cols + 0.5) / side, (rows + 0.5) / side, np.zeros(n)], axis=1).astype(np.float32)


def encode_image(p: dict[str, T.Array], prefix: str, image: np.ndarray | T.Array,
                 image_size: int, feature_dim: int):
    """Grid features from an image.

    Returns (grid_coords (49,3) ndarray, grid_feats (49,D) Array,
    global_vec (1,D) Array).
    """
    x = image if isinstance(image, T.Array) else T.constant(np.asarray(image, dtype=np.float32))
    if x.shape != (3, image_size, image_size):
        raise T.ShapeError(f"encode_image: image must be (3,{image_size},{image_size}), got {x.shape}")
    n_stages = len(conv_stages(image_size))
    for i in range(n_stages):
        x = T.relu(conv(p, f"{prefix}.conv{i}", x, stride=2, padding=1))
    x = conv(p, f"{prefix}.proj", x, stride=1, padding=0)      # (D,7,7)
    feats = T.transpose(T.reshape(x, (feature_dim, NUM_GRID_TOKENS)))  # (49,D)

    pooled = T.reshape(T.mean_axis(feats, axis=0), (1, feature_dim))
    g = T.relu(linear(p, f"{prefix}.glob1", pooled))
    g = linear(p, f"{prefix}.glob2", g)
    return grid_coords(), feats, g

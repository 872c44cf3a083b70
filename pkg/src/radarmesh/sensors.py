"""Paired sensor simulation: orthographic camera render and radar-style sampling.

The camera renders depth + Lambert shading + silhouette into three channels
over a square crop derived from the mesh bounds, so the image branch sees
genuine 3D structure. The radar samples the mesh surface area-weighted,
then degrades it per the scene profile (noise, per-bone dropout, box
outliers, occluder frustum removal), always returning exactly ``n_points``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import uniform_filter

from .scenes import CorruptionProfile

RADAR_POINTS = 1024
OCCLUDER_VALUE = 0.6
STREAK_VALUE = 0.85
BACKGROUND = 0.0
_LIGHT = np.array([0.33, 0.55, 0.77])
_LIGHT = _LIGHT / np.linalg.norm(_LIGHT)
OUTLIER_CLEARANCE = 0.07   # generation margin, above the 5 cm test hull
_CROP_MARGIN = 1.25


def crop_box(verts: np.ndarray) -> tuple[float, float, float, float]:
    """Square x/y crop (cx, cy, side, cz) covering the mesh with margin."""
    lo = verts.min(axis=0)
    hi = verts.max(axis=0)
    cx, cy, cz = (lo + hi) / 2.0
    side = max(hi[0] - lo[0], hi[1] - lo[1], 1e-3) * _CROP_MARGIN
    return float(cx), float(cy), float(side), float(cz)


def occluder_pixels(size: int, fraction: float) -> tuple[int, int, int, int]:
    """Fixed-placement occluding rectangle: (row0, row1, col0, col1)."""
    edge = int(round(size * math.sqrt(fraction)))
    edge = max(1, min(size, edge))
    r0 = min(size - edge, int(round(0.30 * size)))
    c0 = min(size - edge, int(round(0.10 * size)))
    return r0, r0 + edge, c0, c0 + edge


def render_image(verts: np.ndarray, faces: np.ndarray, profile: CorruptionProfile,
                 rng: np.random.Generator, size: int) -> np.ndarray:
    """Render (3, size, size) float32 in [0,1]; channels: shading, depth, mask."""
    img = np.zeros((3, size, size), dtype=np.float64)
    if len(verts) and len(faces):
        _rasterize(img, verts.astype(np.float64), faces, size)
    img = _corrupt(img, profile, rng, size)
    return img.astype(np.float32)


def _rasterize(img: np.ndarray, verts: np.ndarray, faces: np.ndarray, size: int) -> None:
    cx, cy, side, cz = crop_box(verts)
    px = ((verts[:, 0] - cx) / side + 0.5) * size - 0.5
    py = ((cy - verts[:, 1]) / side + 0.5) * size - 0.5
    z = verts[:, 2]
    z_lo = cz - side / 2.0

    tri_p = np.stack([px[faces], py[faces]], axis=2)   # (F,3,2)
    tri_z = z[faces]                                    # (F,3)
    e1 = verts[faces[:, 1]] - verts[faces[:, 0]]
    e2 = verts[faces[:, 2]] - verts[faces[:, 0]]
    normals = np.cross(e1, e2)
    norms = np.linalg.norm(normals, axis=1)
    shade = 0.25 + 0.65 * np.abs(normals @ _LIGHT) / np.maximum(norms, 1e-12)

    zbuf = np.full((size, size), -np.inf)
    for f in range(len(faces)):
        if norms[f] < 1e-12:
            continue
        p = tri_p[f]
        c0 = max(0, int(math.floor(p[:, 0].min())))
        c1 = min(size - 1, int(math.ceil(p[:, 0].max())))
        r0 = max(0, int(math.floor(p[:, 1].min())))
        r1 = min(size - 1, int(math.ceil(p[:, 1].max())))
        if c1 < c0 or r1 < r0:
            continue
        cols, rows = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
        qx = cols - p[0, 0]
        qy = rows - p[0, 1]
        d1 = p[1] - p[0]
        d2 = p[2] - p[0]
        denom = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(denom) < 1e-12:
            continue
        w1 = (qx * d2[1] - qy * d2[0]) / denom
        w2 = (qy * d1[0] - qx * d1[1]) / denom
        w0 = 1.0 - w1 - w2
        inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
        if not inside.any():
            continue
        zi = w0 * tri_z[f, 0] + w1 * tri_z[f, 1] + w2 * tri_z[f, 2]
        win = inside & (zi > zbuf[r0:r1 + 1, c0:c1 + 1])
        if not win.any():
            continue
        sub = zbuf[r0:r1 + 1, c0:c1 + 1]
        sub[win] = zi[win]
        img[0, r0:r1 + 1, c0:c1 + 1][win] = shade[f]
        img[1, r0:r1 + 1, c0:c1 + 1][win] = np.clip((zi[win] - z_lo) / side, 0.0, 1.0)
        img[2, r0:r1 + 1, c0:c1 + 1][win] = 1.0


def _corrupt(img: np.ndarray, profile: CorruptionProfile, rng: np.random.Generator,
             size: int) -> np.ndarray:
    if profile.image_contrast_scale != 1.0:
        img = (img - 0.5) * profile.image_contrast_scale + 0.5
    if profile.image_brightness_scale != 1.0:
        img = img * profile.image_brightness_scale
    if profile.image_blur_radius > 0:
        w = 2 * profile.image_blur_radius + 1
        img = uniform_filter(img, size=(1, w, w), mode="nearest")
    if profile.image_noise_sigma > 0:
        img = img + rng.normal(0.0, profile.image_noise_sigma, size=img.shape)
    for _ in range(profile.streak_count):
        _draw_streak(img, rng, size)
    if profile.occluder_rect > 0:
        r0, r1, c0, c1 = occluder_pixels(size, profile.occluder_rect)
        img[:, r0:r1, c0:c1] = OCCLUDER_VALUE
    return np.clip(img, 0.0, 1.0)


def _draw_streak(img: np.ndarray, rng: np.random.Generator, size: int) -> None:
    x0 = rng.uniform(0, size)
    y0 = rng.uniform(0, 0.3 * size)
    slope = rng.uniform(-0.3, 0.3)
    length = rng.uniform(0.4, 1.0) * size
    t = np.arange(int(length))
    rows = np.round(y0 + t).astype(int)
    cols = np.round(x0 + slope * t).astype(int)
    ok = (rows >= 0) & (rows < size) & (cols >= 0) & (cols < size)
    img[:, rows[ok], cols[ok]] = STREAK_VALUE


# ---------------------------------------------------------------------------
# radar


def sample_radar(verts: np.ndarray, faces: np.ndarray, profile: CorruptionProfile,
                 rng: np.random.Generator, n_points: int = RADAR_POINTS,
                 face_bone: np.ndarray | None = None) -> np.ndarray:
    """Radar-style cloud: surface samples degraded per profile, exactly n_points."""
    v64 = verts.astype(np.float64)
    tri = v64[faces]                                       # (F,3,3)
    areas = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    total = areas.sum()
    if total <= 0:
        raise ValueError("degenerate mesh: zero surface area")
    tri_idx = rng.choice(len(faces), size=n_points, p=areas / total)
    u = rng.random(n_points)
    w = rng.random(n_points)
    flip = u + w > 1.0
    u[flip] = 1.0 - u[flip]
    w[flip] = 1.0 - w[flip]
    chosen = tri[tri_idx]
    pts = chosen[:, 0] + u[:, None] * (chosen[:, 1] - chosen[:, 0]) \
        + w[:, None] * (chosen[:, 2] - chosen[:, 0])

    if profile.point_noise_sigma > 0:
        pts = pts + rng.normal(0.0, profile.point_noise_sigma, size=pts.shape)

    keep = np.ones(n_points, dtype=bool)
    if profile.segment_dropout_prob > 0 and face_bone is not None:
        bones = np.unique(face_bone)
        dropped = bones[rng.random(len(bones)) < profile.segment_dropout_prob]
        if len(dropped):
            keep &= ~np.isin(face_bone[tri_idx], dropped)

    if profile.occluder_rect > 0:
        keep &= ~_in_occluder_frustum(pts, verts, profile)

    surface = pts[keep]

    n_out = int(round(profile.outlier_fraction * n_points))
    outliers = _box_outliers(rng, v64, faces, profile, n_out) if n_out else np.zeros((0, 3))

    budget = n_points - len(outliers)
    if len(surface) >= budget:
        surface = surface[:budget]
    elif len(surface) > 0:
        reps = np.arange(budget) % len(surface)
        surface = surface[reps]
    elif len(outliers) > 0:
        reps = np.arange(n_points) % len(outliers)
        return outliers[reps].astype(np.float32)
    else:
        surface = np.zeros((budget, 3))
    return np.concatenate([surface, outliers], axis=0).astype(np.float32)


def _in_occluder_frustum(pts: np.ndarray, verts: np.ndarray, profile: CorruptionProfile) -> np.ndarray:
    """Points whose orthographic projection falls inside the occluding rectangle."""
    cx, cy, side, _ = crop_box(verts)
    r0, r1, c0, c1 = occluder_pixels(1000, profile.occluder_rect)  # in permille of the crop
    u = (pts[:, 0] - cx) / side + 0.5
    v = (cy - pts[:, 1]) / side + 0.5
    return (v >= r0 / 1000) & (v < r1 / 1000) & (u >= c0 / 1000) & (u < c1 / 1000)


def _box_outliers(rng: np.random.Generator, verts: np.ndarray, faces: np.ndarray,
                  profile: CorruptionProfile, n_out: int) -> np.ndarray:
    """Uniform box samples rejected until clear of the body surface."""
    center = (verts.min(axis=0) + verts.max(axis=0)) / 2.0
    half = profile.outlier_box / 2.0
    out = np.zeros((n_out, 3))
    have = 0
    for _ in range(50):
        cand = center + rng.uniform(-half, half, size=(n_out * 2, 3))
        clear = point_mesh_distance(cand, verts, faces) > OUTLIER_CLEARANCE
        good = cand[clear]
        take = min(len(good), n_out - have)
        out[have:have + take] = good[:take]
        have += take
        if have == n_out:
            return out
    raise RuntimeError("could not place outliers clear of the mesh; enlarge outlier_box")


def point_mesh_distance(points: np.ndarray, verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Min distance from each point to the triangle mesh (exact, vectorized).

    Closest-feature decomposition: the nearest point of a triangle is either
    the in-plane projection (when its barycentrics are non-negative) or lies
    on one of the three edges, so the min over those four candidates is exact.
    """
    tri = verts[faces].astype(np.float64)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    n = np.cross(b - a, c - a)
    n_len = np.maximum(np.linalg.norm(n, axis=1), 1e-300)
    n_hat = n / n_len[:, None]

    block = max(1, int(2_000_000 / max(len(faces), 1)))
    dists = np.empty(len(points))
    for s in range(0, len(points), block):
        p = points[s:s + block].astype(np.float64)
        d2 = np.minimum.reduce([
            _seg_dist2(p, a, b), _seg_dist2(p, a, c), _seg_dist2(p, b, c)])
        # plane projection, accepted only when it lands inside the triangle
        ap = p[:, None, :] - a[None, :, :]
        h = (ap * n_hat[None]).sum(2)
        q = p[:, None, :] - h[..., None] * n_hat[None]
        d00 = ((b - a) * (b - a)).sum(1)
        d01 = ((b - a) * (c - a)).sum(1)
        d11 = ((c - a) * (c - a)).sum(1)
        qa = q - a[None]
        d20 = (qa * (b - a)[None]).sum(2)
        d21 = (qa * (c - a)[None]).sum(2)
        denom = np.maximum(d00 * d11 - d01 * d01, 1e-300)
        v = (d11 * d20 - d01 * d21) / denom
        w = (d00 * d21 - d01 * d20) / denom
        inside = (v >= -1e-12) & (w >= -1e-12) & (v + w <= 1.0 + 1e-12)
        d2 = np.where(inside, np.minimum(d2, h * h), d2)
        dists[s:s + block] = np.sqrt(d2.min(axis=1))
    return dists


def _seg_dist2(p: np.ndarray, s0: np.ndarray, s1: np.ndarray) -> np.ndarray:
    """Squared distance from points (n,3) to segments (m,3)-(m,3), all pairs."""
    d = s1 - s0
    len2 = np.maximum((d * d).sum(1), 1e-300)
    t = ((p[:, None, :] - s0[None]) * d[None]).sum(2) / len2[None, :]
    t = np.clip(t, 0.0, 1.0)
    closest = s0[None] + t[..., None] * d[None]
    diff = p[:, None, :] - closest
    return (diff * diff).sum(2)

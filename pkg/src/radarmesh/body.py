"""Procedural articulated body: template mesh, pose sampling, skinning.

The template is a capsule-tube humanoid built around a 22-joint tree. Each
bone carries rings of 5 vertices, so the full vertex budget must be a
multiple of 5; the coarse vertex set is an evenly spaced subset of the full
set. Everything is generated procedurally so builds are hermetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

RING_SEGMENTS = 5
NUM_JOINTS = 22
FRAME_DT = 1.0 / 30.0

# name, parent index, rest offset from parent (meters); root offset is the
# rest position itself.  Y is up, the body faces +Z.
_SKELETON = [
    ("pelvis", -1, (0.0, 0.95, 0.0)),
    ("left_hip", 0, (0.085, -0.055, 0.0)),
    ("right_hip", 0, (-0.085, -0.055, 0.0)),
    ("spine1", 0, (0.0, 0.11, 0.0)),
    ("left_knee", 1, (0.0, -0.40, 0.0)),
    ("right_knee", 2, (0.0, -0.40, 0.0)),
    ("spine2", 3, (0.0, 0.12, 0.0)),
    ("left_ankle", 4, (0.0, -0.40, 0.0)),
    ("right_ankle", 5, (0.0, -0.40, 0.0)),
    ("spine3", 6, (0.0, 0.12, 0.0)),
    ("left_foot", 7, (0.0, -0.06, 0.13)),
    ("right_foot", 8, (0.0, -0.06, 0.13)),
    ("neck", 9, (0.0, 0.10, 0.0)),
    ("left_collar", 9, (0.075, 0.045, 0.0)),
    ("right_collar", 9, (-0.075, 0.045, 0.0)),
    ("head", 12, (0.0, 0.13, 0.0)),
    ("left_shoulder", 13, (0.095, 0.02, 0.0)),
    ("right_shoulder", 14, (-0.095, 0.02, 0.0)),
    ("left_elbow", 16, (0.27, 0.0, 0.0)),
    ("right_elbow", 17, (-0.27, 0.0, 0.0)),
    ("left_wrist", 18, (0.25, 0.0, 0.0)),
    ("right_wrist", 19, (-0.25, 0.0, 0.0)),
]

JOINT_NAMES = [row[0] for row in _SKELETON]
PARENTS = np.array([row[1] for row in _SKELETON], dtype=np.int64)

# tube radius per bone, keyed by the bone's child joint
_BONE_RADIUS = {
    "left_hip": 0.085, "right_hip": 0.085,
    "spine1": 0.105, "spine2": 0.115, "spine3": 0.11,
    "left_knee": 0.07, "right_knee": 0.07,
    "left_ankle": 0.055, "right_ankle": 0.055,
    "left_foot": 0.045, "right_foot": 0.045,
    "neck": 0.05, "head": 0.085,
    "left_collar": 0.055, "right_collar": 0.055,
    "left_shoulder": 0.05, "right_shoulder": 0.05,
    "left_elbow": 0.048, "right_elbow": 0.048,
    "left_wrist": 0.042, "right_wrist": 0.042,
}

# max axis-angle magnitude per joint (radians)
_JOINT_LIMIT = {
    "pelvis": 0.30,
    "left_hip": 0.70, "right_hip": 0.70,
    "spine1": 0.25, "spine2": 0.25, "spine3": 0.25,
    "left_knee": 1.10, "right_knee": 1.10,
    "left_ankle": 0.50, "right_ankle": 0.50,
    "left_foot": 0.30, "right_foot": 0.30,
    "neck": 0.40, "head": 0.40,
    "left_collar": 0.20, "right_collar": 0.20,
    "left_shoulder": 0.90, "right_shoulder": 0.90,
    "left_elbow": 1.20, "right_elbow": 1.20,
    "left_wrist": 0.60, "right_wrist": 0.60,
}


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class ScaleConfig:
    """Resolution preset tying mesh density, image size and feature width."""

    name: str
    v_full: int
    v_coarse: int
    image_size: int
    feature_dim: int

    @property
    def num_queries(self) -> int:
        return NUM_JOINTS + self.v_coarse


DESK = ScaleConfig("desk", v_full=430, v_coarse=86, image_size=56, feature_dim=64)
PAPER = ScaleConfig("paper", v_full=10475, v_coarse=655, image_size=224, feature_dim=2048)

_PRESETS = {"desk": DESK, "paper": PAPER}


def scale_preset(name: str) -> ScaleConfig:
    try:
        return _PRESETS[name]
    except KeyError:
        raise TemplateError(f"unknown scale preset '{name}'") from None


@dataclass
class BodyTemplate:
    """Rest-pose humanoid with sampling matrices and query-graph structure."""

    config: ScaleConfig
    joints_rest: np.ndarray          # (22,3) float32
    parent: np.ndarray               # (22,) int
    verts_full: np.ndarray           # (V,3) float32
    faces: np.ndarray                # (F,3) int
    face_bone: np.ndarray            # (F,) int, bone id = child joint index
    skin_weights: np.ndarray         # (V,22) float32, rows sum to 1
    d_coarse: np.ndarray             # (Vc,V) float32 one-hot rows
    u_full: np.ndarray               # (V,Vc) float32 convex rows
    coarse_idx: np.ndarray           # (Vc,) int
    template_coords: np.ndarray      # (22+Vc,3) float32
    query_adjacency: np.ndarray      # (22+Vc,22+Vc) float32, sym-normalized
    joint_limits: np.ndarray         # (22,) float32
    coarse_roundtrip_mean: float = 0.0
    coarse_roundtrip_max: float = 0.0
    bone_child: np.ndarray = field(default=None)   # (21,) child joint per bone
    bone_radius: np.ndarray = field(default=None)  # (21,) float32

    @property
    def num_queries(self) -> int:
        return NUM_JOINTS + self.config.v_coarse


def _perp_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    v /= np.linalg.norm(v)
    return u, v


def _allocate_rings(lengths: np.ndarray, total: int) -> np.ndarray:
    raw = lengths / lengths.sum() * total
    rings = np.maximum(2, np.floor(raw).astype(int))
    # settle the remainder deterministically by largest fractional part
    while rings.sum() > total:
        rings[int(np.argmax(rings))] -= 1
    frac = raw - np.floor(raw)
    order = np.argsort(-frac, kind="stable")
    i = 0
    while rings.sum() < total:
        rings[order[i % len(order)]] += 1
        i += 1
    return rings


def build_template(config: ScaleConfig) -> BodyTemplate:
    """Construct the capsule humanoid at the requested resolution."""
    if config.v_coarse >= config.v_full:
        raise TemplateError("coarse vertex count must be below the full count")
    if config.v_full % RING_SEGMENTS != 0:
        raise TemplateError(f"full vertex count must be a multiple of {RING_SEGMENTS}")

    joints = np.zeros((NUM_JOINTS, 3))
    for i, (_, parent, off) in enumerate(_SKELETON):
        joints[i] = (joints[parent] if parent >= 0 else 0.0) + np.asarray(off)

    bones = [i for i in range(NUM_JOINTS) if PARENTS[i] >= 0]
    radii = np.array([_BONE_RADIUS[JOINT_NAMES[c]] for c in bones])
    lengths = np.array([np.linalg.norm(joints[c] - joints[PARENTS[c]]) for c in bones])
    rings_per_bone = _allocate_rings(lengths, config.v_full // RING_SEGMENTS)

    verts: list[np.ndarray] = []
    weights = np.zeros((config.v_full, NUM_JOINTS))
    faces: list[tuple[int, int, int]] = []
    face_bone: list[int] = []
    offset = 0
    for b, child in enumerate(bones):
        parent = PARENTS[child]
        p, c = joints[parent], joints[child]
        axis = c - p
        axis_n = axis / np.linalg.norm(axis)
        u, v = _perp_frame(axis_n)
        nr = rings_per_bone[b]
        for ri, t in enumerate(np.linspace(0.0, 1.0, nr)):
            center = p + t * axis
            taper = 1.0 - 0.6 * max(0.0, (abs(t - 0.5) - 0.35) / 0.15)
            r = radii[b] * taper
            for k in range(RING_SEGMENTS):
                th = 2.0 * math.pi * k / RING_SEGMENTS
                verts.append(center + r * (math.cos(th) * u + math.sin(th) * v))
            blend = min(1.0, max(0.0, 2.0 * t - 1.0))
            row = offset + ri * RING_SEGMENTS
            weights[row:row + RING_SEGMENTS, parent] = 1.0 - blend
            weights[row:row + RING_SEGMENTS, child] = blend
        for ri in range(nr - 1):
            base = offset + ri * RING_SEGMENTS
            for k in range(RING_SEGMENTS):
                a0 = base + k
                a1 = base + (k + 1) % RING_SEGMENTS
                b0 = a0 + RING_SEGMENTS
                b1 = a1 + RING_SEGMENTS
                faces.append((a0, a1, b1))
                faces.append((a0, b1, b0))
                face_bone.extend((child, child))
        # end caps: fans over the first and last ring
        for ring_start, flip in ((offset, True), (offset + (nr - 1) * RING_SEGMENTS, False)):
            for k in range(1, RING_SEGMENTS - 1):
                tri = (ring_start, ring_start + k, ring_start + k + 1)
                faces.append((tri[0], tri[2], tri[1]) if flip else tri)
                face_bone.append(child)
        offset += nr * RING_SEGMENTS

    verts_full = np.asarray(verts)
    assert verts_full.shape == (config.v_full, 3)

    coarse_idx = np.round(np.linspace(0, config.v_full - 1, config.v_coarse)).astype(np.int64)
    if len(np.unique(coarse_idx)) != config.v_coarse:
        raise TemplateError("coarse subset indices collide; lower the coarse count")

    d_coarse = np.zeros((config.v_coarse, config.v_full), dtype=np.float32)
    d_coarse[np.arange(config.v_coarse), coarse_idx] = 1.0

    u_full = _barycentric_upsampler(verts_full, coarse_idx)

    coarse_rest = verts_full[coarse_idx]
    recon = u_full.astype(np.float64) @ coarse_rest
    residual = np.linalg.norm(recon - verts_full, axis=1)

    template_coords = np.concatenate([joints, coarse_rest], axis=0).astype(np.float32)
    adjacency = _query_adjacency(joints, coarse_rest)

    limits = np.array([_JOINT_LIMIT[n] for n in JOINT_NAMES], dtype=np.float32)

    return BodyTemplate(
        config=config,
        joints_rest=joints.astype(np.float32),
        parent=PARENTS.copy(),
        verts_full=verts_full.astype(np.float32),
        faces=np.asarray(faces, dtype=np.int64),
        face_bone=np.asarray(face_bone, dtype=np.int64),
        skin_weights=weights.astype(np.float32),
        d_coarse=d_coarse,
        u_full=u_full.astype(np.float32),
        coarse_idx=coarse_idx,
        template_coords=template_coords,
        query_adjacency=adjacency,
        joint_limits=limits,
        coarse_roundtrip_mean=float(residual.mean()),
        coarse_roundtrip_max=float(residual.max()),
        bone_child=np.asarray(bones, dtype=np.int64),
        bone_radius=radii.astype(np.float32),
    )


def _barycentric_upsampler(verts_full: np.ndarray, coarse_idx: np.ndarray,
                           knn: int = 8) -> np.ndarray:
    """Sum-to-one weights from each full vertex onto its nearest coarse vertices.

    Per vertex, solve min ||sum_j w_j c_j - v||^2 subject to sum_j w_j = 1
    over the ``knn`` nearest coarse vertices (KKT system with a small ridge
    for stability). Exact coarse-subset vertices reduce to one-hot rows.
    """
    coarse = verts_full[coarse_idx]
    v = verts_full.shape[0]
    u = np.zeros((v, len(coarse_idx)))
    d2 = ((verts_full[:, None, :] - coarse[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :knn]
    for i in range(v):
        cols = nearest[i]
        if d2[i, cols[0]] < 1e-18:
            u[i, cols[0]] = 1.0
            continue
        c = coarse[cols]                       # (k,3)
        g = c @ c.T + 1e-9 * np.eye(knn)       # Gram with ridge
        kkt = np.zeros((knn + 1, knn + 1))
        kkt[:knn, :knn] = g
        kkt[:knn, knn] = 1.0
        kkt[knn, :knn] = 1.0
        rhs = np.concatenate([c @ verts_full[i], [1.0]])
        w = np.linalg.solve(kkt, rhs)[:knn]
        u[i, cols] = w / w.sum()
    return u


def _query_adjacency(joints: np.ndarray, coarse: np.ndarray, knn: int = 6) -> np.ndarray:
    """Joint-tree edges plus a kNN coarse-mesh graph, sym-normalized with self-loops."""
    nq = NUM_JOINTS + len(coarse)
    a = np.zeros((nq, nq))
    for child in range(NUM_JOINTS):
        p = PARENTS[child]
        if p >= 0:
            a[child, p] = a[p, child] = 1.0
    d2 = ((coarse[:, None, :] - coarse[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    for i in range(len(coarse)):
        for j in np.argsort(d2[i], kind="stable")[:knn]:
            a[NUM_JOINTS + i, NUM_JOINTS + j] = 1.0
            a[NUM_JOINTS + j, NUM_JOINTS + i] = 1.0
    a += np.eye(nq)
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    return (a * dinv[:, None] * dinv[None, :]).astype(np.float32)


# ---------------------------------------------------------------------------
# poses


@dataclass
class Pose:
    """Root translation offset plus per-joint axis-angle rotations."""

    root_pos: np.ndarray   # (3,)
    joint_rot: np.ndarray  # (22,3) axis-angle

    @classmethod
    def rest(cls) -> "Pose":
        return cls(np.zeros(3, dtype=np.float32), np.zeros((NUM_JOINTS, 3), dtype=np.float32))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.root_pos.reshape(3), self.joint_rot.reshape(-1)]).astype(np.float32)

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "Pose":
        vec = np.asarray(vec, dtype=np.float32).reshape(-1)
        if vec.size != 3 + NUM_JOINTS * 3:
            raise ValueError(f"pose vector must have {3 + NUM_JOINTS * 3} entries")
        return cls(vec[:3].copy(), vec[3:].reshape(NUM_JOINTS, 3).copy())


@dataclass
class MotionState:
    """Sinusoidal joint trajectories; advancing time keeps motion smooth."""

    t: float
    amp: np.ndarray        # (22,3)
    freq: np.ndarray       # (22,3) Hz
    phase: np.ndarray      # (22,3)
    root_amp: np.ndarray   # (3,)
    root_freq: np.ndarray  # (3,)
    root_phase: np.ndarray # (3,)

    @classmethod
    def zero(cls) -> "MotionState":
        z = np.zeros((NUM_JOINTS, 3))
        return cls(0.0, z.copy(), z.copy() + 0.5, z.copy(), np.zeros(3), np.zeros(3) + 0.3, np.zeros(3))

    @classmethod
    def random(cls, rng: np.random.Generator, limits: np.ndarray) -> "MotionState":
        # per-axis amplitude below limit/sqrt(3) keeps the axis-angle norm in range
        amp = rng.uniform(0.2, 0.95, size=(NUM_JOINTS, 3)) * limits[:, None] / math.sqrt(3.0)
        freq = rng.uniform(0.1, 0.6, size=(NUM_JOINTS, 3))
        phase = rng.uniform(0.0, 2.0 * math.pi, size=(NUM_JOINTS, 3))
        root_amp = rng.uniform(0.0, 0.25, size=3)
        root_freq = rng.uniform(0.05, 0.2, size=3)
        root_phase = rng.uniform(0.0, 2.0 * math.pi, size=3)
        return cls(0.0, amp, freq, phase, root_amp, root_freq, root_phase)

    def pose_at(self, t: float) -> Pose:
        w = 2.0 * math.pi * t
        rot = self.amp * np.sin(w * self.freq + self.phase)
        root = self.root_amp * np.sin(w * self.root_freq + self.root_phase)
        return Pose(root.astype(np.float32), rot.astype(np.float32))


def sample_pose(rng: np.random.Generator, state: MotionState, dt: float = FRAME_DT) -> Pose:
    """Advance the motion clock and evaluate; a small phase random-walk keeps
    long sequences from being strictly periodic while staying smooth."""
    state.t += dt
    state.phase += rng.normal(0.0, 0.01, size=state.phase.shape)
    return state.pose_at(state.t)


# ---------------------------------------------------------------------------
# skinning


def _rodrigues(aa: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(aa))
    if theta < 1e-9:
        return np.eye(3)
    k = aa / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(theta) * kx + (1.0 - math.cos(theta)) * (kx @ kx)


def skin(template: BodyTemplate, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Linear-blend skinning: returns (joints (22,3), verts_full (V,3)), float32."""
    rots = np.zeros((NUM_JOINTS, 3, 3))
    trans = np.zeros((NUM_JOINTS, 3))
    rest = template.joints_rest.astype(np.float64)
    for j in range(NUM_JOINTS):
        r_local = _rodrigues(np.asarray(pose.joint_rot[j], dtype=np.float64))
        # rotation about the joint's rest position
        t_local = rest[j] - r_local @ rest[j]
        p = template.parent[j]
        if p < 0:
            rots[j] = r_local
            trans[j] = t_local + np.asarray(pose.root_pos, dtype=np.float64)
        else:
            rots[j] = rots[p] @ r_local
            trans[j] = rots[p] @ t_local + trans[p]

    joints = np.einsum("jab,jb->ja", rots, rest) + trans
    vw = template.skin_weights.astype(np.float64)           # (V,22)
    v_rest = template.verts_full.astype(np.float64)          # (V,3)
    per_joint = np.einsum("jab,vb->jva", rots, v_rest) + trans[:, None, :]
    verts = np.einsum("vj,jva->va", vw, per_joint)
    return joints.astype(np.float32), verts.astype(np.float32)


def coarse_vertices(template: BodyTemplate, verts_full: np.ndarray) -> np.ndarray:
    """Coarse ground truth: the one-hot downsampling rows reduce to a gather."""
    return np.ascontiguousarray(verts_full[template.coarse_idx])


@lru_cache(maxsize=4)
def cached_template(scale_name: str) -> BodyTemplate:
    return build_template(scale_preset(scale_name))

"""Synchronized frame generation and on-disk dataset format.

A dataset is a directory: ``manifest.json`` plus one little-endian float32
blob per field (``points.f32``, ``image.f32``, ``joints.f32``, ``verts.f32``).
The manifest records shapes, scene tags, seeds, pose parameters and the
format version; coarse ground-truth vertices are recomputed from the stored
full mesh on read, which is bitwise identical to what the generator produced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .body import (FRAME_DT, BodyTemplate, MotionState, Pose, cached_template,
                   coarse_vertices, sample_pose, skin)
from .scenes import CorruptionProfile, scene_profile
from .sensors import RADAR_POINTS, render_image, sample_radar

MAGIC = "radarmesh.dataset"
VERSION = 1

_BLOBS = ("points", "image", "joints", "verts")


class DatasetError(RuntimeError):
    pass


@dataclass
class Frame:
    """One synchronized sample: radar cloud, image, and ground truth."""

    points: np.ndarray          # (1024,3) float32
    image: np.ndarray           # (3,H,H) float32
    gt_joints: np.ndarray       # (22,3) float32
    gt_verts_full: np.ndarray   # (V,3) float32
    gt_verts_coarse: np.ndarray # (Vc,3) float32
    scene_tag: str
    pose: Pose | None = None


def generate_frames(template: BodyTemplate, scene: str | CorruptionProfile,
                    n_frames: int, seed: int, start_frame: int = 0) -> list[Frame]:
    """Deterministic frame sequence; per-frame rngs derive from (seed, index)."""
    profile = scene_profile(scene) if isinstance(scene, str) else scene
    tag = scene if isinstance(scene, str) else "custom"
    motion = MotionState.random(np.random.default_rng(np.random.SeedSequence((seed, 11))),
                                template.joint_limits)
    motion.t = start_frame * FRAME_DT
    pose_rng = np.random.default_rng(np.random.SeedSequence((seed, 12)))
    frames = []
    for k in range(n_frames):
        pose = sample_pose(pose_rng, motion)
        joints, verts = skin(template, pose)
        img_rng = np.random.default_rng(np.random.SeedSequence((seed, 13, start_frame + k)))
        radar_rng = np.random.default_rng(np.random.SeedSequence((seed, 14, start_frame + k)))
        image = render_image(verts, template.faces, profile, img_rng,
                             template.config.image_size)
        points = sample_radar(verts, template.faces, profile, radar_rng,
                              face_bone=template.face_bone)
        frames.append(Frame(
            points=points,
            image=image,
            gt_joints=joints,
            gt_verts_full=verts,
            gt_verts_coarse=coarse_vertices(template, verts),
            scene_tag=tag,
            pose=pose,
        ))
    return frames


def write_dataset(frames: list[Frame], path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    n = len(frames)
    shapes = {
        "points": [n, RADAR_POINTS, 3],
        "image": [n] + (list(frames[0].image.shape) if n else [3, 0, 0]),
        "joints": [n, 22, 3],
        "verts": [n] + (list(frames[0].gt_verts_full.shape) if n else [0, 3]),
    }
    stacks = {
        "points": np.stack([f.points for f in frames]) if n else np.zeros(shapes["points"], np.float32),
        "image": np.stack([f.image for f in frames]) if n else np.zeros(shapes["image"], np.float32),
        "joints": np.stack([f.gt_joints for f in frames]) if n else np.zeros(shapes["joints"], np.float32),
        "verts": np.stack([f.gt_verts_full for f in frames]) if n else np.zeros(shapes["verts"], np.float32),
    }
    v_full = stacks["verts"].shape[1] if n else 0
    manifest = {
        "magic": MAGIC,
        "version": VERSION,
        "n_frames": n,
        "shapes": shapes,
        "scene_tags": [f.scene_tag for f in frames],
        "v_full": v_full,
        "v_coarse": int(frames[0].gt_verts_coarse.shape[0]) if n else 0,
        "image_size": int(frames[0].image.shape[-1]) if n else 0,
        "poses": [f.pose.as_vector().astype(np.float64).tolist() if f.pose is not None else None
                  for f in frames],
    }
    for name in _BLOBS:
        (path / f"{name}.f32").write_bytes(
            np.ascontiguousarray(stacks[name]).astype("<f4", copy=False).tobytes())
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return path


def read_dataset(path) -> list[Frame]:
    path = Path(path)
    man_path = path / "manifest.json"
    if not man_path.exists():
        raise DatasetError(f"no dataset manifest at {man_path}")
    manifest = json.loads(man_path.read_text())
    if manifest.get("magic") != MAGIC:
        raise DatasetError(f"bad dataset magic in {man_path}")
    if manifest.get("version") != VERSION:
        raise DatasetError(f"unsupported dataset version {manifest.get('version')}")

    n = manifest["n_frames"]
    blobs = {}
    for name in _BLOBS:
        shape = tuple(manifest["shapes"][name])
        raw = (path / f"{name}.f32").read_bytes()
        expect = int(np.prod(shape)) * 4
        if len(raw) != expect:
            raise DatasetError(f"{name}.f32 is {len(raw)} bytes, expected {expect} (truncated?)")
        blobs[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()

    if n == 0:
        return []

    template = _template_for(manifest["v_full"], manifest["v_coarse"])
    frames = []
    for k in range(n):
        pose_vec = manifest["poses"][k]
        frames.append(Frame(
            points=blobs["points"][k],
            image=blobs["image"][k],
            gt_joints=blobs["joints"][k],
            gt_verts_full=blobs["verts"][k],
            gt_verts_coarse=coarse_vertices(template, blobs["verts"][k]),
            scene_tag=manifest["scene_tags"][k],
            pose=Pose.from_vector(np.asarray(pose_vec)) if pose_vec is not None else None,
        ))
    return frames


def _template_for(v_full: int, v_coarse: int) -> BodyTemplate:
    from .body import DESK, PAPER, ScaleConfig, build_template
    for preset in (DESK, PAPER):
        if preset.v_full == v_full and preset.v_coarse == v_coarse:
            return cached_template(preset.name)
    return build_template(ScaleConfig("custom", v_full, v_coarse, 56, 64))

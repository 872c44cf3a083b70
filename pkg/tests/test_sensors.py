import numpy as np
import pytest

from radarmesh.body import DESK, Pose, build_template, skin
from radarmesh.scenes import CorruptionProfile, scene_profile
from radarmesh.sensors import (OCCLUDER_VALUE, occluder_pixels, point_mesh_distance,
                               render_image, sample_radar)


@pytest.fixture(scope="module")
def tpl():
    return build_template(DESK)


@pytest.fixture(scope="module")
def posed(tpl):
    rng = np.random.default_rng(5)
    pose = Pose.rest()
    pose.joint_rot = (rng.uniform(-0.3, 0.3, size=(22, 3))).astype(np.float32)
    return skin(tpl, pose)


def test_empty_scene_renders_background(tpl):
    img = render_image(np.zeros((0, 3), np.float32), np.zeros((0, 3), np.int64),
                       scene_profile("lab"), np.random.default_rng(0), 56)
    np.testing.assert_array_equal(img, np.zeros((3, 56, 56), np.float32))


def test_render_in_range_and_body_coverage(tpl, posed):
    _, verts = posed
    img = render_image(verts, tpl.faces, scene_profile("lab"), np.random.default_rng(0), 56)
    assert img.shape == (3, 56, 56)
    assert img.min() >= 0.0 and img.max() <= 1.0
    mask = img[2] > 0
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    extent = max(rows[-1] - rows[0], cols[-1] - cols[0]) + 1
    assert extent >= 0.5 * 56


def test_poor_lighting_darkens(tpl, posed):
    _, verts = posed
    clean = render_image(verts, tpl.faces, scene_profile("lab"), np.random.default_rng(1), 56)
    dark = render_image(verts, tpl.faces, scene_profile("poor_lighting"),
                        np.random.default_rng(1), 56)
    noise_floor = 0.02
    assert dark.mean() <= 0.05 * clean.mean() + noise_floor


def test_occluder_rect_is_constant(tpl, posed):
    _, verts = posed
    img = render_image(verts, tpl.faces, scene_profile("occlusion"), np.random.default_rng(2), 56)
    r0, r1, c0, c1 = occluder_pixels(56, 0.35)
    np.testing.assert_array_equal(img[:, r0:r1, c0:c1],
                                  np.full((3, r1 - r0, c1 - c0), OCCLUDER_VALUE, np.float32))
    assert (r1 - r0) * (c1 - c0) >= 0.3 * 56 * 56


def test_render_deterministic(tpl, posed):
    _, verts = posed
    a = render_image(verts, tpl.faces, scene_profile("rain"), np.random.default_rng(9), 56)
    b = render_image(verts, tpl.faces, scene_profile("rain"), np.random.default_rng(9), 56)
    assert a.tobytes() == b.tobytes()


def test_clean_radar_lies_on_surface(tpl, posed):
    _, verts = posed
    pts = sample_radar(verts, tpl.faces, scene_profile("lab"), np.random.default_rng(3),
                       face_bone=tpl.face_bone)
    assert pts.shape == (1024, 3)
    d = point_mesh_distance(pts.astype(np.float64), verts.astype(np.float64), tpl.faces)
    assert d.max() <= 1e-6


def test_radar_deterministic(tpl, posed):
    _, verts = posed
    a = sample_radar(verts, tpl.faces, scene_profile("smoke"), np.random.default_rng(4),
                     face_bone=tpl.face_bone)
    b = sample_radar(verts, tpl.faces, scene_profile("smoke"), np.random.default_rng(4),
                     face_bone=tpl.face_bone)
    assert a.tobytes() == b.tobytes()


def test_outlier_count_against_offset_hull(tpl, posed):
    _, verts = posed
    profile = CorruptionProfile(outlier_fraction=0.1)
    pts = sample_radar(verts, tpl.faces, profile, np.random.default_rng(6),
                       face_bone=tpl.face_bone)
    d = point_mesh_distance(pts.astype(np.float64), verts.astype(np.float64), tpl.faces)
    outside = int((d > 0.05).sum())
    assert outside in (102, 103)


def test_radar_translation_equivariance(tpl, posed):
    _, verts = posed
    t = np.array([0.25, -0.15, 0.1], np.float32)
    a = sample_radar(verts, tpl.faces, scene_profile("lab"), np.random.default_rng(8),
                     face_bone=tpl.face_bone)
    b = sample_radar(verts + t, tpl.faces, scene_profile("lab"), np.random.default_rng(8),
                     face_bone=tpl.face_bone)
    np.testing.assert_allclose(b, a + t, atol=1e-5)


def test_noise_has_zero_mean_offset(tpl, posed):
    _, verts = posed
    sigma = 0.05
    clean = sample_radar(verts, tpl.faces, scene_profile("lab"), np.random.default_rng(10),
                         face_bone=tpl.face_bone)
    noisy = sample_radar(verts, tpl.faces, CorruptionProfile(point_noise_sigma=sigma),
                         np.random.default_rng(10), face_bone=tpl.face_bone)
    offset = (noisy - clean).mean(axis=0)
    assert np.abs(offset).max() <= 3 * sigma / np.sqrt(1024)


def test_segment_dropout_removes_regions(tpl, posed):
    _, verts = posed
    profile = CorruptionProfile(segment_dropout_prob=0.999)
    pts = sample_radar(verts, tpl.faces, profile, np.random.default_rng(11),
                       face_bone=tpl.face_bone)
    assert pts.shape == (1024, 3)  # padded back to full count


def test_degenerate_mesh_rejected(tpl):
    with pytest.raises(ValueError, match="degenerate"):
        sample_radar(np.zeros((3, 3), np.float32), np.array([[0, 1, 2]]),
                     scene_profile("lab"), np.random.default_rng(0))

import numpy as np
import pytest

from radarmesh import tensor as T
from radarmesh.encoders import (ball_group, conv_stages, encode_image, encode_points,
                                fps, grid_coords, init_image_encoder, init_point_encoder)
from radarmesh.gradcheck import check_gradients, max_rel_err
from radarmesh.nn import wrap

from oracles import brute_fps


def embed_1d(xs):
    pts = np.zeros((len(xs), 3), dtype=np.float32)
    pts[:, 0] = xs
    return pts


# ---------------------------------------------------------------------------
# fps


def test_fps_known_sequence():
    pts = embed_1d([0.0, 1.0, 2.0, 3.0, 9.0])
    order = fps(pts, 4)
    # coordinates 9, 0, 3, 1 in selection order
    np.testing.assert_array_equal(pts[order, 0], [9.0, 0.0, 3.0, 1.0])


def test_fps_k_equals_n():
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((10, 3)).astype(np.float32)
    order = fps(pts, 10)
    assert sorted(order.tolist()) == list(range(10))


def test_fps_rejects_bad_k():
    pts = np.zeros((4, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        fps(pts, 5)
    with pytest.raises(ValueError):
        fps(pts, 0)


def test_fps_matches_brute_oracle_on_random_clouds():
    rng = np.random.default_rng(123)
    for _ in range(60):
        n = int(rng.integers(4, 64))
        k = int(rng.integers(1, n + 1))
        pts = rng.uniform(-1, 1, size=(n, 3)).astype(np.float32)
        got = fps(pts, k).tolist()
        expect = brute_fps(pts, k)
        assert got == expect


def test_fps_with_duplicates_matches_oracle():
    rng = np.random.default_rng(5)
    base = rng.uniform(-1, 1, size=(8, 3)).astype(np.float32)
    pts = np.concatenate([base, base[:4]], axis=0)
    assert fps(pts, 12).tolist() == brute_fps(pts, 12)


# ---------------------------------------------------------------------------
# ball grouping


def test_ball_group_tiny_radius_keeps_seed_only():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1, 1, size=(20, 3)).astype(np.float32)
    groups = ball_group(pts, np.array([3, 7]), radius=1e-9, max_group=8)
    assert [g.tolist() for g in groups] == [[3], [7]]


def test_ball_group_mutual_inclusion():
    pts = np.array([[0, 0, 0], [0.1, 0, 0]], dtype=np.float32)
    groups = ball_group(pts, np.array([0, 1]), radius=0.3, max_group=4)
    assert sorted(groups[0].tolist()) == [0, 1]
    assert sorted(groups[1].tolist()) == [0, 1]


def test_ball_group_distances_within_radius_and_sorted():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1, 1, size=(200, 3)).astype(np.float32)
    seeds = fps(pts, 8)
    radius = 0.5
    groups = ball_group(pts, seeds, radius=radius, max_group=16)
    for s, g in zip(seeds, groups):
        d = np.linalg.norm(pts[g] - pts[s], axis=1)
        assert (d <= radius + 1e-7).all()
        assert (np.diff(d) >= -1e-7).all()  # nearest first
        assert len(g) <= 16
        assert g[0] == s


# ---------------------------------------------------------------------------
# point encoder


@pytest.fixture(scope="module")
def point_params():
    rng = np.random.default_rng(3)
    params = {}
    init_point_encoder(rng, params, "pts", feature_dim=32)
    return params


def cloud_fixture(seed=4, n=256):
    rng = np.random.default_rng(seed)
    return (rng.uniform(-0.5, 0.5, size=(n, 3)) * [0.4, 0.9, 0.3]).astype(np.float32)


def test_encode_points_shapes(point_params):
    cloud = cloud_fixture()
    p = wrap(point_params, trainable=False)
    seeds, clusters, g = encode_points(p, "pts", cloud)
    assert seeds.shape == (32, 3)
    assert clusters.shape == (32, 32)
    assert g.shape == (1, 32)
    # seed rows are actual cloud points
    assert all(any(np.array_equal(s, c) for c in cloud) for s in seeds)


def test_encode_points_permutation_invariant(point_params):
    cloud = cloud_fixture(seed=9)
    p = wrap(point_params, trainable=False)
    s1, c1, g1 = encode_points(p, "pts", cloud)
    perm = np.random.default_rng(0).permutation(len(cloud))
    s2, c2, g2 = encode_points(p, "pts", cloud[perm])
    np.testing.assert_allclose(s1, s2, atol=1e-6)
    np.testing.assert_allclose(c1.data, c2.data, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(g1.data, g2.data, rtol=1e-5, atol=1e-6)


def test_encode_points_translation_equivariance(point_params):
    cloud = cloud_fixture(seed=11)
    t = np.array([0.5, -0.2, 0.3], dtype=np.float32)
    p = wrap(point_params, trainable=False)
    s1, c1, _ = encode_points(p, "pts", cloud)
    s2, c2, _ = encode_points(p, "pts", cloud + t)
    np.testing.assert_allclose(s2, s1 + t, atol=1e-5)
    np.testing.assert_allclose(c2.data, c1.data, rtol=1e-4, atol=1e-5)


def test_encode_points_gradcheck(point_params):
    cloud = cloud_fixture(seed=12, n=64)

    def build(leaves):
        _, clusters, g = encode_points(leaves, "pts", cloud, n_seeds=8)
        return T.add(T.mean_all(clusters), T.mean_all(g))

    res = check_gradients(build, point_params, entries_per_array=3, seed=0)
    assert max_rel_err(res) < 1e-4


# ---------------------------------------------------------------------------
# image encoder


def test_conv_stages_schedules():
    assert conv_stages(56) == [(3, 16), (16, 32), (32, 64)]
    assert conv_stages(224) == [(3, 16), (16, 32), (32, 64), (64, 128), (128, 256)]
    with pytest.raises(T.ShapeError):
        conv_stages(60)


def test_encode_image_shapes():
    rng = np.random.default_rng(6)
    params = {}
    init_image_encoder(rng, params, "img", image_size=56, feature_dim=32)
    img = rng.random((3, 56, 56)).astype(np.float32)
    coords, feats, g = encode_image(wrap(params, trainable=False), "img", img, 56, 32)
    assert coords.shape == (49, 3)
    assert feats.shape == (49, 32)
    assert g.shape == (1, 32)


def test_encode_image_zero_image_uniform_features():
    rng = np.random.default_rng(7)
    params = {}
    init_image_encoder(rng, params, "img", image_size=56, feature_dim=16)
    img = np.zeros((3, 56, 56), dtype=np.float32)
    coords, feats, _ = encode_image(wrap(params, trainable=False), "img", img, 56, 16)
    # bias-only response: every grid cell identical
    np.testing.assert_allclose(feats.data, np.tile(feats.data[:1], (49, 1)), atol=1e-6)
    assert len(np.unique(coords, axis=0)) == 49


def test_grid_coords_normalized():
    g = grid_coords()
    assert g.shape == (49, 3)
    assert (g[:, :2] > 0).all() and (g[:, :2] < 1).all()
    assert (g[:, 2] == 0).all()


def test_encode_image_gradcheck():
    rng = np.random.default_rng(8)
    params = {}
    init_image_encoder(rng, params, "img", image_size=28, feature_dim=8)
    img = rng.random((3, 28, 28)).astype(np.float32)

    def build(leaves):
        _, feats, g = encode_image(leaves, "img", img, 28, 8)
        return T.add(T.mean_all(feats), T.mean_all(g))

    res = check_gradients(build, params, entries_per_array=3, seed=1)
    assert max_rel_err(res) < 1e-4

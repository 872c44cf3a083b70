"""Independent brute-force oracles used by the tests.

Deliberately naive implementations kept apart from the package code paths
they verify.
"""

import math

import numpy as np


def brute_fps(points: np.ndarray, k: int) -> list[int]:
    """O(n^2) greedy max-min selection with the documented start/tie rules:
    start farthest from the centroid; break ties by lexicographically
    smallest coordinates, then lowest index."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)

    def pick(cands_scores):
        best = None
        for idx, s in cands_scores:
            if best is None:
                best = (idx, s)
                continue
            if s > best[1] + 0.0:
                best = (idx, s)
            elif s == best[1]:
                a, b = tuple(pts[idx]), tuple(pts[best[0]])
                if a < b or (a == b and idx < best[0]):
                    best = (idx, s)
        return best[0]

    centroid = pts.mean(axis=0)
    scores = [(i, float(((pts[i] - centroid) ** 2).sum())) for i in range(n)]
    chosen = [pick(scores)]
    while len(chosen) < k:
        cands = []
        for i in range(n):
            if i in chosen:
                continue
            d = min(float(((pts[i] - pts[j]) ** 2).sum()) for j in chosen)
            cands.append((i, d))
        chosen.append(pick(cands))
    return chosen


def scalar_frame_errors(pred_joints, pred_verts, gt_joints, gt_verts):
    """Per-frame mean/max Euclidean distances in cm, plain python loops."""
    def stats(pred, gt):
        dists = []
        for p, g in zip(pred, gt):
            dists.append(math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(p, g))))
        return 100.0 * sum(dists) / len(dists), 100.0 * max(dists)

    mean_j, max_j = stats(pred_joints, gt_joints)
    mean_v, max_v = stats(pred_verts, gt_verts)
    return mean_j, max_j, mean_v, max_v


def scalar_l1(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference via a scalar float64 loop."""
    total = 0.0
    fa = np.asarray(a, dtype=np.float64).reshape(-1)
    fb = np.asarray(b, dtype=np.float64).reshape(-1)
    for x, y in zip(fa, fb):
        total += abs(x - y)
    return total / len(fa)

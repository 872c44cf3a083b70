"""Shared parameter-dict helpers for linear, layer-norm and conv layers.

Parameters live in flat ``dict[str, np.ndarray]`` namespaces (float32) so
checkpointing stays trivial; ``apply``-side helpers take the same dict with
values wrapped as graph Arrays.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T


def init_linear(rng: np.random.Generator, params: dict, prefix: str,
                n_in: int, n_out: int, scale: float = 1.0) -> None:
    std = scale * np.sqrt(2.0 / n_in)
    params[prefix + ".w"] = (rng.standard_normal((n_in, n_out)) * std).astype(np.float32)
    params[prefix + ".b"] = np.zeros(n_out, dtype=np.float32)


def linear(p: dict[str, T.Array], prefix: str, x: T.Array) -> T.Array:
    return T.add(T.matmul(x, p[prefix + ".w"]), p[prefix + ".b"])


def init_layer_norm(params: dict, prefix: str, dim: int) -> None:
    params[prefix + ".gain"] = np.ones(dim, dtype=np.float32)
    params[prefix + ".bias"] = np.zeros(dim, dtype=np.float32)


def layer_norm(p: dict[str, T.Array], prefix: str, x: T.Array) -> T.Array:
    return T.layer_norm(x, p[prefix + ".gain"], p[prefix + ".bias"])


def init_conv(rng: np.random.Generator, params: dict, prefix: str,
              c_in: int, c_out: int, k: int) -> None:
    std = np.sqrt(2.0 / (c_in * k * k))
    params[prefix + ".k"] = (rng.standard_normal((c_out, c_in, k, k)) * std).astype(np.float32)
    params[prefix + ".b"] = np.zeros(c_out, dtype=np.float32)


def conv(p: dict[str, T.Array], prefix: str, x: T.Array, stride: int, padding: int) -> T.Array:
    return T.conv2d(x, p[prefix + ".k"], p[prefix + ".b"], stride=stride, padding=padding)


def wrap(params: dict[str, np.ndarray], trainable: bool = True) -> dict[str, T.Array]:
    """Wrap raw parameter arrays as graph leaves (once per training step)."""
    return {k: T.Array(v, requires_grad=trainable) for k, v in params.items()}


def collect_grads(wrapped: dict[str, T.Array]) -> dict[str, np.ndarray]:
    out = {}
    for k, arr in wrapped.items():
        out[k] = arr.grad if arr.grad is not None else np.zeros_like(arr.data)
    return out

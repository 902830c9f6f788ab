"""Small shared pieces for the hand-rolled networks: activations, softmax,
parameter init, and a parameter-free layer standardization with its
backward pass.  Everything is float64."""

from __future__ import annotations

import math
from typing import Dict, Tuple

import numpy as np

NORM_EPS = 1e-5


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z)
    e = np.exp(z)
    return e / e.sum()


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z)
    return z - math.log(np.exp(z).sum())


def uniform_init(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> None:
    """Scale the gradient dict in place so its global L2 norm is bounded."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def standardize(u: np.ndarray) -> Tuple[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    """Zero-mean unit-variance normalization along the last axis.

    Returns (output, cache) where cache feeds :func:`standardize_backward`.
    """
    mu = u.mean(axis=-1, keepdims=True)
    var = u.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + NORM_EPS)
    xhat = (u - mu) * inv
    return xhat, (xhat, inv)


def standardize_backward(dout: np.ndarray, cache) -> np.ndarray:
    xhat, inv = cache
    mean_d = dout.mean(axis=-1, keepdims=True)
    mean_dx = (dout * xhat).mean(axis=-1, keepdims=True)
    return (dout - mean_d - xhat * mean_dx) * inv


def flatten_params(params: Dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def assign_flat(params: Dict[str, np.ndarray], flat: np.ndarray) -> None:
    i = 0
    for k in sorted(params):
        n = params[k].size
        params[k][...] = flat[i:i + n].reshape(params[k].shape)
        i += n
    if i != flat.size:
        raise ValueError("flat vector size mismatch")

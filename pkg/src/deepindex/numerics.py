"""Seeded generators and a finite-difference gradient oracle. Small array helpers live here too."""

import numpy as np

RNG_ALGORITHM = "PCG64/SeedSequence-v1"


class ShapeError(ValueError):
    """Raised when array dimensions do not conform."""


class NonFiniteError(ValueError):
    """Raised when a NaN or Inf reaches a constructor or an objective."""


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite 2-d float64 array."""
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-d, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


def as_vector(v, name="vector"):
    """Return ``v`` as a finite 1-d float64 array."""
    arr = np.array(v, dtype=np.float64, copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-d, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("matmul produced non-finite entries")
    return out


def make_rng(seed, *stream):
    """Deterministic generator for ``seed``; ``stream`` splits off children.

    ``make_rng(s, i)`` and ``make_rng(s, j)`` are independent streams for
    ``i != j``, so parallel work never shares a generator.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


def bernoulli_mask(rng, shape, p):
    """0/1 float mask with ``P(1) = p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"keep probability must lie in [0, 1], got {p}")
    if p == 1.0:
        return np.ones(shape)
    if p == 0.0:
        return np.zeros(shape)
    return (rng.random(shape) < p).astype(np.float64)


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of the scalar function ``f`` at ``x``.

    ``x`` may have any shape; the result has the same shape.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"f is not finite around coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor=1e-8):
    """max |a - b| / max(|a|, |b|, floor), the usual gradient-check metric."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), floor)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)

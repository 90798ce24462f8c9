"""Input validation helpers shared across modules."""

import numbers

import numpy as np
from sklearn.utils import check_array


def check_points(points, name="points"):
    """Coerce ``points`` to a non-empty 2-D float64 array of latent vectors.

    1-D input is read as a set of scalar points (one column).
    """
    points = getattr(points, "points", points)
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    arr = check_array(arr, dtype=np.float64, ensure_2d=True, ensure_min_samples=1)
    return arr


def check_same_dim(a, b):
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"dimensionality mismatch: {a.shape[1]} vs {b.shape[1]}"
        )


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not value > 0:
        raise ValueError(f"{name} must be a positive real, got {value!r}")
    return float(value)


def check_probability(value, name, open_interval=True):
    lo_ok = value > 0 if open_interval else value >= 0
    hi_ok = value < 1 if open_interval else value <= 1
    if not (lo_ok and hi_ok):
        raise ValueError(f"{name} must lie in (0, 1), got {value!r}")
    return float(value)


def check_rng(random_state):
    """Return a numpy Generator from a seed, Generator, or None."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)

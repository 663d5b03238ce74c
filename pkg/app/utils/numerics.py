"""
Small numerical helpers shared by the services.
"""

from typing import Dict, Sequence

import numpy as np

from app.utils.errors import InvalidParameterError, InvalidShapeError, NumericInputError


def ensure_finite(vector: np.ndarray, name: str) -> np.ndarray:
    """Return ``vector`` as a float array, rejecting NaN/inf entries."""
    arr = np.asarray(vector, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NumericInputError(f"{name} contains non-finite entries")
    return arr


def ensure_length(vector: np.ndarray, length: int, name: str) -> np.ndarray:
    arr = np.asarray(vector, dtype=float)
    if arr.shape != (length,):
        raise InvalidShapeError(f"{name} has shape {arr.shape}, expected ({length},)")
    return arr


def geometric_spectrum(n: int, m: int, kappa: float) -> np.ndarray:
    """
    M geometric singular values with s_max / s_min = kappa.

    s_k = s_0 * rho**k with rho = kappa**(-1/(M-1)); s_0 is chosen so that
    (1/N) * sum(s_k**2) = 1, i.e. (1/N) Tr{A A^T} = 1.
    """
    if m < 1 or m > n:
        raise InvalidShapeError(f"need 1 <= m <= n, got m={m}, n={n}")
    if not np.isfinite(kappa) or kappa < 1.0:
        raise InvalidParameterError(f"kappa must be >= 1, got {kappa}")

    if m == 1:
        return np.array([np.sqrt(float(n))])
    rho = kappa ** (-1.0 / (m - 1))
    # Exponentiate in log space so the end points are exact
    spectrum = np.exp(np.log(rho) * np.arange(m))
    spectrum[-1] = 1.0 / kappa
    scale = np.sqrt(n / np.sum(spectrum ** 2))
    return scale * spectrum


def spawn_generators(seed: int, names: Sequence[str]) -> Dict[str, np.random.Generator]:
    """Independent named generators split from one seed."""
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


def to_db(value: float) -> float:
    """10 log10, with -inf for exact zero."""
    if value <= 0.0:
        return float("-inf")
    return float(10.0 * np.log10(value))

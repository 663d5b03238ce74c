"""
Matrix-free measurement operators.

Provides:
- DenseOperator: A = U diag(s) V^T with Haar-like singular vectors (small N, keeps its SVD)
- FijlOperator: A = J S P H D with an orthonormal DCT-II core, O(N log N) per product
- apply_w: the regularized measurement-domain map W_t = v_w I + v_ba A A^T

Every operator is trace-normalized, (1/N) Tr{A A^T} = 1, and immutable after
construction so it can be shared between runs.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
from scipy.fft import dct, idct

from app.models.schemas import OperatorSpec
from app.utils.errors import InvalidParameterError, InvalidShapeError
from app.utils.numerics import ensure_finite, ensure_length, geometric_spectrum

logger = logging.getLogger(__name__)

# Refuse to materialize anything larger than this many entries
MAX_DENSE_ENTRIES = 64 * 1024 * 1024


class MeasurementOperator(ABC):
    """Abstract linear map A: R^n -> R^m with its adjoint."""

    kind: str = "abstract"

    def __init__(self, n: int, m: int, spectrum: np.ndarray, seed: int):
        if m < 1 or m > n:
            raise InvalidShapeError(f"need 1 <= m <= n, got m={m}, n={n}")
        self.n = n
        self.m = m
        self.seed = seed
        self._spectrum = np.array(spectrum, dtype=float)
        self._spectrum.setflags(write=False)

    @abstractmethod
    def forward(self, x: np.ndarray) -> np.ndarray:
        """A x."""
        pass

    @abstractmethod
    def adjoint(self, u: np.ndarray) -> np.ndarray:
        """A^T u."""
        pass

    def gram(self, u: np.ndarray) -> np.ndarray:
        """A A^T u."""
        return self.forward(self.adjoint(u))

    @abstractmethod
    def left_coordinates(self, u: np.ndarray) -> np.ndarray:
        """U^T u, where A A^T = U diag(s^2) U^T and s is ``spectrum``."""
        pass

    @property
    def spectrum(self) -> np.ndarray:
        """Singular values in construction order (descending)."""
        return self._spectrum

    @property
    def delta(self) -> float:
        return self.m / self.n

    @property
    def normalization(self) -> float:
        """(1/N) Tr{A A^T}, exact from the stored singular values."""
        return float(np.sum(self._spectrum ** 2) / self.n)

    @property
    def condition_number(self) -> float:
        return float(self._spectrum.max() / self._spectrum.min())

    def matrix(self) -> np.ndarray:
        """Materialize A column by column (small sizes only)."""
        if self.n * self.m > MAX_DENSE_ENTRIES:
            raise InvalidShapeError(
                f"refusing to materialize a {self.m}x{self.n} operator"
            )
        basis = np.eye(self.n)
        return np.column_stack([self.forward(basis[:, k]) for k in range(self.n)])

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "m": self.m,
            "kappa": self.condition_number,
            "seed": self.seed,
            "normalization": self.normalization,
        }


class DenseOperator(MeasurementOperator):
    """Explicit matrix with stored SVD factors, used as the oracle backend."""

    kind = "dense"

    def __init__(self, u: np.ndarray, spectrum: np.ndarray, v: np.ndarray, seed: int):
        m, n = u.shape[0], v.shape[0]
        super().__init__(n=n, m=m, spectrum=spectrum, seed=seed)
        self.u = u
        self.v = v
        self._matrix = (u * self._spectrum) @ v.T
        for arr in (self.u, self.v, self._matrix):
            arr.setflags(write=False)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._matrix @ x

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        return self._matrix.T @ u

    def matrix(self) -> np.ndarray:
        return np.array(self._matrix)

    def left_coordinates(self, u: np.ndarray) -> np.ndarray:
        return self.u.T @ u

    def svd(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(U, s, V) with A = U diag(s) V^T; V has orthonormal columns."""
        return self.u, self._spectrum, self.v


class FijlOperator(MeasurementOperator):
    """
    Fast ill-conditioned Johnson-Lindenstrauss transform A = J S P H D.

    D: random signs, H: orthonormal DCT-II, P: random permutation,
    S: geometric spectrum, J: keep the first M rows.
    """

    kind = "fijl"

    def __init__(self, signs: np.ndarray, permutation: np.ndarray, spectrum: np.ndarray, seed: int):
        n = signs.shape[0]
        super().__init__(n=n, m=spectrum.shape[0], spectrum=spectrum, seed=seed)
        self.signs = signs
        self.permutation = permutation
        # Rows of P H D that survive J
        self._rows = permutation[: self.m]
        for arr in (self.signs, self.permutation, self._rows):
            arr.setflags(write=False)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = dct(self.signs * x, type=2, norm="ortho")
        return self._spectrum * h[self._rows]

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        v = np.zeros(self.n)
        v[self._rows] = self._spectrum * u
        return self.signs * idct(v, type=2, norm="ortho")

    def left_coordinates(self, u: np.ndarray) -> np.ndarray:
        # Rows of P H D are orthonormal, so A A^T = S^2 already
        return np.array(u, dtype=float)

    def permute(self, x: np.ndarray) -> np.ndarray:
        """P x."""
        return x[self.permutation]

    def permute_adjoint(self, y: np.ndarray) -> np.ndarray:
        """P^T y."""
        out = np.empty_like(y)
        out[self.permutation] = y
        return out


@dataclass(frozen=True)
class FijlSpec:
    """Parameters of a FIJL operator; the spectrum is derived from them."""
    n: int
    m: int
    kappa: float
    seed: int = 0
    spectrum_override: Optional[np.ndarray] = field(default=None, compare=False)

    @cached_property
    def spectrum(self) -> np.ndarray:
        if self.spectrum_override is not None:
            return np.asarray(self.spectrum_override, dtype=float)
        return geometric_spectrum(self.n, self.m, self.kappa)


def _haar_orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Orthonormal columns from the QR of a Gaussian matrix, sign-fixed to be Haar."""
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


def _check_dimensions(n: int, m: int, kappa: float) -> None:
    if m < 1 or m > n:
        raise InvalidShapeError(f"need 1 <= m <= n, got m={m}, n={n}")
    if not np.isfinite(kappa) or kappa < 1.0:
        raise InvalidParameterError(f"kappa must be finite and >= 1, got {kappa}")


def build_dense(n: int, m: int, kappa: float, seed: int) -> DenseOperator:
    """Dense Gaussian-rotation operator with geometric spectrum and exact trace normalization."""
    _check_dimensions(n, m, kappa)
    if n * m > MAX_DENSE_ENTRIES:
        raise InvalidShapeError(f"dense {m}x{n} operator is too large; use kind=\"fijl\"")
    rng = np.random.default_rng(seed)
    u = _haar_orthonormal(rng, m, m)
    v = _haar_orthonormal(rng, n, m)
    spectrum = geometric_spectrum(n, m, kappa)
    logger.info(f"Built dense operator n={n} m={m} kappa={kappa:g} seed={seed}")
    return DenseOperator(u=u, spectrum=spectrum, v=v, seed=seed)


def build_fijl(spec: FijlSpec) -> FijlOperator:
    """FIJL operator applying x -> J S P H D x in O(N log N)."""
    _check_dimensions(spec.n, spec.m, spec.kappa)
    spectrum = spec.spectrum
    if spectrum.shape != (spec.m,):
        raise InvalidShapeError(f"spectrum has shape {spectrum.shape}, expected ({spec.m},)")
    rng = np.random.default_rng(spec.seed)
    signs = rng.choice(np.array([-1.0, 1.0]), size=spec.n)
    permutation = rng.permutation(spec.n)
    logger.info(f"Built FIJL operator n={spec.n} m={spec.m} kappa={spec.kappa:g} seed={spec.seed}")
    return FijlOperator(signs=signs, permutation=permutation, spectrum=spectrum, seed=spec.seed)


def build_operator(spec: OperatorSpec) -> MeasurementOperator:
    """Create the operator described by a config block."""
    if spec.kind == "dense":
        return build_dense(spec.n, spec.m, spec.kappa, spec.seed)
    elif spec.kind == "fijl":
        return build_fijl(FijlSpec(n=spec.n, m=spec.m, kappa=spec.kappa, seed=spec.seed))
    else:
        raise InvalidParameterError(f"Unknown operator kind: {spec.kind}")


def apply_w(
    op: MeasurementOperator, v_w_tilde: float, v_ba_tilde: float, u: np.ndarray
) -> np.ndarray:
    """W_t u = v_w u + v_ba A (A^T u); one forward and one adjoint product."""
    if not v_w_tilde > 0.0:
        raise InvalidParameterError(f"v_w_tilde must be positive, got {v_w_tilde}")
    if not v_ba_tilde >= 0.0:
        raise InvalidParameterError(f"v_ba_tilde must be non-negative, got {v_ba_tilde}")
    u = ensure_length(ensure_finite(u, "u"), op.m, "u")
    return v_w_tilde * u + v_ba_tilde * op.gram(u)

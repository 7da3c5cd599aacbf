"""B-spline basis systems and curves represented by basis coefficients."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline

from .errors import BasisMismatch, DataError, InvalidDimension, OutOfDomain, RankDeficient

__all__ = [
    "BSplineBasis",
    "Curve",
    "make_bspline_basis",
    "eval_basis",
    "gram_matrix",
    "smooth_curve",
    "curve_eval",
    "l2_inner",
    "gcv_score",
    "select_n_basis",
    "default_grid",
    "trapezoid_weights",
]

DEFAULT_GRID_SIZE = 201


@dataclass(frozen=True)
class BSplineBasis:
    """Clamped B-spline basis with uniformly spaced interior knots.

    ``order`` is the spline order (degree + 1); ``n_basis`` the number of functions.
    """

    domain: tuple
    n_basis: int
    order: int = 4

    def __post_init__(self):
        a, b = (float(x) for x in self.domain)
        if not (np.isfinite(a) and np.isfinite(b) and b > a):
            raise InvalidDimension(f"domain must be a finite interval with b > a, got {self.domain}")
        if not (int(self.n_basis) >= int(self.order) >= 1):
            raise InvalidDimension(f"need n_basis >= order >= 1, got K={self.n_basis}, order={self.order}")
        object.__setattr__(self, "domain", (a, b))
        object.__setattr__(self, "n_basis", int(self.n_basis))
        object.__setattr__(self, "order", int(self.order))

    @property
    def degree(self) -> int:
        return self.order - 1

    @property
    def length(self) -> float:
        return self.domain[1] - self.domain[0]

    @cached_property
    def breaks(self) -> np.ndarray:
        """Distinct knot values, endpoints included."""
        return np.linspace(*self.domain, self.n_basis - self.order + 2)

    @cached_property
    def knots(self) -> np.ndarray:
        d = self.degree
        return np.r_[[self.domain[0]] * d, self.breaks, [self.domain[1]] * d]

    @cached_property
    def gram(self) -> np.ndarray:
        return gram_matrix(self)

    def __call__(self, grid) -> np.ndarray:
        return eval_basis(self, grid)

    def to_dict(self) -> dict:
        return {"type": "bspline", "domain": list(self.domain), "n_basis": self.n_basis, "order": self.order}

    @classmethod
    def from_dict(cls, d: dict) -> "BSplineBasis":
        if d.get("type", "bspline") != "bspline":
            raise DataError(f"unsupported basis type {d.get('type')!r}")
        return cls(tuple(d["domain"]), d["n_basis"], d["order"])


def make_bspline_basis(domain=(0.0, 1.0), n_basis: int = 21, order: int = 4) -> BSplineBasis:
    return BSplineBasis(tuple(domain), n_basis, order)


def default_grid(basis: BSplineBasis, size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    return np.linspace(*basis.domain, size)


def trapezoid_weights(grid) -> np.ndarray:
    """Weights ``w`` such that ``w @ f(grid)`` is the trapezoid rule."""
    grid = np.asarray(grid, dtype=float)
    w = np.zeros(len(grid))
    h = np.diff(grid)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def eval_basis(basis: BSplineBasis, grid) -> np.ndarray:
    """Basis values, shape ``(len(grid), n_basis)``.

    Points may overshoot the domain by rounding noise (1e-12 of its length);
    anything further out raises :class:`OutOfDomain`.
    """
    x = np.atleast_1d(np.asarray(grid, dtype=float))
    a, b = basis.domain
    tol = 1e-12 * (b - a)
    if np.any(~np.isfinite(x)) or np.any(x < a - tol) or np.any(x > b + tol):
        raise OutOfDomain(f"grid leaves the basis domain [{a}, {b}]")
    x = np.clip(x, a, b)
    return BSpline.design_matrix(x, basis.knots, basis.degree).toarray()


def gram_matrix(basis: BSplineBasis) -> np.ndarray:
    """Exact Gram matrix of the basis.

    Gauss-Legendre with ``order`` nodes per knot span integrates polynomials up to
    degree ``2 * order - 1``, which covers every product of two basis functions.
    """
    nodes, weights = np.polynomial.legendre.leggauss(basis.order)
    br = basis.breaks
    lo, hi = br[:-1, None], br[1:, None]
    x = ((hi - lo) / 2 * nodes + (hi + lo) / 2).ravel()
    w = ((hi - lo) / 2 * weights).ravel()
    B = eval_basis(basis, x)
    G = B.T @ (w[:, None] * B)
    return (G + G.T) / 2


@dataclass(frozen=True, eq=False)
class Curve:
    """A function stored as coefficients against a basis."""

    basis: BSplineBasis
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if len(c) != self.basis.n_basis:
            raise DataError(f"expected {self.basis.n_basis} coefficients, got {len(c)}")
        if not np.all(np.isfinite(c)):
            raise DataError("curve coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __call__(self, grid) -> np.ndarray:
        return curve_eval(self, grid)


def curve_eval(c: Curve, grid) -> np.ndarray:
    return eval_basis(c.basis, grid) @ c.coeffs


def l2_inner(a: Curve, c: Curve, J: np.ndarray | None = None) -> float:
    """L2 inner product of two curves sharing a basis, ``a' J c``."""
    if a.basis != c.basis:
        raise BasisMismatch("curves live on different bases")
    if J is None:
        J = a.basis.gram
    return float(a.coeffs @ J @ c.coeffs)


def _second_difference(K: int) -> np.ndarray:
    if K < 3:
        return np.zeros((0, K))
    return np.diff(np.eye(K), 2, axis=0)


def _penalized_system(basis, t, values, penalty):
    t = np.asarray(t, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise DataError("t and values must be 1-d arrays of equal length")
    if penalty < 0:
        raise DataError("penalty must be nonnegative")
    B = eval_basis(basis, t)
    D = _second_difference(basis.n_basis)
    return B, y, D


def smooth_curve(t, values, basis: BSplineBasis, penalty: float = 0.0) -> Curve:
    """Penalised least-squares fit of sampled values.

    Minimises ``||y - B c||^2 + penalty * ||D2 c||^2`` where ``D2`` takes second
    differences of neighbouring coefficients.
    """
    B, y, D = _penalized_system(basis, t, values, penalty)
    A = B.T @ B + penalty * (D.T @ D)
    rank = np.linalg.matrix_rank(A, tol=1e-12 * max(np.abs(A).max(), 1e-300))
    if rank < basis.n_basis:
        raise RankDeficient(
            f"{len(y)} samples determine only {rank} of {basis.n_basis} coefficients"
        )
    if penalty == 0:
        c = np.linalg.lstsq(B, y, rcond=None)[0]
    else:
        c = np.linalg.solve(A, B.T @ y)
    return Curve(basis, c)


def gcv_score(t, values, basis: BSplineBasis, penalty: float = 0.0) -> float:
    """Generalised cross-validation score ``n * RSS / (n - df)^2`` of a smoothing fit."""
    B, y, D = _penalized_system(basis, t, values, penalty)
    A = B.T @ B + penalty * (D.T @ D)
    hat = B @ np.linalg.solve(A, B.T)
    df = np.trace(hat)
    n = len(y)
    if n - df <= 1e-9:
        return np.inf
    rss = float(np.sum((y - hat @ y) ** 2))
    return n * rss / (n - df) ** 2


def select_n_basis(t, values, candidates, domain=(0.0, 1.0), order: int = 4, penalty: float = 0.0) -> int:
    """Number of basis functions minimising the GCV score.

    ``values`` may hold several sampled series as rows; their scores are summed.
    """
    values = np.atleast_2d(values)
    best, best_k = np.inf, None
    for K in sorted(candidates):
        try:
            b = make_bspline_basis(domain, K, order)
            score = sum(gcv_score(t, v, b, penalty) for v in values)
        except (InvalidDimension, np.linalg.LinAlgError):
            continue
        if score < best:
            best, best_k = score, K
    if best_k is None:
        raise RankDeficient("no candidate basis size could be fitted")
    return best_k

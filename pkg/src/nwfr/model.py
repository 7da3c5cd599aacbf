"""Network-weighted functional regression.

Each vertex gets its own function-on-function regression, fitted by weighted
least squares in basis-coefficient space.  Other vertices enter with Gaussian
kernel weights of their distance to the target vertex.  The distance comes
from a provider: network geodesics (NWFR), planar coordinates (GWFR), or
nothing at all (``Uniform``, the classical pooled model).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist

from .basis import BSplineBasis, Curve, default_grid, eval_basis
from .errors import (
    AllFitsFailed,
    DataError,
    DegenerateVariance,
    DimensionMismatch,
    IndexOutOfRange,
    MissingBlock,
    NonpositiveBandwidth,
    NumericError,
    SingularSystem,
    UncoveredVertex,
)

__all__ = [
    "Covariate",
    "FunctionalDataset",
    "NetworkGeodesic",
    "SpatialEuclidean",
    "Uniform",
    "NwfrFit",
    "GofReport",
    "PermutationResult",
    "kernel_weights",
    "weight_matrix",
    "stack_design",
    "fit_vertex",
    "fit_all",
    "predict_vertex",
    "predict_all",
    "predict_new_vertex",
    "predict_new_vertices",
    "beta_surface",
    "intercept_curve",
    "gof",
    "default_theta_grid",
    "select_bandwidth",
    "coef_variance_vk",
    "permutation_test",
]

COND_LIMIT = 1e12
RIDGE_SCALE = 1e-8


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Covariate:
    basis: BSplineBasis
    coeffs: np.ndarray  # N x K_p
    name: str = ""

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 2 or c.shape[1] != self.basis.n_basis:
            raise DimensionMismatch(
                f"covariate {self.name!r}: expected N x {self.basis.n_basis} coefficients, got {c.shape}"
            )
        object.__setattr__(self, "coeffs", c)


@dataclass(frozen=True, eq=False)
class FunctionalDataset:
    """Response and covariate curves, one row per vertex."""

    response_basis: BSplineBasis
    response_coeffs: np.ndarray  # N x K
    covariates: tuple = ()
    include_intercept: bool = False
    response_name: str = "y"

    def __post_init__(self):
        Y = np.array(self.response_coeffs, dtype=float)
        if Y.ndim != 2 or Y.shape[1] != self.response_basis.n_basis:
            raise DimensionMismatch(f"expected N x {self.response_basis.n_basis} response coefficients, got {Y.shape}")
        covs = tuple(self.covariates)
        for cov in covs:
            if cov.coeffs.shape[0] != Y.shape[0]:
                raise DimensionMismatch(
                    f"covariate {cov.name!r} has {cov.coeffs.shape[0]} rows, response has {Y.shape[0]}"
                )
        if not covs and not self.include_intercept:
            raise DataError("a dataset needs at least one covariate or an intercept")
        object.__setattr__(self, "response_coeffs", Y)
        object.__setattr__(self, "covariates", covs)

    @property
    def n_vertices(self) -> int:
        return self.response_coeffs.shape[0]

    @property
    def n_covariates(self) -> int:
        return len(self.covariates)

    def subset(self, rows) -> "FunctionalDataset":
        """Dataset restricted (or reordered) to the given rows."""
        rows = np.asarray(rows, dtype=int)
        covs = tuple(replace(c, coeffs=c.coeffs[rows]) for c in self.covariates)
        return replace(self, response_coeffs=self.response_coeffs[rows], covariates=covs)

    def response_curve(self, i: int) -> Curve:
        return Curve(self.response_basis, self.response_coeffs[i])


# ---------------------------------------------------------------------------
# Distance providers
# ---------------------------------------------------------------------------

class NetworkGeodesic:
    """Distances read from a geodesic distance matrix."""

    kind = "nwfr"

    def __init__(self, distances):
        d = np.asarray(distances, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise DataError("distance matrix must be square")
        if np.any(d < 0) or np.any(np.isnan(d)):
            raise DataError("distances must be nonnegative")
        self.matrix = d

    @property
    def n_vertices(self):
        return self.matrix.shape[0]

    def pairwise(self, rows, cols) -> np.ndarray:
        rows, cols = np.atleast_1d(rows), np.atleast_1d(cols)
        n = self.n_vertices
        for ids in (rows, cols):
            if len(ids) and (ids.min() < 0 or ids.max() >= n):
                raise UncoveredVertex(f"vertex id outside [0, {n})")
        return self.matrix[np.ix_(rows, cols)]

    def full(self) -> np.ndarray:
        return self.matrix


class SpatialEuclidean(NetworkGeodesic):
    """Euclidean distances between vertex coordinates (the GWFR special case)."""

    kind = "gwfr"

    def __init__(self, coordinates):
        xy = np.asarray(coordinates, dtype=float)
        if xy.ndim != 2 or not np.all(np.isfinite(xy)):
            raise DataError("coordinates must be a finite N x dim array")
        self.coordinates = xy
        super().__init__(cdist(xy, xy))


class Uniform:
    """Every vertex at distance zero from every other: the classical pooled model."""

    kind = "classic"

    def __init__(self, n_vertices: int | None = None):
        self.n = n_vertices

    def pairwise(self, rows, cols) -> np.ndarray:
        rows, cols = np.atleast_1d(rows), np.atleast_1d(cols)
        if self.n is not None:
            for ids in (rows, cols):
                if len(ids) and (ids.min() < 0 or ids.max() >= self.n):
                    raise UncoveredVertex(f"vertex id outside [0, {self.n})")
        return np.zeros((len(rows), len(cols)))

    def full(self) -> np.ndarray | None:
        return None


# ---------------------------------------------------------------------------
# Weights and design
# ---------------------------------------------------------------------------

def kernel_weights(dist, theta: float) -> np.ndarray:
    """Gaussian kernel ``exp(-(d / theta)^2 / 2)``; infinite distance gives 0."""
    if not theta > 0:
        raise NonpositiveBandwidth(f"bandwidth must be positive, got {theta}")
    d = np.asarray(dist, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        w = np.exp(-0.5 * (d / theta) ** 2)
    return np.where(np.isinf(d), 0.0, w)


def weight_matrix(i: int, provider, theta: float, active) -> np.ndarray:
    """Diagonal of the weight matrix of vertex ``i`` over the ``active`` vertices."""
    active = np.atleast_1d(np.asarray(active, dtype=int))
    if isinstance(provider, Uniform):
        provider.pairwise([i], active)
        return np.ones(len(active))
    return kernel_weights(provider.pairwise([i], active)[0], theta)


def _design_rows(covariate_rows, bases, include_intercept, response_basis):
    blocks = [np.atleast_2d(x) @ b.gram for x, b in zip(covariate_rows, bases)]
    if include_intercept:
        n = blocks[0].shape[0] if blocks else np.atleast_2d(covariate_rows[0]).shape[0]
        blocks.append(np.full((n, 1), response_basis.length))
    return np.hstack(blocks)


def stack_design(d: FunctionalDataset) -> np.ndarray:
    """Design matrix ``[X_1 J_1, ..., X_P J_P (, |T|)]`` of shape N x M.

    The optional intercept column is the constant ``|T|`` (the response domain
    length).  It plays the role of a covariate that is identically one with a
    single constant basis function, so the fitted intercept curve is
    ``|T| * b0 @ Psi(t)``.
    """
    blocks = [c.coeffs @ c.basis.gram for c in d.covariates]
    if d.include_intercept:
        blocks.append(np.full((d.n_vertices, 1), d.response_basis.length))
    return np.hstack(blocks)


def _default_ridge(xtwx: np.ndarray) -> np.ndarray:
    m = xtwx.shape[-1]
    return RIDGE_SCALE * np.trace(xtwx, axis1=-2, axis2=-1) / m


def _solve_blocks(xtwx, xtwy, ridge, labels=None):
    """Solve a stack of ridge-regularised normal equations.

    Returns the solutions, the applied ridge values and condition numbers.
    """
    m = xtwx.shape[-1]
    lam = _default_ridge(xtwx) if ridge is None else np.full(xtwx.shape[0], float(ridge))
    if np.any(lam < 0):
        raise DataError("ridge must be nonnegative")
    A = xtwx + lam[:, None, None] * np.eye(m)
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(A)
    bad = ~np.isfinite(cond) | ((lam == 0) & (cond > COND_LIMIT))
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        who = f"vertex {labels[k]}" if labels is not None else "system"
        raise SingularSystem(f"{who}: normal equations have condition number {cond[k]:.3g}")
    return np.linalg.solve(A, xtwy), lam, cond


def fit_vertex(design, Y, weights, ridge: float | None = 0.0) -> np.ndarray:
    """Weighted least-squares coefficient block for one vertex.

    Solves ``(X' W X + ridge I) B = X' W Y``.  ``ridge=None`` applies the default
    stabiliser ``1e-8 * trace(X' W X) / M``; ``ridge=0`` gives the plain weighted
    estimator and raises :class:`SingularSystem` when the system has condition
    number above 1e12.
    """
    X = np.asarray(design, dtype=float)
    Y = np.asarray(Y, dtype=float)
    w = np.asarray(weights, dtype=float)
    if X.shape[0] != Y.shape[0] or w.shape != (X.shape[0],):
        raise DimensionMismatch("design, response and weights disagree on row count")
    xtwx = X.T @ (w[:, None] * X)
    xtwy = X.T @ (w[:, None] * Y)
    B, _, _ = _solve_blocks(xtwx[None], xtwy[None], ridge)
    return B[0]


@dataclass(eq=False)
class NwfrFit:
    """Per-vertex coefficient blocks of a fitted model."""

    theta: float
    ridge: float | None
    provider: str
    vertices: np.ndarray  # ids that own a block
    blocks: np.ndarray  # len(vertices) x M x K
    design: np.ndarray  # N x M, all vertices of the dataset
    training: np.ndarray
    response_basis: BSplineBasis
    covariate_bases: tuple
    include_intercept: bool
    condition: np.ndarray = field(default=None)
    ridge_applied: np.ndarray = field(default=None)

    def __post_init__(self):
        self._index = {int(v): k for k, v in enumerate(self.vertices)}

    @property
    def covariate_slices(self) -> list[slice]:
        out, start = [], 0
        for b in self.covariate_bases:
            out.append(slice(start, start + b.n_basis))
            start += b.n_basis
        return out

    def block(self, i: int) -> np.ndarray:
        try:
            return self.blocks[self._index[int(i)]]
        except KeyError:
            raise MissingBlock(f"no fitted block for vertex {i}") from None

    def covariate_block(self, i: int, p: int) -> np.ndarray:
        if not 0 <= p < len(self.covariate_bases):
            raise IndexOutOfRange(f"covariate index {p} outside [0, {len(self.covariate_bases)})")
        return self.block(i)[self.covariate_slices[p]]


def _weight_rows(provider, theta, rows, cols):
    if isinstance(provider, Uniform):
        provider.pairwise(rows, cols)
        return np.ones((len(rows), len(cols)))
    return kernel_weights(provider.pairwise(rows, cols), theta)


def _batched_fit(X, Y, W, ridge, labels=None):
    # W: n_targets x n_rows; targets sharing a weight row get bit-identical blocks
    Wu, inv = np.unique(W, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    xtwx = np.einsum("vn,nm,nk->vmk", Wu, X, X)
    xtwy = np.einsum("vn,nm,nk->vmk", Wu, X, Y)
    first = np.zeros(len(Wu), dtype=int)
    first[inv[::-1]] = np.arange(len(inv))[::-1]
    lab = None if labels is None else np.asarray(labels)[first]
    blocks, lam, cond = _solve_blocks(xtwx, xtwy, ridge, lab)
    return blocks[inv], lam[inv], cond[inv]


def fit_all(d: FunctionalDataset, provider, theta: float, ridge: float | None = None, training=None) -> NwfrFit:
    """Fit one block per training vertex, weighting training rows by kernel distance."""
    n = d.n_vertices
    training = np.arange(n) if training is None else np.asarray(training, dtype=int)
    if len(training) == 0:
        raise DataError("training set is empty")
    if not isinstance(provider, Uniform) and not theta > 0:
        raise NonpositiveBandwidth(f"bandwidth must be positive, got {theta}")
    X = stack_design(d)
    W = _weight_rows(provider, theta, training, training)
    blocks, lam, cond = _batched_fit(X[training], d.response_coeffs[training], W, ridge, training)
    return NwfrFit(
        theta=float(theta),
        ridge=ridge,
        provider=provider.kind,
        vertices=training.copy(),
        blocks=blocks,
        design=X,
        training=training.copy(),
        response_basis=d.response_basis,
        covariate_bases=tuple(c.basis for c in d.covariates),
        include_intercept=d.include_intercept,
        condition=cond,
        ridge_applied=lam,
    )


def predict_vertex(fit: NwfrFit, i: int) -> Curve:
    """Fitted response curve at a vertex that owns a block."""
    return Curve(fit.response_basis, fit.design[i] @ fit.block(i))


def predict_all(fit: NwfrFit) -> np.ndarray:
    """Predicted response coefficients for every vertex with a block, in ``fit.vertices`` order."""
    return np.einsum("vm,vmk->vk", fit.design[fit.vertices], fit.blocks)


def predict_new_vertices(train: FunctionalDataset, new_design, distances, theta: float, ridge: float | None = None) -> np.ndarray:
    """Predict responses at vertices outside the training data.

    Parameters
    ----------
    train : FunctionalDataset
        Training vertices only.
    new_design : ndarray, n_new x M
        Stacked design rows of the new vertices (see :func:`stack_design`).
    distances : ndarray, n_new x n_train
        Distance from every new vertex to every training vertex.
    theta : float
        Kernel bandwidth.

    Returns
    -------
    ndarray, n_new x K
        Predicted response coefficients.
    """
    Xn = np.atleast_2d(np.asarray(new_design, dtype=float))
    dist = np.atleast_2d(np.asarray(distances, dtype=float))
    if dist.shape != (Xn.shape[0], train.n_vertices):
        raise UncoveredVertex(
            f"need distances of shape {(Xn.shape[0], train.n_vertices)}, got {dist.shape}"
        )
    X = stack_design(train)
    if Xn.shape[1] != X.shape[1]:
        raise DimensionMismatch(f"new design has {Xn.shape[1]} columns, model has {X.shape[1]}")
    W = kernel_weights(dist, theta)
    blocks, _, _ = _batched_fit(X, train.response_coeffs, W, ridge)
    return np.einsum("vm,vmk->vk", Xn, blocks)


def predict_new_vertex(train: FunctionalDataset, new_covariates, distances, theta: float, ridge: float | None = None) -> Curve:
    """Predict the response curve at one new vertex from its covariate curves."""
    rows = [np.asarray(c.coeffs if isinstance(c, Curve) else c, dtype=float) for c in new_covariates]
    if len(rows) != train.n_covariates:
        raise DimensionMismatch(f"expected {train.n_covariates} covariate curves, got {len(rows)}")
    if train.n_covariates:
        x = _design_rows(rows, [c.basis for c in train.covariates], train.include_intercept, train.response_basis)
    else:
        x = np.full((1, 1), train.response_basis.length)
    yhat = predict_new_vertices(train, x, np.atleast_2d(distances), theta, ridge)
    return Curve(train.response_basis, yhat[0])


def beta_surface(fit: NwfrFit, i: int, p: int, s_grid, t_grid) -> np.ndarray:
    """Coefficient surface ``beta(t, s)`` of covariate ``p`` at vertex ``i``; rows follow ``t_grid``."""
    B = fit.covariate_block(i, p)
    phi = eval_basis(fit.covariate_bases[p], s_grid)
    psi = eval_basis(fit.response_basis, t_grid)
    return psi @ B.T @ phi.T


def intercept_curve(fit: NwfrFit, i: int) -> Curve:
    if not fit.include_intercept:
        raise IndexOutOfRange("model was fitted without an intercept")
    b0 = fit.block(i)[-1]
    return Curve(fit.response_basis, fit.response_basis.length * b0)


# ---------------------------------------------------------------------------
# Goodness of fit
# ---------------------------------------------------------------------------

@dataclass
class GofReport:
    rimse: float
    r2_pointwise: np.ndarray
    r2_integrated: float
    grid: np.ndarray

    @property
    def r2_mean(self) -> float:
        """Grid average of the pointwise R^2 curve."""
        return float(np.mean(self.r2_pointwise))

    def to_dict(self) -> dict:
        return {
            "rimse": self.rimse,
            "r2": self.r2_mean,
            "r2_tilde": self.r2_integrated,
            "grid": self.grid.tolist(),
            "r2_pointwise": self.r2_pointwise.tolist(),
        }


def gof(observed, predicted, basis: BSplineBasis, grid=None) -> GofReport:
    """RIMSE, pointwise R^2 and integrated R^2 of predicted response curves.

    ``observed`` and ``predicted`` are N x K coefficient matrices on ``basis``.
    Integrals over the domain use the exact Gram matrix.
    """
    Y = np.atleast_2d(np.asarray(observed, dtype=float))
    Yh = np.atleast_2d(np.asarray(predicted, dtype=float))
    if Y.shape != Yh.shape or Y.shape[1] != basis.n_basis:
        raise DimensionMismatch(f"observed {Y.shape} and predicted {Yh.shape} do not match the basis")
    grid = default_grid(basis) if grid is None else np.asarray(grid, dtype=float)
    J = basis.gram
    E = Y - Yh
    C = Y - Y.mean(axis=0)
    sse = np.einsum("ik,kl,il->", E, J, E)
    sst = np.einsum("ik,kl,il->", C, J, C)
    if not sst > 0:
        raise DegenerateVariance("observed curves are all identical")
    Psi = eval_basis(basis, grid)
    num = ((E @ Psi.T) ** 2).sum(axis=0)
    den = ((C @ Psi.T) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2t = np.where(den > 0, 1 - num / den, np.where(num > 0, -np.inf, 1.0))
    return GofReport(
        rimse=float(np.sqrt(max(sse, 0.0) / Y.shape[0])),
        r2_pointwise=r2t,
        r2_integrated=float(1 - sse / sst),
        grid=grid,
    )


# ---------------------------------------------------------------------------
# Bandwidth selection
# ---------------------------------------------------------------------------

def default_theta_grid(distances, size: int = 20) -> np.ndarray:
    """Log-spaced bandwidths from half the smallest positive distance to twice the diameter."""
    if distances is None:
        return np.array([1.0])
    d = np.asarray(distances, dtype=float)
    finite = d[np.isfinite(d) & (d > 0)]
    if finite.size == 0:
        return np.array([1.0])
    lo, hi = finite.min() / 2, 2 * finite.max()
    return np.geomspace(lo, hi, size)


def _loo_scores(d: FunctionalDataset, provider, theta_grid, ridge):
    n = d.n_vertices
    ids = np.arange(n)
    X = stack_design(d)
    Y = d.response_coeffs
    J = d.response_basis.gram
    dist = provider.pairwise(ids, ids)
    scores = np.full(len(theta_grid), np.inf)
    for k, theta in enumerate(theta_grid):
        W = np.ones((n, n)) if isinstance(provider, Uniform) else kernel_weights(dist, theta)
        np.fill_diagonal(W, 0.0)
        try:
            blocks, _, _ = _batched_fit(X, Y, W, ridge)
        except (NumericError, np.linalg.LinAlgError):
            continue
        E = Y - np.einsum("vm,vmk->vk", X, blocks)
        scores[k] = np.sqrt(np.einsum("ik,kl,il->", E, J, E) / n)
    return scores


def select_bandwidth(d: FunctionalDataset, provider, theta_grid=None, ridge: float | None = None, return_scores: bool = False):
    """Bandwidth minimising leave-one-out predicted RIMSE.

    Each vertex is predicted from a fit on all other vertices, weighted by the
    kernel of their distance to it.  Ties go to the larger bandwidth.
    """
    if theta_grid is None:
        theta_grid = default_theta_grid(provider.full())
    grid = np.sort(np.asarray(theta_grid, dtype=float))[::-1]
    if grid.size == 0 or np.any(grid <= 0):
        raise NonpositiveBandwidth("bandwidth grid must be nonempty and positive")
    scores = _loo_scores(d, provider, grid, ridge)
    if not np.any(np.isfinite(scores)):
        raise AllFitsFailed("no bandwidth in the grid produced a solvable fit")
    best = float(grid[int(np.argmin(scores))])
    if return_scores:
        return best, grid[::-1].copy(), scores[::-1].copy()
    return best


# ---------------------------------------------------------------------------
# Coefficient variability and permutation test
# ---------------------------------------------------------------------------

def coef_variance_vk(fit: NwfrFit, k: int) -> float:
    """Mean integrated squared deviation of the vertex surfaces ``beta_k`` from their average."""
    if len(fit.vertices) < 2:
        raise DataError("need at least two vertex blocks")
    if not 0 <= k < len(fit.covariate_bases):
        raise IndexOutOfRange(f"covariate index {k} outside [0, {len(fit.covariate_bases)})")
    Bk = fit.blocks[:, fit.covariate_slices[k], :]
    # centring on the first block first keeps identical blocks at exactly zero
    D = Bk - Bk[0]
    D = D - D.mean(axis=0)
    Jphi = fit.covariate_bases[k].gram
    Jpsi = fit.response_basis.gram
    return float(np.einsum("ab,vbc,cd,vad->", Jphi, D, Jpsi, D) / len(fit.vertices))


@dataclass
class PermutationResult:
    v_obs: float
    p_value: float
    null: np.ndarray
    n_perm: int
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "v_obs": self.v_obs,
            "p_value": self.p_value,
            "n_perm": self.n_perm,
            "null": self.null.tolist(),
            "failures": self.failures,
        }


def permutation_test(d: FunctionalDataset, provider, theta: float, k: int = 0, n_perm: int = 1000,
                     seed: int = 0, ridge: float | None = None) -> PermutationResult:
    """Monte Carlo permutation test for network-driven variation of ``beta_k``.

    Each replicate reassigns the data rows to graph vertices at random, refits
    every vertex model at the fixed bandwidth and recomputes ``v_k``.  The
    p-value is ``(1 + #{v_perm >= v_obs}) / (1 + n_perm)`` over successful
    replicates; failed replicates are listed and skipped.
    """
    if n_perm < 1:
        raise DataError("n_perm must be at least 1")
    v_obs = coef_variance_vk(fit_all(d, provider, theta, ridge), k)
    rng = np.random.default_rng(seed)
    null, failures = [], []
    for r in range(n_perm):
        perm = rng.permutation(d.n_vertices)
        try:
            null.append(coef_variance_vk(fit_all(d.subset(perm), provider, theta, ridge), k))
        except NumericError as exc:
            failures.append({"replicate": r, "error": f"{type(exc).__name__}: {exc}"})
    null = np.asarray(null)
    # relative slack so replicates that equal v_obs up to rounding count as ties
    exceed = int(np.sum(null >= v_obs - 1e-12 * max(abs(v_obs), 1e-300)))
    p = (1 + exceed) / (1 + len(null))
    return PermutationResult(v_obs=v_obs, p_value=p, null=null, n_perm=n_perm, failures=failures)

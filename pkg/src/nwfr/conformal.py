"""Split-conformal prediction bands for functional responses on networks.

Training and calibration vertices are sampled within communities.  A model fitted
on the training vertices predicts the calibration vertices.  The pointwise RMS of
the calibration residuals is the modulation function ``S(t)``, and the
calibration scores set the band radius ``k``.  Each test vertex then gets the
band ``prediction(t) +/- k * S(t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .basis import Curve, curve_eval, default_grid, trapezoid_weights
from .errors import DataError, EmptyScores, EmptySide, GridMismatch, LengthMismatch
from .model import FunctionalDataset, Uniform, predict_new_vertices, stack_design

__all__ = [
    "SplitPlan",
    "ModulationFn",
    "PredictionBand",
    "CpReport",
    "ConformalResult",
    "stratified_split",
    "modulation_function",
    "nonconformity",
    "conformal_quantile",
    "build_band",
    "evaluate",
    "run_split_conformal",
    "bands_to_csv",
]

SCORE_KINDS = ("h2", "hinf")


@dataclass(frozen=True)
class SplitPlan:
    training: np.ndarray
    calibration: np.ndarray
    frac: float
    labels: np.ndarray
    seed: int
    mode: str = "proportional"

    def to_dict(self) -> dict:
        return {
            "training": self.training.tolist(),
            "calibration": self.calibration.tolist(),
            "frac": self.frac,
            "seed": self.seed,
            "mode": self.mode,
            "n_communities": int(self.labels.max()) + 1 if len(self.labels) else 0,
        }


def _apportion(sizes: np.ndarray, frac: float) -> np.ndarray:
    """Largest-remainder split of ``round(frac * total)`` across communities.

    Ties in the remainder go to the lower community label, so quotas do not
    depend on the seed.
    """
    total = math.floor(frac * sizes.sum() + 0.5)
    exact = frac * sizes
    quota = np.floor(exact).astype(int)
    order = sorted(range(len(sizes)), key=lambda c: (-(exact[c] - quota[c]), c))
    for c in order[: max(0, total - quota.sum())]:
        quota[c] += 1
    # keep at least one training vertex in every community of size >= 2
    return np.where(sizes >= 2, np.minimum(quota, sizes - 1), quota)


def stratified_split(labels, frac: float = 0.5, seed: int = 0, candidates=None,
                     mode: str = "proportional") -> SplitPlan:
    """Split vertices into training and calibration sets within communities.

    Parameters
    ----------
    labels : array of int
        Community label for every vertex of the graph.
    frac : float
        Calibration fraction, in (0, 1).
    seed : int
    candidates : array of int, optional
        Vertices eligible for either side (default: all).
    mode : {"proportional", "one_per_community"}
        ``proportional`` samples about ``frac`` of each community;
        ``one_per_community`` puts exactly one vertex of every community with at
        least two eligible members into calibration.
    """
    if not 0 < frac < 1:
        raise DataError(f"calibration fraction must lie in (0, 1), got {frac}")
    labels = np.asarray(labels, dtype=int)
    cand = np.arange(len(labels)) if candidates is None else np.sort(np.asarray(candidates, dtype=int))
    rng = np.random.default_rng(seed)
    comms = np.unique(labels[cand])
    members = [cand[labels[cand] == c] for c in comms]
    sizes = np.array([len(m) for m in members])
    if mode == "proportional":
        quota = _apportion(sizes, frac)
    elif mode == "one_per_community":
        quota = (sizes >= 2).astype(int)
    else:
        raise DataError(f"unknown split mode {mode!r}")
    calib = []
    for m, q in zip(members, quota):
        calib.extend(rng.choice(m, size=q, replace=False).tolist())
    calib = np.sort(np.asarray(calib, dtype=int))
    train = np.setdiff1d(cand, calib)
    if len(calib) == 0 or len(train) == 0:
        raise EmptySide(f"split of {len(cand)} vertices at frac={frac} leaves one side empty")
    return SplitPlan(train, calib, float(frac), labels, int(seed), mode)


@dataclass(frozen=True)
class ModulationFn:
    grid: np.ndarray
    values: np.ndarray
    floor: float


def modulation_function(predicted, observed, grid) -> ModulationFn:
    """Pointwise RMS of calibration residuals, floored at ``max(1e-6, 1e-3 * max S)``.

    ``predicted`` and ``observed`` hold curves evaluated on ``grid`` as rows.
    """
    P = np.atleast_2d(np.asarray(predicted, dtype=float))
    O = np.atleast_2d(np.asarray(observed, dtype=float))
    grid = np.asarray(grid, dtype=float)
    if P.shape != O.shape or P.shape[1] != len(grid):
        raise GridMismatch(f"residual arrays {P.shape}, {O.shape} do not match a grid of {len(grid)}")
    if P.shape[0] == 0:
        raise EmptyScores("no calibration residuals")
    s = np.sqrt(np.mean((P - O) ** 2, axis=0))
    floor = max(1e-6, 1e-3 * float(s.max()))
    return ModulationFn(grid, np.maximum(s, floor), floor)


def nonconformity(predicted, observed, S: ModulationFn, kind: str = "h2"):
    """Scaled residual size: L2 norm (``h2``) or supremum (``hinf``) of ``(pred - obs) / S``.

    Accepts single curves or stacks of curves evaluated on ``S.grid``.
    """
    P = np.asarray(predicted, dtype=float)
    O = np.asarray(observed, dtype=float)
    if P.shape != O.shape or P.shape[-1] != len(S.grid):
        raise GridMismatch("curves must be evaluated on the modulation grid")
    r = np.abs(P - O) / S.values
    if kind == "h2":
        out = np.sqrt((r ** 2) @ trapezoid_weights(S.grid))
    elif kind == "hinf":
        out = r.max(axis=-1)
    else:
        raise DataError(f"unknown score kind {kind!r}; use 'h2' or 'hinf'")
    return float(out) if np.ndim(out) == 0 else out


def conformal_quantile(scores, alpha: float) -> float:
    """Split-conformal radius: the ``ceil((1 - alpha)(n + 1))``-th smallest score.

    Returns ``inf`` when that rank exceeds the number of scores.
    """
    s = np.sort(np.asarray(scores, dtype=float).ravel())
    if s.size == 0:
        raise EmptyScores("no calibration scores")
    if not 0 < alpha < 1:
        raise DataError(f"alpha must lie in (0, 1), got {alpha}")
    # the small offset absorbs rounding in (1 - alpha) * (n + 1) at integer values
    rank = math.ceil((1 - alpha) * (s.size + 1) - 1e-9)
    if rank > s.size:
        return math.inf
    return float(s[max(rank, 1) - 1])


@dataclass(frozen=True, eq=False)
class PredictionBand:
    center: Curve
    radius: float
    modulation: ModulationFn

    @property
    def grid(self) -> np.ndarray:
        return self.modulation.grid

    @property
    def center_values(self) -> np.ndarray:
        return curve_eval(self.center, self.grid)

    def _halfwidth(self) -> np.ndarray:
        if math.isinf(self.radius):
            return np.full(len(self.grid), math.inf)
        return self.radius * self.modulation.values

    @property
    def lower(self) -> np.ndarray:
        return self.center_values - self._halfwidth()

    @property
    def upper(self) -> np.ndarray:
        return self.center_values + self._halfwidth()

    @property
    def width(self) -> np.ndarray:
        return 2 * self._halfwidth()


def build_band(pred: Curve, radius: float, S: ModulationFn) -> PredictionBand:
    if not radius >= 0:
        raise DataError(f"band radius must be nonnegative, got {radius}")
    return PredictionBand(pred, float(radius), S)


@dataclass
class CpReport:
    cov_g: float
    cov_l: float
    abw: float
    interval_score: float
    alpha: float
    kind: str
    n_test: int
    radius: float = math.nan
    split: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "cov_g": self.cov_g,
            "cov_l": self.cov_l,
            "abw": self.abw,
            "interval_score": self.interval_score,
            "alpha": self.alpha,
            "score": self.kind,
            "n_test": self.n_test,
            "radius": self.radius,
            "split": self.split,
        }


def evaluate(bands, observed, alpha: float, kind: str = "h2") -> CpReport:
    """Coverage and efficiency of bands against observed curves.

    ``observed`` holds, per band, either a :class:`Curve` or values on the band
    grid.  Integrals use the trapezoid rule on the band grid; ``cov_l`` is the
    covered fraction of the domain.
    """
    bands = list(bands)
    if len(bands) != len(observed):
        raise LengthMismatch(f"{len(bands)} bands but {len(observed)} observed curves")
    if not bands:
        raise LengthMismatch("nothing to evaluate")
    inside_all, frac, widths, pens = [], [], [], []
    for band, obs in zip(bands, observed):
        g = band.grid
        y = curve_eval(obs, g) if isinstance(obs, Curve) else np.asarray(obs, dtype=float)
        if y.shape != g.shape:
            raise GridMismatch("observed values must lie on the band grid")
        w = trapezoid_weights(g)
        lo, up = band.lower, band.upper
        inside = (lo <= y) & (y <= up)
        inside_all.append(bool(inside.all()))
        frac.append(float(w @ inside / w.sum()))
        widths.append(float(w @ band.width) if not math.isinf(band.radius) else math.inf)
        pen = (2 / alpha) * (np.maximum(lo - y, 0) + np.maximum(y - up, 0))
        pens.append(float(w @ pen))
    abw = float(np.mean(widths))
    return CpReport(
        cov_g=float(np.mean(inside_all)),
        cov_l=float(np.mean(frac)),
        abw=abw,
        interval_score=abw + float(np.mean(pens)),
        alpha=alpha,
        kind=kind,
        n_test=len(bands),
    )


@dataclass
class ConformalResult:
    bands: dict  # vertex -> PredictionBand
    report: CpReport
    plan: SplitPlan
    modulation: ModulationFn
    scores: np.ndarray
    radius: float


def run_split_conformal(d: FunctionalDataset, provider, theta: float, test, labels, alpha: float = 0.05,
                        kind: str = "h2", frac: float = 0.5, seed: int = 0, grid=None,
                        ridge: float | None = None, plan: SplitPlan | None = None,
                        mode: str = "proportional") -> ConformalResult:
    """Full split-conformal procedure for held-out ``test`` vertices.

    The non-test vertices are split within communities (``labels``) into training
    and calibration sets, unless an explicit ``plan`` is given.  Calibration and
    test vertices are predicted from kernel-weighted fits on the training
    vertices.
    """
    test = np.asarray(test, dtype=int)
    if plan is None:
        rest = np.setdiff1d(np.arange(d.n_vertices), test)
        plan = stratified_split(labels, frac, seed, candidates=rest, mode=mode)
    if np.intersect1d(test, plan.training).size or np.intersect1d(test, plan.calibration).size:
        raise DataError("test vertices overlap the training or calibration set")
    grid = default_grid(d.response_basis) if grid is None else np.asarray(grid, dtype=float)

    train = d.subset(plan.training)
    X = stack_design(d)
    targets = np.r_[plan.calibration, test]
    dist = provider.pairwise(targets, plan.training)
    theta_eff = 1.0 if isinstance(provider, Uniform) else theta
    pred = predict_new_vertices(train, X[targets], dist, theta_eff, ridge)
    psi = d.response_basis(grid)
    n_cal = len(plan.calibration)
    pred_vals = pred @ psi.T
    obs_vals = d.response_coeffs[targets] @ psi.T

    S = modulation_function(pred_vals[:n_cal], obs_vals[:n_cal], grid)
    scores = np.atleast_1d(nonconformity(pred_vals[:n_cal], obs_vals[:n_cal], S, kind))
    k = conformal_quantile(scores, alpha)
    bands = {
        int(v): build_band(Curve(d.response_basis, pred[n_cal + j]), k, S) for j, v in enumerate(test)
    }
    report = evaluate(list(bands.values()), list(obs_vals[n_cal:]), alpha, kind)
    report.radius = k
    report.split = {**plan.to_dict(), "test": test.tolist()}
    return ConformalResult(bands, report, plan, S, scores, k)


def bands_to_csv(bands: dict, path=None) -> str:
    """Rows ``vertex,t,lower,center,upper`` on each band's grid."""
    lines = ["vertex,t,lower,center,upper"]
    for v in sorted(bands):
        b = bands[v]
        for row in zip(b.grid.tolist(), b.lower.tolist(), b.center_values.tolist(), b.upper.tolist()):
            lines.append(f"{v}," + ",".join(repr(x) for x in row))
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text

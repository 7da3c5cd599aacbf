"""Synthetic benchmark: weighted SBM networks carrying functional regression data.

Each of the twelve scenarios fixes an edge-weight rule and a community layout
(size balance plus inter-community link probability).  Each vertex carries a
covariate curve ``X`` and a response ``Y(t) = int X(s) beta_c(t, s) ds + eps``,
where ``beta_c`` is one of four transforms of a random base surface chosen by
the vertex's community.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .basis import make_bspline_basis
from .conformal import run_split_conformal, stratified_split
from .errors import InvalidCombination, NwfrError
from .graph import Network, SbmSpec, WeightRule, generate_wsbm, geodesic_matrix, louvain_communities
from .model import (
    Covariate,
    FunctionalDataset,
    NetworkGeodesic,
    Uniform,
    fit_all,
    gof,
    predict_all,
    select_bandwidth,
)

__all__ = [
    "ScenarioSpec",
    "GeneratedInstance",
    "make_scenario",
    "all_scenarios",
    "generate_instance",
    "community_transforms",
    "run_replicate",
    "run_study",
    "StudyReport",
    "SCALES",
]

EW = ("one", "random", "inout")
OC = ("equal", "different")
CBC = ("low", "high")
INTER_P = {"low": 0.2, "high": 0.5}
DIFFERENT_SIZES = (15, 20, 30, 35)

# (multiplier, additive constant) applied to the base surface, per community
COMMUNITY_TRANSFORMS = ((1.0, 2.0), (-1.0, -2.0), (2.0, -1.0), (-2.0, 1.0))

SCALES = {
    "desk": {"n_total": 60, "n_basis": 11, "reps": 20},
    "full": {"n_total": 100, "n_basis": 21, "reps": 100},
}


@dataclass(frozen=True)
class ScenarioSpec:
    ew: str
    oc: str
    cbc: str
    n_total: int = 100
    n_communities: int = 4
    n_basis: int = 21
    order: int = 4
    noise_var: float = 1e-4
    intra_p_range: tuple = (0.6, 0.8)

    @property
    def name(self) -> str:
        return f"{self.ew}-{self.oc}-{self.cbc}"

    @property
    def inter_p(self) -> float:
        return INTER_P[self.cbc]

    @property
    def block_sizes(self) -> tuple:
        c, n = self.n_communities, self.n_total
        if self.oc == "equal":
            return tuple(n // c + (1 if k < n % c else 0) for k in range(c))
        exact = np.array(DIFFERENT_SIZES) * n / sum(DIFFERENT_SIZES)
        sizes = np.floor(exact).astype(int)
        order = sorted(range(c), key=lambda k: (-(exact[k] - sizes[k]), k))
        for k in order[: n - sizes.sum()]:
            sizes[k] += 1
        return tuple(int(s) for s in sizes)

    @property
    def weight_rule(self) -> WeightRule:
        return {"one": WeightRule.one(), "random": WeightRule.random(), "inout": WeightRule.inout()}[self.ew]


def make_scenario(ew: str, oc: str, cbc: str, **overrides) -> ScenarioSpec:
    """Validated scenario; ``overrides`` replace any of the scale fields."""
    ew, oc, cbc = ew.lower().replace("-", ""), oc.lower(), cbc.lower()
    if ew not in EW or oc not in OC or cbc not in CBC:
        raise InvalidCombination(f"unknown scenario ({ew}, {oc}, {cbc})")
    spec = ScenarioSpec(ew, oc, cbc, **overrides)
    if spec.n_communities != 4 and spec.oc == "different":
        raise InvalidCombination("unequal community sizes are defined for four communities only")
    if spec.n_total < 2 * spec.n_communities:
        raise InvalidCombination("need at least two vertices per community")
    if not 0 <= spec.intra_p_range[0] <= spec.intra_p_range[1] <= 1:
        raise InvalidCombination(f"bad intra-community probability range {spec.intra_p_range}")
    if spec.noise_var < 0:
        raise InvalidCombination("noise variance must be nonnegative")
    if min(spec.block_sizes) < 1:
        raise InvalidCombination("every community needs at least one vertex")
    return spec


def all_scenarios(**overrides) -> list[ScenarioSpec]:
    return [make_scenario(e, o, c, **overrides) for e in EW for o in OC for c in CBC]


def community_transforms(base: np.ndarray, n_communities: int) -> np.ndarray:
    """Per-community coefficient blocks ``a * base + c * ones``.

    With a B-spline basis the all-ones coefficient matrix represents the constant
    surface 1, so ``+ c`` shifts the coefficient surface by ``c`` everywhere.
    """
    ones = np.ones_like(base)
    return np.stack([a * base + c * ones for a, c in
                     (COMMUNITY_TRANSFORMS[k % len(COMMUNITY_TRANSFORMS)] for k in range(n_communities))])


@dataclass(eq=False)
class GeneratedInstance:
    spec: ScenarioSpec
    seed: int
    network: Network
    dataset: FunctionalDataset
    true_blocks: np.ndarray  # N x K x K, rows index the covariate basis
    labels: np.ndarray
    intra_p: tuple


def generate_instance(spec: ScenarioSpec, seed: int = 0) -> GeneratedInstance:
    graph_seq, data_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(data_seq)
    g_rng = np.random.default_rng(graph_seq)
    intra = g_rng.uniform(*spec.intra_p_range, size=spec.n_communities)
    sbm = SbmSpec(spec.block_sizes, intra, spec.inter_p, spec.weight_rule)
    net = generate_wsbm(sbm, seed=int(g_rng.integers(2**63)))
    labels = sbm.blocks()

    basis = make_bspline_basis((0.0, 1.0), spec.n_basis, spec.order)
    K, N = spec.n_basis, spec.n_total
    X = rng.standard_normal((N, K))
    base = rng.standard_normal((K, K))
    blocks = community_transforms(base, spec.n_communities)[labels]
    noise = rng.standard_normal((N, K)) * math.sqrt(spec.noise_var)
    Y = np.einsum("nk,kl,nlm->nm", X, basis.gram, blocks) + noise

    data = FunctionalDataset(basis, Y, (Covariate(basis, X, "x"),), include_intercept=False)
    return GeneratedInstance(spec, seed, net, data, blocks, labels, tuple(float(p) for p in intra))


# ---------------------------------------------------------------------------
# Study harness
# ---------------------------------------------------------------------------

def replicate_seed(master: int, scenario_index: int, rep: int) -> int:
    return int(np.random.SeedSequence([master, scenario_index, rep]).generate_state(1)[0])


def _hold_out(labels, frac, seed):
    plan = stratified_split(labels, frac, seed)
    return plan.calibration


def run_replicate(spec: ScenarioSpec, seed: int, models=("classic", "nwfr"), alpha: float = 0.05,
                  kinds=("h2", "hinf"), cal_frac: float = 0.5, test_frac: float = 0.2,
                  grid_size: int = 201, conformal: bool = True) -> dict:
    """Metrics of one replicate, keyed ``(model, metric)``."""
    inst = generate_instance(spec, seed)
    d = inst.dataset
    grid = np.linspace(0.0, 1.0, grid_size)
    dist = geodesic_matrix(inst.network)
    out = {}
    if conformal:
        communities = louvain_communities(inst.network, seed=seed)
        test = _hold_out(communities, test_frac, seed + 1)
    for model in models:
        if model == "classic":
            provider, theta = Uniform(d.n_vertices), 1.0
        elif model == "nwfr":
            provider = NetworkGeodesic(dist)
            theta = select_bandwidth(d, provider)
        else:
            raise InvalidCombination(f"unknown model {model!r}")
        fit = fit_all(d, provider, theta)
        rep = gof(d.response_coeffs, predict_all(fit), d.response_basis, grid)
        out[(model, "theta")] = theta
        out[(model, "rimse")] = rep.rimse
        out[(model, "r2")] = rep.r2_mean
        out[(model, "r2_tilde")] = rep.r2_integrated
        if conformal:
            for kind in kinds:
                res = run_split_conformal(d, provider, theta, test, communities, alpha=alpha, kind=kind,
                                          frac=cal_frac, seed=seed + 2, grid=grid)
                tag = "d2" if kind == "h2" else "dinf"
                out[(model, f"cov_g_{tag}")] = res.report.cov_g
                out[(model, f"cov_l_{tag}")] = res.report.cov_l
                out[(model, f"abw_{tag}")] = res.report.abw
                out[(model, f"sint_{tag}")] = res.report.interval_score
    return out


def _replicate_job(args):
    spec, seed, kwargs = args
    try:
        return run_replicate(spec, seed, **kwargs), None
    except NwfrError as exc:
        return None, f"{type(exc).__name__}: {exc}"


@dataclass
class StudyReport:
    rows: list  # dicts with scenario fields, model, metric, mean, sd, reps, seed
    failures: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)  # scenario name -> list of replicate dicts
    seed: int = 0

    def value(self, scenario: str, model: str, metric: str, stat: str = "mean") -> float:
        for r in self.rows:
            if r["scenario"] == scenario and r["model"] == model and r["metric"] == metric:
                return r[stat]
        raise KeyError((scenario, model, metric))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        cols = ["ew", "oc", "cbc", "model", "metric", "mean", "sd", "reps", "seed"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([r["ew"], r["oc"], r["cbc"], r["model"], r["metric"],
                        repr(r["mean"]), repr(r["sd"]), r["reps"], r["seed"]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_markdown(self) -> str:
        """Goodness-of-fit tables per model, then conformal metrics per model."""
        scen = []
        for r in self.rows:
            key = (r["ew"], r["oc"], r["cbc"])
            if key not in scen:
                scen.append(key)
        models = sorted({r["model"] for r in self.rows}, key=["classic", "nwfr"].index)
        parts = []

        def get(key, model, metric, stat="mean"):
            for r in self.rows:
                if (r["ew"], r["oc"], r["cbc"]) == key and r["model"] == model and r["metric"] == metric:
                    return r[stat]
            return math.nan

        title = {"classic": "Functional regression", "nwfr": "NWFR"}
        for model in models:
            parts.append(f"### {title[model]}: goodness of fit\n")
            parts.append("| EW | OC | CBC | av. RIMSE | sd RIMSE | av. R2 % | sd R2 | av. R2~ % | sd R2~ |")
            parts.append("|---|---|---|---|---|---|---|---|---|")
            for key in scen:
                vals = [get(key, model, "rimse"), get(key, model, "rimse", "sd"),
                        100 * get(key, model, "r2"), 100 * get(key, model, "r2", "sd"),
                        100 * get(key, model, "r2_tilde"), 100 * get(key, model, "r2_tilde", "sd")]
                parts.append("| " + " | ".join(key) + " | "
                             + " | ".join(f"{v:.3f}" if i < 2 else f"{v:.2f}" for i, v in enumerate(vals)) + " |")
            parts.append("")
        if any(r["metric"].startswith("cov_g") for r in self.rows):
            for model in models:
                parts.append(f"### {title[model]}: conformal prediction (alpha as configured)\n")
                parts.append("| EW | OC | CBC | D_h | Cov_G % | Cov_L % | ABW | S_int |")
                parts.append("|---|---|---|---|---|---|---|---|")
                for key in scen:
                    for tag, label in (("d2", "D_2"), ("dinf", "D_inf")):
                        vals = (100 * get(key, model, f"cov_g_{tag}"), 100 * get(key, model, f"cov_l_{tag}"),
                                get(key, model, f"abw_{tag}"), get(key, model, f"sint_{tag}"))
                        parts.append("| " + " | ".join(key) + f" | {label} | {vals[0]:.1f} | {vals[1]:.1f} | "
                                     f"{vals[2]:.3f} | {vals[3]:.3f} |")
                parts.append("")
        return "\n".join(parts)


def run_study(scenarios, reps: int = 20, seed: int = 0, models=("classic", "nwfr"), alpha: float = 0.05,
              kinds=("h2", "hinf"), cal_frac: float = 0.5, test_frac: float = 0.2, grid_size: int = 201,
              conformal: bool = True, workers: int = 1) -> StudyReport:
    """Run every scenario ``reps`` times and aggregate means and standard deviations.

    Replicate seeds are derived from ``(seed, scenario index, replicate)``, so the
    report does not depend on ``workers``.
    """
    if reps < 1:
        raise InvalidCombination("reps must be at least 1")
    kwargs = dict(models=tuple(models), alpha=alpha, kinds=tuple(kinds), cal_frac=cal_frac,
                  test_frac=test_frac, grid_size=grid_size, conformal=conformal)
    jobs = [(spec, replicate_seed(seed, si, r), kwargs) for si, spec in enumerate(scenarios) for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_replicate_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_replicate_job(j) for j in jobs]

    rows, failures, raw = [], [], {}
    for si, spec in enumerate(scenarios):
        chunk = results[si * reps:(si + 1) * reps]
        ok = []
        for r, (res, err) in enumerate(chunk):
            if err is None:
                ok.append(res)
            else:
                failures.append({"scenario": spec.name, "replicate": r, "error": err})
        raw[spec.name] = ok
        if not ok:
            continue
        for key in ok[0]:
            vals = np.array([res[key] for res in ok], dtype=float)
            # infinite radii (too few calibration vertices) propagate as inf mean, nan sd
            with np.errstate(invalid="ignore"):
                sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            rows.append({
                "scenario": spec.name, "ew": spec.ew, "oc": spec.oc, "cbc": spec.cbc,
                "model": key[0], "metric": key[1],
                "mean": float(vals.mean()), "sd": sd,
                "reps": len(vals), "seed": seed,
            })
    return StudyReport(rows, failures, raw, seed)

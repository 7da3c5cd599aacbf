"""Command-line interface: ``nwfr <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.  Errors
are reported on stderr as one line ``nwfr: error[<code>] <Kind>: <message>``.
Every successful command writes ``manifest.json`` into its output directory.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .basis import BSplineBasis, Curve, eval_basis
from .conformal import ModulationFn, bands_to_csv, build_band, run_split_conformal, stratified_split
from .errors import DataError, FormatError, NumericError
from .graph import geodesic_matrix, louvain_communities, read_edge_csv, write_edge_csv
from .ingest import (
    AnomalyRules,
    DEFAULT_END,
    DEFAULT_START,
    build_lab_dataset,
    clean_and_window,
    connectivity_to_weights,
    knn_impute,
    parse_connectivity,
    parse_coordinates,
    parse_readings,
)
from .io import (
    FORMAT_VERSION,
    _dec_array,
    _dec_float,
    dataset_from_dict,
    dataset_to_dict,
    fit_from_dict,
    fit_to_dict,
    instance_to_dict,
    loads,
    write_json,
)
from .model import (
    NetworkGeodesic,
    SpatialEuclidean,
    Uniform,
    beta_surface,
    fit_all,
    gof,
    permutation_test,
    predict_all,
    select_bandwidth,
)
from .simulate import CBC, EW, OC, SCALES, generate_instance, make_scenario, replicate_seed, run_study

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SCORE_KINDS = {"d2": "h2", "dinf": "hinf"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Argument types and shared helpers
# ---------------------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be a finite nonnegative number, got {text}")
    return v


def _open_unit(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie strictly between 0 and 1, got {text}")
    return v


def _theta(text):
    if text == "auto":
        return "auto"
    v = float(text)
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"bandwidth must be positive or 'auto', got {text}")
    return v


def _when(text):
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date/time: {text}") from None


def _default_workers():
    env = os.environ.get("NWFR_WORKERS")
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        raise UsageError(f"NWFR_WORKERS must be an integer, got {env!r}") from None


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, datetime):
        return v.isoformat()
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _write_manifest(out: Path, args, outputs, **extra):
    config = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "func"}
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "manifest",
        "tool_version": __version__,
        "command": args.command,
        "config": config,
        "outputs": sorted(str(Path(o).name) for o in outputs),
        **extra,
    }
    write_json(doc, out / "manifest.json")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_text(path, what) -> str:
    try:
        return Path(path).read_text()
    except FileNotFoundError:
        raise DataError(f"{what} file not found: {path}") from None
    except OSError as exc:
        raise DataError(f"cannot read {what} file {path}: {exc.strerror}") from None


def _load_dataset(path):
    doc = loads(_read_text(path, "dataset"))
    if doc.get("kind") == "instance":
        doc = doc["dataset"]
    return dataset_from_dict(doc)


def _read_coords(path, n):
    rows = []
    for line in _read_text(path, "coordinates").splitlines():
        parts = line.replace(",", " ").split()
        if not parts:
            continue
        try:
            rows.append((int(parts[0]), float(parts[1]), float(parts[2])))
        except (ValueError, IndexError):
            if rows:
                raise FormatError(f"bad coordinates line {line!r}") from None
    xy = np.full((n, 2), np.nan)
    for v, x, y in rows:
        if not 0 <= v < n:
            raise DataError(f"coordinate vertex {v} outside [0, {n})")
        xy[v] = (x, y)
    if np.isnan(xy).any():
        raise DataError("coordinates do not cover every vertex")
    return xy


def _provider(args, d):
    n = d.n_vertices
    if args.model == "classic":
        return Uniform(n), None, None
    if args.model == "gwfr":
        if not args.coords:
            raise UsageError("coordinates required for --model gwfr (use --coords)")
        xy = _read_coords(args.coords, n)
        return SpatialEuclidean(xy), None, xy
    if not args.edges:
        raise UsageError("an edge CSV is required for --model nwfr (use --edges)")
    g = read_edge_csv(args.edges, n_vertices=n)
    dist = geodesic_matrix(g)
    return NetworkGeodesic(dist), dist, None


def _resolve_theta(args, d, provider):
    if isinstance(provider, Uniform):
        return 1.0
    if args.theta == "auto":
        return select_bandwidth(d, provider, ridge=args.ridge)
    return float(args.theta)


def _add_model_args(p, theta=True):
    p.add_argument("--data", required=True, help="dataset or instance JSON")
    p.add_argument("--edges", help="edge CSV (u,v,weight); required for nwfr")
    p.add_argument("--coords", help="vertex coordinates 'vertex,x,y'; required for gwfr")
    p.add_argument("--model", choices=("classic", "gwfr", "nwfr"), default="nwfr")
    if theta:
        p.add_argument("--theta", type=_theta, default="auto", help="kernel bandwidth or 'auto'")
    p.add_argument("--ridge", type=_nonneg_float, default=None, help="ridge added to each normal system")
    p.add_argument("--out", default=".", help="output directory")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _scale_overrides(args):
    base = dict(SCALES[args.scale])
    if args.n_total is not None:
        base["n_total"] = args.n_total
    if args.n_basis is not None:
        base["n_basis"] = args.n_basis
    if args.reps is not None:
        base["reps"] = args.reps
    over = {"n_total": base["n_total"], "n_basis": base["n_basis"]}
    if getattr(args, "noise_var", None) is not None:
        over["noise_var"] = args.noise_var
    return over, base["reps"]


def _selected(args):
    pick = lambda v, allv: allv if v == "all" else (v,)
    return [(e, o, c) for e in pick(args.ew, EW) for o in pick(args.oc, OC) for c in pick(args.cbc, CBC)]


def cmd_simulate(args):
    out = _out_dir(args.out)
    over, reps = _scale_overrides(args)
    outputs, seeds = [], []
    for si, (e, o, c) in enumerate(_selected(args)):
        spec = make_scenario(e, o, c, **over)
        for r in range(reps):
            s = replicate_seed(args.seed, si, r)
            inst = generate_instance(spec, s)
            stem = f"{spec.name}_r{r:03d}"
            write_json(instance_to_dict(inst), out / f"instance_{stem}.json")
            write_edge_csv(inst.network, out / f"edges_{stem}.csv")
            outputs += [out / f"instance_{stem}.json", out / f"edges_{stem}.csv"]
            seeds.append({"scenario": spec.name, "replicate": r, "seed": s})
    _write_manifest(out, args, outputs, seeds=seeds)


def cmd_fit(args):
    out = _out_dir(args.out)
    d = _load_dataset(args.data)
    provider, dist, xy = _provider(args, d)
    theta = _resolve_theta(args, d, provider)
    fit = fit_all(d, provider, theta, ridge=args.ridge)
    grid = np.linspace(*d.response_basis.domain, args.grid_size)
    report = gof(d.response_coeffs, predict_all(fit), d.response_basis, grid)
    outputs = [out / "model.json", out / "gof.json"]
    write_json(fit_to_dict(fit, distances=dist, coordinates=xy), outputs[0])
    write_json({"format_version": FORMAT_VERSION, "kind": "gof", "model": args.model, "theta": theta,
                **report.to_dict()}, outputs[1])
    if args.surfaces:
        sdir = _out_dir(out / "surfaces")
        for i in fit.vertices:
            for p in range(len(fit.covariate_bases)):
                path = sdir / f"beta_v{int(i)}_p{p}.csv"
                path.write_text(_surface_csv(fit, int(i), p, args.grid_size))
                outputs.append(path)
    _write_manifest(out, args, outputs, theta=theta)


def _surface_csv(fit, i, p, size):
    s_grid = np.linspace(*fit.covariate_bases[p].domain, size)
    t_grid = np.linspace(*fit.response_basis.domain, size)
    surf = beta_surface(fit, i, p, s_grid, t_grid)
    lines = ["t,s,value"]
    for a, t in enumerate(t_grid.tolist()):
        for b, s in enumerate(s_grid.tolist()):
            lines.append(f"{t!r},{s!r},{float(surf[a, b])!r}")
    return "\n".join(lines) + "\n"


def cmd_permtest(args):
    out = _out_dir(args.out)
    d = _load_dataset(args.data)
    provider, _, _ = _provider(args, d)
    theta = _resolve_theta(args, d, provider)
    res = permutation_test(d, provider, theta, k=args.coef, n_perm=args.nperm, seed=args.seed, ridge=args.ridge)
    path = out / "permtest.json"
    write_json({"format_version": FORMAT_VERSION, "kind": "permtest", "model": args.model, "theta": theta,
                "coef": args.coef, **res.to_dict()}, path)
    _write_manifest(out, args, [path], theta=theta)


def _labels_for(args, d):
    if args.edges:
        g = read_edge_csv(args.edges, n_vertices=d.n_vertices)
        return louvain_communities(g, seed=args.seed)
    return np.zeros(d.n_vertices, dtype=int)


def cmd_conformal(args):
    out = _out_dir(args.out)
    d = _load_dataset(args.data)
    provider, _, _ = _provider(args, d)
    labels = _labels_for(args, d)
    theta = _resolve_theta(args, d, provider)
    test = stratified_split(labels, args.test_frac, args.seed + 1).calibration
    grid = np.linspace(*d.response_basis.domain, args.grid_size)
    res = run_split_conformal(d, provider, theta, test, labels, alpha=args.alpha, kind=SCORE_KINDS[args.score],
                              frac=args.frac, seed=args.seed + 2, grid=grid, ridge=args.ridge, mode=args.mode)
    bands_csv = out / "bands.csv"
    bands_to_csv(res.bands, bands_csv)
    report = res.report.to_dict()
    report["score"] = args.score
    report.update({
        "format_version": FORMAT_VERSION,
        "kind": "conformal",
        "model": args.model,
        "theta": theta,
        "bands": {
            "basis": d.response_basis.to_dict(),
            "radius": res.radius,
            "modulation": {"grid": res.modulation.grid, "values": res.modulation.values,
                           "floor": res.modulation.floor},
            "centers": {str(v): b.center.coeffs for v, b in sorted(res.bands.items())},
        },
    })
    write_json(report, out / "report.json")
    _write_manifest(out, args, [bands_csv, out / "report.json"], theta=theta)


def cmd_bench(args):
    out = _out_dir(args.out)
    over, reps = _scale_overrides(args)
    scen = [make_scenario(e, o, c, **over) for e, o, c in _selected(args)]
    workers = args.workers if args.workers is not None else _default_workers()
    rep = run_study(scen, reps=reps, seed=args.seed, alpha=args.alpha, conformal=not args.no_conformal,
                    grid_size=args.grid_size, workers=workers)
    rep.to_csv(out / "study.csv")
    (out / "study.md").write_text(rep.to_markdown() + "\n")
    _write_manifest(out, args, [out / "study.csv", out / "study.md"], failures=rep.failures, reps=reps)


def cmd_ingest(args):
    out = _out_dir(args.out)
    readings, rejects = parse_readings(_read_text(args.readings, "readings").splitlines())
    table = parse_connectivity(_read_text(args.connectivity, "connectivity").splitlines())
    coords = parse_coordinates(_read_text(args.coords, "coordinates").splitlines()) if args.coords else None
    rules = AnomalyRules(tuple(args.humidity_range), tuple(args.temperature_range), tuple(args.voltage_range))
    series = clean_and_window(readings, args.window, args.start, args.end, args.sensors, rules, args.raw_lux)
    complete = knn_impute(series, args.k_impute)
    edges = connectivity_to_weights(table, drop_zero=args.drop_zero)
    net, data, xy = build_lab_dataset(complete, edges, n_basis=args.n_basis, penalty=args.penalty,
                                      coordinates=coords)
    outputs = [out / "dataset.json", out / "edges.csv"]
    write_json(dataset_to_dict(data), outputs[0])
    write_edge_csv(net, outputs[1])
    if xy is not None:
        lines = ["vertex,x,y"] + [f"{k},{x!r},{y!r}" for k, (x, y) in enumerate(xy.tolist())]
        (out / "coords.csv").write_text("\n".join(lines) + "\n")
        outputs.append(out / "coords.csv")
    _write_manifest(
        out, args, outputs,
        sensors=list(complete.sensors),
        n_windows=complete.n_windows,
        imputed=int(series.missing.sum()),
        voltage_flagged_windows=int(series.voltage_flags.sum()),
        rejects=[{"line": r.line, "reason": r.reason} for r in rejects],
    )


def cmd_plotdata(args):
    out = _out_dir(args.out)
    doc = loads(_read_text(args.input, "input"))
    kind = doc.get("kind")
    path = out / f"{args.what}.csv"
    if args.what == "surface":
        if kind != "model":
            raise FormatError("surface export needs a model JSON")
        fit = fit_from_dict(doc)
        path.write_text(_surface_csv(fit, args.vertex, args.coef, args.grid_size))
    elif args.what == "curves":
        if kind == "instance":
            doc = doc["dataset"]
        d = dataset_from_dict(doc)
        lines = ["vertex,variable,t,value"]
        series = [(d.response_name, d.response_basis, d.response_coeffs)]
        series += [(c.name or f"x{p}", c.basis, c.coeffs) for p, c in enumerate(d.covariates)]
        for name, basis, coeffs in series:
            g = np.linspace(*basis.domain, args.grid_size)
            vals = coeffs @ eval_basis(basis, g).T
            for v in range(d.n_vertices):
                lines += [f"{v},{name},{t!r},{y!r}" for t, y in zip(g.tolist(), vals[v].tolist())]
        path.write_text("\n".join(lines) + "\n")
    else:
        if kind != "conformal":
            raise FormatError("band export needs a conformal report JSON")
        b = doc["bands"]
        basis = BSplineBasis.from_dict(b["basis"])
        m = b["modulation"]
        S = ModulationFn(_dec_array(m["grid"]), _dec_array(m["values"]), float(m["floor"]))
        bands = {int(v): build_band(Curve(basis, _dec_array(c)), _dec_float(b["radius"]), S) for v, c in b["centers"].items()}
        bands_to_csv(bands, path)
    _write_manifest(out, args, [path])


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_scenario_args(p, default="all"):
    p.add_argument("--ew", choices=EW + ("all",), default=default, type=str.lower)
    p.add_argument("--oc", choices=OC + ("all",), default=default, type=str.lower)
    p.add_argument("--cbc", choices=CBC + ("all",), default=default, type=str.lower)
    p.add_argument("--scale", choices=tuple(SCALES), default="desk")
    p.add_argument("--reps", type=_positive_int, default=None, help="replicates per scenario (default: per scale)")
    p.add_argument("--n-total", type=_positive_int, default=None)
    p.add_argument("--n-basis", type=_positive_int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="nwfr", description="Network-weighted functional regression toolkit.")
    ap.add_argument("--version", action="version", version=f"nwfr {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate benchmark instances")
    _add_scenario_args(p)
    p.add_argument("--noise-var", type=_nonneg_float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model and report goodness of fit")
    _add_model_args(p)
    p.add_argument("--grid-size", type=_positive_int, default=201)
    p.add_argument("--surfaces", action="store_true", help="also write coefficient surfaces per vertex")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("permtest", help="permutation test for a network effect")
    _add_model_args(p)
    p.add_argument("--coef", type=int, default=0, help="covariate index k")
    p.add_argument("--nperm", type=_positive_int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_permtest)

    p = sub.add_parser("conformal", help="split-conformal prediction bands")
    _add_model_args(p)
    p.add_argument("--alpha", type=_open_unit, default=0.05)
    p.add_argument("--score", choices=tuple(SCORE_KINDS), default="d2")
    p.add_argument("--frac", type=_open_unit, default=0.5, help="calibration share of non-test vertices")
    p.add_argument("--test-frac", type=_open_unit, default=0.2)
    p.add_argument("--mode", choices=("proportional", "one_per_community"), default="proportional")
    p.add_argument("--grid-size", type=_positive_int, default=201)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_conformal)

    p = sub.add_parser("bench", help="run the simulation study")
    _add_scenario_args(p)
    p.add_argument("--alpha", type=_open_unit, default=0.05)
    p.add_argument("--grid-size", type=_positive_int, default=201)
    p.add_argument("--no-conformal", action="store_true")
    p.add_argument("--workers", type=_positive_int, default=None, help="process count (default: $NWFR_WORKERS or 1)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ingest", help="build a dataset from sensor logs")
    p.add_argument("--readings", required=True)
    p.add_argument("--connectivity", required=True)
    p.add_argument("--coords", default=None, help="'id x y' sensor locations")
    p.add_argument("--window", type=_nonneg_float, default=15.0, help="window length in minutes")
    p.add_argument("--k-impute", type=_positive_int, default=3)
    p.add_argument("--start", type=_when, default=DEFAULT_START)
    p.add_argument("--end", type=_when, default=DEFAULT_END)
    p.add_argument("--sensors", type=int, nargs="+", default=None, help="sensor allowlist")
    p.add_argument("--n-basis", type=_positive_int, default=11)
    p.add_argument("--penalty", type=_nonneg_float, default=0.0)
    p.add_argument("--raw-lux", action="store_true", help="light column holds raw Lux; apply log1p")
    p.add_argument("--drop-zero", action="store_true", help="treat p=0 connectivity entries as no link")
    p.add_argument("--humidity-range", type=float, nargs=2, default=(0.0, 100.0))
    p.add_argument("--temperature-range", type=float, nargs=2, default=(-10.0, 60.0))
    p.add_argument("--voltage-range", type=float, nargs=2, default=(2.0, 3.0))
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("plotdata", help="export grid-evaluated curves, surfaces or bands as CSV")
    p.add_argument("what", choices=("curves", "surface", "bands"))
    p.add_argument("--input", required=True, help="dataset, model or conformal report JSON")
    p.add_argument("--vertex", type=int, default=0)
    p.add_argument("--coef", type=int, default=0)
    p.add_argument("--grid-size", type=_positive_int, default=101)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_plotdata)
    return ap


def _fail(code, exc):
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"nwfr: error[{code}] {type(exc).__name__}: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "ingest" and not args.window > 0:
            raise UsageError("--window must be positive")
        args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except (DataError, OSError) as exc:
        return _fail(EXIT_DATA, exc)
    except (NumericError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

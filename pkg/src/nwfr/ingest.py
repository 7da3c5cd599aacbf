"""Intel-lab style sensor logs to a network plus functional dataset.

Reading files are whitespace separated with eight fields per line::

    date time epoch moteid temperature humidity light voltage

Connectivity files hold ``i j p`` lines, ``p`` being the probability that
sensor ``j`` receives a message sent by ``i``.  Coordinate files hold
``id x y`` lines.
"""

from __future__ import annotations

import math
from importlib.resources import files
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from typing import Iterable

import numpy as np

from .basis import make_bspline_basis, smooth_curve
from .errors import (
    DataError,
    DuplicateEdge,
    EmptyRange,
    FormatError,
    InsufficientNeighbors,
    InvalidProbability,
    UncoveredVertex,
)
from .graph import Network, build_graph
from .model import Covariate, FunctionalDataset

__all__ = [
    "SensorReading",
    "Reject",
    "WindowedSeries",
    "AnomalyRules",
    "parse_readings",
    "parse_connectivity",
    "parse_coordinates",
    "clean_and_window",
    "knn_impute",
    "connectivity_to_weights",
    "build_lab_dataset",
    "DEFAULT_START",
    "DEFAULT_END",
    "VARIABLES",
    "fixture_paths",
]

DEFAULT_START = datetime(2004, 3, 1, 21, 0)
DEFAULT_END = datetime(2004, 3, 2, 21, 0)
VARIABLES = ("temperature", "humidity", "light")


@dataclass(frozen=True)
class SensorReading:
    date: str
    timestamp: datetime
    epoch: int
    node_id: int
    temperature: float
    humidity: float
    light: float
    voltage: float


@dataclass(frozen=True)
class Reject:
    line: int
    text: str
    reason: str


def _parse_time(date: str, clock: str) -> datetime:
    # fractional seconds come with any number of digits
    whole, _, frac = clock.partition(".")
    ts = datetime.strptime(f"{date} {whole}", "%Y-%m-%d %H:%M:%S")
    if frac:
        if not frac.isdigit():
            raise ValueError(clock)
        ts += timedelta(microseconds=round(int(frac) * 10 ** (6 - len(frac))))
    return ts


def parse_readings(lines: Iterable[str]):
    """Parse reading lines; returns ``(readings, rejects)``.

    Blank lines are skipped.  Any other line that does not yield eight valid
    fields becomes a :class:`Reject` carrying its 1-based line number.
    """
    readings, rejects = [], []
    for no, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 8:
            rejects.append(Reject(no, text, f"expected 8 fields, found {len(parts)}"))
            continue
        date, clock, epoch, mote, temp, hum, light, volt = parts
        try:
            ts = _parse_time(date, clock)
        except ValueError:
            rejects.append(Reject(no, text, f"bad date/time {date} {clock}"))
            continue
        try:
            epoch_i, mote_i = int(epoch), int(mote)
        except ValueError:
            rejects.append(Reject(no, text, "epoch and mote id must be integers"))
            continue
        vals = []
        for name, tok in (("temperature", temp), ("humidity", hum), ("light", light), ("voltage", volt)):
            try:
                v = float(tok)
            except ValueError:
                break
            if not math.isfinite(v):
                break
            vals.append(v)
        if len(vals) < 4:
            rejects.append(Reject(no, text, f"non-numeric {name} value {tok!r}"))
            continue
        readings.append(SensorReading(date, ts, epoch_i, mote_i, *vals))
    return readings, rejects


def parse_connectivity(lines: Iterable[str]) -> list[tuple[int, int, float]]:
    """``i j p`` triples; raises :class:`FormatError` naming the offending line."""
    out = []
    for no, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        try:
            if len(parts) != 3:
                raise ValueError
            out.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError:
            raise FormatError(f"connectivity line {no}: expected 'i j p', got {text!r}") from None
    return out


def parse_coordinates(lines: Iterable[str]) -> dict[int, tuple[float, float]]:
    out = {}
    for no, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        try:
            if len(parts) != 3:
                raise ValueError
            out[int(parts[0])] = (float(parts[1]), float(parts[2]))
        except ValueError:
            raise FormatError(f"coordinates line {no}: expected 'id x y', got {text!r}") from None
    return out


# ---------------------------------------------------------------------------
# Windowing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnomalyRules:
    humidity: tuple = (0.0, 100.0)
    temperature: tuple = (-10.0, 60.0)
    voltage: tuple = (2.0, 3.0)

    def to_dict(self) -> dict:
        return {"humidity": list(self.humidity), "temperature": list(self.temperature),
                "voltage": list(self.voltage)}


@dataclass(eq=False)
class WindowedSeries:
    """Window means per sensor and variable; NaN marks a missing window."""

    sensors: tuple  # sensor ids, ascending
    start: datetime
    window: float  # minutes
    values: np.ndarray  # n_sensors x len(VARIABLES) x n_windows
    voltage_flags: np.ndarray  # n_sensors x n_windows, True when a reading had out-of-range voltage
    rules: AnomalyRules = field(default_factory=AnomalyRules)

    @property
    def n_windows(self) -> int:
        return self.values.shape[2]

    @property
    def end(self) -> datetime:
        return self.start + timedelta(minutes=self.window * self.n_windows)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def variable(self, name: str) -> np.ndarray:
        return self.values[:, VARIABLES.index(name), :]

    def window_starts(self) -> list[datetime]:
        return [self.start + timedelta(minutes=self.window * j) for j in range(self.n_windows)]


def _mask_rules(values: np.ndarray, rules: AnomalyRules) -> np.ndarray:
    v = values.copy()
    with np.errstate(invalid="ignore"):
        for name in ("temperature", "humidity"):
            lo, hi = getattr(rules, name)
            sl = v[:, VARIABLES.index(name), :]
            sl[(sl < lo) | (sl > hi)] = np.nan
    return v


def clean_and_window(readings, window: float = 15, start: datetime = DEFAULT_START, end: datetime = DEFAULT_END,
                     sensors=None, rules: AnomalyRules | None = None, raw_lux: bool = False) -> WindowedSeries:
    """Average readings over regular windows in ``[start, end)``.

    Readings breaking the temperature or humidity ranges of ``rules`` are treated
    as missing before averaging; a voltage outside its range only flags the
    window.  ``sensors`` restricts the output to an allowlist (listed sensors
    without readings come out fully missing); by default every sensor with a
    reading in range is kept.  ``raw_lux`` applies ``log1p`` to light values.

    Passing a :class:`WindowedSeries` re-applies the rules and the allowlist;
    its window and range must match the arguments.
    """
    rules = rules or AnomalyRules()
    if not window > 0:
        raise DataError(f"window length must be positive, got {window}")
    if not end > start:
        raise EmptyRange(f"date range [{start}, {end}) is empty")
    n_win = math.ceil((end - start).total_seconds() / 60 / window - 1e-9)

    if isinstance(readings, WindowedSeries):
        s = readings
        if s.window != window or s.start != start or s.n_windows != n_win:
            raise DataError("series window/range differ from the requested ones")
        keep = list(s.sensors) if sensors is None else sorted(set(int(x) for x in sensors))
        idx = {sid: k for k, sid in enumerate(s.sensors)}
        vals = np.full((len(keep), len(VARIABLES), n_win), np.nan)
        flags = np.zeros((len(keep), n_win), dtype=bool)
        for r, sid in enumerate(keep):
            if sid in idx:
                vals[r] = s.values[idx[sid]]
                flags[r] = s.voltage_flags[idx[sid]]
        if not keep:
            raise EmptyRange("no sensors left after filtering")
        return WindowedSeries(tuple(keep), start, window, _mask_rules(vals, rules), flags, rules)

    allow = None if sensors is None else set(int(x) for x in sensors)
    span = window * 60.0
    in_range = []
    for r in readings:
        if not (start <= r.timestamp < end):
            continue
        if allow is not None and r.node_id not in allow:
            continue
        in_range.append(r)
    ids = sorted(allow) if allow is not None else sorted({r.node_id for r in in_range})
    if not ids:
        raise EmptyRange("no sensor has readings in the requested range")
    row = {sid: k for k, sid in enumerate(ids)}

    sums = np.zeros((len(ids), len(VARIABLES), n_win))
    counts = np.zeros_like(sums)
    flags = np.zeros((len(ids), n_win), dtype=bool)
    vlo, vhi = rules.voltage
    for r in in_range:
        i = row[r.node_id]
        j = int((r.timestamp - start).total_seconds() // span)
        light = math.log1p(r.light) if raw_lux else r.light
        for v, x in enumerate((r.temperature, r.humidity, light)):
            name = VARIABLES[v]
            if name != "light":
                lo, hi = getattr(rules, name)
                if not lo <= x <= hi:
                    continue
            if not math.isfinite(x):
                continue
            sums[i, v, j] += x
            counts[i, v, j] += 1
        if not vlo <= r.voltage <= vhi:
            flags[i, j] = True
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return WindowedSeries(tuple(ids), start, window, vals, flags, rules)


def knn_impute(series: WindowedSeries, k: int = 3) -> WindowedSeries:
    """Fill each missing window with the mean of its ``k`` nearest sensors.

    Nearness is the Euclidean distance over windows observed by both sensors,
    rescaled by ``n_windows / n_shared``.  Only observed values are averaged;
    ties in distance go to the lower sensor id.
    """
    if k < 1:
        raise DataError(f"k must be positive, got {k}")
    out = series.values.copy()
    n_s = len(series.sensors)
    for v, name in enumerate(VARIABLES):
        V = series.values[:, v, :]
        obs = ~np.isnan(V)
        if obs.all():
            continue
        for i in range(n_s):
            gaps = np.flatnonzero(~obs[i])
            if gaps.size == 0:
                continue
            if not obs[i].any():
                raise InsufficientNeighbors(
                    f"sensor {series.sensors[i]} has no observed {name} values; distance undefined")
            dist = np.full(n_s, np.inf)
            for j in range(n_s):
                if j == i:
                    continue
                shared = obs[i] & obs[j]
                m = shared.sum()
                if m:
                    diff = V[i, shared] - V[j, shared]
                    dist[j] = math.sqrt(float(diff @ diff) * V.shape[1] / m)
            for t in gaps:
                cand = [j for j in np.argsort(dist, kind="stable") if np.isfinite(dist[j]) and obs[j, t]]
                if len(cand) < k:
                    raise InsufficientNeighbors(
                        f"sensor {series.sensors[i]}, {name}, window {t}: "
                        f"{len(cand)} observed neighbours, need {k}")
                out[i, v, t] = float(np.mean(V[cand[:k], t]))
    return replace(series, values=out)


# ---------------------------------------------------------------------------
# Network and dataset
# ---------------------------------------------------------------------------

def connectivity_to_weights(table, drop_zero: bool = False) -> list[tuple[int, int, float]]:
    """Edge weights ``-log p`` from reception probabilities.

    Both directions of a pair are averaged in weight space; a pair reported in one
    direction only keeps that weight.  Self pairs carry no edge and are skipped.
    ``drop_zero`` discards ``p == 0`` entries (no link) instead of rejecting them.
    Returns ``(i, j, w)`` with ``i < j`` in the input id space, sorted.
    """
    directed = {}
    for i, j, p in table:
        i, j, p = int(i), int(j), float(p)
        if p == 0 and drop_zero:
            continue
        if not 0 < p <= 1:
            raise InvalidProbability(f"reception probability {p} for ({i}, {j}) outside (0, 1]")
        if i == j:
            continue
        if (i, j) in directed:
            raise DuplicateEdge(f"probability for ({i}, {j}) given twice")
        directed[(i, j)] = -math.log(p)
    pairs = {}
    for (i, j), f in directed.items():
        pairs.setdefault((min(i, j), max(i, j)), []).append(f)
    # -log(1) is -0.0
    return [(i, j, abs(sum(fs) / len(fs))) for (i, j), fs in sorted(pairs.items())]


def build_lab_dataset(series: WindowedSeries, connectivity, n_basis: int = 11, penalty: float = 0.0,
                      coordinates: dict | None = None, order: int = 4, response: str = "humidity",
                      covariates=("temperature", "light")):
    """Smooth complete windowed series into curves and attach the sensor network.

    ``connectivity`` is an edge list from :func:`connectivity_to_weights` in
    sensor ids; edges touching sensors outside ``series`` are ignored.  Time is
    rescaled so the window grid spans ``[0, 1]``.  Returns ``(network, dataset,
    coordinates)`` where coordinates is an ``N x 2`` array or None.
    """
    if series.missing.any():
        raise DataError("series still has missing values; impute first")
    ids = list(series.sensors)
    index = {sid: k for k, sid in enumerate(ids)}
    edges, touched = [], set()
    for i, j, w in connectivity:
        if i in index and j in index:
            edges.append((index[i], index[j], w))
            touched.update((i, j))
    if len(ids) > 1:
        lonely = [sid for sid in ids if sid not in touched]
        if lonely:
            raise UncoveredVertex(f"no connectivity entry for sensors {lonely}")
    net: Network = build_graph(len(ids), edges)

    t = np.linspace(0.0, 1.0, series.n_windows)
    basis = make_bspline_basis((0.0, 1.0), n_basis, order)

    def curves(name):
        return np.stack([smooth_curve(t, row, basis, penalty).coeffs for row in series.variable(name)])

    covs = tuple(Covariate(basis, curves(c), c) for c in covariates)
    data = FunctionalDataset(basis, curves(response), covs, include_intercept=True, response_name=response)

    xy = None
    if coordinates is not None:
        missing = [sid for sid in ids if sid not in coordinates]
        if missing:
            raise UncoveredVertex(f"no coordinates for sensors {missing}")
        xy = np.array([coordinates[sid] for sid in ids], dtype=float)
    return net, data, xy


def fixture_paths() -> dict:
    """Paths of the bundled five-sensor fixture: ``readings``, ``connectivity``, ``coords``."""
    root = files("nwfr") / "data"
    return {
        "readings": str(root / "intel_readings.txt"),
        "connectivity": str(root / "intel_connectivity.txt"),
        "coords": str(root / "intel_locs.txt"),
    }

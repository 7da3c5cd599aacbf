"""Sensor-log ingestion on the bundled five-sensor fixture, then three fits.

Run: python demos/03_lab_fixture.py
For the full lab data, point the ``nwfr ingest`` command at the downloaded files.
"""

from nwfr.graph import geodesic_matrix
from nwfr.ingest import (
    build_lab_dataset,
    clean_and_window,
    connectivity_to_weights,
    fixture_paths,
    knn_impute,
    parse_connectivity,
    parse_coordinates,
    parse_readings,
)
from nwfr.model import NetworkGeodesic, SpatialEuclidean, Uniform, fit_all, gof, predict_all

paths = fixture_paths()
with open(paths["readings"]) as fh:
    readings, rejects = parse_readings(fh)
with open(paths["connectivity"]) as fh:
    table = parse_connectivity(fh)
with open(paths["coords"]) as fh:
    coords = parse_coordinates(fh)
print(f"{len(readings)} readings parsed, {len(rejects)} rejected:")
for r in rejects:
    print(f"  line {r.line}: {r.reason}")

raw = clean_and_window(readings)
print(f"{len(raw.sensors)} sensors x {raw.n_windows} windows; missing per variable "
      f"{raw.missing.sum(axis=(0, 2)).tolist()}, voltage-flagged windows {int(raw.voltage_flags.sum())}")
full = knn_impute(raw, k=3)

net, d, xy = build_lab_dataset(full, connectivity_to_weights(table), coordinates=coords)
print(f"network: {net.n_vertices} vertices, {net.n_edges} edges")

# five vertices cannot identify 23 coefficients per response coefficient, so every
# model interpolates here; the fits only exercise the pipeline

for name, provider, theta in (
    ("pooled", Uniform(d.n_vertices), 1.0),
    ("network", NetworkGeodesic(geodesic_matrix(net)), 1.0),
    ("spatial", SpatialEuclidean(xy), 2.0),
):
    rep = gof(d.response_coeffs, predict_all(fit_all(d, provider, theta)), d.response_basis)
    print(f"{name:>8}: RIMSE {rep.rimse:.3f}  integrated R2 {rep.r2_integrated:.3f}")

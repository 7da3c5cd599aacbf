"""Split-conformal bands with the L2 and sup nonconformity scores.

Run: python demos/02_conformal_bands.py
"""

import numpy as np

from nwfr.conformal import run_split_conformal, stratified_split
from nwfr.graph import geodesic_matrix, louvain_communities
from nwfr.model import NetworkGeodesic, select_bandwidth
from nwfr.simulate import generate_instance, make_scenario

inst = generate_instance(make_scenario("inout", "different", "high", n_total=100, n_basis=11), seed=3)
d = inst.dataset
communities = louvain_communities(inst.network, seed=3)
print(f"Louvain found {communities.max() + 1} communities (planted: 4)")

test = stratified_split(communities, 0.2, seed=4).calibration
provider = NetworkGeodesic(geodesic_matrix(inst.network))
theta = select_bandwidth(d, provider)

for kind in ("h2", "hinf"):
    res = run_split_conformal(d, provider, theta, test, communities, alpha=0.1, kind=kind, seed=5)
    r = res.report
    print(f"{kind:>4}: radius {res.radius:6.3f}  Cov_G {r.cov_g:.2f}  Cov_L {r.cov_l:.3f}  "
          f"ABW {r.abw:.3f}  interval score {r.interval_score:.3f}")

v = int(test[0])
band = res.bands[v]
obs = d.response_curve(v)(band.grid)
inside = bool(np.all((band.lower <= obs) & (obs <= band.upper)))
print(f"\nvertex {v} ({'inside' if inside else 'leaves'} its sup-score band), five grid points:")
for j in np.linspace(0, len(band.grid) - 1, 5).astype(int):
    print(f"  t={band.grid[j]:.2f}  [{band.lower[j]:7.3f}, {band.upper[j]:7.3f}]  observed {obs[j]:7.3f}")

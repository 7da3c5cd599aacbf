"""Network-weighted functional regression with split-conformal prediction bands."""

__version__ = "0.1.0"

from .basis import BSplineBasis, Curve, eval_basis, gram_matrix, make_bspline_basis, smooth_curve
from .conformal import run_split_conformal, stratified_split
from .errors import DataError, NumericError, NwfrError
from .graph import Network, build_graph, generate_wsbm, geodesic_matrix, louvain_communities
from .model import (
    Covariate,
    FunctionalDataset,
    NetworkGeodesic,
    SpatialEuclidean,
    Uniform,
    fit_all,
    gof,
    permutation_test,
    select_bandwidth,
)

__all__ = [
    "BSplineBasis",
    "Curve",
    "Covariate",
    "DataError",
    "FunctionalDataset",
    "Network",
    "NetworkGeodesic",
    "NumericError",
    "NwfrError",
    "SpatialEuclidean",
    "Uniform",
    "build_graph",
    "eval_basis",
    "fit_all",
    "generate_wsbm",
    "geodesic_matrix",
    "gof",
    "gram_matrix",
    "louvain_communities",
    "make_bspline_basis",
    "permutation_test",
    "run_split_conformal",
    "select_bandwidth",
    "smooth_curve",
    "stratified_split",
]

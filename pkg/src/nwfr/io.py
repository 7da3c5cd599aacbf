"""Versioned JSON documents for datasets, simulated instances and fitted models.

Floats are written with ``repr`` precision, so every document round-trips
bit for bit.  Non-finite numbers are written as the strings ``"inf"``,
``"-inf"`` and ``"nan"``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .basis import BSplineBasis
from .errors import FormatError
from .model import Covariate, FunctionalDataset, NwfrFit

__all__ = [
    "FORMAT_VERSION",
    "dataset_to_dict",
    "dataset_from_dict",
    "instance_to_dict",
    "instance_from_dict",
    "fit_to_dict",
    "fit_from_dict",
    "dumps",
    "loads",
    "write_json",
    "read_json",
]

FORMAT_VERSION = "1.0"
_SUPPORTED_MAJOR = 1


def _enc(x):
    if isinstance(x, np.ndarray):
        return _enc(x.tolist())
    if isinstance(x, (list, tuple)):
        return [_enc(v) for v in x]
    if isinstance(x, dict):
        return {k: _enc(v) for k, v in x.items()}
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


_SPECIAL = {"inf": math.inf, "-inf": -math.inf, "nan": math.nan}


def _dec_array(x, dtype=float) -> np.ndarray:
    def fix(v):
        if isinstance(v, list):
            return [fix(u) for u in v]
        if isinstance(v, str):
            if v not in _SPECIAL:
                raise FormatError(f"unexpected string {v!r} in numeric array")
            return _SPECIAL[v]
        return v

    try:
        return np.array(fix(x), dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"malformed numeric array: {exc}") from None


def _dec_float(v) -> float:
    if isinstance(v, str):
        if v not in _SPECIAL:
            raise FormatError(f"unexpected string {v!r} for a number")
        return _SPECIAL[v]
    return float(v)


def check_version(doc: dict, kind: str | None = None) -> None:
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise FormatError("document has no format_version")
    try:
        major = int(str(doc["format_version"]).split(".")[0])
    except ValueError:
        raise FormatError(f"unreadable format_version {doc['format_version']!r}") from None
    if major != _SUPPORTED_MAJOR:
        raise FormatError(f"unsupported format_version {doc['format_version']} (reader supports {_SUPPORTED_MAJOR}.x)")
    if kind is not None and doc.get("kind") != kind:
        raise FormatError(f"expected a {kind} document, found {doc.get('kind')!r}")


def dataset_to_dict(d: FunctionalDataset) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "dataset",
        "n_vertices": d.n_vertices,
        "include_intercept": d.include_intercept,
        "response": {
            "name": d.response_name,
            "basis": d.response_basis.to_dict(),
            "coeffs": _enc(d.response_coeffs),
        },
        "covariates": [
            {"name": c.name, "basis": c.basis.to_dict(), "coeffs": _enc(c.coeffs)} for c in d.covariates
        ],
    }


def dataset_from_dict(doc: dict) -> FunctionalDataset:
    check_version(doc, "dataset")
    try:
        r = doc["response"]
        covs = tuple(
            Covariate(BSplineBasis.from_dict(c["basis"]), _dec_array(c["coeffs"]), c.get("name", ""))
            for c in doc["covariates"]
        )
        return FunctionalDataset(
            BSplineBasis.from_dict(r["basis"]),
            _dec_array(r["coeffs"]),
            covs,
            include_intercept=bool(doc.get("include_intercept", False)),
            response_name=r.get("name", "y"),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed dataset document: missing {exc}") from None


def instance_to_dict(inst) -> dict:
    """Simulated instance without its graph, which travels as an edge CSV."""
    return {
        "format_version": FORMAT_VERSION,
        "kind": "instance",
        "scenario": _enc(asdict(inst.spec)),
        "seed": int(inst.seed),
        "n_vertices": inst.dataset.n_vertices,
        "labels": _enc(inst.labels),
        "intra_p": _enc(inst.intra_p),
        "true_blocks": _enc(inst.true_blocks),
        "dataset": dataset_to_dict(inst.dataset),
    }


def instance_from_dict(doc: dict, network=None):
    """Rebuild a ``GeneratedInstance``; ``network`` comes from the companion edge CSV."""
    from .simulate import GeneratedInstance, make_scenario

    check_version(doc, "instance")
    try:
        sc = dict(doc["scenario"])
        sc["intra_p_range"] = tuple(sc["intra_p_range"])
        spec = make_scenario(sc.pop("ew"), sc.pop("oc"), sc.pop("cbc"), **sc)
        return GeneratedInstance(
            spec=spec,
            seed=int(doc["seed"]),
            network=network,
            dataset=dataset_from_dict(doc["dataset"]),
            true_blocks=_dec_array(doc["true_blocks"]),
            labels=_dec_array(doc["labels"], int),
            intra_p=tuple(float(p) for p in doc["intra_p"]),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed instance document: missing {exc}") from None


def fit_to_dict(fit: NwfrFit, distances=None, coordinates=None) -> dict:
    """Model document.  ``distances``/``coordinates`` store the provider for later predictions."""
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "model",
        "model": fit.provider,
        "theta": _enc(fit.theta),
        "ridge": None if fit.ridge is None else _enc(fit.ridge),
        "include_intercept": fit.include_intercept,
        "response_basis": fit.response_basis.to_dict(),
        "covariate_bases": [b.to_dict() for b in fit.covariate_bases],
        "vertices": _enc(fit.vertices),
        "training": _enc(fit.training),
        "design": _enc(fit.design),
        "blocks": _enc(fit.blocks),
        "condition": None if fit.condition is None else _enc(fit.condition),
        "ridge_applied": None if fit.ridge_applied is None else _enc(fit.ridge_applied),
    }
    if distances is not None:
        doc["distances"] = _enc(np.asarray(distances, dtype=float))
    if coordinates is not None:
        doc["coordinates"] = _enc(np.asarray(coordinates, dtype=float))
    return doc


def fit_from_dict(doc: dict) -> NwfrFit:
    check_version(doc, "model")
    try:
        blocks = _dec_array(doc["blocks"])
        vertices = _dec_array(doc["vertices"], int)
        if blocks.ndim != 3 or len(blocks) != len(vertices) or len(vertices) == 0:
            raise FormatError("model document has no usable blocks")
        return NwfrFit(
            theta=_dec_float(doc["theta"]),
            ridge=None if doc.get("ridge") is None else _dec_float(doc["ridge"]),
            provider=doc["model"],
            vertices=vertices,
            blocks=blocks,
            design=_dec_array(doc["design"]),
            training=_dec_array(doc["training"], int),
            response_basis=BSplineBasis.from_dict(doc["response_basis"]),
            covariate_bases=tuple(BSplineBasis.from_dict(b) for b in doc["covariate_bases"]),
            include_intercept=bool(doc["include_intercept"]),
            condition=None if doc.get("condition") is None else _dec_array(doc["condition"]),
            ridge_applied=None if doc.get("ridge_applied") is None else _dec_array(doc["ridge_applied"]),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed model document: missing {exc}") from None


def dumps(doc: dict) -> str:
    return json.dumps(_enc(doc), indent=1, sort_keys=True, allow_nan=False) + "\n"


def loads(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}") from None
    check_version(doc)
    return doc


def write_json(doc: dict, path) -> str:
    text = dumps(doc)
    Path(path).write_text(text)
    return text


def read_json(path) -> dict:
    return loads(Path(path).read_text())

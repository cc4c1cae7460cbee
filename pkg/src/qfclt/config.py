"""Experiment configuration: JSON schema parsing shared by CLI subcommands.

Documented keys (see README for the full schema):
  distribution: {kind: rademacher|finite-discrete|coordinate-product|gaussian, ...}
  q_form:       {kind: identity|diagonal|matrix, dimension | entries}
  covariance:   {kind: identity|matrix, dimension | entries}
  lattice:      {basis: [[...], ...]}
  shift, n_grid, lam_grid, x_grid, radii, replicates, tol, mode, ...
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .lattice import Lattice
from .model import (CovarianceModel, QuadraticForm, SourceDistribution,
                    build_covariance, build_quadratic_form)


def _require(config: dict, key: str) -> object:
    if key not in config:
        raise ValidationError(f"config is missing required key {key!r}")
    return config[key]


def distribution_from_config(config: dict) -> SourceDistribution:
    spec = _require(config, "distribution")
    kind = _require(spec, "kind")
    if kind == "rademacher":
        return SourceDistribution.rademacher(int(_require(spec, "dimension")))
    if kind == "finite-discrete":
        return SourceDistribution.finite_discrete(
            _require(spec, "atoms"), _require(spec, "probabilities"))
    if kind == "coordinate-product":
        margins = [(m["values"], m["probabilities"])
                   for m in _require(spec, "marginals")]
        return SourceDistribution.coordinate_product(margins)
    if kind == "gaussian":
        return SourceDistribution.gaussian(
            build_covariance(_require(spec, "covariance")))
    raise ValidationError(f"unknown distribution kind {kind!r}")


def form_from_config(config: dict) -> QuadraticForm:
    spec = _require(config, "q_form")
    kind = spec.get("kind", "matrix")
    if kind == "identity":
        return build_quadratic_form(np.eye(int(_require(spec, "dimension"))))
    if kind == "diagonal":
        return build_quadratic_form(np.diag(np.asarray(_require(spec, "entries"), dtype=float)))
    if kind == "matrix":
        return build_quadratic_form(_require(spec, "entries"))
    raise ValidationError(f"unknown q_form kind {kind!r}")


def covariance_from_config(config: dict) -> CovarianceModel:
    spec = _require(config, "covariance")
    kind = spec.get("kind", "matrix")
    if kind == "identity":
        return build_covariance(np.eye(int(_require(spec, "dimension"))))
    if kind == "matrix":
        return build_covariance(_require(spec, "entries"))
    raise ValidationError(f"unknown covariance kind {kind!r}")


def lattice_from_config(config: dict) -> Lattice:
    spec = _require(config, "lattice")
    return Lattice(np.asarray(_require(spec, "basis"), dtype=float))


@dataclass
class ExperimentConfig:
    """Resolved run configuration: raw dict plus the common scalar knobs."""

    raw: dict
    seed: int
    out_dir: Path
    tol: float
    threads: int
    command: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def resolved(self) -> dict:
        merged = dict(self.raw)
        merged["_seed"] = self.seed
        merged["_tol"] = self.tol
        merged["_command"] = self.command
        return merged


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file {path!r} does not exist")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file is not valid JSON: {exc}") from exc

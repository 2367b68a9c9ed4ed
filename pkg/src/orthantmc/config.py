"""Experiment configuration: TOML (primary) and JSON files.

Unknown keys are rejected; validation failures name the offending field.
"""

from __future__ import annotations

import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigParseError, ConfigValidationError
from .model import ModelParams, validate

MODES = ("naive", "decomposed", "both", "fd_compare", "selftest")

_TOP_KEYS = {"mode", "seed", "model", "problem", "query_points", "budgets",
             "outputs", "fd"}
_MODEL_KEYS = {"d", "m", "mu", "sigma", "rho", "c", "T"}
_PROBLEM_KEYS = {"f", "g", "manufactured_a", "label"}
_QUERY_KEYS = {"t", "x"}
_BUDGET_KEYS = {"n_paths", "dt", "n_time_nodes", "lattice_n_s", "lattice_n_x",
                "lattice_spread", "use_segment_max"}
_OUTPUT_KEYS = {"out_dir"}
_FD_KEYS = {"x_max", "n_x", "dt_fd", "far_bc"}


@dataclass
class Budgets:
    n_paths: int = 20_000
    dt: float = 1e-3
    n_time_nodes: int = 24
    lattice_n_s: int = 20
    lattice_n_x: int = 65
    lattice_spread: float = 4.0
    use_segment_max: bool = True


@dataclass
class FDSettings:
    x_max: float = 4.0
    n_x: int = 64
    dt_fd: float = 2e-3
    far_bc: str = "linear_extrapolation"


@dataclass
class ExperimentConfig:
    mode: str
    seed: int
    params: ModelParams
    f_sources: list
    g_source: str
    manufactured_a: list | None
    label: str
    query_points: list          # list of (t, x-list)
    budgets: Budgets
    out_dir: str
    fd: FDSettings
    raw: dict = field(default_factory=dict)


def _reject_unknown(section, keys, allowed):
    for key in keys:
        if key not in allowed:
            raise ConfigParseError(
                f"unknown key {key!r} in section {section!r}"
            )


def _require(section_dict, section, key):
    if key not in section_dict:
        raise ConfigValidationError(f"{section}.{key}", "missing required key")
    return section_dict[key]


def _parse_file(path):
    path = Path(path)
    if not path.exists():
        raise ConfigParseError(f"config file not found: {path}")
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigParseError(f"{path}: {exc}") from exc
    try:
        return tomllib.loads(text.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        if path.suffix.lower() not in ("", ".toml"):
            try:
                return json.loads(text)
            except json.JSONDecodeError:
                pass
        raise ConfigParseError(f"{path}: {exc}") from exc


def load_config(path):
    data = _parse_file(path)
    if not isinstance(data, dict):
        raise ConfigParseError("config root must be a table/object")
    _reject_unknown("<root>", data.keys(), _TOP_KEYS)

    mode = data.get("mode", "both")
    if mode not in MODES:
        raise ConfigValidationError("mode", f"must be one of {MODES}, got {mode!r}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigValidationError("seed", "must be a nonnegative integer")

    model = data.get("model")
    if not isinstance(model, dict):
        raise ConfigValidationError("model", "missing model section")
    _reject_unknown("model", model.keys(), _MODEL_KEYS)
    d = _require(model, "model", "d")
    m = _require(model, "model", "m")
    try:
        params = ModelParams(
            d=int(d), m=int(m),
            mu=np.asarray(_require(model, "model", "mu"), dtype=float),
            sigma=np.asarray(_require(model, "model", "sigma"), dtype=float),
            rho=float(_require(model, "model", "rho")),
            c=np.asarray(_require(model, "model", "c"), dtype=float),
            T=float(_require(model, "model", "T")),
        )
        validate(params)
    except ConfigValidationError:
        raise
    except Exception as exc:
        field_name = "sigma" if "sigma" in str(exc) else "model"
        raise ConfigValidationError(field_name, str(exc)) from exc

    problem = data.get("problem", {})
    if not isinstance(problem, dict):
        raise ConfigValidationError("problem", "must be a table/object")
    _reject_unknown("problem", problem.keys(), _PROBLEM_KEYS)
    manufactured_a = problem.get("manufactured_a")
    f_sources = problem.get("f")
    g_source = problem.get("g")
    if manufactured_a is None:
        if f_sources is None or g_source is None:
            raise ConfigValidationError(
                "problem", "either manufactured_a or both f and g are required"
            )
        if len(f_sources) != params.d:
            raise ConfigValidationError(
                "problem.f", f"expected {params.d} boundary expressions"
            )
    else:
        manufactured_a = [float(v) for v in manufactured_a]
        if len(manufactured_a) != params.d:
            raise ConfigValidationError(
                "problem.manufactured_a", f"expected {params.d} entries"
            )

    qp_raw = data.get("query_points", [])
    query_points = []
    for idx, qp in enumerate(qp_raw):
        if not isinstance(qp, dict):
            raise ConfigValidationError(f"query_points[{idx}]", "must be a table")
        _reject_unknown(f"query_points[{idx}]", qp.keys(), _QUERY_KEYS)
        t = float(_require(qp, f"query_points[{idx}]", "t"))
        x = [float(v) for v in _require(qp, f"query_points[{idx}]", "x")]
        if len(x) != params.d:
            raise ConfigValidationError(
                f"query_points[{idx}].x", f"expected {params.d} coordinates"
            )
        if not 0 <= t < params.T:
            raise ConfigValidationError(
                f"query_points[{idx}].t", "must lie in [0, T)"
            )
        if any(v < 0 for v in x):
            raise ConfigValidationError(
                f"query_points[{idx}].x", "must lie in the closed orthant"
            )
        query_points.append((t, x))
    if not query_points and mode != "selftest":
        raise ConfigValidationError("query_points", "at least one is required")

    bud_raw = data.get("budgets", {})
    _reject_unknown("budgets", bud_raw.keys(), _BUDGET_KEYS)
    budgets = Budgets(**bud_raw)
    for name in ("n_paths", "n_time_nodes", "lattice_n_s", "lattice_n_x"):
        if getattr(budgets, name) <= 0:
            raise ConfigValidationError(f"budgets.{name}", "must be positive")
    for name in ("dt", "lattice_spread"):
        if getattr(budgets, name) <= 0:
            raise ConfigValidationError(f"budgets.{name}", "must be positive")

    out_raw = data.get("outputs", {})
    _reject_unknown("outputs", out_raw.keys(), _OUTPUT_KEYS)
    out_dir = out_raw.get("out_dir", "results")

    fd_raw = data.get("fd", {})
    _reject_unknown("fd", fd_raw.keys(), _FD_KEYS)
    fd = FDSettings(**fd_raw)
    if fd.far_bc not in ("dirichlet_known", "linear_extrapolation"):
        raise ConfigValidationError("fd.far_bc", f"unknown mode {fd.far_bc!r}")

    return ExperimentConfig(
        mode=mode, seed=seed, params=params,
        f_sources=list(f_sources) if f_sources else [],
        g_source=g_source or "0",
        manufactured_a=manufactured_a,
        label=problem.get("label", ""),
        query_points=query_points, budgets=budgets, out_dir=out_dir, fd=fd,
        raw=data,
    )

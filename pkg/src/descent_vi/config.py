"""Run configuration read from a sectioned TOML file.

Sections and keys (unknown sections or keys are rejected)::

    [grid]      dimension, extents, counts
    [model]     name, plus the model's parameters (s, strict, r, c0, c1,
                c_min, c_max); check_delta, check_c_delta, check_xi_min,
                check_xi_max, check_samples for the hypothesis sampler
    [obstacle]  name, plus level | height | high, low
    [penalty]   eps, equivariant, branch, seed, seed_amplitude
    [flow]      h_init, h_min, h_max, grow, shrink, tol, max_steps,
                patience, history, divergence_norm
    [search]    t0, r_seed, r1, n_theta, bisection_depth, part_tol, rho0,
                probe_steps, collapse_frac, expand_limit, edge_rounds,
                escape_norm, distinct_factor, max_probes, seed_sign
    [schedule]  eps0, gamma, stages, tol_feas, run_all, branch
    [output]    directory, verbosity, seed, random_tests

Only [grid], [model] and [obstacle] are required.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .continuation import BRANCHES, Schedule
from .errors import ConfigurationError
from .flow import FlowParams
from .grid import Grid, build_grid
from .model import GrowthCheckParams, Model, make_nonlinearity, make_obstacle
from .multisol import SearchConfig

__all__ = ["RunConfig", "load_config", "parse_config"]

REQUIRED = ("grid", "model", "obstacle")

_MODEL_PARAMS = {
    "power": {"s", "strict", "r"},
    "weighted_power": {"s", "c0", "c1", "c_min", "c_max", "r"},
    "linear": set(),
    "negative_cubic": set(),
}
_CHECK_KEYS = {"check_delta", "check_c_delta", "check_xi_min", "check_xi_max", "check_samples"}
_OBSTACLE_PARAMS = {"constant": {"level"}, "tent": {"height"}, "two_bump": {"high", "low"}}
_SEEDS = ("search", "phi1", "-phi1", "phi2")
_VERBOSITY = ("debug", "info", "warning", "error")


def _names(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


_SECTIONS = {
    "grid": {"dimension", "extents", "counts"},
    "model": None,
    "obstacle": None,
    "penalty": {"eps", "equivariant", "branch", "seed", "seed_amplitude"},
    "flow": _names(FlowParams),
    "search": _names(SearchConfig) - {"flow"},
    "schedule": _names(Schedule) | {"branch"},
    "output": {"directory", "verbosity", "seed", "random_tests"},
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs, resolved and validated."""

    raw: dict
    grid: Grid
    model: Model
    eps: float
    equivariant: bool
    penalty_branch: str
    penalty_seed: str
    seed_amplitude: float
    flow: FlowParams
    search: SearchConfig
    schedule: Schedule
    branch: str
    checks: GrowthCheckParams
    check_samples: int
    directory: Path
    verbosity: str
    seed: int
    random_tests: int

    @property
    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the parsed file."""
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def load_config(path, directory=None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, directory=directory, origin=str(path))


def parse_config(text: str, directory=None, origin: str = "<config>") -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{origin}: {exc}") from None
    for name in raw:
        if name not in _SECTIONS:
            raise ConfigurationError(f"{origin}: unknown section [{name}]")
        if not isinstance(raw[name], dict):
            raise ConfigurationError(f"{origin}: '{name}' must be a section")
    for name in REQUIRED:
        if name not in raw:
            raise ConfigurationError(f"{origin}: missing [{name}] section")
    for name, keys in _SECTIONS.items():
        if keys is not None:
            _check_keys(origin, name, raw.get(name, {}), keys)

    try:
        return _resolve(raw, directory, origin)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"{origin}: {exc}") from None


def _check_keys(origin, section, table, allowed):
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigurationError(f"{origin}: unknown key(s) {unknown} in [{section}]")


def _resolve(raw, directory, origin) -> RunConfig:
    g = raw["grid"]
    for key in ("dimension", "extents", "counts"):
        if key not in g:
            raise ConfigurationError(f"{origin}: [grid] needs '{key}'")
    grid = build_grid(int(g["dimension"]), list(g["extents"]), list(g["counts"]))

    m = dict(raw["model"])
    name = m.pop("name", None)
    if name not in _MODEL_PARAMS:
        raise ConfigurationError(f"{origin}: [model] name must be one of {sorted(_MODEL_PARAMS)}")
    checks = {k: m.pop(k) for k in list(m) if k in _CHECK_KEYS}
    _check_keys(origin, "model", m, _MODEL_PARAMS[name])
    nl = make_nonlinearity(name, **m)
    box = grid.extents
    growth = GrowthCheckParams(
        delta=float(checks.get("check_delta", 0.1)),
        c_delta=float(checks.get("check_c_delta", 2.0)),
        x_box=tuple((0.0, e) for e in box),
        xi_box=(float(checks.get("check_xi_min", -10.0)), float(checks.get("check_xi_max", 10.0))),
        seed=int(raw.get("output", {}).get("seed", 0)),
    )

    o = dict(raw["obstacle"])
    oname = o.pop("name", None)
    if oname not in _OBSTACLE_PARAMS:
        raise ConfigurationError(
            f"{origin}: [obstacle] name must be one of {sorted(_OBSTACLE_PARAMS)}"
        )
    _check_keys(origin, "obstacle", o, _OBSTACLE_PARAMS[oname])
    obstacle = make_obstacle(grid, oname, **{k: float(v) for k, v in o.items()})

    pen = raw.get("penalty", {})
    flow = FlowParams(**raw.get("flow", {}))
    search = SearchConfig(**raw.get("search", {}), flow=flow)
    sched = dict(raw.get("schedule", {}))
    branch = sched.pop("branch", "positive")
    schedule = Schedule(**sched)
    out = raw.get("output", {})

    penalty_branch = pen.get("branch", "positive")
    for label, value in (("schedule", branch), ("penalty", penalty_branch)):
        if value not in BRANCHES:
            raise ConfigurationError(
                f"{origin}: [{label}] branch must be one of {sorted(BRANCHES)}"
            )
    eps = float(pen.get("eps", 1.0))
    if not (math.isfinite(eps) and eps > 0):
        raise ConfigurationError(f"{origin}: [penalty] eps must be positive, got {eps}")
    seed_kind = pen.get("seed", "search")
    if seed_kind not in _SEEDS:
        raise ConfigurationError(f"{origin}: [penalty] seed must be one of {list(_SEEDS)}")
    verbosity = out.get("verbosity", "warning")
    if verbosity not in _VERBOSITY:
        raise ConfigurationError(f"{origin}: [output] verbosity must be one of {list(_VERBOSITY)}")
    random_tests = int(out.get("random_tests", 50))
    if random_tests < 0:
        raise ConfigurationError(f"{origin}: [output] random_tests must be >= 0")
    target = Path(directory if directory is not None else out.get("directory", "descent_vi_out"))

    return RunConfig(
        raw=raw, grid=grid, model=Model(nl, obstacle),
        eps=eps, equivariant=bool(pen.get("equivariant", True)),
        penalty_branch=penalty_branch, penalty_seed=seed_kind,
        seed_amplitude=float(pen.get("seed_amplitude", 1.0)),
        flow=flow, search=search, schedule=schedule, branch=branch,
        checks=growth, check_samples=int(checks.get("check_samples", 1000)),
        directory=target, verbosity=verbosity, seed=int(out.get("seed", 0)),
        random_tests=random_tests,
    )

"""Continuation in the penalty parameter towards the obstacle problem.

The penalty problem is solved for ``ε_n = ε₀γⁿ``, each stage warm-started
from the previous solution.  The stage table records the quantities whose
uniform behaviour in ``n`` is what lets the penalty solutions converge to a
solution of the variational inequality: energy, H¹ norm, the norms of the
positive and negative parts, and the L² size of the constraint violation.

The final field is certified through discrete KKT residuals
(:func:`vi_residuals`) and by evaluating the variational inequality on
admissible test fields (:func:`sample_vi_tests`).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from dataclasses import field as dc_field

import numpy as np

from .errors import ConfigurationError, ContractError
from .flow import Classification, classify, flow_to_critical, part_norms
from .grid import Grid, check_field, h1_norm, lq_norm
from .model import Model, Nonlinearity, y_plane_basis
from .multisol import (
    SearchConfig,
    SlotReport,
    _finish,
    _local_bracket,
    _OutOfProbes,
    _Prober,
    _refine_in_parts_plane,
    edge_track,
    find_negative,
    find_positive,
    find_sign_changing,
)
from .penalty import PenaltyProblem

log = logging.getLogger(__name__)

__all__ = [
    "Schedule",
    "StageRecord",
    "ViCertificate",
    "continue_to_vi",
    "vi_residuals",
    "sample_vi_tests",
    "default_test_fields",
    "random_test_fields",
    "sigma_hat",
    "active_tolerance",
    "BRANCHES",
]

BRANCHES = {
    "positive": (find_positive, Classification.POSITIVE),
    "negative": (find_negative, Classification.NEGATIVE),
    "sign_changing": (find_sign_changing, Classification.SIGN_CHANGING),
}

TABLE_COLUMNS = ["n", "eps", "energy", "norm", "norm_plus", "norm_minus", "feas_l2"]


@dataclass(frozen=True)
class Schedule:
    """``ε_n = ε₀γⁿ`` for ``n < stages``; stop early once ``feas_l2 <= tol_feas``.

    ``run_all`` disables the early stop so that every stage is recorded.
    """

    eps0: float = 0.1
    gamma: float = 0.5
    stages: int = 12
    tol_feas: float = 1e-6
    run_all: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.eps0) and self.eps0 > 0):
            raise ConfigurationError("eps0 must be positive")
        if not 0 < self.gamma < 1:
            raise ConfigurationError("gamma must lie in (0, 1)")
        if self.stages < 1:
            raise ConfigurationError("stages must be >= 1")
        if not self.tol_feas > 0:
            raise ConfigurationError("tol_feas must be positive")

    def eps(self, n: int) -> float:
        return self.eps0 * self.gamma**n

    def values(self) -> list[float]:
        return [self.eps(n) for n in range(self.stages)]


@dataclass
class StageRecord:
    n: int
    eps: float
    energy: float
    norm: float
    norm_plus: float
    norm_minus: float
    feas_l2: float
    feas_max: float
    grad_norm: float
    iterations: int
    route: str
    classification: str
    max_energy_increase: float

    def row(self) -> list:
        return [self.n, self.eps, self.energy, self.norm, self.norm_plus,
                self.norm_minus, self.feas_l2]


@dataclass
class ViCertificate:
    """Final field of a continuation run with its residuals and stage table."""

    branch: str
    status: str
    field: np.ndarray = dc_field(repr=False)
    feasibility: float
    feasibility_l2: float
    stationarity: float
    complementarity: float
    norm_plus: float
    norm_minus: float
    table: list[StageRecord]
    lost_stage: int | None = None
    gamma_used: list[float] = dc_field(default_factory=list)
    c_hat: float = float("nan")
    stage_fields: list = dc_field(default_factory=list, repr=False)
    energy_drops: list = dc_field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "branch": self.branch,
            "status": self.status,
            "lost_stage": self.lost_stage,
            "feasibility": self.feasibility,
            "feasibility_l2": self.feasibility_l2,
            "stationarity": self.stationarity,
            "complementarity": self.complementarity,
            "norm_plus": self.norm_plus,
            "norm_minus": self.norm_minus,
            "c_hat": self.c_hat,
            "gamma_used": self.gamma_used,
            "table": [asdict(r) for r in self.table],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        for rec in self.table:
            writer.writerow([rec.n] + [repr(float(v)) for v in rec.row()[1:]])
        return buf.getvalue()


# -- residuals ---------------------------------------------------------------


def active_tolerance(tol_feas: float) -> float:
    """Gap ``ψ - ω`` under which a node counts as in contact."""
    return max(10.0 * tol_feas, 1e-6)


def vi_residuals(grid: Grid, model: Model, omega, tol_set: float = 1e-6) -> dict:
    """Discrete KKT residuals of ``ω`` for the obstacle problem.

    With ``r = Δ_h ω + p(x, ω)`` (the discrete multiplier):

    * feasibility: ``max (ω - ψ)⁺``;
    * stationarity: ``max |r|`` over nodes with ``ω < ψ - tol_act``;
    * complementarity: ``max |min(ψ - ω, r)|``.

    ``tol_set`` is the feasibility tolerance from which ``tol_act`` follows.
    """
    omega = check_field(grid, omega, "omega")
    psi = model.obstacle.values
    r = -(grid.stiffness @ omega) + model.nonlinearity.p(grid.nodes, omega)
    gap = psi - omega
    inactive = gap > active_tolerance(tol_set)
    return {
        "feasibility": float(np.max(np.maximum(-gap, 0.0))),
        "feasibility_l2": lq_norm(grid, np.maximum(-gap, 0.0), 2.0),
        "stationarity": float(np.max(np.abs(r[inactive]), initial=0.0)),
        "complementarity": float(np.max(np.abs(np.minimum(gap, r)))),
        "inactive_nodes": int(inactive.sum()),
        "tol_act": active_tolerance(tol_set),
    }


def sample_vi_tests(grid: Grid, model: Model, omega, v_list) -> list[float]:
    """``⟨ω, v - ω⟩ - ∫p(x, ω)(v - ω)`` for each admissible ``v``."""
    omega = check_field(grid, omega, "omega")
    psi = model.obstacle.values
    lhs_op = grid.stiffness @ omega
    p = model.nonlinearity.p(grid.nodes, omega)
    out = []
    for i, v in enumerate(v_list):
        v = check_field(grid, v, f"v[{i}]")
        if np.any(v > psi):
            raise ContractError(f"test field {i} exceeds the obstacle")
        d = v - omega
        out.append(float(grid.cell_volume * (d @ lhs_op - d @ p)))
    return out


def _bumps(grid: Grid, count: int):
    """Localized hat bumps at evenly spread centres."""
    span = np.array(grid.extents)
    out = []
    for k in range(count):
        centre = span * (k + 1) / (count + 1)
        width = span / (count + 1)
        bump = np.ones(grid.size)
        for axis in range(grid.dimension):
            bump *= np.maximum(1.0 - np.abs(grid.nodes[:, axis] - centre[axis]) / width[axis], 0.0)
        out.append(bump)
    return out


def default_test_fields(grid: Grid, model: Model, omega) -> list[np.ndarray]:
    """ψ-capped multiples of ω, ψ-capped local bumps around ω, and 0 if admissible."""
    omega = check_field(grid, omega, "omega")
    psi = model.obstacle.values
    scale = max(float(np.abs(omega).max()), 1e-12)
    fields = [np.minimum(c * omega, psi) for c in (0.0, 0.5, 0.9, 1.0, 1.1, 2.0)]
    for bump in _bumps(grid, 4):
        for sign in (1.0, -1.0):
            fields.append(np.minimum(omega + sign * 0.25 * scale * bump, psi))
    if np.all(psi >= 0):
        fields.append(np.zeros(grid.size))
    return fields


def random_test_fields(grid: Grid, model: Model, omega, count: int, seed: int = 0):
    """Seeded admissible fields ``min(ψ, ω + smooth random perturbation)``."""
    rng = np.random.default_rng(seed)
    psi = model.obstacle.values
    scale = max(float(np.abs(omega).max()), 1e-12)
    modes = min(8, min(grid.counts))
    out = []
    for _ in range(count):
        pert = np.zeros(grid.size)
        for _ in range(modes):
            freq = rng.integers(1, modes + 1, size=grid.dimension)
            term = np.full(grid.size, rng.normal())
            for axis in range(grid.dimension):
                term *= np.sin(freq[axis] * np.pi * grid.nodes[:, axis] / grid.extents[axis])
            pert += term
        pert *= rng.uniform(0.05, 1.0) * scale / max(np.abs(pert).max(), 1e-300)
        out.append(np.minimum(omega + pert, psi))
    return out


def sigma_hat(grid: Grid, nl: Nonlinearity, r1: float, n_theta: int = 64, n_t: int = 101) -> float:
    """Max of ``t²/2·‖u‖² - ∫P(x, tu)`` over ``t ∈ [0, 1]`` and ``u`` on the r₁-circle in Y."""
    e1, e2 = y_plane_basis(grid)
    best = 0.0
    for th in 2.0 * np.pi * np.arange(n_theta) / n_theta:
        u = r1 * (np.cos(th) * e1 + np.sin(th) * e2)
        quad = grid.cell_volume * float(u @ (grid.stiffness @ u))
        for t in np.linspace(0.0, 1.0, n_t):
            val = 0.5 * t * t * quad - grid.cell_volume * float(
                np.sum(nl.primitive(grid.nodes, t * u)))
            best = max(best, val)
    return best


# -- continuation ------------------------------------------------------------


def _matches(pp, cfg, rep, expected) -> bool:
    if rep is None or rep.grad_norm > cfg.tol:
        return False
    if pp.eps_norm(rep.field) < cfg.rho0:
        return False
    return classify(pp.grid, rep.field, cfg.part_tol) is expected


def _recover(pp, cfg, prev, branch) -> tuple:
    """Edge-track through the previous solution, then fall back to a full search."""
    search, expected = BRANCHES[branch]
    prober = _Prober(pp, cfg)
    if branch == "sign_changing":
        prober.track_sign_changing = True
    try:
        found = _recover_locally(pp, cfg, prober, prev, branch, expected)
    except _OutOfProbes:
        found = None
    if found is not None:
        return found
    slot = search(pp, cfg)
    if slot.found:
        return slot.report, "full-search"
    return None, f"lost ({slot.reason})"


def _recover_locally(pp, cfg, prober, prev, branch, expected):
    bracket = _local_bracket(prober, prev)
    if bracket is not None:
        edge = edge_track(pp, prev, bracket[0], bracket[1], cfg, prober)
        if _matches(pp, cfg, edge.report, expected):
            return edge.report, "edge-track"
    if branch == "sign_changing":
        for _ in range(cfg.edge_rounds):
            grad, z = prober.best_sign_changing
            if z is None:
                break
            if grad <= cfg.tol:
                rep = _finish(pp, cfg, (grad, z, None), None, "").report
                return rep, "parts-plane"
            edge = _refine_in_parts_plane(pp, cfg, prober, z)
            if edge is not None and _matches(pp, cfg, edge.report, expected):
                return edge.report, "parts-plane"
            if prober.best_sign_changing[0] >= grad:
                break
    return None


def continue_to_vi(
    grid: Grid, model: Model, cfg: SearchConfig, schedule: Schedule, branch: str,
    keep_fields: bool = True, progress=None,
) -> ViCertificate:
    """Follow one solution branch as ``ε → 0`` and certify the final field."""
    if branch not in BRANCHES:
        raise ConfigurationError(f"unknown branch {branch!r}; use one of {sorted(BRANCHES)}")
    search, expected = BRANCHES[branch]
    table: list[StageRecord] = []
    fields = []
    drops: list[float] = []
    gammas: list[float] = []
    status, lost = "ok", None
    gamma = schedule.gamma
    retried = False
    eps = schedule.eps0
    prev = None
    n = 0
    while n < schedule.stages:
        pp = PenaltyProblem(grid, model, eps)
        if prev is None:
            slot: SlotReport = search(pp, cfg)
            rep = slot.report if slot.found else None
            route = "search" if slot.found else f"lost ({slot.reason})"
        else:
            rep = flow_to_critical(pp, prev, step_policy=cfg.flow)
            route = "warm"
            if not _matches(pp, cfg, rep, expected):
                rep, route = _recover(pp, cfg, prev, branch)
        if rep is None or not _matches(pp, cfg, rep, expected):
            if prev is not None and not retried:
                # gentler schedule from the last good stage
                retried = True
                gamma = math.sqrt(gamma)
                eps = table[-1].eps * gamma
                log.info("branch lost at stage %d, retrying with gamma=%g", n, gamma)
                continue
            status, lost = "branch-lost", n
            break
        drops.extend(rep.energy_drops)
        omega = rep.field
        plus, minus = part_norms(grid, omega)
        excess = pp.excess(omega)
        record = StageRecord(
            n=n, eps=eps, energy=pp.energy(omega), norm=h1_norm(grid, omega),
            norm_plus=plus, norm_minus=minus,
            feas_l2=lq_norm(grid, excess, 2.0), feas_max=float(excess.max()),
            grad_norm=rep.grad_norm, iterations=rep.iterations, route=route,
            classification=classify(grid, omega, cfg.part_tol).value,
            max_energy_increase=max(rep.energy_drops, default=-math.inf),
        )
        table.append(record)
        gammas.append(gamma if n else 1.0)
        if keep_fields:
            fields.append(omega.copy())
        if progress is not None:
            progress(record)
        prev = omega
        n += 1
        if not schedule.run_all and record.feas_l2 <= schedule.tol_feas:
            break
        eps *= gamma

    if not table:
        empty = np.zeros(grid.size)
        return ViCertificate(branch, status, empty, math.nan, math.nan, math.nan, math.nan,
                             math.nan, math.nan, table, lost, gammas)
    final = prev
    res = vi_residuals(grid, model, final, schedule.tol_feas)
    plus, minus = part_norms(grid, final)
    c_hat = max((r.feas_l2**2 / r.eps for r in table), default=0.0)
    return ViCertificate(
        branch=branch, status=status, field=final,
        feasibility=res["feasibility"], feasibility_l2=res["feasibility_l2"],
        stationarity=res["stationarity"], complementarity=res["complementarity"],
        norm_plus=plus, norm_minus=minus, table=table, lost_stage=lost,
        gamma_used=gammas, c_hat=c_hat, stage_fields=fields, energy_drops=drops,
    )

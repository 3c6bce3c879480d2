"""Positive, negative and sign-changing critical points of ``I_ε``.

Nontrivial critical points reached from the cones are typically saddles of
the energy, so plain descent from a seed drifts away from them.  The search
therefore works with the boundary of the basin of attraction of ``0``:

* along a ray ``t·d`` seeds with small ``t`` collapse to ``0`` and seeds with
  large ``t`` leave (energy turns negative, the flow diverges, or it settles
  on another critical point);
* bisecting ``t`` between the two outcomes gives seeds whose trajectories
  shadow the basin boundary and linger near the saddle sitting on it;
* restarting the bisection from the lingering state with the smallest
  gradient ("edge tracking") drives the gradient norm down to tolerance.

For the sign-changing solution the rays fill the plane spanned by the first
two eigenfunctions.  Rays whose edge lands on a positive saddle and rays
whose edge lands on a negative one are separated in angle, and bisecting
the angle between them isolates the sign-changing saddle.  Near the end the
plane is re-centred on ``span{z⁺, z⁻}`` of the current best state ``z``.

Every returned solution is certified afterwards by its own gradient norm
and part norms; the search itself carries no guarantee.
"""

from __future__ import annotations

import json
import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError
from .flow import (
    Classification,
    CriticalPointReport,
    FlowParams,
    classify,
    flow_to_critical,
    part_norms,
)
from .grid import eigenpairs, h1_norm, negative_part, positive_part
from .model import check_h5, y_plane_basis
from .penalty import PenaltyProblem

log = logging.getLogger(__name__)

__all__ = [
    "SearchConfig",
    "SlotReport",
    "TripleReport",
    "find_positive",
    "find_negative",
    "find_sign_changing",
    "solve_triple",
    "edge_track",
    "collapse_level",
    "probe_threads",
]

MAX_BISECTION_DEPTH = 60


@dataclass(frozen=True)
class SearchConfig:
    """Parameters of the basin-boundary search.

    ``t0``
        amplitude of the cone seeds ``±t0·φ₁``.
    ``r_seed``, ``r1``
        radius of the seeds in span{φ₁, φ₂}.  When ``r_seed`` is unset it
        falls back to ``r1`` if that radius passes the H5 check, else 1.0.
    ``n_theta``
        number of angles on the seed circle.
    ``bisection_depth``
        bisection steps per bracket (at most 60).
    ``part_tol``
        threshold on ``‖u⁺‖``, ``‖u⁻‖`` for classification.
    ``rho0``
        norm below which an endpoint counts as the trivial solution.
    ``probe_steps``
        step budget for each probe flow.
    ``collapse_frac``
        a probe has collapsed once ``max|u|`` falls below this fraction of
        the largest amplitude on which ``|p(x, ξ)/ξ| <= λ₁/2``.
    ``expand_limit``
        how many times a ray bracket may double or halve the seed radius.
    ``edge_rounds``
        restarts of the edge tracker from its best state.
    ``distinct_factor``
        found solutions must be this many tolerances apart in H¹.
    ``max_probes``
        probe flows allowed per search before it gives up.
    ``seed_sign``
        ``-1`` negates every seed direction; the positive and negative
        slots then swap.
    """

    t0: float = 0.1
    r_seed: float | None = None
    r1: float | None = None
    n_theta: int = 16
    bisection_depth: int = 50
    part_tol: float = 1e-6
    rho0: float = 1e-6
    probe_steps: int = 5000
    collapse_frac: float = 0.1
    expand_limit: int = 40
    edge_rounds: int = 40
    escape_norm: float = 1e8
    distinct_factor: float = 10.0
    max_probes: int = 4000
    seed_sign: int = 1
    flow: FlowParams = field(default_factory=FlowParams)

    def __post_init__(self):
        if self.t0 < 0:
            raise ConfigurationError("t0 must be nonnegative")
        for name in ("part_tol", "rho0", "collapse_frac", "escape_norm", "distinct_factor"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("r_seed", "r1"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 1 <= self.bisection_depth <= MAX_BISECTION_DEPTH:
            raise ConfigurationError(
                f"bisection_depth must lie in [1, {MAX_BISECTION_DEPTH}]"
            )
        if self.n_theta < 2 or self.probe_steps < 1 or self.edge_rounds < 1:
            raise ConfigurationError("n_theta >= 2, probe_steps >= 1, edge_rounds >= 1")
        if self.max_probes < 1:
            raise ConfigurationError("max_probes must be positive")
        if self.seed_sign not in (1, -1):
            raise ConfigurationError("seed_sign must be 1 or -1")
        if self.expand_limit < 0:
            raise ConfigurationError("expand_limit must be nonnegative")

    @property
    def tol(self) -> float:
        return self.flow.tol

    def with_(self, **kw) -> "SearchConfig":
        return replace(self, **kw)


@dataclass
class SlotReport:
    """Outcome of one search: a certified critical point or a reason why not."""

    label: str
    found: bool
    classification: Classification | None
    report: CriticalPointReport | None
    reason: str = ""
    part_norms: tuple[float, float] = (float("nan"), float("nan"))
    diagnostics: dict = field(default_factory=dict)

    @property
    def field(self) -> np.ndarray | None:
        return None if self.report is None else self.report.field

    def to_dict(self, field_file: str | None = None) -> dict:
        rep = self.report
        return {
            "label": self.label,
            "found": self.found,
            "reason": self.reason,
            "classification": None if self.classification is None else self.classification.value,
            "energy": None if rep is None else rep.energy,
            "grad_norm": None if rep is None else rep.grad_norm,
            "part_norms": {"plus": self.part_norms[0], "minus": self.part_norms[1]},
            "iterations": None if rep is None else rep.iterations,
            "termination": None if rep is None else rep.reason,
            "field_file": field_file,
            "diagnostics": _jsonable(self.diagnostics),
        }


@dataclass
class TripleReport:
    positive: SlotReport
    negative: SlotReport
    sign_changing: SlotReport
    distinct_threshold: float
    distances: dict = field(default_factory=dict)
    distinct: bool = True

    @property
    def slots(self) -> dict[str, SlotReport]:
        return {
            "positive": self.positive,
            "negative": self.negative,
            "sign_changing": self.sign_changing,
        }

    @property
    def all_found(self) -> bool:
        return all(s.found for s in self.slots.values())

    def to_dict(self, field_files: dict | None = None) -> dict:
        field_files = field_files or {}
        return {
            "slots": {k: s.to_dict(field_files.get(k)) for k, s in self.slots.items()},
            "distinct_threshold": self.distinct_threshold,
            "distances": self.distances,
            "distinct": self.distinct,
            "all_found": self.all_found,
        }

    def to_json(self, field_files: dict | None = None) -> str:
        return json.dumps(self.to_dict(field_files), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Classification):
        return obj.value
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return None
    return obj


def probe_threads() -> int:
    """Worker count for independent probes, from ``DESCENT_VI_THREADS``."""
    raw = os.environ.get("DESCENT_VI_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"DESCENT_VI_THREADS must be an integer, got {raw!r}")


def _map(fn, items):
    items = list(items)
    workers = min(probe_threads(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- probes ------------------------------------------------------------------


def collapse_level(pp: PenaltyProblem, frac: float = 0.1) -> float:
    """``frac`` times the largest ``m`` with ``|p(x, ξ)/ξ| <= λ₁/2`` for ``|ξ| <= m``.

    Below that amplitude the nonlinearity is dominated by the Laplacian and
    the flow contracts to ``0``.
    """
    lam1 = eigenpairs(pp.grid, 1)[0].value
    mesh = np.logspace(-14, 8, 441)
    take = np.linspace(0, pp.grid.size - 1, min(pp.grid.size, 33)).astype(int)
    x = pp.nodes[take]
    ok = np.ones(mesh.size, dtype=bool)
    for node in x:
        xs = np.repeat(node[None, :], mesh.size, axis=0)
        for sign in (1.0, -1.0):
            ratio = np.abs(pp.nonlinearity.p(xs, sign * mesh)) / mesh
            ok &= ratio <= 0.5 * lam1
    if not ok[0]:
        return 0.0
    bad = np.flatnonzero(~ok)
    top = mesh[bad[0] - 1] if bad.size else mesh[-1]
    return frac * float(top)


class _OutOfProbes(Exception):
    """Raised by a prober whose probe budget is spent."""


@dataclass
class _Probe:
    outcome: str  # "in", "out" or "critical"
    report: CriticalPointReport
    classification: Classification


class _Prober:
    """Flows a seed until its fate relative to the basin of 0 is clear."""

    def __init__(self, pp: PenaltyProblem, cfg: SearchConfig):
        self.pp = pp
        self.cfg = cfg
        self.level = collapse_level(pp, cfg.collapse_frac)
        self.count = 0
        self.steps = 0
        # lowest-gradient sign-changing state met by any probe
        self.track_sign_changing = False
        self.best_sign_changing = (math.inf, None)

    def __call__(self, u0: np.ndarray, energy_exit: bool = True, steps: int | None = None) -> _Probe:
        pp, cfg = self.pp, self.cfg
        level = self.level
        if self.count >= cfg.max_probes:
            raise _OutOfProbes()

        def monitor(state):
            if self.track_sign_changing and state.grad_norm < self.best_sign_changing[0]:
                if classify(pp.grid, state.u, cfg.part_tol) is Classification.SIGN_CHANGING:
                    self.best_sign_changing = (state.grad_norm, state.u.copy())
            if np.abs(state.u).max() <= level:
                return "collapsed"
            # the basin of 0 lies in {I >= 0}, so negative energy means out
            if energy_exit and state.energy < 0:
                return "escaped"
            if np.abs(state.u).max() > cfg.escape_norm:
                return "escaped"
            return None

        rep = flow_to_critical(
            pp, u0, step_policy=cfg.flow,
            max_steps=cfg.probe_steps if steps is None else steps, monitor=monitor,
        )
        self.count += 1
        self.steps += rep.iterations
        cls = classify(pp.grid, rep.field, cfg.part_tol)
        if rep.reason == "converged":
            trivial = cls is Classification.TRIVIAL or pp.eps_norm(rep.field) < cfg.rho0
            return _Probe("in" if trivial else "critical", rep, cls)
        if rep.reason == "collapsed":
            return _Probe("in", rep, cls)
        if rep.reason in ("escaped", "diverged"):
            return _Probe("out", rep, cls)
        # undecided within the budget: compare against the lingering state
        if rep.best_field is not None and pp.eps_norm(rep.field) < pp.eps_norm(rep.best_field):
            return _Probe("in", rep, cls)
        return _Probe("out", rep, cls)


@dataclass
class _Edge:
    """Result of edge tracking along one family of seeds."""

    field: np.ndarray | None
    grad_norm: float
    report: CriticalPointReport | None
    classification: Classification | None
    converged: bool
    bracket: tuple | None = None
    note: str = ""


def _bracket_ray(prober, base, t, expand_limit, energy_exit=True):
    """Find ``lo < hi`` with ``lo·base`` collapsing and ``hi·base`` leaving."""
    first = prober(t * base, energy_exit)
    if first.outcome == "critical":
        return None, first
    lo = hi = None
    if first.outcome == "in":
        lo = t
        for _ in range(expand_limit):
            t *= 2.0
            res = prober(t * base, energy_exit)
            if res.outcome == "critical":
                return None, res
            if res.outcome == "out":
                hi = t
                break
            lo = t
    else:
        hi = t
        for _ in range(expand_limit):
            t *= 0.5
            res = prober(t * base, energy_exit)
            if res.outcome == "critical":
                return None, res
            if res.outcome == "in":
                lo = t
                break
            hi = t
    if lo is None or hi is None:
        return None, first
    return (lo, hi), None


def _keep_best(best, rep: CriticalPointReport):
    if rep.min_grad is not None and rep.min_grad[0] < best[0]:
        return (rep.min_grad[0], rep.best_field, rep)
    return best


def edge_track(
    pp: PenaltyProblem, base: np.ndarray, lo: float, hi: float, cfg: SearchConfig,
    prober: _Prober | None = None, rounds: int | None = None,
) -> _Edge:
    """Track the boundary of the basin of 0 starting from the ray bracket.

    ``lo·base`` must collapse and ``hi·base`` must leave.  Returns as soon as a
    probe converges to a nontrivial critical point, or when the best
    lingering state has gradient norm below tolerance.
    """
    prober = prober or _Prober(pp, cfg)
    best = (math.inf, None, None)
    initial = (lo, hi)
    for rnd in range(cfg.edge_rounds if rounds is None else rounds):
        for _ in range(cfg.bisection_depth):
            if hi - lo <= 4e-16 * hi:
                break
            mid = 0.5 * (lo + hi)
            res = prober(mid * base)
            best = _keep_best(best, res.report)
            if res.outcome == "critical":
                return _Edge(res.report.field, res.report.grad_norm, res.report,
                             res.classification, True, initial, f"round {rnd}")
            if res.outcome == "in":
                lo = mid
            else:
                hi = mid
        if best[0] <= cfg.tol:
            return _finish(pp, cfg, best, initial, f"edge state, round {rnd}")
        # restart from the lingering state, scaling it about 1
        base = best[1].copy()
        bracket = _local_bracket(prober, base)
        if bracket is None:
            break
        lo, hi = bracket
    return _finish(pp, cfg, best, initial, "budget")


def _local_bracket(prober, base, start=1e-9, limit=40):
    lo = hi = None
    step = start
    for _ in range(limit):
        if prober(max(1.0 - step, 0.0) * base).outcome == "in":
            lo = max(1.0 - step, 0.0)
            break
        step *= 4.0
    step = start
    for _ in range(limit):
        if prober((1.0 + step) * base).outcome != "in":
            hi = 1.0 + step
            break
        step *= 4.0
    if lo is None or hi is None:
        return None
    return lo, hi


def _finish(pp, cfg, best, bracket, note) -> _Edge:
    grad, state, _ = best
    if state is None:
        return _Edge(None, math.inf, None, None, False, bracket, note)
    cls = classify(pp.grid, state, cfg.part_tol)
    rep = CriticalPointReport(
        field=state.copy(), grad_norm=float(grad), energy=pp.energy(state),
        iterations=0, reason="converged" if grad <= cfg.tol else "edge_budget",
    )
    return _Edge(state, float(grad), rep, cls, grad <= cfg.tol, bracket, note)


# -- cone searches -----------------------------------------------------------


def _slot(label, cls_expected, edge_or_rep, pp, cfg, diagnostics) -> SlotReport:
    rep = edge_or_rep
    if rep is None:
        return SlotReport(label, False, None, None, "no-critical-point", diagnostics=diagnostics)
    cls = classify(pp.grid, rep.field, cfg.part_tol)
    norms = part_norms(pp.grid, rep.field)
    if cls is Classification.TRIVIAL or pp.eps_norm(rep.field) < cfg.rho0:
        return SlotReport(label, False, cls, rep, "trivial-endpoint", norms, diagnostics)
    if rep.grad_norm > cfg.tol:
        return SlotReport(label, False, cls, rep, "budget-exhausted", norms, diagnostics)
    if cls is not cls_expected:
        return SlotReport(label, False, cls, rep, "classification-mismatch", norms, diagnostics)
    return SlotReport(label, True, cls, rep, "", norms, diagnostics)


def _cone_search(pp, cfg, sign, label) -> SlotReport:
    sign *= cfg.seed_sign
    expected = Classification.POSITIVE if sign > 0 else Classification.NEGATIVE
    phi1 = eigenpairs(pp.grid, 1)[0].field
    base = sign * phi1
    prober = _Prober(pp, cfg)
    diag = {"t0": cfg.t0, "collapse_level": prober.level}
    if cfg.t0 == 0:
        rep = flow_to_critical(pp, np.zeros(pp.grid.size), step_policy=cfg.flow)
        return _slot(label, expected, rep, pp, cfg, diag)
    # growth phase: follow each seed to its fate without the energy exit, so
    # that a stable nontrivial state inside the cone is accepted directly
    try:
        bracket, hit = _bracket_ray(prober, base, cfg.t0, cfg.expand_limit, energy_exit=False)
        if hit is None:
            edge = edge_track(pp, base, bracket[0], bracket[1], cfg, prober)
    except _OutOfProbes:
        diag.update(probes=prober.count, steps=prober.steps, route="edge")
        return SlotReport(label, False, None, None, "budget-exhausted", diagnostics=diag)
    if hit is not None:
        diag.update(probes=prober.count, steps=prober.steps, route="direct")
        if hit.outcome == "critical":
            return _slot(label, expected, hit.report, pp, cfg, diag)
        diag["first_outcome"] = hit.outcome
        return SlotReport(label, False, hit.classification, hit.report, "no-bracket",
                          part_norms(pp.grid, hit.report.field), diag)
    diag.update(probes=prober.count, steps=prober.steps, route="edge",
                bracket=list(bracket), note=edge.note)
    return _slot(label, expected, edge.report, pp, cfg, diag)


def find_positive(pp: PenaltyProblem, cfg: SearchConfig | None = None) -> SlotReport:
    """Positive critical point reached from seeds ``t·φ₁``, ``t >= t0``."""
    return _cone_search(pp, cfg or SearchConfig(), 1.0, "positive")


def find_negative(pp: PenaltyProblem, cfg: SearchConfig | None = None) -> SlotReport:
    """Negative critical point reached from seeds ``-t·φ₁``."""
    return _cone_search(pp, cfg or SearchConfig(), -1.0, "negative")


# -- sign-changing search ----------------------------------------------------


def resolve_r_seed(pp: PenaltyProblem, cfg: SearchConfig) -> tuple[float, dict]:
    if cfg.r_seed is not None:
        return cfg.r_seed, {"r_seed_source": "configured"}
    if cfg.r1 is not None:
        rep = check_h5(pp.grid, pp.nonlinearity, pp.model.obstacle, cfg.r1)
        if rep.passed:
            return cfg.r1, {"r_seed_source": "r1", "h5": rep.to_dict()}
        warnings.warn(f"H5 check failed at r1={cfg.r1:g}; seeding at radius 1.0", stacklevel=3)
        return 1.0, {"r_seed_source": "default", "h5": rep.to_dict()}
    warnings.warn("no r1 configured; seeding at radius 1.0", stacklevel=3)
    return 1.0, {"r_seed_source": "default"}


class _RayTracker:
    """Edge tracking along rays ``r·d(angle)`` for a family of directions."""

    def __init__(self, pp, cfg, prober, direction, radius, rounds=None):
        self.pp, self.cfg, self.prober = pp, cfg, prober
        self.direction = direction
        self.radius = radius
        self.rounds = rounds
        self.cache = {}

    def __call__(self, angle) -> _Edge:
        if angle in self.cache:
            return self.cache[angle]
        d = self.direction(angle)
        bracket, hit = _bracket_ray(self.prober, d, self.radius, self.cfg.expand_limit)
        if hit is not None:
            if hit.outcome == "critical":
                rep = hit.report
                edge = _Edge(rep.field, rep.grad_norm, rep, hit.classification, True, None,
                             "direct")
            else:
                label = "all-in" if hit.outcome == "in" else "all-out"
                edge = _Edge(None, math.inf, None, None, False, None, label)
        else:
            edge = edge_track(self.pp, d, bracket[0], bracket[1], self.cfg, self.prober,
                              rounds=self.rounds)
        self.cache[angle] = edge
        return edge


def _unit_circle(theta):
    # exact zeros on the axes keep seeds in symmetry subspaces
    c, s = math.cos(theta), math.sin(theta)
    return (0.0 if abs(c) < 1e-15 else c), (0.0 if abs(s) < 1e-15 else s)


def _plane_direction(e1, e2):
    def direction(theta):
        c, s = _unit_circle(theta)
        return c * e1 + s * e2
    return direction


def _edge_class(edge: _Edge):
    if edge.field is None:
        return None
    return edge.classification


def _parts_basis(grid, z):
    plus, minus = positive_part(z), negative_part(z)
    return plus / h1_norm(grid, plus), minus / h1_norm(grid, minus)


def find_sign_changing(pp: PenaltyProblem, cfg: SearchConfig | None = None) -> SlotReport:
    """Sign-changing critical point on the boundary between the cone basins.

    When the probe budget runs out the best sign-changing state seen so far
    is returned uncertified, or nothing if there is none.
    """
    cfg = cfg or SearchConfig()
    radius, diag = resolve_r_seed(pp, cfg)
    prober = _Prober(pp, cfg)
    try:
        return _sign_changing_search(pp, cfg, prober, radius, diag)
    except _OutOfProbes:
        return _best_candidate(pp, cfg, prober, diag, "probe budget")


def _best_candidate(pp, cfg, prober, diag, route):
    grad, z = prober.best_sign_changing
    diag.update(probes=prober.count, steps=prober.steps)
    if z is None:
        return SlotReport("sign_changing", False, None, None, "budget-exhausted",
                          diagnostics=diag)
    best = _finish(pp, cfg, (grad, z, None), None, "best sign-changing state")
    diag["route"] = route
    return _slot("sign_changing", Classification.SIGN_CHANGING, best.report, pp, cfg, diag)


def _sign_changing_search(pp, cfg, prober, radius, diag):
    grid = pp.grid
    e1, e2 = (cfg.seed_sign * e for e in y_plane_basis(grid))
    tracker = _RayTracker(
        pp, cfg, prober, _plane_direction(e1, e2), radius
    )
    thetas = [2.0 * math.pi * j / cfg.n_theta for j in range(cfg.n_theta)]
    edges = _map(tracker, thetas)
    classes = [_edge_class(e) for e in edges]
    diag.update(r_seed=radius, mesh=[
        {"theta": th, "class": None if c is None else c.value, "grad_norm": e.grad_norm,
         "note": e.note}
        for th, c, e in zip(thetas, classes, edges)
    ])

    def done(edge, extra):
        diag.update(extra, probes=prober.count, steps=prober.steps)
        return _slot("sign_changing", Classification.SIGN_CHANGING, edge.report, pp, cfg, diag)

    hits = [e for e, c in zip(edges, classes) if c is Classification.SIGN_CHANGING and e.converged]
    if hits:
        best = min(hits, key=lambda e: e.grad_norm)
        return done(best, {"route": "mesh", "bracket": None})

    pairs = []
    for j in range(cfg.n_theta):
        k = (j + 1) % cfg.n_theta
        ends = {classes[j], classes[k]}
        if ends == {Classification.POSITIVE, Classification.NEGATIVE}:
            upper = thetas[k] if k else 2.0 * math.pi
            pairs.append((thetas[j], upper, classes[j], classes[k]))
    if not pairs:
        diag.update(probes=prober.count, steps=prober.steps)
        seen = {None if c is None else c.value for c in classes}
        reason = "all-one-basin" if len(seen) <= 1 else "no-bracket"
        return SlotReport("sign_changing", False, None, None, reason, diagnostics=diag)

    prober.track_sign_changing = True
    bracket_info = None
    for a, b, ca, cb in pairs:
        edge, bracket = _bisect_angle(tracker, a, b, ca, cb, cfg, 1e-12)
        info = {
            "theta": list(bracket), "width": bracket[1] - bracket[0],
            "classes": [ca.value, cb.value],
        }
        if edge is not None:
            return done(edge, {"route": "angle", "bracket": info})
        if bracket_info is None or prober.best_sign_changing[1] is not None:
            bracket_info = info
        if prober.best_sign_changing[1] is not None:
            break

    for rnd in range(cfg.edge_rounds):
        grad, z = prober.best_sign_changing
        if z is None:
            break
        if grad <= cfg.tol:
            best = _finish(pp, cfg, (grad, z, None), None, "sign-changing edge state")
            return done(best, {"route": f"parts-plane round {rnd}", "bracket": bracket_info})
        edge = _refine_in_parts_plane(pp, cfg, prober, z)
        if edge is not None:
            return done(edge, {"route": f"parts-plane round {rnd}", "bracket": bracket_info})
        if prober.best_sign_changing[0] >= grad:
            break
    diag["bracket"] = bracket_info
    return _best_candidate(pp, cfg, prober, diag, "best-candidate")


def _bisect_angle(tracker, a, b, cls_a, cls_b, cfg, tol_angle):
    """Bisect angles between edges of class ``cls_a`` at ``a`` and ``cls_b`` at ``b``.

    Returns a converged sign-changing edge if one turns up, and the final
    angle bracket.
    """
    for _ in range(cfg.bisection_depth):
        if abs(b - a) <= tol_angle:
            break
        mid = 0.5 * (a + b)
        edge = tracker(mid)
        cls = _edge_class(edge)
        if cls is Classification.SIGN_CHANGING and edge.converged:
            return edge, (a, b)
        if cls is cls_a:
            a = mid
        elif cls is cls_b:
            b = mid
        else:
            break
    return None, (a, b)


def _refine_in_parts_plane(pp, cfg, prober, z):
    """Angular bisection in span{z⁺, z⁻} around the direction of ``z``.

    Returns a converged sign-changing edge, or ``None`` after updating the
    prober's best sign-changing state.
    """
    grid = pp.grid
    a_hat, b_hat = _parts_basis(grid, z)
    norm = h1_norm(grid, z)
    centre = math.atan2(h1_norm(grid, negative_part(z)), h1_norm(grid, positive_part(z)))

    def direction(th):
        d = math.cos(th) * a_hat - math.sin(th) * b_hat
        return d / h1_norm(grid, d)

    tracker = _RayTracker(pp, cfg, prober, direction, norm)
    centre_edge = tracker(centre)
    if centre_edge.converged and _edge_class(centre_edge) is Classification.SIGN_CHANGING:
        return centre_edge
    # small angles lean positive, large angles lean negative
    step = 1e-9
    lo = hi = None
    while step < 0.5 * math.pi:
        if lo is None:
            cls = _edge_class(tracker(max(centre - step, 0.0)))
            if cls is Classification.POSITIVE:
                lo = max(centre - step, 0.0)
        if hi is None:
            cls = _edge_class(tracker(min(centre + step, 0.5 * math.pi)))
            if cls is Classification.NEGATIVE:
                hi = min(centre + step, 0.5 * math.pi)
        if lo is not None and hi is not None:
            break
        step *= 8.0
    if lo is None or hi is None:
        return None
    edge, _ = _bisect_angle(tracker, lo, hi, Classification.POSITIVE,
                            Classification.NEGATIVE, cfg, 1e-15)
    return edge


# -- all three ---------------------------------------------------------------


def solve_triple(pp: PenaltyProblem, cfg: SearchConfig | None = None) -> TripleReport:
    """Run the three searches and check the solutions are pairwise distinct."""
    cfg = cfg or SearchConfig()
    slots = _map(lambda fn: fn(pp, cfg), [find_positive, find_negative, find_sign_changing])
    report = TripleReport(*slots, distinct_threshold=cfg.distinct_factor * cfg.tol)
    found = {k: s for k, s in report.slots.items() if s.found}
    names = sorted(found)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            dist = h1_norm(pp.grid, found[a].field - found[b].field)
            report.distances[f"{a}/{b}"] = dist
            if dist < report.distinct_threshold:
                report.distinct = False
    return report

"""Descending flow ``du/dt = A_ε u - u`` and classification of its endpoints.

Each step is exponential Euler with ``A_ε u`` frozen over the step,

    u⁺ = e^{-h} u + (1 - e^{-h}) A_ε u,

a convex combination of two fields.  Whenever ``A_ε`` maps the nonnegative
cone into itself, so does every step, whatever its size.  Steps are
accepted only if the energy does not go up by more than ``ENERGY_SLACK``.
"""

from __future__ import annotations

import collections
import csv
import enum
import logging
import math
from dataclasses import dataclass, replace
from dataclasses import field as dc_field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, NumericalError
from .grid import Grid, _finite, check_field, h1_norm, negative_part, positive_part
from .penalty import PenaltyProblem

log = logging.getLogger(__name__)

__all__ = [
    "ENERGY_SLACK",
    "FlowParams",
    "FlowState",
    "CriticalPointReport",
    "Classification",
    "flow_step",
    "flow_to_critical",
    "classify",
    "part_norms",
]

# largest energy increase tolerated on an accepted step
ENERGY_SLACK = 1e-12


@dataclass(frozen=True)
class FlowParams:
    """Step-size policy and termination settings for :func:`flow_to_critical`."""

    h_init: float = 0.1
    h_min: float = 1e-6
    h_max: float = 1.0
    grow: float = 1.2
    shrink: float = 0.5
    tol: float = 1e-8
    max_steps: int = 100_000
    patience: int = 50
    history: int = 1000
    # an iterate with ‖u‖_ε above this is treated as escaping to infinity
    divergence_norm: float = 1e12

    def __post_init__(self):
        if not (0 < self.h_min <= self.h_init <= self.h_max):
            raise ConfigurationError("need 0 < h_min <= h_init <= h_max")
        if not (self.grow >= 1 and 0 < self.shrink < 1):
            raise ConfigurationError("need grow >= 1 and 0 < shrink < 1")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.max_steps < 0 or self.patience < 1 or self.history < 1:
            raise ConfigurationError("max_steps >= 0, patience >= 1, history >= 1")

    def with_(self, **kw) -> "FlowParams":
        return replace(self, **kw)


@dataclass
class FlowState:
    """Mutable state of a running flow; ``history`` holds (energy, grad_norm)."""

    u: np.ndarray
    steps: int
    h_step: float
    energy: float
    grad_norm: float
    grad: np.ndarray = dc_field(repr=False, default=None)
    history: collections.deque = dc_field(repr=False, default=None)
    accepted: int = 0
    rejected: int = 0


@dataclass
class CriticalPointReport:
    """Endpoint of a flow run.

    ``reason`` is one of ``converged``, ``max_steps``, ``stagnated``,
    ``diverged`` or a label returned by a monitor callback that stopped the
    run early.  ``energy_drops`` lists ``I(u_{k+1}) - I(u_k)`` for every
    accepted step, computed from differences.
    """

    field: np.ndarray = dc_field(repr=False)
    grad_norm: float
    energy: float
    iterations: int
    reason: str
    initial_energy: float = float("nan")
    energy_drops: list = dc_field(default_factory=list, repr=False)
    min_value_trace: list = dc_field(default_factory=list, repr=False)
    max_value_trace: list = dc_field(default_factory=list, repr=False)
    # smallest gradient norm seen, its step index and the iterate itself
    min_grad: tuple | None = dc_field(default=None, repr=False)
    best_field: np.ndarray | None = dc_field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.reason == "converged"

    @property
    def max_energy_increase(self) -> float:
        return max(self.energy_drops, default=-math.inf)


def flow_step(pp: PenaltyProblem, u, h_step: float, au: np.ndarray | None = None) -> np.ndarray:
    """One exponential Euler step of size ``h_step``."""
    if not h_step > 0:
        raise ConfigurationError(f"step size must be positive, got {h_step}")
    u = check_field(pp.grid, u)
    if au is None:
        au = pp.a_eps(u)
    keep = math.exp(-h_step)
    return _finite(keep * u + (1.0 - keep) * au, "flow step")


def flow_to_critical(
    pp: PenaltyProblem,
    u0,
    tol: float | None = None,
    max_steps: int | None = None,
    step_policy: FlowParams | None = None,
    monitor: Callable[[FlowState], str | None] | None = None,
    trace_path=None,
    record_extrema: bool = False,
) -> CriticalPointReport:
    """Flow from ``u0`` until the ε-gradient norm drops below ``tol``.

    The run also stops at ``max_steps``, when the step size sits at
    ``h_min`` without an accepted energy decrease for ``patience`` attempts
    (``stagnated``), when the iterate blows up (``diverged``), or when
    ``monitor`` returns a non-empty string, which becomes the reason.
    """
    params = step_policy or FlowParams()
    tol = params.tol if tol is None else tol
    max_steps = params.max_steps if max_steps is None else max_steps
    if not tol > 0:
        raise ConfigurationError("tol must be positive")

    u = check_field(pp.grid, u0).copy()
    au = pp.a_eps(u)
    grad = u - au
    state = FlowState(
        u=u, steps=0, h_step=params.h_init, energy=pp.energy(u),
        grad_norm=pp.eps_norm(grad), grad=grad,
        history=collections.deque(maxlen=params.history),
    )
    state.history.append((state.energy, state.grad_norm))
    report_kw = dict(initial_energy=state.energy)
    drops: list[float] = []
    min_trace: list[float] = []
    max_trace: list[float] = []
    best = (state.grad_norm, 0, u.copy())

    writer = None
    trace_file = None
    if trace_path is not None:
        trace_file = open(trace_path, "w", newline="")
        writer = csv.writer(trace_file)
        writer.writerow(["step", "h_step", "energy", "grad_norm"])
        writer.writerow([0, repr(state.h_step), repr(state.energy), repr(state.grad_norm)])

    reason = None
    stall = 0
    try:
        while True:
            if state.grad_norm <= tol:
                reason = "converged"
                break
            if state.steps >= max_steps:
                reason = "max_steps"
                break
            if monitor is not None:
                label = monitor(state)
                if label:
                    reason = label
                    break
            state.steps += 1
            candidate = flow_step(pp, state.u, state.h_step, au)
            change = pp.energy_change(state.u, candidate)
            if change <= ENERGY_SLACK:
                new_au = pp.a_eps(candidate)
                new_grad = candidate - new_au
                state.u, au, state.grad = candidate, new_au, new_grad
                state.energy += change
                state.grad_norm = pp.eps_norm(new_grad)
                state.accepted += 1
                drops.append(change)
                if record_extrema:
                    min_trace.append(float(candidate.min()))
                    max_trace.append(float(candidate.max()))
                state.history.append((state.energy, state.grad_norm))
                if state.grad_norm < best[0]:
                    best = (state.grad_norm, state.steps, candidate)
                # progress means a decrease that is not lost in rounding
                if change < -1e-15 * max(1.0, abs(state.energy)) or state.h_step > params.h_min:
                    stall = 0
                else:
                    stall += 1
                state.h_step = min(state.h_step * params.grow, params.h_max)
                if writer is not None:
                    writer.writerow([state.steps, repr(state.h_step), repr(state.energy),
                                     repr(state.grad_norm)])
                if pp.eps_norm(candidate) > params.divergence_norm:
                    reason = "diverged"
                    break
            else:
                state.rejected += 1
                if state.h_step <= params.h_min:
                    stall += 1
                state.h_step = max(state.h_step * params.shrink, params.h_min)
            if stall >= params.patience:
                reason = "stagnated"
                break
    except NumericalError:
        reason = "diverged"
    finally:
        if trace_file is not None:
            trace_file.close()

    if reason == "diverged":
        log.debug("flow diverged after %d steps", state.steps)
    return CriticalPointReport(
        field=state.u, grad_norm=state.grad_norm, energy=_safe_energy(pp, state),
        iterations=state.steps, reason=reason, energy_drops=drops,
        min_value_trace=min_trace, max_value_trace=max_trace,
        min_grad=(best[0], best[1]), best_field=best[2], **report_kw,
    )


def _safe_energy(pp, state):
    try:
        return pp.energy(state.u)
    except NumericalError:
        return state.energy


class Classification(str, enum.Enum):
    TRIVIAL = "trivial"
    POSITIVE = "positive"
    NEGATIVE = "negative"
    SIGN_CHANGING = "sign_changing"


def part_norms(grid: Grid, u) -> tuple[float, float]:
    """H¹ norms of the nodal truncations ``u⁺`` and ``u⁻``."""
    u = check_field(grid, u)
    return h1_norm(grid, positive_part(u)), h1_norm(grid, negative_part(u))


def classify(grid: Grid, u, part_tol: float) -> Classification:
    if part_tol < 0:
        raise ConfigurationError("part_tol must be nonnegative")
    plus, minus = part_norms(grid, u)
    if plus <= part_tol and minus <= part_tol:
        return Classification.TRIVIAL
    if minus <= part_tol:
        return Classification.POSITIVE
    if plus <= part_tol:
        return Classification.NEGATIVE
    return Classification.SIGN_CHANGING

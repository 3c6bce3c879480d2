"""Nonlinearities p(x, ξ), their primitives, obstacles, and hypothesis checks.

Evaluators take ``x`` as an ``(N, d)`` array of points and ``xi`` as an
``(N,)`` array and must be pure.  The bundled nonlinearities are autonomous
except :func:`model_weighted_power`.

Hypotheses are checked by sampling only.  A passing report means no
counterexample was found among the sampled points, nothing more.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.integrate
import scipy.optimize

from .errors import ConfigurationError
from .grid import Grid, eigenpairs, h1_norm

log = logging.getLogger(__name__)

__all__ = [
    "Nonlinearity",
    "Obstacle",
    "Model",
    "GrowthCheckParams",
    "HypothesisResult",
    "HypothesisReport",
    "H5Report",
    "model_power",
    "model_weighted_power",
    "model_linear",
    "model_negative_cubic",
    "constant_obstacle",
    "tent_obstacle",
    "two_bump_obstacle",
    "make_nonlinearity",
    "make_obstacle",
    "check_hypotheses",
    "check_h5",
    "suggest_r1",
    "y_plane_basis",
]

# 5-point Gauss-Legendre rule on [0, 1]
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


@dataclass(frozen=True)
class Nonlinearity:
    """The right-hand side p(x, ξ) together with its growth data.

    ``s`` is the growth exponent, ``a1, a2`` bound ``|p| <= a1 + a2|ξ|^s``,
    ``a3, a4`` bound ``P >= a3|ξ|^{s+1} - a4`` and ``r`` is the radius beyond
    which the superlinearity condition ``0 < (s+1)P <= ξp`` holds.
    """

    name: str
    p: Callable[[np.ndarray, np.ndarray], np.ndarray]
    P: Callable[[np.ndarray, np.ndarray], np.ndarray] | None
    s: float
    a1: float = 0.0
    a2: float = 1.0
    a3: float = 0.0
    a4: float = 0.0
    r: float = 1.0
    params: dict = field(default_factory=dict)

    def __call__(self, x, xi):
        return self.p(x, xi)

    def primitive(self, x, xi) -> np.ndarray:
        """P(x, ξ) = ∫₀^ξ p(x, t) dt, by quadrature when no closed form exists."""
        xi = np.asarray(xi, dtype=float)
        if self.P is not None:
            return self.P(x, xi)
        x = np.atleast_2d(x)
        out = np.empty_like(xi)
        for i, v in enumerate(xi):
            xx = x[min(i, len(x) - 1)][None, :]
            out[i] = scipy.integrate.quad(
                lambda t: float(self.p(xx, np.array([t]))[0]), 0.0, v,
                epsabs=0.0, epsrel=1e-12, limit=200,
            )[0]
        return out

    def primitive_increment(self, x, a, b) -> np.ndarray:
        """P(x, b) - P(x, a) without catastrophic cancellation when b ≈ a."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        d = b - a
        close = (a * b > 0) & (np.abs(d) <= 0.1 * np.minimum(np.abs(a), np.abs(b)))
        out = np.empty_like(a)
        if close.any():
            xs = x[close] if np.ndim(x) == 2 and len(x) == len(a) else x
            ac, dc = a[close], d[close]
            acc = np.zeros_like(ac)
            for t, wt in zip(_GL_NODES, _GL_WEIGHTS):
                acc += wt * self.p(xs, ac + t * dc)
            out[close] = acc * dc
        far = ~close
        if far.any():
            xs = x[far] if np.ndim(x) == 2 and len(x) == len(a) else x
            out[far] = self.primitive(xs, b[far]) - self.primitive(xs, a[far])
        return out

    def describe(self) -> dict:
        return {"name": self.name, **self.params}


def _power_p(s):
    def p(x, xi):
        xi = np.asarray(xi, dtype=float)
        return np.abs(xi) ** (s - 1.0) * xi
    return p


def _power_P(s):
    def P(x, xi):
        return np.abs(np.asarray(xi, dtype=float)) ** (s + 1.0) / (s + 1.0)
    return P


def model_power(s: float, strict: bool = False, r: float = 1.0) -> Nonlinearity:
    """p(ξ) = |ξ|^{s-1}ξ, P(ξ) = |ξ|^{s+1}/(s+1); satisfies (s+1)P = ξp exactly."""
    if not 1.0 < s < 2.0:
        msg = f"growth exponent s={s} outside (1, 2)"
        if strict:
            raise ConfigurationError(msg)
        warnings.warn(msg, stacklevel=2)
    if s <= 0:
        raise ConfigurationError(f"s must be positive, got {s}")
    return Nonlinearity(
        "power", _power_p(s), _power_P(s), s,
        a1=0.0, a2=1.0, a3=1.0 / (s + 1.0), a4=0.0, r=r,
        params={"s": s},
    )


def model_weighted_power(
    s: float, coefficient: Callable[..., np.ndarray], c_min: float, c_max: float,
    r: float = 1.0,
) -> Nonlinearity:
    """p(x, ξ) = c(x)|ξ|^{s-1}ξ with ``0 < c_min <= c(x) <= c_max``."""
    if not 0 < c_min <= c_max:
        raise ConfigurationError("need 0 < c_min <= c_max")
    base_p, base_P = _power_p(s), _power_P(s)

    def weight(x):
        x = np.atleast_2d(x)
        return np.asarray(coefficient(*x.T), dtype=float)

    return Nonlinearity(
        "weighted_power",
        lambda x, xi: weight(x) * base_p(x, xi),
        lambda x, xi: weight(x) * base_P(x, xi),
        s, a1=0.0, a2=c_max, a3=c_min / (s + 1.0), a4=0.0, r=r,
        params={"s": s, "c_min": c_min, "c_max": c_max},
    )


def model_linear() -> Nonlinearity:
    """p(ξ) = ξ.  Violates the o(|ξ|) condition at the origin."""
    return Nonlinearity(
        "linear", lambda x, xi: np.asarray(xi, dtype=float),
        lambda x, xi: 0.5 * np.asarray(xi, dtype=float) ** 2,
        s=1.5, a1=1.0, a2=1.0, a3=0.0, a4=0.0, r=1.0,
    )


def model_negative_cubic() -> Nonlinearity:
    """p(ξ) = -ξ³.  Violates the sign condition ξp > 0."""
    return Nonlinearity(
        "negative_cubic", lambda x, xi: -np.asarray(xi, dtype=float) ** 3,
        lambda x, xi: -0.25 * np.asarray(xi, dtype=float) ** 4,
        s=3.0, a1=0.0, a2=1.0, a3=0.0, a4=0.0, r=1.0,
    )


# -- obstacles ---------------------------------------------------------------


@dataclass(frozen=True)
class Obstacle:
    """Nodal obstacle values plus the boundary trace implied by its formula.

    Homogeneous Dirichlet data forces a zero trace on admissible functions,
    so a nonzero ``boundary_value`` is recorded in ``zero_trace`` rather than
    corrected.
    """

    values: np.ndarray = field(repr=False)
    name: str = "custom"
    boundary_value: float = 0.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ConfigurationError("obstacle values must be finite")
        object.__setattr__(self, "values", vals)
        if self.boundary_value < 0:
            warnings.warn(
                f"obstacle {self.name!r} is negative on the boundary",
                stacklevel=3,
            )
        if self.boundary_value != 0:
            log.debug("obstacle %s has nonzero boundary trace %g", self.name,
                      self.boundary_value)

    @property
    def boundary_nonnegative(self) -> bool:
        return self.boundary_value >= 0

    @property
    def zero_trace(self) -> bool:
        return self.boundary_value == 0

    @property
    def nonnegative(self) -> bool:
        return bool(np.all(self.values >= 0))

    def describe(self) -> dict:
        return {"name": self.name, **self.params}


def constant_obstacle(grid: Grid, level: float) -> Obstacle:
    return Obstacle(np.full(grid.size, float(level)), "constant", float(level),
                    {"level": float(level)})


def tent_obstacle(grid: Grid, height: float) -> Obstacle:
    """Product of 1D hat functions peaking at the domain center, zero trace."""
    vals = np.ones(grid.size)
    for axis, L in enumerate(grid.extents):
        t = grid.nodes[:, axis] / L
        vals *= 1.0 - np.abs(2.0 * t - 1.0)
    return Obstacle(height * vals, "tent", 0.0, {"height": float(height)})


def two_bump_obstacle(grid: Grid, high: float, low: float) -> Obstacle:
    """``high`` on the left half of the first axis, ``low`` on the right half."""
    t = grid.nodes[:, 0] / grid.extents[0]
    vals = np.where(t < 0.5, high, low).astype(float)
    return Obstacle(vals, "two_bump", min(high, low),
                    {"high": float(high), "low": float(low)})


@dataclass(frozen=True)
class Model:
    """A nonlinearity paired with an obstacle."""

    nonlinearity: Nonlinearity
    obstacle: Obstacle


def make_nonlinearity(name: str, **params) -> Nonlinearity:
    """Look up a bundled nonlinearity by its configuration name.

    ``weighted_power`` takes ``s``, ``c0`` and ``c1`` for the affine weight
    ``c(x) = c0 + c1·x₁`` together with bounds ``c_min``, ``c_max`` that
    must hold on the domain.
    """
    try:
        if name == "power":
            return model_power(params.pop("s", 1.5), strict=params.pop("strict", False),
                               **params)
        if name == "weighted_power":
            c0, c1 = float(params.pop("c0", 1.0)), float(params.pop("c1", 0.0))
            return model_weighted_power(
                params.pop("s", 1.5), lambda x1, *rest: c0 + c1 * x1,
                params.pop("c_min"), params.pop("c_max"), **params,
            )
    except (TypeError, KeyError) as exc:
        raise ConfigurationError(f"bad parameters for model {name!r}: {exc}") from None
    if name == "linear" and not params:
        return model_linear()
    if name == "negative_cubic" and not params:
        return model_negative_cubic()
    raise ConfigurationError(f"unknown model {name!r} with parameters {params}")


def make_obstacle(grid: Grid, name: str, **params) -> Obstacle:
    try:
        if name == "constant":
            return constant_obstacle(grid, params.pop("level"))
        if name == "tent":
            return tent_obstacle(grid, params.pop("height"))
        if name == "two_bump":
            return two_bump_obstacle(grid, params.pop("high"), params.pop("low"))
    except KeyError as exc:
        raise ConfigurationError(f"obstacle {name!r} needs parameter {exc}") from None
    finally:
        if params and name in ("constant", "tent", "two_bump"):
            raise ConfigurationError(f"unknown obstacle parameters {sorted(params)}")
    raise ConfigurationError(f"unknown obstacle {name!r}")


# -- hypothesis checks -------------------------------------------------------


@dataclass(frozen=True)
class GrowthCheckParams:
    """Sampling setup for :func:`check_hypotheses`.

    ``delta`` and ``c_delta`` are the constants of the bound
    ``|p| <= δ|ξ| + C_δ|ξ|^s``.
    """

    delta: float = 0.1
    c_delta: float = 2.0
    x_box: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    xi_box: tuple[float, float] = (-10.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        if not (self.delta > 0 and self.c_delta > 0):
            raise ConfigurationError("delta and c_delta must be positive")


@dataclass(frozen=True)
class HypothesisResult:
    passed: bool
    worst: float
    detail: str


@dataclass(frozen=True)
class HypothesisReport:
    model: dict
    sample_count: int
    results: dict[str, HypothesisResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "verification": f"sampled on {self.sample_count} points",
            "passed": self.passed,
            "results": {
                k: {"passed": v.passed, "worst": v.worst, "detail": v.detail}
                for k, v in self.results.items()
            },
        }


def check_hypotheses(
    nl: Nonlinearity, params: GrowthCheckParams | None = None, sample_count: int = 1000
) -> HypothesisReport:
    """Falsification test of the growth and sign hypotheses on a random sample."""
    if sample_count < 1:
        raise ConfigurationError("sample_count must be >= 1")
    params = params or GrowthCheckParams()
    rng = np.random.default_rng(params.seed)
    lo = np.array([b[0] for b in params.x_box])
    hi = np.array([b[1] for b in params.x_box])
    x = lo + (hi - lo) * rng.random((sample_count, len(params.x_box)))
    xi = rng.uniform(*params.xi_box, size=sample_count)
    xi[xi == 0] = 1.0
    s = nl.s
    p = nl.p(x, xi)
    P = nl.primitive(x, xi)
    ax = np.abs(xi)
    slack = 1e-12
    results = {}

    def record(key, margin, detail):
        # margin >= 0 everywhere means the inequality held on the sample
        worst = float(np.min(margin))
        results[key] = HypothesisResult(worst >= 0, worst, detail)

    bound = nl.a1 + nl.a2 * ax**s
    record("H1", bound * (1 + slack) + slack - np.abs(p),
           f"|p| <= {nl.a1:g} + {nl.a2:g}|ξ|^{s:g}")

    # |p(x, ξ)|/|ξ| along ξ = ±10^-k must shrink towards zero
    k = np.arange(1, 13)
    mesh = 10.0 ** (-k)
    x_small = np.repeat(x[:1], len(mesh), axis=0)
    ratios = np.maximum(
        np.abs(nl.p(x_small, mesh)) / mesh, np.abs(nl.p(x_small, -mesh)) / mesh
    )
    decaying = ratios[-1] <= 0.1 * ratios[0] and np.all(np.diff(ratios) <= 1e-12 * ratios[0])
    results["H2"] = HypothesisResult(
        bool(decaying), float(ratios[-1]),
        f"|p|/|ξ| on ξ=10^-1..10^-12: {ratios[0]:.3g} -> {ratios[-1]:.3g}",
    )

    record("H3", np.sign(xi * p) - 0.5, "ξ p(x, ξ) > 0 for ξ != 0")

    big = ax >= nl.r
    if big.any():
        lhs = (s + 1.0) * P[big]
        rhs = xi[big] * p[big]
        m1 = lhs
        m2 = rhs - lhs + slack * np.abs(rhs)
        margin = np.minimum(np.where(m1 > 0, 1.0, -1.0), m2)
        record("H4", margin, f"0 < (s+1)P <= ξp for |ξ| >= {nl.r:g}")
    else:
        results["H4"] = HypothesisResult(False, float("nan"),
                                         f"no samples with |ξ| >= {nl.r:g}")

    record("bound_P_below", P - (nl.a3 * ax ** (s + 1) - nl.a4) + slack * (1 + np.abs(P)),
           f"P >= {nl.a3:g}|ξ|^{s + 1:g} - {nl.a4:g}")
    record("bound_p_delta",
           params.delta * ax + params.c_delta * ax**s - np.abs(p) + slack * np.abs(p),
           f"|p| <= {params.delta:g}|ξ| + {params.c_delta:g}|ξ|^{s:g}")
    record("primitive_zero", -np.abs(nl.primitive(x, np.zeros(sample_count))),
           "P(x, 0) = 0")
    return HypothesisReport(nl.describe(), sample_count, results)


def y_plane_basis(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """First two Dirichlet eigenfields rescaled to unit H¹ norm."""
    pairs = eigenpairs(grid, 2)
    return tuple(pr.field / h1_norm(grid, pr.field) for pr in pairs)


@dataclass(frozen=True)
class H5Report:
    r1: float
    n_theta: int
    max_violation: float
    max_q: float

    @property
    def constraint_ok(self) -> bool:
        return self.max_violation <= 0

    @property
    def q_ok(self) -> bool:
        return self.max_q < 0

    @property
    def passed(self) -> bool:
        return self.constraint_ok and self.q_ok

    def to_dict(self) -> dict:
        return {
            "r1": self.r1, "n_theta": self.n_theta,
            "max_violation": self.max_violation, "max_q": self.max_q,
            "constraint_ok": self.constraint_ok, "q_ok": self.q_ok,
            "passed": self.passed,
            "verification": f"sampled on {self.n_theta} angles",
        }


def _q_value(grid, nl, u):
    return (
        0.5 * grid.cell_volume * float(u @ (grid.stiffness @ u))
        - nl.a3 * grid.cell_volume * float(np.sum(np.abs(u) ** (nl.s + 1)))
        + nl.a4 * grid.volume
    )


def check_h5(
    grid: Grid, nl: Nonlinearity, obstacle: Obstacle, r1: float,
    n_theta: int = 64, n_radial: int = 9,
) -> H5Report:
    """Sample the disk of radius ``r1`` in span{φ₁, φ₂} (H¹ metric).

    Reports the largest nodal excess ``u - ψ`` over the closed disk and the
    largest ``Q(u) = ½‖u‖² - a₃∫|u|^{s+1} + a₄|Ω|`` over its boundary circle.
    """
    if not r1 > 0:
        raise ConfigurationError("r1 must be positive")
    e1, e2 = y_plane_basis(grid)
    thetas = 2 * np.pi * np.arange(n_theta) / n_theta
    radii = np.linspace(0.0, r1, n_radial)
    max_violation = -np.inf
    max_q = -np.inf
    for th in thetas:
        d = np.cos(th) * e1 + np.sin(th) * e2
        for rad in radii:
            max_violation = max(max_violation, float(np.max(rad * d - obstacle.values)))
        max_q = max(max_q, _q_value(grid, nl, r1 * d))
    return H5Report(float(r1), n_theta, max_violation, max_q)


def suggest_r1(
    grid: Grid, nl: Nonlinearity, n_theta: int = 64, margin: float = 1.05
) -> float:
    """Smallest radius (times ``margin``) with Q < 0 at every sampled angle.

    Q along a ray is positive near the origin, rises and then falls for
    good, so doubling from a tiny radius brackets its single sign change.
    """
    e1, e2 = y_plane_basis(grid)
    worst = 0.0
    for th in 2 * np.pi * np.arange(n_theta) / n_theta:
        d = np.cos(th) * e1 + np.sin(th) * e2
        q = lambda rad: _q_value(grid, nl, rad * d)  # noqa: E731
        hi = 1e-8
        while q(hi) >= 0:
            hi *= 2.0
            if hi > 1e12:
                return math.inf
        root = scipy.optimize.brentq(q, 0.5 * hi, hi, xtol=1e-14, rtol=1e-12)
        worst = max(worst, root)
    return margin * worst

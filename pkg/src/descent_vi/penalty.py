"""The penalized obstacle problem at a fixed penalty parameter ε.

Solutions of ``-Δu + (u - ψ)⁺/ε = p(x, u)`` are critical points of

    I_ε(u) = ½‖u‖² + (1/2ε) ∫((u - ψ)⁺)² - ∫P(x, u)

and fixed points of ``A_ε = K_ε F_ε`` with ``K_ε = (-Δ_h + I/ε)⁻¹`` and
``F_ε u = p(x, u) + u/ε - (u - ψ)⁺/ε``.  The gradient of ``I_ε`` in the
``‖·‖_ε`` metric, ``‖u‖_ε² = ‖u‖² + |u|₂²/ε``, is ``u - A_ε u``.

Sign preservation is exact in floating point: ``F_ε`` is evaluated as
``p(x, u) + min(u, ψ)/ε`` and ``K_ε`` is applied through a factorization of
the M-matrix whose triangular sweeps only ever add nonnegative terms.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, NumericalError
from .grid import Grid, _finite, check_field
from .model import Model

log = logging.getLogger(__name__)

__all__ = ["PenaltyProblem"]

# relative residual accepted for the stored factorization
FACTOR_RESIDUAL_TOL = 1e-12


class _BandedSolver:
    """Banded Cholesky of a symmetric tridiagonal matrix."""

    def __init__(self, matrix: sp.spmatrix):
        diag = matrix.diagonal()
        off = matrix.diagonal(1)
        ab = np.zeros((2, len(diag)))
        ab[0, 1:] = off
        ab[1] = diag
        self.factor = scipy.linalg.cholesky_banded(ab, lower=False)

    def __call__(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve_banded((self.factor, False), rhs)


class _SparseLUSolver:
    """Sparse LU with a symmetric ordering and no pivoting off the diagonal.

    Keeping the row and column permutations equal preserves the M-matrix sign
    pattern in both triangular factors.
    """

    def __init__(self, matrix: sp.spmatrix):
        self.lu = spla.splu(
            sp.csc_matrix(matrix),
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options=dict(SymmetricMode=True),
        )

    def __call__(self, rhs: np.ndarray) -> np.ndarray:
        return self.lu.solve(rhs)


class PenaltyProblem:
    """Grid, model and penalty parameter, with ``-Δ_h + I/ε`` factorized once.

    Parameters
    ----------
    grid, model
        Discretization and the nonlinearity/obstacle pair.
    eps : float
        Penalty parameter, must be positive.
    equivariant : bool
        Average the linear solve over the grid's mirror symmetries so that
        ``K_ε`` commutes with reflections exactly in floating point.  Fields
        with a reflection symmetry then keep it through any number of flow
        steps when the obstacle and nonlinearity share that symmetry.
    """

    def __init__(self, grid: Grid, model: Model, eps: float, equivariant: bool = True):
        if not (math.isfinite(eps) and eps > 0):
            raise ConfigurationError(f"penalty parameter must be positive, got {eps}")
        obstacle = check_field(grid, model.obstacle.values, "obstacle")
        self.grid = grid
        self.model = model
        self.eps = float(eps)
        self.psi = obstacle
        self.weight = grid.cell_volume
        self.nodes = grid.nodes
        self.matrix = (grid.stiffness + sp.identity(grid.size) / self.eps).tocsr()
        if grid.dimension == 1:
            self._solve = _BandedSolver(self.matrix)
        else:
            self._solve = _SparseLUSolver(self.matrix)
        self.equivariant = equivariant
        self._check_factorization()

    def _check_factorization(self):
        rng = np.random.default_rng(12345)
        rhs = rng.random(self.grid.size)
        sol = self._solve(rhs)
        res = np.linalg.norm(self.matrix @ sol - rhs) / np.linalg.norm(rhs)
        if not res <= FACTOR_RESIDUAL_TOL:
            raise NumericalError(f"factorization residual {res:.3e} too large")
        self.factor_residual = float(res)

    def __repr__(self):
        return f"PenaltyProblem(grid={self.grid.header()}, eps={self.eps:g})"

    @property
    def nonlinearity(self):
        return self.model.nonlinearity

    # -- nodal pieces ----------------------------------------------------

    def p(self, u: np.ndarray) -> np.ndarray:
        return self.nonlinearity.p(self.nodes, u)

    def excess(self, u: np.ndarray) -> np.ndarray:
        """Nodal ``(u - ψ)⁺``; zero where ``u = ψ`` exactly."""
        return np.maximum(u - self.psi, 0.0)

    # -- norms -----------------------------------------------------------

    def h1_inner(self, u, v) -> float:
        return float(self.weight * (u @ (self.grid.stiffness @ v)))

    def eps_inner(self, u, v) -> float:
        """``⟨u, v⟩_ε = ⟨u, v⟩ + (1/ε)∫uv``."""
        return float(self.weight * (u @ (self.matrix @ v)))

    def eps_norm(self, u) -> float:
        return math.sqrt(max(self.eps_inner(u, u), 0.0))

    # -- energy ----------------------------------------------------------

    def energy_terms(self, u) -> dict:
        u = check_field(self.grid, u)
        w = self.weight
        quad = 0.5 * w * float(u @ (self.grid.stiffness @ u))
        pen = 0.5 / self.eps * w * float(np.sum(self.excess(u) ** 2))
        prim = self.nonlinearity.primitive(self.nodes, u)
        _finite(prim, "P(x, u)")
        return {"gradient": quad, "penalty": pen, "primitive": w * float(np.sum(prim))}

    def energy(self, u) -> float:
        """``I_ε(u)``; both algebraic forms are evaluated and must agree."""
        u = check_field(self.grid, u)
        t = self.energy_terms(u)
        direct = t["gradient"] + t["penalty"] - t["primitive"]
        l2 = self.weight * float(u @ u)
        via_eps = 0.5 * self.eps_inner(u, u) - 0.5 * l2 / self.eps + t["penalty"] - t["primitive"]
        if not math.isfinite(direct):
            bad = np.flatnonzero(~np.isfinite(u))
            raise NumericalError("nonfinite energy", index=int(bad[0]) if bad.size else None)
        scale = t["gradient"] + 0.5 * l2 / self.eps + t["penalty"] + abs(t["primitive"])
        if abs(direct - via_eps) > 1e-12 * max(scale, 1e-300) * 64:
            raise NumericalError(
                f"energy forms disagree: {direct!r} vs {via_eps!r}"
            )
        return direct

    def energy_change(self, u, v) -> float:
        """``I_ε(v) - I_ε(u)`` computed from differences, not by subtraction.

        Near convergence the two energies agree to many digits, so the
        change is assembled from ``v - u`` term by term.
        """
        w = self.weight
        d = v - u
        quad = 0.5 * w * float(d @ (self.grid.stiffness @ (v + u)))
        ev, eu = self.excess(v), self.excess(u)
        pen = 0.5 / self.eps * w * float(np.sum((ev - eu) * (ev + eu)))
        prim = w * float(np.sum(self.nonlinearity.primitive_increment(self.nodes, u, v)))
        out = quad + pen - prim
        if not math.isfinite(out):
            raise NumericalError("nonfinite energy change")
        return out

    # -- operators -------------------------------------------------------

    def f_eps(self, u) -> np.ndarray:
        """``p(x, u) + u/ε - (u - ψ)⁺/ε`` written as ``p(x, u) + min(u, ψ)/ε``."""
        u = check_field(self.grid, u)
        return _finite(self.p(u) + np.minimum(u, self.psi) / self.eps, "F_ε u")

    def k_eps(self, v) -> np.ndarray:
        """Solve ``(-Δ_h + I/ε)u = v``."""
        v = check_field(self.grid, v)
        if not self.equivariant:
            return _finite(self._solve(v), "K_ε v")
        return _finite(self._symmetric_solve(v), "K_ε v")

    def _symmetric_solve(self, v, axis=None):
        # S_a(v) = ½(S_{a-1}(v) + R_a S_{a-1}(R_a v)); each level commutes with
        # its own reflection exactly and keeps the ones below it
        if axis is None:
            axis = self.grid.dimension - 1
        if axis < 0:
            return self._solve(v)
        reflect = self.grid.reflect
        direct = self._symmetric_solve(v, axis - 1)
        mirrored = reflect(self._symmetric_solve(reflect(v, axis), axis - 1), axis)
        return 0.5 * (direct + mirrored)

    def a_eps(self, u) -> np.ndarray:
        return self.k_eps(self.f_eps(u))

    def grad_eps(self, u) -> np.ndarray:
        """``I'_ε(u) = u - A_ε u`` in the ``‖·‖_ε`` metric."""
        u = check_field(self.grid, u)
        return u - self.a_eps(u)

    def grad_norm(self, u) -> float:
        return self.eps_norm(self.grad_eps(u))

    def weak_residual(self, u, v) -> float:
        """``⟨u, v⟩ + (1/ε)∫(u - ψ)⁺v - ∫p(x, u)v``."""
        w = self.weight
        return (
            self.h1_inner(u, v)
            + w / self.eps * float(self.excess(u) @ v)
            - w * float(self.p(u) @ v)
        )

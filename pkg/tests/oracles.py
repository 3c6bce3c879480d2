"""Reference solutions computed without the package's own operators.

* discrete shooting for the 1D finite-difference equation
  ``-(u[i-1] - 2u[i] + u[i+1])/h² = p(u[i])`` with zero end values;
* continuous shooting with ``solve_ivp`` (loose cross-check only, the FD
  solution differs from the ODE solution by O(h²));
* a primal-dual active-set Newton solver for the constrained problem
  ``u <= ψ``, ``-u'' + μ = p(u)``, ``μ >= 0``, ``μ(ψ - u) = 0`` on a fine grid.
"""

import numpy as np
import scipy.integrate
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def power(xi, s=1.5):
    return np.abs(xi) ** (s - 1.0) * xi


def shoot_discrete(first, n, h, s=1.5):
    """March the 3-point recurrence from u[0] = 0, u[1] = first."""
    u = np.zeros(n + 2)
    u[1] = first
    for i in range(1, n + 1):
        u[i + 1] = 2.0 * u[i] - u[i - 1] - h * h * power(u[i], s)
    return u


def sign_changes(u, floor=0.0):
    v = u[np.abs(u) > floor]
    return int(np.count_nonzero(np.diff(np.sign(v)) != 0))


def discrete_shooting_solution(length, n, guess, s=1.5, nodes=0, spread=0.2):
    """Interior values of the FD solution with ``nodes`` interior sign changes.

    ``guess`` is an estimate of the first interior value; the root of the
    end value is bracketed on a bracket of relative size ``spread``.
    """
    h = length / (n + 1)

    def end(a):
        return shoot_discrete(a, n, h, s)[-1]

    grid = guess * np.linspace(1.0 - spread, 1.0 + spread, 81)
    vals = [end(a) for a in grid]
    for a0, a1, f0, f1 in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if np.sign(f0) != np.sign(f1):
            a = scipy.optimize.brentq(end, a0, a1, xtol=1e-300, rtol=8.9e-16, maxiter=500)
            u = shoot_discrete(a, n, h, s)[1:-1]
            if sign_changes(u, 1e-12 * np.abs(u).max()) == nodes:
                return u
    raise RuntimeError("no shooting root with the requested node count")


def continuous_shooting_profile(length, s=1.5):
    """``-u'' = |u|^{s-1}u`` on [0, length], u > 0: slope and dense solution."""

    def rhs(x, y):
        return [y[1], -power(y[0], s)]

    def end(slope):
        sol = scipy.integrate.solve_ivp(rhs, (0.0, length), [0.0, slope],
                                        rtol=1e-12, atol=1e-12)
        return sol.y[0, -1]

    # u(x) = length^-4 U(x/length) with U'(0) near 345 on the unit interval
    guess = 345.0 / length**5
    slope = scipy.optimize.brentq(end, 0.5 * guess, 1.5 * guess, xtol=1e-14)
    sol = scipy.integrate.solve_ivp(rhs, (0.0, length), [0.0, slope],
                                    rtol=1e-12, atol=1e-12, dense_output=True)
    return slope, sol.sol


def _neg_laplacian(n, h):
    main = np.full(n, 2.0 / h**2)
    off = np.full(n - 1, -1.0 / h**2)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def active_set_obstacle(length, n, psi, s=1.5, start=None, c=1.0, max_outer=200):
    """Constrained critical point ``u <= psi`` of ``½∫u'² - ∫|u|^{s+1}/(s+1)``.

    Primal-dual active set: Newton on the inactive nodes with ``u = psi``
    held on the active ones, then the active set is refreshed from
    ``mu + c(u - psi) > 0``.  ``start`` should lie in the basin of the
    intended solution (default: ``psi`` with smooth boundary layers).

    Returns ``(u, mu, active)`` on the interior nodes.
    """
    h = length / (n + 1)
    x = np.arange(1, n + 1) * h
    psi = np.broadcast_to(np.asarray(psi, dtype=float), (n,)).copy()
    lap = _neg_laplacian(n, h)
    if start is None:
        start = np.minimum(psi, 4.0 * psi.max() * np.sin(np.pi * x / length))
    u = np.minimum(start, psi)
    active = u >= psi
    mu = np.zeros(n)
    for _ in range(max_outer):
        inact = ~active
        u = np.where(active, psi, u)
        idx = np.flatnonzero(inact)
        sub = lap[idx][:, idx]
        for _ in range(50):
            r_in = (lap @ u - power(u, s))[idx]
            jac = sub - sp.diags(s * np.abs(u[idx]) ** (s - 1))
            step = spla.spsolve(jac.tocsc(), r_in) if idx.size else r_in
            u[idx] -= step
            if np.abs(step).max(initial=0.0) <= 1e-15 * max(np.abs(u).max(), 1e-300):
                break
        mu = np.where(active, power(u, s) - lap @ u, 0.0)
        new_active = mu + c * (u - psi) > 0
        if np.array_equal(new_active, active):
            break
        active = new_active
    else:
        raise RuntimeError("active set did not settle")
    return u, mu, active


def restrict(fine, factor):
    """Values at the coarse nodes of a nested grid, ``n_f + 1 = factor (n + 1)``."""
    return fine[factor - 1::factor]

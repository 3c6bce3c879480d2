"""Acceptance checks 1-10, one PASS/FAIL line each.

Run on its own with ``pytest -v -s tests/test_acceptance.py`` or
``python tests/test_acceptance.py``.  Every flow started by the searches and
the continuation is wrapped so that criterion 3 sees all accepted steps.
"""

import math
import sys
import time

import numpy as np
import pytest
import scipy.interpolate

from oracles import active_set_obstacle, discrete_shooting_solution, restrict, sign_changes

from descent_vi import continuation, flow, multisol
from descent_vi.continuation import (
    Schedule,
    continue_to_vi,
    default_test_fields,
    random_test_fields,
    sample_vi_tests,
    sigma_hat,
    vi_residuals,
)
from descent_vi.grid import build_grid, eigenpairs
from descent_vi.model import (
    Model,
    constant_obstacle,
    model_power,
    tent_obstacle,
    two_bump_obstacle,
)
from descent_vi.multisol import SearchConfig, solve_triple
from descent_vi.penalty import PenaltyProblem

ENERGY_SLACK = 1e-12
CONTACT_LENGTH = 12.0
CONTACT_PSI = 0.5
CONTACT_R1 = 0.25
SCHEDULE = Schedule(eps0=0.1, gamma=0.5, stages=12, run_all=True)
RESULTS = {}
INCREASES = []


def _record(num, ok, detail, capsys):
    RESULTS[num] = (ok, detail)
    with capsys.disabled():
        print(f"\ncriterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _tracked(fn):
    def wrapper(*args, **kw):
        rep = fn(*args, **kw)
        INCREASES.append(rep.max_energy_increase)
        return rep
    return wrapper


@pytest.fixture(scope="module", autouse=True)
def track_energy():
    with pytest.MonkeyPatch.context() as mp:
        for mod in (multisol, continuation):
            mp.setattr(mod, "flow_to_critical", _tracked(flow.flow_to_critical))
        yield


def _contact(n):
    grid = build_grid(1, [CONTACT_LENGTH], [n])
    return grid, Model(model_power(1.5), constant_obstacle(grid, CONTACT_PSI))


@pytest.fixture(scope="module")
def contact_runs():
    runs = {}
    cfg = SearchConfig(r1=CONTACT_R1)
    for n, branch in ((256, "positive"), (256, "sign_changing"), (128, "positive")):
        grid, model = _contact(n)
        start = time.perf_counter()
        cert = continue_to_vi(grid, model, cfg, SCHEDULE, branch)
        runs[n, branch] = (grid, model, cert, time.perf_counter() - start)
    return runs


@pytest.fixture(scope="module")
def contact_oracle():
    factor = 8
    fine, _, _ = active_set_obstacle(CONTACT_LENGTH, factor * 257 - 1, CONTACT_PSI)
    return restrict(fine, factor)


def test_criterion_01_gradient(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(20240601)
    worst = 0.0
    for grid in (build_grid(1, [1.0], [128]), build_grid(2, [1.0, 1.0], [16, 16])):
        pp = PenaltyProblem(grid, Model(model_power(1.5), constant_obstacle(grid, 0.5)), 0.1)
        for _ in range(20):
            # values kept away from the kinks at u = ψ and u = 0
            u = rng.uniform(0.05, 0.45, grid.size) * rng.choice([-1.0, 1.0], grid.size)
            over = rng.random(grid.size) < 0.3
            u[over] = rng.uniform(0.55, 1.5, over.sum())
            h = rng.normal(size=grid.size)
            delta = 1e-5 / np.abs(h).max()
            fd = pp.energy_change(u - delta * h, u + delta * h) / (2 * delta)
            exact = pp.eps_inner(pp.grad_eps(u), h)
            worst = max(worst, abs(fd - exact) / abs(exact))
    elapsed = time.perf_counter() - start
    _record(1, worst <= 1e-5 and elapsed < 5,
            f"max relative error {worst:.2e} (<= 1e-5), {elapsed:.1f}s (< 5s)", capsys)


def test_criterion_02_cone_invariance(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    grid = build_grid(1, [6.0], [64])
    models = [
        Model(model_power(1.5), constant_obstacle(grid, 0.5)),
        Model(model_power(1.5), tent_obstacle(grid, 1.0)),
        Model(model_power(1.5), two_bump_obstacle(grid, 1.0, 0.1)),
    ]
    problems = [PenaltyProblem(grid, m, eps) for m in models for eps in (1.0, 0.01)]
    lowest, highest, flows = math.inf, -math.inf, 0
    for k in range(100):
        pp = problems[k % len(problems)]
        seed = rng.random(grid.size) * 10.0 ** rng.uniform(-2, 2)
        seed[rng.random(grid.size) < 0.2] = 0.0
        for sign in (1.0, -1.0):
            rep = flow.flow_to_critical(pp, sign * seed, max_steps=200, record_extrema=True)
            INCREASES.append(rep.max_energy_increase)
            flows += 1
            if sign > 0:
                lowest = min(lowest, min(rep.min_value_trace, default=math.inf))
            else:
                highest = max(highest, max(rep.max_value_trace, default=-math.inf))
    elapsed = time.perf_counter() - start
    ok = lowest >= 0.0 and highest <= 0.0 and elapsed < 30
    _record(2, ok, f"{flows} flows, min over nonnegative runs {lowest:.3e}, "
                   f"max over nonpositive runs {highest:.3e}, {elapsed:.1f}s (< 30s)", capsys)


def test_criterion_04_spectrum(capsys):
    worst, errs, sizes = 0.0, [], (32, 128)
    for n in sizes:
        grid = build_grid(1, [1.0], [n])
        h = grid.spacings[0]
        dense = eigenpairs(grid, 2, method="dense")
        for k, pair in enumerate(dense, start=1):
            exact = 4.0 / h**2 * math.sin(k * math.pi * h / 2) ** 2
            worst = max(worst, abs(pair.value - exact) / exact)
        errs.append(abs(dense[0].value - math.pi**2))
    ratio = errs[0] / errs[1]
    ok = worst <= 1e-10 and abs(ratio / 16.0 - 1.0) <= 0.1
    _record(4, ok, f"closed-form mismatch {worst:.1e} (<= 1e-10), "
                   f"lambda1 error ratio {ratio:.2f} (about 16)", capsys)


def test_criterion_05_unconstrained_triple(capsys):
    grid = build_grid(1, [1.0], [256])
    pp = PenaltyProblem(grid, Model(model_power(1.5), constant_obstacle(grid, 1e6)), 1.0)
    start = time.perf_counter()
    rep = solve_triple(pp, SearchConfig(r_seed=1.0))
    elapsed = time.perf_counter() - start
    if not rep.all_found:
        reasons = {k: s.reason for k, s in rep.slots.items()}
        _record(5, False, f"not all slots found: {reasons}", capsys)
    h = 1.0 / 257
    pos, neg, sc = rep.positive.field, rep.negative.field, rep.sign_changing.field
    oracle = discrete_shooting_solution(1.0, 256, 345 * h)
    node_oracle = discrete_shooting_solution(1.0, 256, 345 * 32 * h, nodes=1)
    if node_oracle[0] * sc[0] < 0:
        node_oracle = -node_oracle
    e_pos = np.abs(pos - oracle).max()
    e_neg = np.abs(neg + pos).max()
    changes = sign_changes(sc, 1e-12 * np.abs(sc).max())
    e_sc = np.abs(sc - node_oracle).max()
    ok = e_pos <= 1e-4 and e_neg <= 1e-8 and changes == 1 and e_sc <= 1e-3 and elapsed < 60
    _record(5, ok, f"positive vs oracle {e_pos:.1e} (<= 1e-4), negative + positive "
                   f"{e_neg:.1e} (<= 1e-8), sign changes {changes} (= 1), sign-changing vs "
                   f"oracle {e_sc:.1e} (<= 1e-3), {elapsed:.1f}s (< 60s)", capsys)


def _slope(table):
    eps = np.log([r.eps for r in table])
    feas = np.log([r.feas_l2 for r in table])
    return float(np.polyfit(eps, feas, 1)[0])


def test_criterion_06_obstacle_benchmark(capsys, contact_runs, contact_oracle):
    grid, model, cert, elapsed = contact_runs[256, "positive"]
    if not cert.ok:
        _record(6, False, f"continuation status {cert.status} at stage {cert.lost_stage}", capsys)
    slope = _slope(cert.table)
    res = vi_residuals(grid, model, cert.field, SCHEDULE.tol_feas)
    # the oracle's residual under the same coarse operator and active tolerance
    oracle_res = vi_residuals(grid, model, np.minimum(contact_oracle, CONTACT_PSI),
                              SCHEDULE.tol_feas)
    match = np.abs(cert.field - contact_oracle).max()
    checks = [
        0.35 <= slope <= 0.65,
        res["feasibility"] <= 1e-3,
        res["complementarity"] <= 1e-2,
        res["stationarity"] <= 5 * oracle_res["stationarity"],
        match <= 5e-3,
        elapsed < 120,
    ]
    _record(6, all(checks),
            f"slope {slope:.3f} (in [0.35, 0.65]), feasibility {res['feasibility']:.1e} "
            f"(<= 1e-3), complementarity {res['complementarity']:.1e} (<= 1e-2), "
            f"stationarity {res['stationarity']:.1e} (<= 5 x {oracle_res['stationarity']:.1e}), "
            f"oracle match {match:.1e} (<= 5e-3), {elapsed:.1f}s (< 120s)", capsys)


def test_criterion_07_sign_changing_persistence(capsys, contact_runs):
    grid, model, cert, _ = contact_runs[256, "sign_changing"]
    if not cert.table:
        _record(7, False, f"no stages recorded: {cert.status}", capsys)
    plus = [r.norm_plus for r in cert.table]
    minus = [r.norm_minus for r in cert.table]
    ok = (cert.ok and len(cert.table) == SCHEDULE.stages
          and min(plus) >= 0.5 * plus[0] and min(minus) >= 0.5 * minus[0])
    _record(7, ok, f"{len(cert.table)} stages ({cert.status}), min |w+| {min(plus):.4g} vs "
                   f"stage 0 {plus[0]:.4g}, min |w-| {min(minus):.4g} vs stage 0 "
                   f"{minus[0]:.4g}", capsys)


def test_criterion_08_energy_band(capsys, contact_runs):
    grid, model, _, _ = contact_runs[256, "positive"]
    top = sigma_hat(grid, model.nonlinearity, CONTACT_R1)
    parts, ok = [], True
    for branch in ("positive", "sign_changing"):
        cert = contact_runs[256, branch][2]
        energies = [r.energy for r in cert.table]
        inside = bool(energies) and min(energies) >= -1e-10 and max(energies) <= top
        ok &= inside
        parts.append(f"{branch} in [{min(energies):.4g}, {max(energies):.4g}]")
    _record(8, ok, f"{'; '.join(parts)}; band [-1e-10, {top:.4g}]", capsys)


def test_criterion_09_vi_tests(capsys, contact_runs):
    grid, model, cert, _ = contact_runs[256, "positive"]
    omega = cert.field
    tests = default_test_fields(grid, model, omega)
    tests += random_test_fields(grid, model, omega, 50, seed=0)
    values = sample_vi_tests(grid, model, omega, tests)
    _record(9, min(values) >= -1e-6,
            f"{len(values)} admissible fields, min value {min(values):.3e} (>= -1e-6)", capsys)


def test_criterion_10_h_refinement(capsys, contact_runs, contact_oracle):
    fine_grid, _, fine, _ = contact_runs[256, "positive"]
    coarse_grid, _, coarse, _ = contact_runs[128, "positive"]
    # the two grids share no interior nodes; a cubic spline carries the
    # coarse field (with its zero end values) to the fine nodes
    x = np.r_[0.0, coarse_grid.axes[0], CONTACT_LENGTH]
    spline = scipy.interpolate.CubicSpline(x, np.r_[0.0, coarse.field, 0.0])
    gap = np.abs(spline(fine_grid.axes[0]) - fine.field).max()
    oracle_err = np.abs(fine.field - contact_oracle).max()
    _record(10, gap <= 4 * oracle_err,
            f"n=128 vs n=256 gap {gap:.2e} (<= 4 x {oracle_err:.2e})", capsys)


def test_criterion_03_monotone_energy(capsys):
    worst = max(INCREASES, default=-math.inf)
    _record(3, bool(INCREASES) and worst <= ENERGY_SLACK,
            f"{len(INCREASES)} flow runs, largest accepted increase {worst:.2e} (<= 1e-12)",
            capsys)


def test_summary(capsys):
    with capsys.disabled():
        print("\nacceptance summary")
        for num in range(1, 11):
            ok, detail = RESULTS.get(num, (False, "not run"))
            print(f"  criterion {num:2d}: {'PASS' if ok else 'FAIL'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))

import dataclasses
import json
import math

import numpy as np
import pytest
from scipy import ndimage

from oracles import discrete_shooting_solution, sign_changes

from descent_vi.errors import ConfigurationError
from descent_vi.flow import Classification
from descent_vi.grid import build_grid
from descent_vi.model import Model, constant_obstacle, model_power, model_weighted_power
from descent_vi.multisol import (
    SearchConfig,
    collapse_level,
    find_negative,
    find_positive,
    find_sign_changing,
    probe_threads,
    solve_triple,
)
from descent_vi.penalty import PenaltyProblem

# θ = π/2 lies on any mesh with a multiple of 4 angles
CFG = SearchConfig(r_seed=1.0, n_theta=4)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SearchConfig(bisection_depth=61)
    with pytest.raises(ConfigurationError):
        SearchConfig(part_tol=0.0)
    with pytest.raises(ConfigurationError):
        SearchConfig(r_seed=-1.0)
    with pytest.raises(ConfigurationError):
        SearchConfig(max_probes=0)
    with pytest.raises(ConfigurationError):
        SearchConfig(seed_sign=0)
    assert SearchConfig().tol == 1e-8


def test_collapse_level(unit64):
    level = collapse_level(unit64)
    lam1 = 4 * 65**2 * math.sin(math.pi / 130) ** 2
    # |p(ξ)/ξ| = |ξ|^0.5 <= λ₁/2 up to (λ₁/2)², sampled on a log mesh
    assert 0.1 * 0.8 * (lam1 / 2) ** 2 <= level <= 0.1 * (lam1 / 2) ** 2


def test_positive_and_negative_match_oracle(unit64):
    pos = find_positive(unit64, CFG)
    neg = find_negative(unit64, CFG)
    assert pos.found and neg.found
    assert pos.classification is Classification.POSITIVE
    oracle = discrete_shooting_solution(1.0, 64, 345 / 65)
    assert np.abs(pos.field - oracle).max() <= 1e-4
    assert np.abs(neg.field + pos.field).max() <= 1e-8
    assert pos.report.grad_norm <= CFG.tol


def test_zero_amplitude_is_trivial(unit64):
    slot = find_positive(unit64, CFG.with_(t0=0.0))
    assert not slot.found and slot.reason == "trivial-endpoint"


def test_sign_changing_is_antisymmetric_one_node(unit64):
    slot = find_sign_changing(unit64, CFG)
    assert slot.found, slot.reason
    u = slot.field
    assert np.abs(u + u[::-1]).max() <= 1e-10 * np.abs(u).max()
    assert sign_changes(u, 1e-12 * np.abs(u).max()) == 1
    oracle = discrete_shooting_solution(1.0, 64, 345 * 32 / 65, nodes=1)
    if oracle[0] * u[0] < 0:
        oracle = -oracle
    assert np.abs(u - oracle).max() <= 1e-3
    assert slot.diagnostics["route"] == "mesh"


def test_seeds_in_one_basin_reported(unit64):
    cfg = CFG.with_(r_seed=1e-3, expand_limit=0)
    slot = find_sign_changing(unit64, cfg)
    assert not slot.found and slot.reason == "all-one-basin"


def test_probe_budget_is_enforced(unit64):
    slot = find_positive(unit64, CFG.with_(max_probes=3))
    assert not slot.found and slot.reason == "budget-exhausted"
    assert slot.diagnostics["probes"] == 3
    slot = find_sign_changing(unit64, CFG.with_(max_probes=3))
    assert not slot.found and slot.reason == "budget-exhausted"


def test_asymmetric_model_terminates_within_budget():
    g = build_grid(1, [1.0], [16])
    nl = model_weighted_power(1.5, lambda x: 1.0 + 0.5 * x, 1.0, 1.5)
    pp = PenaltyProblem(g, Model(nl, constant_obstacle(g, 1e6)), 1.0)
    slot = find_sign_changing(pp, CFG.with_(max_probes=300, n_theta=8))
    assert slot.diagnostics["probes"] <= 300
    if slot.found:
        assert slot.classification is Classification.SIGN_CHANGING
        assert slot.report.grad_norm <= CFG.tol
    else:
        assert slot.reason in ("budget-exhausted", "no-bracket", "all-one-basin")


def test_triple_distinct_and_serializable(unit64):
    rep = solve_triple(unit64, CFG)
    assert rep.all_found and rep.distinct
    assert all(d > rep.distinct_threshold for d in rep.distances.values())
    text = rep.to_json()
    assert json.loads(text)["all_found"] is True
    assert text == solve_triple(unit64, CFG).to_json()


def test_negated_seeds_swap_cone_slots(unit64):
    rep = solve_triple(unit64, CFG)
    neg = solve_triple(unit64, dataclasses.replace(CFG, seed_sign=-1))
    assert neg.all_found and neg.distinct
    assert neg.positive.classification is Classification.NEGATIVE
    assert np.abs(neg.positive.field - rep.negative.field).max() <= 1e-8
    assert np.abs(neg.negative.field - rep.positive.field).max() <= 1e-8
    a, b = rep.sign_changing.field, neg.sign_changing.field
    assert min(np.abs(a - b).max(), np.abs(a + b).max()) <= 1e-8


def test_obstacle_positive_has_contact(contact64):
    slot = find_positive(contact64, CFG)
    assert slot.found
    u = slot.field
    assert u.max() > 0.5 and u.max() - 0.5 <= 0.01 * 10
    near = np.abs(u - 0.5) < 0.05
    assert near.sum() >= 3


def test_thread_env(monkeypatch):
    monkeypatch.setenv("DESCENT_VI_THREADS", "3")
    assert probe_threads() == 3
    monkeypatch.setenv("DESCENT_VI_THREADS", "x")
    with pytest.raises(ConfigurationError):
        probe_threads()


def test_threaded_triple_matches_serial(unit64, monkeypatch):
    serial = solve_triple(unit64, CFG)
    monkeypatch.setenv("DESCENT_VI_THREADS", "4")
    threaded = solve_triple(unit64, CFG)
    for name in ("positive", "negative", "sign_changing"):
        assert np.array_equal(serial.slots[name].field, threaded.slots[name].field)


def test_two_dimensional_triple():
    g = build_grid(2, [2.0, 1.0], [11, 5])
    pp = PenaltyProblem(g, Model(model_power(1.5), constant_obstacle(g, 1e6)), 1.0)
    rep = solve_triple(pp, CFG)
    assert rep.all_found and rep.distinct
    sc = rep.sign_changing.field.reshape(g.shape)
    # antisymmetric under the long-axis mirror
    assert np.abs(sc + sc[::-1, :]).max() <= 1e-10 * np.abs(sc).max()


def test_square_sign_changing_has_two_nodal_domains():
    g = build_grid(2, [1.0, 1.0], [32, 32])
    pp = PenaltyProblem(g, Model(model_power(1.5), constant_obstacle(g, 1e6)), 1.0)
    rep = solve_triple(pp, CFG)
    assert rep.all_found and rep.distinct
    sc = rep.sign_changing.field.reshape(g.shape)
    cut = 1e-6 * np.abs(sc).max()
    domains = ndimage.label(sc > cut)[1] + ndimage.label(sc < -cut)[1]
    assert domains >= 2

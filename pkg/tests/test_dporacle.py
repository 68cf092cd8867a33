"""Backward-induction oracle against enumeration and closed-form targets."""

import numpy as np
import pytest
from scipy import stats

from rldispatch.dporacle import (GridSpec, Lolp, Voll, backward_induction,
                                 default_grid, extract_target,
                                 structure_check_suite,
                                 verify_threshold_structure)
from rldispatch.errors import BudgetExceededError, ConfigError
from rldispatch.forecast import ErrorModel
from rldispatch.params import DispatchParams
from rldispatch.policies import lolp_one_step_target, voll_one_step_target_exact
from rldispatch.simulate import oracle_cost


def two_period_model(sigma1, law="gaussian"):
    return ErrorModel(T=2, sigma=(0.0, sigma1, sigma1 * np.sqrt(2.0)), law=law)


def det_model(T):
    return ErrorModel(T=T, sigma=(0.0,) * (T + 1), law="gaussian")


def test_grid_spec_grid_and_quantize():
    spec = GridSpec(g_min=0.0, g_max=10.0, step=2.5, n_atoms=9)
    np.testing.assert_allclose(spec.grid(), [0.0, 2.5, 5.0, 7.5, 10.0])
    atoms, probs = spec.quantize(4.0, "gaussian")
    assert atoms.size == probs.size == 9
    assert abs(probs.sum() - 1.0) < 1e-12
    assert np.all(probs == probs[0])
    np.testing.assert_allclose(atoms + atoms[::-1], 0.0, atol=1e-12)
    assert np.all(np.diff(atoms) > 0)
    np.testing.assert_allclose(atoms[4], 0.0, atol=1e-12)
    np.testing.assert_allclose(atoms[-1], stats.norm.ppf(8.5 / 9, scale=4.0),
                               atol=1e-12)
    zero_atoms, zero_probs = spec.quantize(0.0, "gaussian")
    np.testing.assert_array_equal(zero_atoms, np.zeros(9))
    assert abs(zero_probs.sum() - 1.0) < 1e-12


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(g_min=5.0, g_max=5.0, step=0.5)
    with pytest.raises(ValueError):
        GridSpec(g_min=0.0, g_max=5.0, step=0.0)
    with pytest.raises(ValueError):
        GridSpec(g_min=0.0, g_max=5.0, step=0.5, n_atoms=0)
    with pytest.raises(ValueError):
        GridSpec(g_min=-1.0, g_max=5.0, step=0.5)


def test_default_grid_covers_instance(ref_params):
    model = ErrorModel.proportional(24, np.full(24, 100.0), 0.05, "gaussian")
    grid = default_grid(np.full(25, 100.0), ref_params, model, step=0.25)
    assert grid.g_min >= 0.0
    assert grid.g_min <= max(0.0, 100.0 - 10.0 * max(model.sigma))
    assert grid.g_max >= 100.0 + 10.0 * max(model.sigma)
    pts = grid.grid()
    np.testing.assert_allclose((pts - grid.g_min) / 0.25,
                               np.arange(pts.size), atol=1e-9)


def test_single_period_known_value():
    params = DispatchParams(T=1, r_up=5.0, r_down=5.0, c=1.0, q=100.0)
    grid = GridSpec(g_min=0.0, g_max=20.0, step=0.5, n_atoms=1)
    sol = backward_induction(np.array([10.0, 10.0]), grid, det_model(1),
                             params, Voll(q=100.0))
    assert sol.J0 == pytest.approx(10.0, abs=1e-9)
    assert sol.g0 == pytest.approx(10.0, abs=1e-9)


def test_two_period_deterministic_spot(spot_params):
    grid = GridSpec(g_min=0.0, g_max=30.0, step=0.5, n_atoms=1)
    sol = backward_induction(np.array([10.0, 20.0, 20.0]), grid, det_model(2),
                             spot_params, Voll(q=100.0))
    assert sol.J0 == pytest.approx(35.0, abs=1e-9)
    assert sol.g0 == pytest.approx(15.0, abs=1e-9)
    # The stage-1 plan from g0=15 climbs to cover the 20.
    i_prev = int(np.argmin(np.abs(sol.grid - 15.0)))
    g1 = sol.grid[sol.policy_idx[1][0, i_prev]]
    assert g1 == pytest.approx(20.0, abs=1e-9)


def test_two_period_matches_direct_enumeration():
    params = DispatchParams(T=2, r_up=6.0, r_down=4.0, c=50.0, q=2000.0)
    model = two_period_model(4.0)
    dhat0 = np.array([100.0, 107.0, 107.0])
    grid = GridSpec(g_min=60.0, g_max=160.0, step=1.0, n_atoms=5)
    sol = backward_induction(dhat0, grid, model, params, Voll(q=2000.0))

    g = grid.grid()
    n = g.size
    atoms, probs = grid.quantize(4.0, "gaussian")
    d1 = dhat0[1] + atoms
    stage1 = 50.0 * g[None, :] + 2000.0 * np.maximum(d1[:, None] - g[None, :],
                                                     0.0)
    down, up = 4, 6
    J1 = np.array([[stage1[a, max(0, i - down):min(n, i + up + 1)].min()
                    for i in range(n)] for a in range(atoms.size)])
    Q0 = 50.0 * g + 2000.0 * np.maximum(dhat0[0] - g, 0.0) + probs @ J1
    assert sol.J0 == pytest.approx(float(Q0.min()), abs=1e-9)
    assert sol.g0 == pytest.approx(float(g[np.argmin(Q0)]), abs=1e-9)


def test_voll_target_matches_exact_one_step():
    params = DispatchParams(T=2, r_up=8.0, r_down=8.0, c=50.0, q=2000.0)
    model = two_period_model(5.0)
    dhat0 = np.array([100.0, 110.0, 110.0])
    grid = default_grid(dhat0, params, model, step=0.25, n_atoms=201)
    sol = backward_induction(dhat0, grid, model, params, Voll(q=2000.0))
    ref = voll_one_step_target_exact(100.0, 110.0, 5.0, 50.0, 2000.0,
                                     8.0, 8.0)
    assert abs(extract_target(sol, 0) - ref) <= 2.0 * 0.25


def test_lolp_target_matches_formula():
    params = DispatchParams(T=2, r_up=8.0, r_down=8.0, c=50.0, q=2000.0)
    model = two_period_model(5.0)
    dhat0 = np.array([100.0, 110.0, 110.0])
    grid = default_grid(dhat0, params, model, step=0.25, n_atoms=201)
    sol = backward_induction(dhat0, grid, model, params, Lolp(beta0=0.03))
    ref = lolp_one_step_target(100.0, 110.0, 5.0, 0.03, 8.0)
    assert abs(extract_target(sol, 0) - ref) <= 2.0 * 0.25


def test_falling_forecast_targets_current_demand():
    params = DispatchParams(T=2, r_up=8.0, r_down=8.0, c=50.0, q=2000.0)
    grid = GridSpec(g_min=60.0, g_max=140.0, step=0.25, n_atoms=1)
    sol = backward_induction(np.array([100.0, 90.0, 90.0]), grid,
                             det_model(2), params, Voll(q=2000.0))
    assert abs(extract_target(sol, 0) - 100.0) <= 0.25


def test_zero_variance_matches_oracle_lp():
    params = DispatchParams(T=3, r_up=5.0, r_down=5.0, c=1.0, q=100.0)
    dhat0 = np.array([10.0, 20.0, 12.0, 12.0])
    grid = GridSpec(g_min=0.0, g_max=40.0, step=0.5, n_atoms=1)
    sol = backward_induction(dhat0, grid, det_model(3), params, Voll(q=100.0))
    ref = oracle_cost(dhat0[:3], params)
    assert sol.J0 == pytest.approx(ref, abs=1e-6)


def test_cost_nonincreasing_in_ramp_limits():
    model = two_period_model(5.0)
    dhat0 = np.array([100.0, 112.0, 112.0])
    values = []
    for r in (2.0, 6.0, 12.0):
        params = DispatchParams(T=2, r_up=r, r_down=r, c=50.0, q=2000.0)
        grid = GridSpec(g_min=40.0, g_max=200.0, step=0.25, n_atoms=31)
        sol = backward_induction(dhat0, grid, model, params, Voll(q=2000.0))
        values.append(sol.J0)
    assert values[1] <= values[0] + 1e-9
    assert values[2] <= values[1] + 1e-9


def test_refinement_changes_shrink():
    params = DispatchParams(T=2, r_up=8.0, r_down=8.0, c=50.0, q=2000.0)
    model = two_period_model(5.0)
    dhat0 = np.array([100.0, 110.0, 110.0])
    values = {}
    for k in (5, 11, 23):
        grid = default_grid(dhat0, params, model, step=0.25, n_atoms=k)
        values[k] = backward_induction(dhat0, grid, model, params,
                                       Voll(q=2000.0)).J0
    first = abs(values[11] - values[5])
    second = abs(values[23] - values[11])
    assert second <= first + 1e-9


def test_terminal_stage_has_no_future_term():
    params = DispatchParams(T=2, r_up=8.0, r_down=8.0, c=50.0, q=2000.0)
    model = two_period_model(3.0)
    dhat0 = np.array([100.0, 104.0, 104.0])
    grid = GridSpec(g_min=60.0, g_max=140.0, step=0.5, n_atoms=5)
    sol = backward_induction(dhat0, grid, model, params, Voll(q=2000.0))
    g = sol.grid
    for node in range(sol.n_nodes[1]):
        d = sol.node_demand[1][node]
        ref = 50.0 * g + 2000.0 * np.maximum(d - g, 0.0)
        np.testing.assert_allclose(sol.Qc[1][node], ref, atol=1e-9)


def test_structure_check_passes_on_clean_instances():
    params = DispatchParams(T=2, r_up=8.0, r_down=8.0, c=50.0, q=2000.0)
    model = two_period_model(4.0)
    dhat0 = np.array([100.0, 108.0, 108.0])
    grid = GridSpec(g_min=60.0, g_max=160.0, step=0.5, n_atoms=15)
    for kind in (Voll(q=2000.0), Lolp(beta0=0.03)):
        sol = backward_induction(dhat0, grid, model, params, kind)
        report = verify_threshold_structure(sol)
        assert report["ok"], report
        assert report["cells_checked"] > 0


def test_structure_check_detects_injected_defect():
    params = DispatchParams(T=1, r_up=8.0, r_down=8.0, c=50.0, q=2000.0)
    grid = GridSpec(g_min=60.0, g_max=140.0, step=0.5, n_atoms=1)
    sol = backward_induction(np.array([100.0, 100.0]), grid, det_model(1),
                             params, Voll(q=2000.0))
    clean = verify_threshold_structure(sol)
    assert clean["ok"]
    # Carve a second, deeper basin far from the true argmin.
    bump = int(np.argmin(np.abs(sol.grid - 70.0)))
    sol.Q[0][0, bump] -= 1e6
    sol.Qc[0][0, bump] -= 1e6
    report = verify_threshold_structure(sol)
    assert not report["ok"]
    assert report["n_threshold_violations"] > 0
    assert report["n_basin_violations"] > 0
    assert report["threshold_violations"][0]["t"] == 0


def test_structure_check_suite_smoke():
    report = structure_check_suite(base_seed=0, n_instances=1, n_atoms=5,
                                   step=1.0)
    assert report["ok"]
    assert len(report["instances"]) == 2
    kinds = {entry["kind"] for entry in report["instances"]}
    assert kinds == {"voll", "lolp"}
    assert report["cells_checked"] > 0


def test_backward_induction_validation():
    grid = GridSpec(g_min=0.0, g_max=20.0, step=0.5, n_atoms=3)
    with pytest.raises(ConfigError):
        backward_induction(np.zeros(6), grid, det_model(5),
                           DispatchParams(T=5, r_up=5.0, r_down=5.0,
                                          c=1.0, q=100.0), Voll(q=100.0))
    params = DispatchParams(T=2, r_up=5.0, r_down=5.0, c=50.0, q=2000.0)
    with pytest.raises(ConfigError):
        backward_induction(np.zeros(3), grid, two_period_model(2.0),
                           params, Voll(q=100.0))
    with pytest.raises(ConfigError):
        backward_induction(np.zeros(3), grid, two_period_model(2.0),
                           params, "voll")
    with pytest.raises(ConfigError):
        backward_induction(np.zeros(3), grid, det_model(1), params,
                           Voll(q=2000.0))
    with pytest.raises(BudgetExceededError):
        backward_induction(np.zeros(3), grid, two_period_model(2.0),
                           params, Voll(q=2000.0), cell_budget=10)
    with pytest.raises(ValueError):
        Lolp(beta0=0.5)
    with pytest.raises(ValueError):
        Voll(q=0.0)


def test_extract_target_bounds():
    params = DispatchParams(T=2, r_up=5.0, r_down=5.0, c=50.0, q=2000.0)
    grid = GridSpec(g_min=60.0, g_max=140.0, step=0.5, n_atoms=3)
    sol = backward_induction(np.array([100.0, 104.0, 104.0]), grid,
                             two_period_model(2.0), params, Voll(q=2000.0))
    with pytest.raises(ValueError):
        extract_target(sol, 2)
    with pytest.raises(ValueError):
        extract_target(sol, 0, node=5)
    assert extract_target(sol, 1, node=1) in sol.grid

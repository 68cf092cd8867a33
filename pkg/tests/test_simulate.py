"""Tests for scenario generation, policy rollout, oracle costs, and sweeps."""

import numpy as np
import pytest

from conftest import sqrt_model, zero_model
from rldispatch.data import (RunConfig, SynthSpec, calibrate_ramp, scale_wind,
                             synth_benchmark)
from rldispatch.errors import ConfigError, NoRootError
from rldispatch.forecast import ErrorModel
from rldispatch.params import DispatchParams
from rldispatch.policies import MultiStepPolicy, VollOneStepApproxPolicy
from rldispatch.simulate import (EvalResult, Scenario, build_oracle_problem,
                                 evaluate, make_scenarios, oracle_cost,
                                 oracle_costs, oracle_rhs, penetration_sweep,
                                 simulate_policy, summarize_rows)


class FollowForecast:
    """Dispatches the current forecast coordinate, ignoring errors."""

    def decide(self, state, g_prev, eps_history=None):
        return float(state.dhat[state.t])


class Scripted:
    """Returns a fixed value per stage."""

    def __init__(self, values):
        self.values = values

    def decide(self, state, g_prev, eps_history=None):
        return float(self.values[state.t])


class RaisesAt:
    """Fails with NoRootError at one stage."""

    def __init__(self, stage):
        self.stage = stage

    def decide(self, state, g_prev, eps_history=None):
        if state.t == self.stage:
            raise NoRootError("no bracketing root")
        return float(state.dhat[state.t])


def consistent_scenario():
    dhat0 = np.array([10.0, 20.0, 20.0])
    eps = (np.array([1.0, 0.5]), np.array([2.0]))
    d = np.array([10.0, 21.0])
    return dhat0, eps, d


def test_scenario_consistency_accepted():
    dhat0, eps, d = consistent_scenario()
    s = Scenario(dhat0=dhat0, eps=eps, d=d)
    assert s.T == 2
    np.testing.assert_allclose(s.eps_stacked, [1.0, 0.5, 2.0])


def test_scenario_validation_rejects():
    dhat0, eps, d = consistent_scenario()
    with pytest.raises(ValueError, match="inconsistent"):
        Scenario(dhat0=dhat0, eps=eps, d=d + 0.5)
    with pytest.raises(ValueError, match="coordinates"):
        Scenario(dhat0=dhat0[:2], eps=eps, d=d)
    with pytest.raises(ValueError, match="error vectors"):
        Scenario(dhat0=dhat0, eps=eps[:1], d=d)
    with pytest.raises(ValueError, match=r"eps\[0\]"):
        Scenario(dhat0=dhat0, eps=(eps[0][:1], eps[1]), d=d)


def test_make_scenarios_needs_one_mode():
    model = sqrt_model(3, 2.0)
    rng = np.random.default_rng(0)
    day = np.array([100.0, 104.0, 101.0])
    with pytest.raises(ConfigError, match="exactly one"):
        make_scenarios(model, 4, rng)
    with pytest.raises(ConfigError, match="exactly one"):
        make_scenarios(model, 4, rng, dhat0=np.append(day, day[-1]), day=day)


def test_make_scenarios_forward_zero_variance():
    model = zero_model(3)
    dhat0 = np.array([10.0, 20.0, 12.0, 12.0])
    scen = make_scenarios(model, 5, np.random.default_rng(1), dhat0=dhat0)
    assert len(scen) == 5
    for s in scen:
        np.testing.assert_array_equal(s.d, dhat0[:3])
        np.testing.assert_array_equal(s.dhat0, dhat0)
        assert all(np.all(e == 0.0) for e in s.eps)


def test_make_scenarios_anchored_realizes_day():
    model = sqrt_model(3, 2.0)
    day = np.array([100.0, 104.0, 101.0])
    scen = make_scenarios(model, 6, np.random.default_rng(2), day=day)
    for s in scen:
        np.testing.assert_array_equal(s.d, day)
        assert s.dhat0[3] == s.dhat0[2]
    dhat0_mat = np.stack([s.dhat0 for s in scen])
    assert np.std(dhat0_mat[:, 1]) > 0.0


def test_make_scenarios_deterministic_by_seed():
    model = sqrt_model(4, 3.0)
    dhat0 = np.array([100.0, 104.0, 101.0, 106.0, 106.0])
    a = make_scenarios(model, 3, np.random.default_rng(7), dhat0=dhat0)
    b = make_scenarios(model, 3, np.random.default_rng(7), dhat0=dhat0)
    c = make_scenarios(model, 3, np.random.default_rng(8), dhat0=dhat0)
    for sa, sb in zip(a, b):
        np.testing.assert_array_equal(sa.d, sb.d)
        np.testing.assert_array_equal(sa.eps_stacked, sb.eps_stacked)
    assert not np.array_equal(a[0].d, c[0].d)


def test_forward_demand_variance_matches_horizon_curve():
    # Marginal variances telescope, so Var(d_tau - dhat0_tau) = sigma(tau)^2.
    scale = 3.0
    model = sqrt_model(4, scale)
    dhat0 = np.full(5, 100.0)
    scen = make_scenarios(model, 4000, np.random.default_rng(11), dhat0=dhat0)
    d_mat = np.stack([s.d for s in scen])
    for tau in range(1, 4):
        dev = d_mat[:, tau] - 100.0
        target = scale ** 2 * tau
        assert abs(np.mean(dev)) < 4.0 * scale * np.sqrt(tau / 4000.0)
        assert np.var(dev) == pytest.approx(target, rel=0.08)


def test_simulate_policy_zero_error_follows_forecast():
    T = 3
    params = DispatchParams(T=T, r_up=100.0, r_down=100.0, c=2.0, q=100.0)
    dhat0 = np.full(T + 1, 10.0)
    scen = make_scenarios(zero_model(T), 1, np.random.default_rng(0),
                          dhat0=dhat0)[0]
    g, cost = simulate_policy(FollowForecast(), scen, params)
    np.testing.assert_allclose(g, 10.0)
    assert cost == pytest.approx(2.0 * 30.0, abs=1e-12)


def test_simulate_policy_clamps_and_charges_shortfall(spot_params):
    dhat0 = np.array([10.0, 20.0, 20.0])
    scen = make_scenarios(zero_model(2), 1, np.random.default_rng(0),
                          dhat0=dhat0)[0]
    # Stage 1 wants 1e9 but the ramp cap allows 15, shedding 5 units.
    g, cost = simulate_policy(Scripted([10.0, 1e9]), scen, spot_params)
    np.testing.assert_allclose(g, [10.0, 15.0])
    assert cost == pytest.approx(10.0 + 15.0 + 100.0 * 5.0, abs=1e-9)
    g, cost = simulate_policy(Scripted([0.0, 0.0]), scen, spot_params)
    np.testing.assert_allclose(g, [0.0, 0.0])
    assert cost == pytest.approx(100.0 * 30.0, abs=1e-9)


def test_simulate_policy_prefixes_stage_on_error(spot_params):
    dhat0 = np.array([10.0, 20.0, 20.0])
    scen = make_scenarios(zero_model(2), 1, np.random.default_rng(0),
                          dhat0=dhat0)[0]
    with pytest.raises(NoRootError, match="stage 1: no bracketing root"):
        simulate_policy(RaisesAt(1), scen, spot_params)


def test_simulate_policy_horizon_mismatch(spot_params):
    dhat0 = np.full(4, 10.0)
    scen = make_scenarios(zero_model(3), 1, np.random.default_rng(0),
                          dhat0=dhat0)[0]
    with pytest.raises(ConfigError, match="horizon"):
        simulate_policy(FollowForecast(), scen, spot_params)


def test_oracle_cost_two_period_ramp(spot_params):
    # Covering d=(10,20) under ramp 5 forces g=(15,20): cost 35.
    assert oracle_cost(np.array([10.0, 20.0]), spot_params) == pytest.approx(
        35.0, abs=1e-6)


def test_oracle_costs_closed_form_values(spot_params):
    got = oracle_costs(np.array([[10.0, 20.0]]), spot_params)
    np.testing.assert_allclose(got, [35.0], atol=1e-12)
    params = DispatchParams(T=3, r_up=10.0, r_down=10.0, c=1.0, q=1000.0)
    got = oracle_costs(np.array([[0.0, 0.0, 30.0]]), params)
    np.testing.assert_allclose(got, [60.0], atol=1e-12)
    loose = DispatchParams(T=3, r_up=1e6, r_down=1e6, c=2.0, q=100.0)
    d = np.array([[5.0, 40.0, 7.0]])
    np.testing.assert_allclose(oracle_costs(d, loose), [2.0 * 52.0],
                               atol=1e-9)


def test_oracle_closed_form_matches_lp():
    rng = np.random.default_rng(5)
    for _ in range(20):
        r_up, r_down = rng.uniform(1.0, 10.0, size=2)
        params = DispatchParams(T=5, r_up=r_up, r_down=r_down, c=1.0, q=50.0)
        d = rng.uniform(0.0, 30.0, size=5)
        fast = oracle_costs(d[None, :], params)[0]
        lp = oracle_cost(d, params)
        assert fast == pytest.approx(lp, rel=1e-6, abs=1e-6)


def cover_cost(d, params):
    """Cost of the cheapest ramp-feasible path covering all demand."""
    T = d.size
    g = np.zeros(T)
    for tau in range(T):
        for j in range(T):
            lag = j - tau
            spread = params.r_down * lag if lag >= 0 else -params.r_up * lag
            g[j] = max(g[j], d[tau] - spread)
    return params.c * g.sum()


def test_oracle_lp_branch_can_shed():
    # q < c T routes through the LP batch, where shedding a spike beats
    # ramping up days in advance to cover it.
    params = DispatchParams(T=4, r_up=1.0, r_down=1.0, c=50.0, q=170.0)
    rng = np.random.default_rng(9)
    d_mat = rng.uniform(0.0, 5.0, size=(5, 4))
    d_mat[0] = [0.0, 0.0, 100.0, 0.0]
    batch = oracle_costs(d_mat, params)
    for i in range(5):
        assert batch[i] == pytest.approx(oracle_cost(d_mat[i], params),
                                         rel=1e-7, abs=1e-6)
    assert batch[0] < cover_cost(d_mat[0], params) - 1.0


def test_oracle_cost_nonincreasing_in_ramp():
    d = np.array([12.0, 30.0, 8.0, 22.0, 15.0])
    costs = []
    for r in (2.0, 6.0, 12.0):
        params = DispatchParams(T=5, r_up=r, r_down=r, c=1.0, q=50.0)
        costs.append(oracle_costs(d[None, :], params)[0])
    assert costs[0] >= costs[1] >= costs[2]


def test_oracle_costs_width_mismatch(spot_params):
    with pytest.raises(ConfigError, match="periods"):
        oracle_costs(np.zeros((2, 3)), spot_params)


def test_build_oracle_problem_structure(spot_params):
    problem = build_oracle_problem(2, spot_params)
    assert problem.A.shape == (8, 4)
    assert len(problem.cones) == 1 and problem.cones[0].dim == 8
    b = oracle_rhs(np.array([10.0, 20.0]), spot_params)
    assert b.shape == (8, 1)
    np.testing.assert_array_equal(b[:2, 0], [-10.0, -20.0])
    np.testing.assert_array_equal(b[2:6, 0], 0.0)
    np.testing.assert_array_equal(b[6:, 0], [5.0, 5.0])


def test_evaluate_perfect_policy_has_unit_ratio():
    T = 3
    params = DispatchParams(T=T, r_up=100.0, r_down=100.0, c=2.0, q=100.0)
    dhat0 = np.full(T + 1, 10.0)
    scen = make_scenarios(zero_model(T), 4, np.random.default_rng(0),
                          dhat0=dhat0)
    res = evaluate({"follow": FollowForecast()}, scen, params, seed=42)
    r = res["follow"]
    assert isinstance(r, EvalResult)
    assert r.ratio == pytest.approx(1.0, abs=1e-9)
    assert r.mean_cost == pytest.approx(60.0, abs=1e-9)
    assert r.shortfall_freq == (0.0,) * T
    assert r.n_scenarios == 4 and r.seed == 42


def test_evaluate_reuses_paired_oracle():
    T = 4
    params = DispatchParams(T=T, r_up=8.0, r_down=8.0, c=50.0, q=2000.0)
    dhat0 = np.array([100.0, 104.0, 101.0, 106.0, 106.0])
    scen = make_scenarios(sqrt_model(T, 2.0), 10, np.random.default_rng(3),
                          dhat0=dhat0)
    oracle = oracle_costs(np.stack([s.d for s in scen]), params)
    fresh = evaluate({"follow": FollowForecast()}, scen, params)
    reused = evaluate({"follow": FollowForecast()}, scen, params,
                      oracle=oracle)
    assert fresh["follow"] == reused["follow"]


def test_evaluate_rejects_empty(spot_params):
    dhat0 = np.array([10.0, 20.0, 20.0])
    scen = make_scenarios(zero_model(2), 1, np.random.default_rng(0),
                          dhat0=dhat0)
    with pytest.raises(ConfigError, match="at least one"):
        evaluate({}, scen, spot_params)
    with pytest.raises(ConfigError, match="at least one"):
        evaluate({"follow": FollowForecast()}, [], spot_params)


def test_evaluate_fitted_policies_beat_nothing():
    T = 4
    params = DispatchParams(T=T, r_up=8.0, r_down=8.0, c=50.0, q=2000.0)
    model = sqrt_model(T, 2.0)
    dhat0 = np.array([100.0, 104.0, 101.0, 106.0, 106.0])
    scen = make_scenarios(model, 50, np.random.default_rng(17), dhat0=dhat0)
    policies = {"one_step": VollOneStepApproxPolicy().fit(model, params),
                "multi_step": MultiStepPolicy().fit(model, params)}
    res = evaluate(policies, scen, params)
    for r in res.values():
        assert r.ratio >= 1.0 - 1e-9
        assert r.ratio < 2.0
        assert len(r.shortfall_freq) == T


def test_summarize_rows_arithmetic():
    config = RunConfig(policies=("one_step", "multi_step"),
                       penetrations=(5.0, 10.0), n_days=2)
    rows = [
        {"policy": "one_step", "p": 5.0, "day": "a", "ratio": 1.1},
        {"policy": "one_step", "p": 5.0, "day": "b", "ratio": 1.3},
        {"policy": "one_step", "p": 10.0, "day": "a", "ratio": 1.5},
    ]
    summary = summarize_rows(rows, config)
    cell = summary["ratios"]["one_step"]["5"]
    assert cell["mean"] == pytest.approx(1.2, abs=1e-12)
    assert cell["se"] == pytest.approx(0.1, abs=1e-12)
    assert cell["n_days"] == 2
    single = summary["ratios"]["one_step"]["10"]
    assert single == {"mean": 1.5, "se": 0.0, "n_days": 1}
    assert summary["ratios"]["multi_step"] == {}
    assert summary["seed"] == config.seed
    assert summary["config"] == config.to_dict()


def sweep_config(**overrides):
    base = dict(T=24, policies=("one_step", "multi_step"),
                penetrations=(10.0, 20.0), n_scenarios=16, n_days=2, seed=3)
    base.update(overrides)
    return RunConfig(**base)


def test_penetration_sweep_smoke():
    days = synth_benchmark(SynthSpec(n_days=2), np.random.default_rng(7))
    config = sweep_config()
    rows, summary = penetration_sweep(days, config)
    assert len(rows) == 8
    for row in rows:
        assert set(row) == {"policy", "p", "day", "mean_cost",
                            "oracle_cost", "ratio"}
        assert row["ratio"] >= 1.0 - 1e-9
    assert summary["ratios"]["one_step"]["10"]["n_days"] == 2
    assert summary["ratios"]["multi_step"]["20"]["n_days"] == 2
    assert summary["config"] == config.to_dict()


def test_penetration_sweep_deterministic_and_parallel():
    days = synth_benchmark(SynthSpec(n_days=2), np.random.default_rng(7))
    config = sweep_config(policies=("one_step",), penetrations=(10.0,),
                          n_scenarios=8)
    rows_a, _ = penetration_sweep(days, config)
    rows_b, _ = penetration_sweep(days, config)
    rows_p, _ = penetration_sweep(days, config, jobs=2)
    assert rows_a == rows_b
    assert rows_a == rows_p


def test_penetration_sweep_anchored_mode():
    days = synth_benchmark(SynthSpec(n_days=1), np.random.default_rng(7))
    config = sweep_config(policies=("one_step",), penetrations=(10.0,),
                          n_scenarios=8, n_days=1)
    fwd, _ = penetration_sweep(days, config, scenario_mode="forward")
    anc, _ = penetration_sweep(days, config, scenario_mode="anchored")
    # Anchored scenarios all realize the day itself, so the paired
    # oracle mean is exactly the day's clairvoyant cost.
    d = scale_wind(days[0].load, days[0].wind, 10.0)
    r_down, r_up = calibrate_ramp(d, config.ramp_factor)
    params = config.dispatch_params(r_up=r_up, r_down=r_down)
    assert anc[0]["oracle_cost"] == pytest.approx(
        oracle_costs(d[None, :], params)[0], rel=1e-12)
    assert fwd[0]["mean_cost"] != anc[0]["mean_cost"]


def test_penetration_sweep_validation():
    days = synth_benchmark(SynthSpec(n_days=1), np.random.default_rng(7))
    config = sweep_config()
    with pytest.raises(ConfigError, match="at least one day"):
        penetration_sweep([], config)
    with pytest.raises(ConfigError, match="scenario_mode"):
        penetration_sweep(days, config, scenario_mode="sideways")
    with pytest.raises(ConfigError, match="unknown policies"):
        penetration_sweep(days, sweep_config(policies=("bogus",)))
    with pytest.raises(ValueError, match="jobs"):
        penetration_sweep(days, config, jobs=0)


def test_penetration_sweep_chance_constrained_policies():
    days = synth_benchmark(SynthSpec(n_days=1), np.random.default_rng(7))
    config = sweep_config(policies=("cc_gaussian", "cc_laplace"),
                          penetrations=(10.0,), n_scenarios=16, n_days=1)
    rows, summary = penetration_sweep(days, config)
    assert {row["policy"] for row in rows} == {"cc_gaussian", "cc_laplace"}
    for row in rows:
        assert 1.0 - 1e-6 <= row["ratio"] < 1.5
    assert summary["ratios"]["cc_gaussian"]["10"]["n_days"] == 1

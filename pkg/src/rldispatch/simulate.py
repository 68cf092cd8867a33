"""Closed-loop Monte Carlo evaluation and the penetration sweep.

Policies are rolled forward on sampled scenarios: at each stage the
policy observes the current forecast vector (whose leading coordinates
are realized), dispatches inside the ramp-feasible interval, and pays
``c g + q (d - g)^+`` on the realized demand. Costs are compared
against a clairvoyant oracle that solves the deterministic dispatch
linear program on the realized sequence; the oracle lower-bounds every
causal policy, so cost ratios are at least one up to solver tolerance.

The penetration sweep rebuilds each day instance at every requested
wind level (rescaled wind, recalibrated ramps, refreshed error model),
fits the chance-constrained affine policy once per (day, penetration)
through a single batched cone solve, and evaluates all policies on
paired scenario sets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .affine import (AffineDispatchPolicy, assemble_rhs, assemble_socp,
                     build_chance_rows, build_stacked_model, eps_layout,
                     unpack_policy)
from .data import RunConfig, calibrate_ramp, scale_wind
from .distributions import sample_errors
from .errors import ConfigError, RldError, SolverFailure
from .forecast import ErrorModel, ForecastState, update_forecast
from .params import DispatchParams, feasible_interval
from .policies import MultiStepPolicy, VollOneStepApproxPolicy
from .solver import (OPTIMAL, ConicProblem, NonNeg, SolverSettings, require_optimal,
                     solve, solve_many)
from .validation import check_int, check_vector

SHORTFALL_EPS = 1e-9

_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Scenario:
    """One realized demand path with its forecast-revision history.

    ``eps[t]`` holds the marginal errors revealed between stages ``t``
    and ``t + 1`` (length ``T - t``); ``d`` is the realized net demand
    over the dispatched periods. Self-consistency ties the three
    together: ``d[tau]`` equals ``dhat0[tau]`` plus the accumulated
    marginal revisions of coordinate ``tau``.
    """

    dhat0: np.ndarray
    eps: tuple
    d: np.ndarray

    def __post_init__(self):
        T = self.d.size
        if self.dhat0.size != T + 1:
            raise ValueError(
                f"dhat0 must have {T + 1} coordinates, got {self.dhat0.size}")
        if len(self.eps) != T:
            raise ValueError(f"need {T} error vectors, got {len(self.eps)}")
        for t, e in enumerate(self.eps):
            if e.size != T - t:
                raise ValueError(
                    f"eps[{t}] must have length {T - t}, got {e.size}")
        scale = 1.0 + float(np.max(np.abs(self.d)))
        acc = self.dhat0[:T].copy()
        for t in range(T):
            acc[t + 1:] += self.eps[t][:T - t - 1]
        if float(np.max(np.abs(acc - self.d))) > 1e-6 * scale:
            raise ValueError("scenario is inconsistent: d != dhat0 + errors")

    @property
    def T(self) -> int:
        return self.d.size

    @property
    def eps_stacked(self) -> np.ndarray:
        """Errors concatenated in the stacked (stage-major) layout."""
        return np.concatenate(self.eps)


def make_scenarios(model: ErrorModel, n: int, rng, dhat0=None, day=None):
    """Sample ``n`` self-consistent scenarios in one of two modes.

    Forward mode (``dhat0`` given): roll the initial forecast ahead with
    sampled marginal errors; the realized demand varies per scenario.
    Anchored mode (``day`` given): every scenario realizes the given
    demand sequence exactly, and the initial forecast is backed out as
    ``d`` minus the accumulated errors (the terminal forecast coordinate
    extends flat from the last period).
    """
    check_int(n, "n", minimum=1)
    if (dhat0 is None) == (day is None):
        raise ConfigError("make_scenarios needs exactly one of dhat0 or day")
    T = model.T
    eps_all = []
    for t in range(T):
        stds = model.marginal_stds(t)
        eps_all.append(sample_errors(rng, stds[None, :], model.law,
                                     size=(n, T - t)))
    if dhat0 is not None:
        dhat0 = check_vector(dhat0, "dhat0", size=T + 1)
        d_mat = np.tile(dhat0[:T], (n, 1))
        for t in range(T):
            d_mat[:, t + 1:] += eps_all[t][:, :T - t - 1]
        dhat0_mat = np.tile(dhat0, (n, 1))
    else:
        day = check_vector(day, "day", size=T)
        d_mat = np.tile(day, (n, 1))
        acc = np.zeros((n, T + 1))
        for t in range(T):
            acc[:, t + 1:] += eps_all[t]
        dhat0_mat = np.empty((n, T + 1))
        dhat0_mat[:, :T] = day[None, :] - acc[:, :T]
        dhat0_mat[:, T] = dhat0_mat[:, T - 1]
    return [Scenario(dhat0=dhat0_mat[j], d=d_mat[j],
                     eps=tuple(eps_all[t][j] for t in range(T)))
            for j in range(n)]


def simulate_policy(policy, scenario: Scenario, params: DispatchParams):
    """Reference closed-loop rollout of one policy on one scenario.

    Returns ``(dispatch, cost)``. Policy errors are re-raised with the
    failing stage index prepended.
    """
    T = params.T
    if scenario.T != T:
        raise ConfigError(
            f"scenario horizon {scenario.T} does not match params {T}")
    dhat = scenario.dhat0.copy()
    g = np.empty(T)
    g_prev = None
    cost = 0.0
    for t in range(T):
        state = ForecastState(t=t, dhat=dhat)
        try:
            g_t = policy.decide(state, g_prev, eps_history=scenario.eps[:t])
        except RldError as exc:
            raise type(exc)(f"stage {t}: {exc}") from exc
        lo, hi = feasible_interval(g_prev, params)
        g_t = float(min(max(g_t, lo), hi))
        g[t] = g_t
        cost += params.c * g_t + params.q * max(scenario.d[t] - g_t, 0.0)
        if t < T - 1:
            dhat = update_forecast(state, scenario.eps[t]).dhat
        g_prev = g_t
    return g, float(cost)


def build_oracle_problem(T: int, params: DispatchParams) -> ConicProblem:
    """Deterministic dispatch LP with variables ``[g, s]`` (shortfalls).

    Rows in order: cover (``-g_t - s_t <= -d_t``), ``g >= 0``,
    ``s >= 0``, ramp-up pairs, ramp-down pairs. Only ``b`` depends on
    the demand, so batches share the matrix.
    """
    check_int(T, "T", minimum=1)
    eye = sp.eye(T, format="csr")
    zero = sp.csr_matrix((T, T))
    diff = sp.diags([-np.ones(T - 1), np.ones(T - 1)], [0, 1],
                    shape=(T - 1, T), format="csr")
    zero_r = sp.csr_matrix((T - 1, T))
    A = sp.vstack([sp.hstack([-eye, -eye]),
                   sp.hstack([-eye, zero]),
                   sp.hstack([zero, -eye]),
                   sp.hstack([diff, zero_r]),
                   sp.hstack([-diff, zero_r])], format="csc")
    c_vec = np.concatenate([np.full(T, params.c), np.full(T, params.q)])
    b = oracle_rhs(np.zeros(T), params)
    return ConicProblem(c=c_vec, A=A, b=b, cones=[NonNeg(A.shape[0])])


def oracle_rhs(d_matrix, params: DispatchParams) -> np.ndarray:
    """Right-hand sides for rows of realized demands, one column each."""
    d_matrix = np.atleast_2d(np.asarray(d_matrix, dtype=float))
    B, T = d_matrix.shape
    return np.concatenate([
        -d_matrix.T,
        np.zeros((2 * T, B)),
        np.full((T - 1, B), params.r_up),
        np.full((T - 1, B), params.r_down)], axis=0)


def oracle_cost(d, params: DispatchParams,
                settings: SolverSettings = None) -> float:
    """Clairvoyant optimal cost on one realized demand sequence."""
    d = check_vector(d, "d", size=params.T)
    problem = build_oracle_problem(params.T, params)
    problem = ConicProblem(c=problem.c, A=problem.A,
                           b=oracle_rhs(d, params)[:, 0], cones=problem.cones)
    solution = solve(problem, settings or SolverSettings())
    require_optimal(solution, "oracle dispatch LP")
    return float(solution.objective)


def _oracle_costs_closed_form(d_matrix, params: DispatchParams) -> np.ndarray:
    """Exact oracle costs when full coverage is optimal.

    The pointwise-minimal ramp-feasible path dominating ``d`` is the
    upper envelope of one tent per period (level ``d_tau`` at ``tau``,
    sloping down at ``r_up`` backward and ``r_down`` forward), clipped
    at zero; the envelope is feasible because the slopes of a maximum
    of feasible paths stay within the ramp band, and any covering path
    dominates it coordinatewise. Lifting that envelope to absorb one
    unit of shortfall costs at most ``c T < q``, so shedding never
    pays and the optimum is ``c`` times the envelope sum.
    """
    T = params.T
    t = np.arange(T, dtype=float)
    lag = t[None, :] - t[:, None]
    spread = np.where(lag >= 0.0, params.r_down * lag, -params.r_up * lag)
    envelope = np.maximum(d_matrix[:, :, None] - spread[None, :, :], 0.0)
    return params.c * envelope.max(axis=1).sum(axis=1)


def oracle_costs(d_matrix, params: DispatchParams,
                 settings: SolverSettings = None) -> np.ndarray:
    """Batched oracle costs, one per row of ``d_matrix``.

    Uses the closed-form covering envelope whenever ``q >= c T`` (its
    optimality condition) and falls back to batched LP solves below
    that threshold.
    """
    d_matrix = np.atleast_2d(np.asarray(d_matrix, dtype=float))
    if d_matrix.shape[1] != params.T:
        raise ConfigError(
            f"d_matrix has {d_matrix.shape[1]} periods, expected {params.T}")
    if params.q >= params.c * params.T:
        return _oracle_costs_closed_form(d_matrix, params)
    problem = build_oracle_problem(params.T, params)
    b_cols = oracle_rhs(d_matrix, params)
    solutions = solve_many(problem, b_cols, settings or SolverSettings())
    bad = [s.status for s in solutions if s.status != OPTIMAL]
    if bad:
        raise SolverFailure(
            f"oracle batch: {len(bad)} of {len(solutions)} columns "
            f"ended {sorted(set(bad))}")
    return np.array([s.objective for s in solutions])


@dataclass(frozen=True)
class EvalResult:
    """Paired policy-versus-oracle statistics on one scenario set."""

    policy: str
    mean_cost: float
    oracle_cost: float
    ratio: float
    shortfall_freq: tuple
    n_scenarios: int
    seed: object = None


def _rollout_costs(policy, scenarios, params: DispatchParams):
    """Vectorized closed-loop rollout over a scenario batch."""
    T = params.T
    B = len(scenarios)
    d = np.stack([s.d for s in scenarios])
    g = np.empty((B, T))
    if hasattr(policy, "dispatch_batch"):
        eps_mat = np.stack([s.eps_stacked for s in scenarios])
        g_prev = None
        for t in range(T):
            raw = policy.dispatch_batch(eps_mat, t)
            if g_prev is None:
                g[:, t] = np.maximum(raw, 0.0)
            else:
                lo = np.maximum(0.0, g_prev - params.r_down)
                g[:, t] = np.clip(raw, lo, g_prev + params.r_up)
            g_prev = g[:, t]
    elif hasattr(policy, "decide_batch"):
        dhat = np.stack([s.dhat0 for s in scenarios]).astype(float)
        g_prev = None
        for t in range(T):
            g[:, t] = policy.decide_batch(dhat, t, g_prev)
            g_prev = g[:, t]
            if t < T - 1:
                dhat[:, t + 1:] += np.stack([s.eps[t] for s in scenarios])
    else:
        for j, scen in enumerate(scenarios):
            g[j], _ = simulate_policy(policy, scen, params)
    shortfall = np.maximum(d - g, 0.0)
    costs = params.c * g.sum(axis=1) + params.q * shortfall.sum(axis=1)
    freq = np.mean(d - g > SHORTFALL_EPS, axis=0)
    return costs, freq, d


def evaluate(policies: dict, scenarios, params: DispatchParams,
             oracle=None, lp_settings: SolverSettings = None,
             seed=None) -> dict:
    """Mean policy cost against the paired oracle mean, per policy.

    ``oracle`` optionally reuses precomputed per-scenario oracle costs
    (they depend only on the scenario set and params).
    """
    if not policies or not scenarios:
        raise ConfigError("evaluate needs at least one policy and scenario")
    if oracle is None:
        d_mat = np.stack([s.d for s in scenarios])
        oracle = oracle_costs(d_mat, params, lp_settings)
    oracle_mean = float(np.mean(oracle))
    results = {}
    for name, policy in policies.items():
        costs, freq, _ = _rollout_costs(policy, scenarios, params)
        mean_cost = float(np.mean(costs))
        results[name] = EvalResult(
            policy=name, mean_cost=mean_cost, oracle_cost=oracle_mean,
            ratio=mean_cost / oracle_mean, shortfall_freq=tuple(freq),
            n_scenarios=len(scenarios), seed=seed)
    return results


def _marginal_std_vector(model: ErrorModel) -> np.ndarray:
    """Marginal stds in the stacked stage-major coordinate order."""
    block, offset = eps_layout(model.T)
    return np.array([model.marginal_std(int(t), int(t) + 1 + int(j))
                     for t, j in zip(block, offset)])


def _sweep_rng(seed: int, day_idx: int, p_idx: int, stream: int):
    ss = np.random.SeedSequence(entropy=seed,
                                spawn_key=(day_idx, p_idx, stream))
    return np.random.default_rng(ss)


SWEEP_SOCP_TOL = 1e-4


def _evaluate_instance(inst, config: RunConfig, cc_policy,
                       lp_settings, scenario_mode: str):
    """Rows for one (day, penetration) cell; safe to run in a worker."""
    params = inst["params"]
    anchored = scenario_mode == "anchored"
    gauss_pols = {}
    if cc_policy is not None and "cc_gaussian" in config.policies:
        gauss_pols["cc_gaussian"] = cc_policy
    if "one_step" in config.policies:
        gauss_pols["one_step"] = VollOneStepApproxPolicy().fit(
            inst["model"], params)
    if "multi_step" in config.policies:
        gauss_pols["multi_step"] = MultiStepPolicy().fit(
            inst["model"], params)
    rows = []
    if gauss_pols:
        rng = _sweep_rng(config.seed, inst["day_idx"], inst["p_idx"], 0)
        scen = make_scenarios(
            inst["model"], config.n_scenarios, rng,
            dhat0=None if anchored else inst["dhat0"],
            day=inst["d"] if anchored else None)
        for name, res in evaluate(gauss_pols, scen, params,
                                  lp_settings=lp_settings).items():
            rows.append({"policy": name, "p": inst["p"],
                         "day": inst["day"], "mean_cost": res.mean_cost,
                         "oracle_cost": res.oracle_cost,
                         "ratio": res.ratio})
    if cc_policy is not None and "cc_laplace" in config.policies:
        model_l = ErrorModel(T=config.T, sigma=inst["model"].sigma,
                             law="laplace")
        rng = _sweep_rng(config.seed, inst["day_idx"], inst["p_idx"], 1)
        scen = make_scenarios(
            model_l, config.n_scenarios, rng,
            dhat0=None if anchored else inst["dhat0"],
            day=inst["d"] if anchored else None)
        res = evaluate({"cc_laplace": cc_policy}, scen, params,
                       lp_settings=lp_settings)["cc_laplace"]
        rows.append({"policy": "cc_laplace", "p": inst["p"],
                     "day": inst["day"], "mean_cost": res.mean_cost,
                     "oracle_cost": res.oracle_cost, "ratio": res.ratio})
    return rows


def summarize_rows(rows, config: RunConfig) -> dict:
    """Per-(policy, penetration) ratio means and standard errors."""
    summary = {"config": config.to_dict(), "seed": config.seed, "ratios": {}}
    for name in config.policies:
        summary["ratios"][name] = {}
        for p in config.penetrations:
            vals = np.array([r["ratio"] for r in rows
                             if r["policy"] == name and r["p"] == p])
            if vals.size == 0:
                continue
            se = (float(np.std(vals, ddof=1) / np.sqrt(vals.size))
                  if vals.size > 1 else 0.0)
            summary["ratios"][name][f"{p:.10g}"] = {
                "mean": float(np.mean(vals)), "se": se,
                "n_days": int(vals.size)}
    return summary


def penetration_sweep(days, config: RunConfig,
                      socp_settings: SolverSettings = None,
                      lp_settings: SolverSettings = None,
                      scenario_mode: str = "forward", jobs: int = 1):
    """Full policy-versus-penetration experiment on prepared day data.

    Returns ``(rows, summary)``: one row dict per (policy, penetration,
    day) with paired mean costs, and a summary with per-(policy, p)
    ratio means and standard errors plus the config echo.

    The default cone tolerance for the batched affine fits is looser
    than the solver default: plan errors at that level are orders of
    magnitude below the Monte Carlo noise of the evaluation, while the
    batch shares one factorization across every (day, penetration)
    instance and is the dominant cost of the sweep.

    ``scenario_mode`` selects forward sampling from the day's nominal
    forecast (synthetic runs) or anchored sampling that reproduces the
    recorded day exactly (data-driven runs). ``jobs`` > 1 fans the
    per-instance scenario evaluation out to a process pool; results are
    aggregated in instance order, so they do not depend on scheduling.
    """
    if not days:
        raise ConfigError("penetration_sweep needs at least one day")
    if scenario_mode not in ("forward", "anchored"):
        raise ConfigError(f"unknown scenario_mode {scenario_mode!r}")
    check_int(jobs, "jobs", minimum=1)
    T = config.T
    known = {"cc_gaussian", "cc_laplace", "one_step", "multi_step"}
    unknown = set(config.policies) - known
    if unknown:
        raise ConfigError(f"unknown policies: {sorted(unknown)}")
    need_cc = bool({"cc_gaussian", "cc_laplace"} & set(config.policies))

    instances = []
    for p_idx, p in enumerate(config.penetrations):
        for day_idx, day in enumerate(days):
            d = scale_wind(day.load, day.wind, p)
            r_down, r_up = calibrate_ramp(d, config.ramp_factor)
            params = config.dispatch_params(r_up=r_up, r_down=r_down)
            model = ErrorModel.proportional(T, d, config.sigma_rho, "gaussian")
            dhat0 = np.append(d, d[-1])
            instances.append({"p_idx": p_idx, "p": p, "day_idx": day_idx,
                              "day": day.date, "d": d, "params": params,
                              "model": model, "dhat0": dhat0})

    cc_policies = {i: None for i in range(len(instances))}
    if need_cc:
        first = instances[0]
        stacked = build_stacked_model(T, first["model"])
        rows_cc = build_chance_rows(T, first["params"])
        program = assemble_socp(first["dhat0"], stacked, rows_cc,
                                first["params"])
        b_cols = np.empty((program.problem.m, len(instances)))
        stds_all = []
        for i, inst in enumerate(instances):
            stds = _marginal_std_vector(inst["model"])
            stds_all.append(stds)
            b_cols[:, i] = assemble_rhs(program, inst["dhat0"], stds,
                                        inst["params"])
        _log.info("fitting %d affine policies in one cone batch",
                  len(instances))
        settings = socp_settings or SolverSettings(tol=SWEEP_SOCP_TOL)
        reference = solve(program.problem, settings)
        warm = ((reference.x, reference.s, reference.y)
                if reference.status == OPTIMAL else None)
        solutions = solve_many(program.problem, b_cols, settings,
                               warm_start=warm)
        for i, (inst, sol) in enumerate(zip(instances, solutions)):
            if sol.status != OPTIMAL:
                raise SolverFailure(
                    f"affine fit for day {inst['day']} at p={inst['p']} "
                    f"ended {sol.status}")
            policy = unpack_policy(program, sol.x, sigma_tilde=stds_all[i])
            cc_policies[i] = AffineDispatchPolicy().set_prefit(
                inst["model"], inst["params"], policy, sol)

    _log.info("evaluating %d instances (%d scenarios each, %d jobs)",
              len(instances), config.n_scenarios, jobs)
    rows = []
    if jobs == 1:
        for i, inst in enumerate(instances):
            rows.extend(_evaluate_instance(inst, config, cc_policies[i],
                                           lp_settings, scenario_mode))
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_evaluate_instance, inst, config,
                                   cc_policies[i], lp_settings, scenario_mode)
                       for i, inst in enumerate(instances)]
            for fut in futures:
                rows.extend(fut.result())
    return rows, summarize_rows(rows, config)

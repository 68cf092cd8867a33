"""Discretized dynamic-programming oracle for small dispatch instances.

Backward induction over a quantized error tree computes the state-action
value tables ``Q_t`` and cost-to-go ``J_t`` exactly (up to grid and
quantization resolution) for horizons ``T <= 4``. The oracle exists to
cross-check the closed-form lookahead targets and the threshold
structure of the optimal policy:

* the unconstrained grid argmin of ``Q_t`` approximates the stage
  target ``S_t``;
* the constrained argmin over the ramp window must coincide with that
  target clamped into the window (single-threshold structure);
* each ``Q_t`` row must have a single basin (discrete convexity).

Error quantization uses ``k`` equal-mass atoms per marginal coordinate,
placed at the quantile midpoints ``F^{-1}((i+0.5)/k)``. Coordinates
that only update the terminal bookkeeping period never influence any
cost or decision and are not branched, which keeps the tree exact and
small.

Two penalty kinds are supported. ``Voll`` charges ``q (d - g)^+``
inside the cost. ``Lolp`` treats shortfalls as constraints: a cell's
penalty count tracks its own deterministic shortfall plus a flag raised
when the probability mass of risk-infeasible children exceeds
``beta0``; penalties steer argmins through a large finite surrogate
``big_m`` but never contaminate the stored costs. The terminal value
is identically zero by construction (the recursion seeds the last stage
with no future term).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .distributions import error_quantile
from .errors import BudgetExceededError, ConfigError
from .forecast import ErrorModel
from .params import DispatchParams
from .validation import check_int, check_scalar, check_vector

MAX_HORIZON = 4
DEFAULT_CELL_BUDGET = 10_000_000


@dataclass(frozen=True)
class Voll:
    """Shortfall penalty ``q (d - g)^+`` added to the dispatch cost."""

    q: float

    def __post_init__(self):
        check_scalar(self.q, "q", minimum=0.0, strict_min=True)


@dataclass(frozen=True)
class Lolp:
    """Shortfall-probability constraint at tolerance ``beta0``.

    ``big_m`` is the finite surrogate for the infinite penalty; ``None``
    defers to ``1e6 * c * T`` at solve time.
    """

    beta0: float
    big_m: float | None = None

    def __post_init__(self):
        check_scalar(self.beta0, "beta0", minimum=0.0, maximum=0.5,
                     strict_min=True, strict_max=True)
        if self.big_m is not None:
            check_scalar(self.big_m, "big_m", minimum=0.0, strict_min=True)


@dataclass(frozen=True)
class GridSpec:
    """Dispatch grid plus the error quantization resolution."""

    g_min: float
    g_max: float
    step: float
    n_atoms: int = 21

    def __post_init__(self):
        check_scalar(self.g_min, "g_min", minimum=0.0)
        check_scalar(self.g_max, "g_max", minimum=self.g_min, strict_min=True)
        check_scalar(self.step, "step", minimum=0.0, strict_min=True)
        check_int(self.n_atoms, "n_atoms", minimum=1)

    def grid(self) -> np.ndarray:
        n = int(math.floor((self.g_max - self.g_min) / self.step + 1e-9)) + 1
        return self.g_min + self.step * np.arange(n)

    def quantize(self, std: float, law: str):
        """Equal-mass atoms and probabilities for one error coordinate."""
        k = self.n_atoms
        if std == 0.0:
            atoms = np.zeros(k)
        else:
            levels = (np.arange(k) + 0.5) / k
            atoms = np.array([error_quantile(p, std, law) for p in levels])
        return atoms, np.full(k, 1.0 / k)


def default_grid(dhat0, params: DispatchParams, model: ErrorModel,
                 step: float = 0.25, n_atoms: int = 21) -> GridSpec:
    """A grid generously covering every plausible dispatch level."""
    dhat0 = check_vector(dhat0, "dhat0", size=params.T + 1)
    sig_max = max(model.sigma)
    pad = 10.0 * sig_max + 2.0 * max(params.r_up, params.r_down) + 5.0 * step
    lo = max(0.0, math.floor((float(np.min(dhat0)) - pad) / step) * step)
    hi = math.ceil((float(np.max(dhat0)) + pad) / step) * step
    return GridSpec(g_min=lo, g_max=hi, step=step, n_atoms=n_atoms)


@dataclass
class DPSolution:
    """Backward-induction tables plus the index geometry to read them.

    Per stage ``t``: ``Q[t]`` is the composite row used for argmins
    (costs plus ``big_m`` penalties under Lolp), ``Qc[t]`` the pure
    costs, ``Qp[t]`` the penalty counts (``None`` under Voll),
    ``policy_idx[t][node, i_prev]`` the leftmost window argmin,
    ``Jc[t]`` / ``Jp[t]`` the cost and penalty of that choice. Stage 0
    additionally reports the free-dispatch optimum ``J0`` at ``g0``.
    """

    T: int
    kind: object
    grid: np.ndarray
    down_steps: int
    up_steps: int
    node_demand: list
    Q: list
    Qc: list
    Qp: list
    policy_idx: list
    Jc: list
    Jp: list
    J0: float
    g0: float
    n_nodes: list
    children_per_node: list
    big_m: float

    @property
    def is_lolp(self) -> bool:
        return isinstance(self.kind, Lolp)


def _stage_layout(dhat0, grid: GridSpec, model: ErrorModel, T: int):
    """Per-stage realized demands, child weights, and node counts.

    Node order is row-major over the stage-combination indices, so the
    children of node ``nu`` at stage ``t`` occupy the contiguous block
    ``nu * kids[t] + [0, kids[t])`` at stage ``t + 1``. Only error
    coordinates that update a dispatched period (``t + 1 + j <= T - 1``)
    are branched.
    """
    k = grid.n_atoms
    n_eff = [max(T - 1 - t, 0) for t in range(T)]
    atoms = []
    weights = []
    for s in range(T):
        coords = [grid.quantize(model.marginal_std(s, s + 1 + j), model.law)
                  for j in range(n_eff[s])]
        atoms.append([a for a, _ in coords])
        combos = k ** n_eff[s]
        w = np.ones(combos)
        for j, (_, probs) in enumerate(coords):
            digits = (np.arange(combos) // k ** (n_eff[s] - 1 - j)) % k
            w *= probs[digits]
        weights.append(w)
    demands = []
    for t in range(T):
        d = np.asarray([dhat0[t]])
        for s in range(t):
            j = t - s - 1
            combos = k ** n_eff[s]
            digits = (np.arange(combos) // k ** (n_eff[s] - 1 - j)) % k
            contrib = atoms[s][j][digits]
            d = (d[:, None] + contrib[None, :]).reshape(-1)
        demands.append(d)
    n_nodes = [int(k ** sum(n_eff[:t])) for t in range(T)]
    kids = [k ** e for e in n_eff]
    return demands, weights, n_nodes, kids


def _window_argmin(Q, down, up):
    """Leftmost argmin of each row over the index window ``[i-down, i+up]``."""
    n = Q.shape[-1]
    pad_l = np.full(Q.shape[:-1] + (down,), np.inf)
    pad_r = np.full(Q.shape[:-1] + (up,), np.inf)
    padded = np.concatenate([pad_l, Q, pad_r], axis=-1)
    windows = sliding_window_view(padded, down + up + 1, axis=-1)
    rel = np.argmin(windows, axis=-1)
    return (rel + np.arange(n) - down).astype(np.int32)


def backward_induction(dhat0, grid: GridSpec, model: ErrorModel,
                       params: DispatchParams, kind,
                       cell_budget: int = DEFAULT_CELL_BUDGET) -> DPSolution:
    """Exact Bellman recursion over the quantized error tree."""
    T = params.T
    if T > MAX_HORIZON:
        raise ConfigError(f"horizon {T} exceeds the oracle limit {MAX_HORIZON}")
    if model.T != T:
        raise ConfigError(f"model horizon {model.T} does not match params {T}")
    dhat0 = check_vector(dhat0, "dhat0", size=T + 1)
    if isinstance(kind, Voll):
        if kind.q <= 3.0 * params.c:
            raise ConfigError("Voll penalty requires q > 3c")
        big_m = 0.0
    elif isinstance(kind, Lolp):
        big_m = kind.big_m if kind.big_m is not None else 1e6 * params.c * T
    else:
        raise ConfigError(f"unsupported penalty kind {kind!r}")

    g = grid.grid()
    n_grid = g.size
    demands, weights, n_nodes, kids = _stage_layout(dhat0, grid, model, T)
    total_cells = sum(n * n_grid for n in n_nodes)
    if total_cells > cell_budget:
        raise BudgetExceededError(
            f"{total_cells} table cells exceed the budget {cell_budget}")

    down = int(math.floor(params.r_down / grid.step + 1e-9))
    up = int(math.floor(params.r_up / grid.step + 1e-9))
    is_lolp = isinstance(kind, Lolp)
    q_pen = kind.q if isinstance(kind, Voll) else 0.0

    Q = [None] * T
    Qc = [None] * T
    Qp = [None] * T
    policy_idx = [None] * T
    Jc = [None] * T
    Jp = [None] * T

    for t in range(T - 1, -1, -1):
        d = demands[t][:, None]
        shortfall = np.maximum(d - g[None, :], 0.0)
        if t == T - 1:
            future_c = 0.0
            risk = None
        else:
            w = weights[t]
            future_c = np.einsum(
                "nkg,k->ng", Jc[t + 1].reshape(n_nodes[t], kids[t], n_grid), w)
            if is_lolp:
                flags = (Jp[t + 1] >= 1).reshape(n_nodes[t], kids[t], n_grid)
                risk = np.einsum("nkg,k->ng", flags.astype(float), w)
        qc = params.c * g[None, :] + q_pen * shortfall + future_c
        if is_lolp:
            qp = (d > g[None, :]).astype(np.int32)
            if risk is not None:
                qp = qp + (risk > kind.beta0).astype(np.int32)
            q_comp = qc + big_m * qp
        else:
            qp = None
            q_comp = qc
        Q[t], Qc[t], Qp[t] = q_comp, qc, qp
        idx = _window_argmin(q_comp, down, up)
        policy_idx[t] = idx
        Jc[t] = np.take_along_axis(qc, idx, axis=-1)
        Jp[t] = (np.take_along_axis(qp, idx, axis=-1)
                 if is_lolp else np.zeros_like(idx, dtype=np.int32))

    free_idx = int(np.argmin(Q[0][0]))
    J0 = float(Qc[0][0, free_idx])
    g0 = float(g[free_idx])
    return DPSolution(T=T, kind=kind, grid=g, down_steps=down, up_steps=up,
                      node_demand=demands, Q=Q, Qc=Qc, Qp=Qp,
                      policy_idx=policy_idx, Jc=Jc, Jp=Jp, J0=J0, g0=g0,
                      n_nodes=n_nodes, children_per_node=kids, big_m=big_m)


def extract_target(sol: DPSolution, t: int, node: int = 0) -> float:
    """Grid argmin of ``Q_t`` over all dispatch levels (clamp ignored).

    Ties break toward the smallest dispatch.
    """
    check_int(t, "t", minimum=0, maximum=sol.T - 1)
    check_int(node, "node", minimum=0, maximum=sol.n_nodes[t] - 1)
    return float(sol.grid[int(np.argmin(sol.Q[t][node]))])


def _basin_count(row, tol):
    """Number of strict basins in a sampled curve, ignoring ``tol`` noise."""
    d = np.diff(row)
    sig = np.where(d > tol, 1, np.where(d < -tol, -1, 0))
    sig = sig[sig != 0]
    if sig.size == 0:
        return 1
    turns = int(np.sum((sig[:-1] == 1) & (sig[1:] == -1)))
    return 1 + turns


def verify_threshold_structure(sol: DPSolution, slack: int = 1,
                               max_reported: int = 100) -> dict:
    """Scan every stage table for threshold-policy and convexity structure.

    For each ``(t, node, g_prev)`` the stage target (full-row argmin)
    clamped into the ramp window must achieve the window minimum within
    ``slack`` grid steps up to a tie tolerance. Each row must have a
    single basin; under the shortfall-probability kind the basin check
    runs on the penalty-free tail of the cost row and risk-infeasible
    cells are skipped.
    """
    g = sol.grid
    n_grid = g.size
    report = {"threshold_violations": [], "basin_violations": [],
              "n_threshold_violations": 0, "n_basin_violations": 0,
              "cells_checked": 0, "cells_skipped_infeasible": 0,
              "max_threshold_gap": 0.0}
    i_prev = np.arange(n_grid)
    lo = np.maximum(i_prev - sol.down_steps, 0)
    hi = np.minimum(i_prev + sol.up_steps, n_grid - 1)
    for t in range(sol.T):
        Qt = sol.Q[t]
        tie_tol = 1e-9 * (1.0 + float(np.max(np.abs(sol.Qc[t]))))
        for node in range(sol.n_nodes[t]):
            row = Qt[node]
            s_idx = int(np.argmin(row))
            if sol.is_lolp:
                free = np.flatnonzero(sol.Qp[t][node] == 0)
                basins = (_basin_count(sol.Qc[t][node][free[0]:], tie_tol)
                          if free.size else 1)
            else:
                basins = _basin_count(row, tie_tol)
            if basins > 1:
                report["n_basin_violations"] += 1
                if len(report["basin_violations"]) < max_reported:
                    report["basin_violations"].append(
                        {"t": t, "node": node, "basins": basins})
            window_min = row[sol.policy_idx[t][node]]
            feasible = (sol.Jp[t][node] < 1 if sol.is_lolp
                        else np.ones(n_grid, dtype=bool))
            clipped = np.clip(s_idx, lo, hi)
            best = np.full(n_grid, np.inf)
            for delta in range(-slack, slack + 1):
                cand = np.clip(clipped + delta, lo, hi)
                best = np.minimum(best, row[cand])
            gaps = best - window_min
            report["cells_checked"] += int(np.sum(feasible))
            report["cells_skipped_infeasible"] += int(np.sum(~feasible))
            bad = feasible & (gaps > tie_tol)
            if np.any(bad):
                report["n_threshold_violations"] += int(np.sum(bad))
                report["max_threshold_gap"] = max(
                    report["max_threshold_gap"], float(np.max(gaps[bad])))
                for i in np.flatnonzero(bad):
                    if len(report["threshold_violations"]) >= max_reported:
                        break
                    report["threshold_violations"].append(
                        {"t": t, "node": node, "i_prev": int(i),
                         "expected": int(clipped[i]), "gap": float(gaps[i])})
    report["ok"] = (report["n_threshold_violations"] == 0
                    and report["n_basin_violations"] == 0)
    return report


def structure_check_suite(base_seed: int = 0, n_instances: int = 5,
                          T: int = 3, step: float = 0.5,
                          n_atoms: int = 15) -> dict:
    """Threshold-structure scan over a seeded bank of small instances.

    Each instance draws a random three-period forecast, calibrates
    ramps from its hourly changes, and runs backward induction under
    both penalty kinds. The returned report aggregates the per-instance
    verification results; ``ok`` requires zero violations everywhere.
    """
    check_int(base_seed, "base_seed", minimum=0)
    check_int(n_instances, "n_instances", minimum=1)
    entries = []
    for i in range(n_instances):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=base_seed, spawn_key=(i,)))
        base = rng.uniform(60.0, 140.0, size=T)
        dhat0 = np.append(base, base[-1])
        r = 0.8 * float(np.mean(np.abs(np.diff(base))))
        params = DispatchParams(T=T, r_up=r, r_down=r, c=50.0, q=2000.0)
        rho = float(rng.uniform(0.02, 0.06))
        model = ErrorModel.proportional(T, base, rho, "gaussian")
        grid = default_grid(dhat0, params, model, step=step, n_atoms=n_atoms)
        for kind_name, kind in (("voll", Voll(q=params.q)),
                                ("lolp", Lolp(beta0=params.betas[0]))):
            sol = backward_induction(dhat0, grid, model, params, kind)
            rep = verify_threshold_structure(sol)
            entries.append({
                "instance": i, "kind": kind_name, "rho": rho,
                "ramp": r, "ok": rep["ok"],
                "n_threshold_violations": rep["n_threshold_violations"],
                "n_basin_violations": rep["n_basin_violations"],
                "cells_checked": rep["cells_checked"],
                "cells_skipped_infeasible": rep["cells_skipped_infeasible"],
                "max_threshold_gap": rep["max_threshold_gap"]})
    return {"base_seed": base_seed, "n_instances": n_instances,
            "horizon": T, "grid_step": step, "n_atoms": n_atoms,
            "instances": entries,
            "cells_checked": sum(e["cells_checked"] for e in entries),
            "ok": all(e["ok"] for e in entries)}

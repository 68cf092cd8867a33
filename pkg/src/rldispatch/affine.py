"""Chance-constrained affine dispatch policies via second-order cone programming.

The dispatch is restricted to the strictly causal affine family
``g_t = a_t + sum_{tau < t} G[t, tau] . eps_tau`` over the marginal
forecast errors. Stacking the forecast recursion over all stages makes
every per-stage constraint (demand cover, nonnegativity, ramp pair) a
linear inequality in the stacked error vector; requiring each to hold
with probability ``1 - beta_k`` under the Gaussian model turns row ``i``
into the second-order cone constraint

    h_i + alpha_i * || Sigma^{1/2} P_i ||_2 <= 0,

with ``h = Hd A dhat0 - y + Hg a`` and ``P = Hd C + Hg G``.

The assembled program uses the substituted gain variables
``G' = G Sigma^{1/2}`` (per error coordinate). Under that substitution
the constraint matrix depends only on the horizon and the betas, while
every instance quantity (initial forecast, ramp limits, error scale)
lands in the offset vector ``b``. Families of instances that share the
horizon and betas can therefore be solved as one batch through
``solver.solve_many``. Error coordinates with zero marginal deviation
are almost surely zero, so their gain columns are dropped and the
recovered policy carries zeros there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import solver as cone_solver
from .distributions import alpha_from_beta, sample_errors
from .errors import ConfigError, SolverFailure
from .forecast import ErrorModel, update_matrix
from .params import DispatchParams, feasible_interval
from .validation import check_int, check_vector

ROW_COVER = "cover"
ROW_NONNEG = "nonneg"
ROW_RAMP_DOWN = "ramp_down"
ROW_RAMP_UP = "ramp_up"


@dataclass(frozen=True)
class StackedModel:
    """Stacked forecast recursion ``dhat_stacked = A dhat0 + C eps``.

    ``A`` holds T+1 stacked identities; block row ``s`` of ``C`` applies
    the first ``s`` update masks; ``Sigma`` is the diagonal covariance
    of the stacked error vector of dimension ``N = T(T+1)/2``.
    """

    T: int
    A: np.ndarray
    C: np.ndarray
    Sigma: np.ndarray
    sigma_tilde: np.ndarray
    eps_block: np.ndarray
    eps_offset: np.ndarray

    @property
    def N(self) -> int:
        return self.sigma_tilde.size


def eps_layout(T: int):
    """Block index and within-block offset of each stacked error coordinate."""
    block = np.concatenate([np.full(T - tau, tau, dtype=np.intp)
                            for tau in range(T)])
    offset = np.concatenate([np.arange(T - tau, dtype=np.intp)
                             for tau in range(T)])
    return block, offset


def build_stacked_model(T: int, model: ErrorModel) -> StackedModel:
    """Assemble the stacked forecast matrices for horizon ``T``."""
    check_int(T, "T", minimum=1)
    if model.T != T:
        raise ConfigError(f"model horizon {model.T} does not match T={T}")
    n = T + 1
    A = np.tile(np.eye(n), (n, 1))
    block, offset = eps_layout(T)
    N = block.size
    C = np.zeros((n * n, N))
    col = 0
    for tau in range(T):
        mask = update_matrix(T, tau)
        width = T - tau
        for s in range(tau + 1, n):
            C[s * n:(s + 1) * n, col:col + width] = mask
        col += width
    sigma_tilde = np.array([model.marginal_std(int(tau), int(tau) + 1 + int(j))
                            for tau, j in zip(block, offset)])
    return StackedModel(T=T, A=A, C=C, Sigma=np.diag(sigma_tilde ** 2),
                        sigma_tilde=sigma_tilde, eps_block=block,
                        eps_offset=offset)


@dataclass(frozen=True)
class ChanceRows:
    """Row data of the linearized per-stage constraints.

    Blocks in order: demand cover (T rows), nonnegativity (T rows),
    ramp-down (T-1), ramp-up (T-1). ``alpha`` maps each row's violation
    budget through the Gaussian quantile.
    """

    T: int
    Hd: np.ndarray
    Hg: np.ndarray
    y: np.ndarray
    alpha: np.ndarray
    kinds: tuple

    @property
    def n_rows(self) -> int:
        return self.y.size


def build_chance_rows(T: int, params: DispatchParams) -> ChanceRows:
    check_int(T, "T", minimum=1)
    n = T + 1
    n_rows = 4 * T - 2
    Hd = np.zeros((n_rows, n * n))
    Hg = np.zeros((n_rows, T))
    y = np.zeros(n_rows)
    alpha = np.zeros(n_rows)
    kinds = []
    for t in range(T):
        # Cover row t selects coordinate t of stacked block t (the
        # realized demand of period t) and compares it against g_t.
        Hd[t, t * n + t] = 1.0
        Hg[t, t] = -1.0
        alpha[t] = alpha_from_beta(params.betas[0])
        kinds.append((ROW_COVER, t))
    for t in range(T):
        i = T + t
        Hg[i, t] = -1.0
        alpha[i] = alpha_from_beta(params.betas[1])
        kinds.append((ROW_NONNEG, t))
    for t in range(T - 1):
        i = 2 * T + t
        Hg[i, t] = 1.0
        Hg[i, t + 1] = -1.0
        y[i] = params.r_down
        alpha[i] = alpha_from_beta(params.betas[2])
        kinds.append((ROW_RAMP_DOWN, t))
    for t in range(T - 1):
        i = 3 * T - 1 + t
        Hg[i, t] = -1.0
        Hg[i, t + 1] = 1.0
        y[i] = params.r_up
        alpha[i] = alpha_from_beta(params.betas[3])
        kinds.append((ROW_RAMP_UP, t))
    return ChanceRows(T=T, Hd=Hd, Hg=Hg, y=y, alpha=alpha, kinds=tuple(kinds))


@dataclass(frozen=True)
class AffinePolicy:
    """Strictly causal affine dispatch rule ``g_t = a_t + (G eps)_t``."""

    T: int
    a: np.ndarray
    G: np.ndarray
    eps_block: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = check_vector(self.a, "a", size=self.T)
        G = np.asarray(self.G, dtype=float)
        N = self.eps_block.size
        if G.shape != (self.T, N):
            raise ValueError(f"G must have shape ({self.T}, {N}), got {G.shape}")
        for t in range(self.T):
            bad = self.eps_block >= t
            if np.any(G[t, bad] != 0.0):
                raise ValueError(f"gain row {t} uses non-causal error blocks")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "G", G)


@dataclass(frozen=True)
class AffineProgram:
    """Cone program for the affine policy plus the index maps to read it back.

    ``g_col_index[t, l]`` is the column of the substituted gain
    ``G'[t, l]`` or -1 when the entry is structurally absent (non-causal
    or zero-deviation coordinate). The constraint matrix depends only on
    ``(T, betas)``; use :func:`assemble_rhs` to obtain the offset vector
    of another instance with the same structure. The ``rhs_*`` fields
    are precomputed scatter indices for that fast path.
    """

    T: int
    problem: cone_solver.ConicProblem
    a_cols: np.ndarray
    g_col_index: np.ndarray
    sigma_tilde: np.ndarray
    alpha: np.ndarray
    kinds: tuple
    cone_starts: np.ndarray
    z_tmax: np.ndarray
    dhat0: np.ndarray
    rhs_cover_head: np.ndarray
    rhs_cover_period: np.ndarray
    rhs_rd_head: np.ndarray
    rhs_ru_head: np.ndarray
    rhs_z_pos: np.ndarray
    rhs_z_l: np.ndarray
    rhs_z_alpha: np.ndarray

    @property
    def n_vars(self) -> int:
        return self.problem.n


def _row_tmax(kind, idx):
    """Largest dispatch stage appearing in a chance row's g terms."""
    if kind in (ROW_COVER, ROW_NONNEG):
        return idx
    return idx + 1


def assemble_socp(dhat0, stacked: StackedModel, rows: ChanceRows,
                  params: DispatchParams) -> AffineProgram:
    """Compile the chance rows into one standard-form cone program."""
    T = stacked.T
    if rows.T != T or params.T != T:
        raise ConfigError("stacked model, chance rows, and params disagree on T")
    dhat0 = check_vector(dhat0, "dhat0", size=T + 1)
    N = stacked.N
    sig = stacked.sigma_tilde
    active_l = sig > 0.0

    a_cols = np.arange(T, dtype=np.intp)
    g_col_index = np.full((T, N), -1, dtype=np.intp)
    col = T
    for t in range(T):
        for l in range(N):
            if active_l[l] and stacked.eps_block[l] < t:
                g_col_index[t, l] = col
                col += 1
    n_vars = col

    HdA = rows.Hd @ stacked.A
    HdC = rows.Hd @ stacked.C

    cones = []
    cone_starts = np.zeros(rows.n_rows, dtype=np.intp)
    z_tmax = np.zeros(rows.n_rows, dtype=np.intp)
    data, rix, cix = [], [], []
    b_parts = []
    cover_head, cover_period = [], []
    rd_head, ru_head = [], []
    z_pos, z_lix, z_alpha = [], [], []
    m = 0
    for i, (kind, idx) in enumerate(rows.kinds):
        cone_starts[i] = m
        tmax = _row_tmax(kind, idx)
        z_tmax[i] = tmax
        z_l = np.flatnonzero(active_l & (stacked.eps_block < tmax))
        g_terms = np.flatnonzero(rows.Hg[i])
        if kind == ROW_COVER:
            cover_head.append(m)
            cover_period.append(idx)
        elif kind == ROW_RAMP_DOWN:
            rd_head.append(m)
        elif kind == ROW_RAMP_UP:
            ru_head.append(m)
        # Head coordinate: t_i = (y_i - (Hd A dhat0)_i) - Hg_i . a
        for t in g_terms:
            data.append(rows.Hg[i, t])
            rix.append(m)
            cix.append(t)
        b_parts.append(rows.y[i] - float(HdA[i] @ dhat0))
        m += 1
        for l in z_l:
            b_parts.append(rows.alpha[i] * sig[l] * HdC[i, l])
            if HdC[i, l] != 0.0:
                z_pos.append(m)
                z_lix.append(l)
                z_alpha.append(rows.alpha[i] * HdC[i, l])
            for t in g_terms:
                c_ix = g_col_index[t, l]
                if c_ix >= 0:
                    data.append(-rows.alpha[i] * rows.Hg[i, t])
                    rix.append(m)
                    cix.append(c_ix)
            m += 1
        if z_l.size:
            cones.append(cone_solver.SecondOrder(1 + z_l.size))
        else:
            cones.append(cone_solver.NonNeg(1))

    c_vec = np.zeros(n_vars)
    c_vec[a_cols] = params.c
    A_mat = sp.csr_matrix((data, (rix, cix)), shape=(m, n_vars))
    problem = cone_solver.ConicProblem(c=c_vec, A=A_mat,
                                       b=np.asarray(b_parts), cones=tuple(cones))
    return AffineProgram(T=T, problem=problem, a_cols=a_cols,
                         g_col_index=g_col_index, sigma_tilde=sig.copy(),
                         alpha=rows.alpha.copy(), kinds=rows.kinds,
                         cone_starts=cone_starts, z_tmax=z_tmax,
                         dhat0=dhat0.copy(),
                         rhs_cover_head=np.asarray(cover_head, dtype=np.intp),
                         rhs_cover_period=np.asarray(cover_period, dtype=np.intp),
                         rhs_rd_head=np.asarray(rd_head, dtype=np.intp),
                         rhs_ru_head=np.asarray(ru_head, dtype=np.intp),
                         rhs_z_pos=np.asarray(z_pos, dtype=np.intp),
                         rhs_z_l=np.asarray(z_lix, dtype=np.intp),
                         rhs_z_alpha=np.asarray(z_alpha))


def assemble_rhs(program: AffineProgram, dhat0, sigma_tilde,
                 params: DispatchParams) -> np.ndarray:
    """Offset vector of a structurally identical instance.

    The instance must share the horizon, betas, and the positivity
    pattern of the marginal deviations with the program's reference
    instance; initial forecast, ramp limits, and deviation magnitudes
    are free. Only cover rows carry forecast-error offsets in their cone
    coordinates (the other blocks have a zero forecast selector), so the
    construction is pure index scatter.
    """
    T = program.T
    dhat0 = check_vector(dhat0, "dhat0", size=T + 1)
    sigma_tilde = check_vector(sigma_tilde, "sigma_tilde",
                               size=program.sigma_tilde.size, nonnegative=True)
    if np.any((sigma_tilde > 0.0) != (program.sigma_tilde > 0.0)):
        raise ConfigError(
            "sigma_tilde positivity pattern differs from the program structure")
    beta_of_kind = {ROW_COVER: 0, ROW_NONNEG: 1, ROW_RAMP_DOWN: 2,
                    ROW_RAMP_UP: 3}
    for i, (kind, _) in enumerate(program.kinds):
        if alpha_from_beta(params.betas[beta_of_kind[kind]]) != program.alpha[i]:
            raise ConfigError("betas differ from the program structure")

    b = np.zeros(program.problem.m)
    b[program.rhs_cover_head] = -dhat0[program.rhs_cover_period]
    b[program.rhs_rd_head] = params.r_down
    b[program.rhs_ru_head] = params.r_up
    b[program.rhs_z_pos] = program.rhs_z_alpha * sigma_tilde[program.rhs_z_l]
    return b


def unpack_policy(program: AffineProgram, x, sigma_tilde=None) -> AffinePolicy:
    """Read (a, G) out of a solution vector, undoing the gain substitution."""
    x = np.asarray(x, dtype=float)
    if x.size != program.n_vars:
        raise ValueError(f"x has {x.size} entries, expected {program.n_vars}")
    sig = program.sigma_tilde if sigma_tilde is None else np.asarray(sigma_tilde)
    T = program.T
    N = program.sigma_tilde.size
    block, _ = eps_layout(T)
    a = x[program.a_cols].copy()
    G = np.zeros((T, N))
    for t in range(T):
        cols = program.g_col_index[t]
        present = cols >= 0
        G[t, present] = x[cols[present]] / sig[present]
    return AffinePolicy(T=T, a=a, G=G, eps_block=block)


def solve_affine_policy(program: AffineProgram, settings=None):
    """Solve the assembled program. Returns ``(policy_or_None, solution)``.

    A non-optimal status yields ``policy = None`` so infeasibility is
    always explicit at the call site.
    """
    if settings is None:
        settings = cone_solver.SolverSettings()
    solution = cone_solver.solve(program.problem, settings)
    if solution.status != cone_solver.OPTIMAL:
        return None, solution
    return unpack_policy(program, solution.x), solution


def execute_affine(policy: AffinePolicy, eps_history, t) -> float:
    """Raw affine dispatch at stage ``t`` from realized error history.

    ``eps_history`` holds the marginal error vectors of stages
    ``0..t-1`` (at least); entry ``tau`` must have length ``T - tau``.
    """
    check_int(t, "t", minimum=0, maximum=policy.T - 1)
    if t > 0 and (eps_history is None or len(eps_history) < t):
        have = 0 if eps_history is None else len(eps_history)
        raise ValueError(
            f"stage {t} needs {t} realized error vectors, got {have}")
    g = float(policy.a[t])
    col = 0
    for tau in range(policy.T):
        width = policy.T - tau
        if tau < t:
            eps = np.asarray(eps_history[tau], dtype=float)
            if eps.size != width:
                raise ValueError(
                    f"eps_history[{tau}] must have length {width}, got {eps.size}")
            g += float(policy.G[t, col:col + width] @ eps)
        col += width
    return g


def project_feasible(g_raw, g_prev, params: DispatchParams) -> float:
    """Nearest ramp-feasible dispatch to a raw affine output."""
    lo, hi = feasible_interval(g_prev, params)
    return float(min(max(float(g_raw), lo), hi))


def chance_margins(policy: AffinePolicy, stacked: StackedModel,
                   rows: ChanceRows, dhat0) -> np.ndarray:
    """Left sides ``h_i + alpha_i ||Sigma^{1/2} P_i||`` for a candidate policy."""
    dhat0 = check_vector(dhat0, "dhat0", size=stacked.T + 1)
    h = rows.Hd @ stacked.A @ dhat0 - rows.y + rows.Hg @ policy.a
    P = rows.Hd @ stacked.C + rows.Hg @ policy.G
    norms = np.linalg.norm(P * stacked.sigma_tilde[None, :], axis=1)
    return h + rows.alpha * norms


def violation_frequencies(policy: AffinePolicy, stacked: StackedModel,
                          rows: ChanceRows, dhat0, rng, n_samples=10_000,
                          law="gaussian", atol=1e-4) -> np.ndarray:
    """Per-row Monte Carlo violation frequency of the linear constraints.

    Margins within ``atol`` of zero count as satisfied. Binding rows sit
    on their boundary only up to solver tolerance; in particular a row
    whose optimum needs an exactly tracked error term keeps a
    sub-tolerance residual amplitude, and without the guard its
    frequency would report the sign of numerical roundoff (about one
    half) instead of a probability. The default is several orders of
    magnitude below any stochastic margin excursion yet above the
    amplitude the solver tolerance admits.
    """
    check_int(n_samples, "n_samples", minimum=1)
    dhat0 = check_vector(dhat0, "dhat0", size=stacked.T + 1)
    E = sample_errors(rng, stacked.sigma_tilde[:, None], law,
                      size=(stacked.N, n_samples))
    d_stack = stacked.A @ dhat0[:, None] + stacked.C @ E
    g = policy.a[:, None] + policy.G @ E
    margins = rows.Hd @ d_stack + rows.Hg @ g - rows.y[:, None]
    return np.mean(margins > atol, axis=1)


class AffineDispatchPolicy:
    """Estimator wrapper fitting one affine rule per instance.

    ``fit`` assembles and solves the cone program for a given initial
    forecast; ``decide`` executes the affine rule on realized errors and
    projects into the ramp-feasible interval. With
    ``resolve_each_stage=True`` the program is re-solved on the
    remaining horizon at every stage (receding horizon, experimental;
    the refit first stage is clamped against the executed previous
    dispatch).
    """

    def __init__(self, resolve_each_stage=False, solver_settings=None):
        self.resolve_each_stage = resolve_each_stage
        self.solver_settings = solver_settings

    def get_params(self, deep=True):
        return {"resolve_each_stage": self.resolve_each_stage,
                "solver_settings": self.solver_settings}

    def set_params(self, **kwargs):
        for key, value in kwargs.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, model: ErrorModel, params: DispatchParams, dhat0=None):
        if dhat0 is None:
            raise ConfigError("AffineDispatchPolicy.fit requires dhat0")
        if model.T != params.T:
            raise ConfigError(
                f"model horizon {model.T} does not match params horizon {params.T}")
        self.model_ = model
        self.params_ = params
        stacked = build_stacked_model(params.T, model)
        rows = build_chance_rows(params.T, params)
        self.stacked_ = stacked
        self.rows_ = rows
        self.program_ = assemble_socp(dhat0, stacked, rows, params)
        policy, solution = solve_affine_policy(self.program_,
                                               self.solver_settings)
        self.solution_ = solution
        if policy is None:
            raise SolverFailure(
                f"affine policy fit failed with status {solution.status}")
        self.policy_ = policy
        return self

    def _require_fitted(self):
        if not hasattr(self, "policy_"):
            raise ConfigError(
                "AffineDispatchPolicy is not fitted; call fit() first")

    def set_prefit(self, model, params, policy, solution=None):
        """Install an externally solved policy (batch fitting path)."""
        self.model_ = model
        self.params_ = params
        self.policy_ = policy
        self.solution_ = solution
        return self

    def decide(self, state, g_prev, eps_history=None) -> float:
        self._require_fitted()
        if self.resolve_each_stage and state.t > 0:
            g_raw = self._refit_first_dispatch(state)
        else:
            g_raw = execute_affine(self.policy_, eps_history, state.t)
        return project_feasible(g_raw, g_prev, self.params_)

    def dispatch_batch(self, eps_stacked, t) -> np.ndarray:
        """Raw affine dispatches for rows of stacked error vectors."""
        self._require_fitted()
        return self.policy_.a[t] + eps_stacked @ self.policy_.G[t]

    def _refit_first_dispatch(self, state) -> float:
        rem = self.params_.T - state.t
        sigma_tail = tuple(self.model_.sigma[:rem + 1])
        sub_model = ErrorModel(T=rem, sigma=sigma_tail, law=self.model_.law)
        sub_params = DispatchParams(
            T=rem, r_up=self.params_.r_up, r_down=self.params_.r_down,
            c=self.params_.c, q=self.params_.q, betas=self.params_.betas)
        stacked = build_stacked_model(rem, sub_model)
        rows = build_chance_rows(rem, sub_params)
        program = assemble_socp(state.dhat[state.t:], stacked, rows, sub_params)
        policy, solution = solve_affine_policy(program, self.solver_settings)
        if policy is None:
            raise SolverFailure(
                f"receding-horizon refit failed with status {solution.status} "
                f"at stage {state.t}")
        return float(policy.a[0])

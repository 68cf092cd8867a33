"""Embedded first-order solver for linear and second-order cone programs.

Problems are stated in the standard conic form

    minimize    c' x
    subject to  A x + s = b,    s in K,

where ``K`` is a cartesian product of nonnegative-orthant and
second-order cone blocks listed in row order. The solver runs an
operator-splitting iteration: each pass alternates a projection onto
the affine manifold ``{A x + s = b}`` (a linear solve against a cached
sparse factorization of ``sigma I + rho A'A``), a Euclidean projection
onto ``K``, and a dual update. Over-relaxation and Ruiz equilibration
(with one shared scale per second-order block, so cones are preserved)
keep the iteration well conditioned; an optional active-set polish
refines pure-LP solutions to vertex accuracy.

Infeasibility is detected from the normalized divergence certificate of
the dual (or primal) iterate differences. All control flow depends only
on iteration counts and computed values, never on wall-clock time, so
identical inputs yield bit-identical outputs.

``solve_many`` solves a family of problems sharing ``c``, ``A`` and the
cone layout but differing in ``b`` with one factorization, iterating
all right-hand sides simultaneously and freezing each column once it
converges; a frozen column is exactly what a solo run with the same
settings would have produced at its stopping iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverFailure
from .validation import check_int, check_scalar

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class NonNeg:
    """Nonnegative orthant block of the given dimension."""

    dim: int

    def __post_init__(self):
        check_int(self.dim, "dim", minimum=1)


@dataclass(frozen=True)
class SecondOrder:
    """Second-order cone ``{(t, z): ||z||_2 <= t}`` of total dimension ``dim``."""

    dim: int

    def __post_init__(self):
        check_int(self.dim, "dim", minimum=1)


class Residuals(NamedTuple):
    primal: float
    dual: float
    gap: float

    @property
    def worst(self) -> float:
        return max(self.primal, self.dual, self.gap)


@dataclass(frozen=True)
class ConicProblem:
    """Conic program data. ``A`` may be dense or any scipy sparse format."""

    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    cones: tuple

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        A = sp.csr_matrix(self.A, dtype=float, copy=False)
        if A.shape != (b.size, c.size):
            raise ValueError(
                f"A has shape {A.shape}, expected ({b.size}, {c.size})")
        cones = tuple(self.cones)
        if not cones:
            raise ValueError("at least one cone block is required")
        total = 0
        for cone in cones:
            if not isinstance(cone, (NonNeg, SecondOrder)):
                raise ValueError(f"unsupported cone descriptor {cone!r}")
            total += cone.dim
        if total != b.size:
            raise ValueError(
                f"cone dimensions sum to {total}, expected {b.size}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b))
                and np.all(np.isfinite(A.data))):
            raise ValueError("problem data must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "cones", cones)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b.size

    @property
    def is_linear(self) -> bool:
        return all(isinstance(cone, NonNeg) for cone in self.cones)


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-8
    max_iter: int = 200_000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    equilibrate: bool = True
    equil_iters: int = 10
    adaptive_rho: bool = True
    check_every: int = 25
    infeas_tol: float = 1e-7
    polish: bool = True

    def __post_init__(self):
        check_scalar(self.tol, "tol", minimum=0.0, strict_min=True)
        check_int(self.max_iter, "max_iter", minimum=1)
        check_scalar(self.rho, "rho", minimum=0.0, strict_min=True)
        check_scalar(self.sigma, "sigma", minimum=0.0, strict_min=True)
        check_scalar(self.alpha, "alpha", minimum=0.0, strict_min=True, maximum=2.0)
        check_int(self.equil_iters, "equil_iters", minimum=1)
        check_int(self.check_every, "check_every", minimum=1)
        check_scalar(self.infeas_tol, "infeas_tol", minimum=0.0, strict_min=True)


@dataclass
class Solution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    objective: float
    status: str
    iterations: int
    residuals: Residuals
    info: dict = field(default_factory=dict)


def soc_project(v):
    """Euclidean projection of ``v = (t, z)`` onto the second-order cone.

    Returns ``v`` when ``||z|| <= t``, zero when ``||z|| <= -t``, and
    ``((t + ||z||) / 2) * (1, z / ||z||)`` otherwise.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise ValueError("soc_project expects a 1-D vector of length >= 1")
    t = v[0]
    z = v[1:]
    nz = float(np.linalg.norm(z))
    if nz <= t:
        return v.copy()
    if nz <= -t:
        return np.zeros_like(v)
    coef = 0.5 * (t + nz)
    out = np.empty_like(v)
    out[0] = coef
    out[1:] = (coef / nz) * z
    return out


class _ConeGeometry:
    """Precomputed index structure for vectorized projections onto K.

    Second-order blocks of dimension one degenerate to halflines and are
    projected together with the orthant coordinates.
    """

    def __init__(self, cones):
        hl = []
        starts, dims = [], []
        offset = 0
        for cone in cones:
            if isinstance(cone, NonNeg):
                hl.extend(range(offset, offset + cone.dim))
            elif cone.dim == 1:
                hl.append(offset)
            else:
                starts.append(offset)
                dims.append(cone.dim)
            offset += cone.dim
        self.m = offset
        self.halfline_idx = np.asarray(hl, dtype=np.intp)
        self.soc_starts = np.asarray(starts, dtype=np.intp)
        self.soc_dims = np.asarray(dims, dtype=np.intp)
        if len(starts):
            z_idx = np.concatenate(
                [np.arange(s + 1, s + d) for s, d in zip(starts, dims)])
            self.z_idx = z_idx.astype(np.intp)
            self.z_cone = np.repeat(np.arange(len(starts)), self.soc_dims - 1)
            bounds = np.empty(2 * len(starts), dtype=np.intp)
            bounds[0::2] = self.soc_starts + 1
            bounds[1::2] = self.soc_starts + self.soc_dims
            self.z_bounds = bounds
        else:
            self.z_idx = np.empty(0, dtype=np.intp)
            self.z_cone = np.empty(0, dtype=np.intp)
            self.z_bounds = np.empty(0, dtype=np.intp)

    def project(self, v):
        """Project onto K. ``v`` has shape ``(m,)`` or ``(m, B)``."""
        out = np.array(v, dtype=float, copy=True)
        if self.halfline_idx.size:
            out[self.halfline_idx] = np.maximum(out[self.halfline_idx], 0.0)
        if self.soc_starts.size:
            # Sentinel row keeps reduceat boundaries strictly inside the array.
            sq = np.square(v)
            pad = np.zeros((1,) + sq.shape[1:], dtype=float)
            sq = np.concatenate([sq, pad], axis=0)
            norms = np.sqrt(np.add.reduceat(sq, self.z_bounds, axis=0)[0::2])
            t = v[self.soc_starts]
            keep = norms <= t
            kill = norms <= -t
            safe = np.where(norms > 0.0, norms, 1.0)
            head = np.where(keep, t, np.where(kill, 0.0, 0.5 * (t + norms)))
            zfac = np.where(keep, 1.0, np.where(kill, 0.0, 0.5 * (t + norms) / safe))
            out[self.soc_starts] = head
            out[self.z_idx] = v[self.z_idx] * zfac[self.z_cone]
        return out

    def distance(self, v):
        """Euclidean distance from ``v`` to K (per column for 2-D input)."""
        diff = np.asarray(v) - self.project(v)
        return np.sqrt(np.sum(np.square(diff), axis=0))


def _cone_uniform_row_scale(r, geom):
    """Replace per-row values by the block maximum inside each SOC."""
    if geom.soc_starts.size:
        for s, d in zip(geom.soc_starts, geom.soc_dims):
            r[s:s + d] = np.max(r[s:s + d])
    return r


def _ruiz_equilibrate(A, geom, iters):
    """Iterative inf-norm scaling ``D A E`` with cone-uniform row scales."""
    m, n = A.shape
    d = np.ones(m)
    e = np.ones(n)
    work = A.copy()
    for _ in range(iters):
        rmax = np.asarray(abs(work).max(axis=1).todense()).ravel()
        rmax = _cone_uniform_row_scale(rmax, geom)
        cmax = np.asarray(abs(work).max(axis=0).todense()).ravel()
        rmax[rmax == 0.0] = 1.0
        cmax[cmax == 0.0] = 1.0
        dr = 1.0 / np.sqrt(rmax)
        dc = 1.0 / np.sqrt(cmax)
        work = sp.diags(dr) @ work @ sp.diags(dc)
        d *= dr
        e *= dc
    return work.tocsr(), d, e


class _Workspace:
    """Scaled data and cached factorization shared by solve paths."""

    def __init__(self, problem: ConicProblem, settings: SolverSettings):
        self.problem = problem
        self.settings = settings
        self.geom = _ConeGeometry(problem.cones)
        if settings.equilibrate:
            A_s, d, e = _ruiz_equilibrate(
                problem.A.tocsr(), self.geom, settings.equil_iters)
        else:
            A_s = problem.A.tocsr()
            d = np.ones(problem.m)
            e = np.ones(problem.n)
        self.d = d
        self.e = e
        c_s = e * problem.c
        self.cost_scale = 1.0 / max(1.0, float(np.max(np.abs(c_s), initial=0.0)))
        self.c_s = self.cost_scale * c_s
        self.A_s = A_s
        self.At_s = A_s.T.tocsr()
        self.rho = settings.rho
        self._factor()

    def _factor(self):
        n = self.problem.n
        M = (self.rho * (self.At_s @ self.A_s)
             + self.settings.sigma * sp.eye(n, format="csr"))
        self.solve_M = spla.splu(M.tocsc())

    def scale_b(self, b):
        return self.d * b if b.ndim == 1 else self.d[:, None] * b

    def unscale(self, x_s, s_s, u_s):
        """Map scaled iterates back to original variables ``x, s, y``."""
        if x_s.ndim == 1:
            x = self.e * x_s
            s = s_s / self.d
            y = (self.rho / self.cost_scale) * (self.d * u_s)
        else:
            x = self.e[:, None] * x_s
            s = s_s / self.d[:, None]
            y = (self.rho / self.cost_scale) * (self.d[:, None] * u_s)
        return x, s, y


def _residual_triple(problem, x, s, y, Ax=None):
    """Scale-normalized KKT residuals for a candidate point."""
    c, A, b = problem.c, problem.A, problem.b
    if Ax is None:
        Ax = A @ x
    r_p = np.max(np.abs(Ax + s - b), axis=0) / (1.0 + np.max(np.abs(b), initial=0.0))
    dual_vec = c if x.ndim == 1 else c[:, None]
    r_d = (np.max(np.abs(dual_vec + A.T @ y), axis=0)
           / (1.0 + np.max(np.abs(c), initial=0.0)))
    cx = c @ x
    by = b @ y
    gap = np.abs(cx + by) / (1.0 + np.abs(cx) + np.abs(by))
    return r_p, r_d, gap


def kkt_residuals(problem: ConicProblem, solution: Solution) -> Residuals:
    """Recompute scale-normalized KKT residual norms for a candidate.

    The dual residual includes the distance of ``y`` to the dual cone
    (the cones here are self-dual).
    """
    geom = _ConeGeometry(problem.cones)
    x = np.asarray(solution.x, dtype=float)
    s = np.asarray(solution.s, dtype=float)
    y = np.asarray(solution.y, dtype=float)
    r_p, r_d, gap = _residual_triple(problem, x, s, y)
    y_dist = float(geom.distance(y)) / (1.0 + float(np.max(np.abs(y), initial=0.0)))
    return Residuals(float(r_p), max(float(r_d), y_dist), float(gap))


def _polish_orthant(problem, x, y, s, base_res):
    """Active-set refinement for all-orthant problems.

    Solves the KKT system restricted to the active rows with a small
    regularization plus iterative refinement, and keeps the result only
    if it improves the worst residual.
    """
    act = np.flatnonzero(s <= y)
    if act.size == 0:
        return None
    A_act = problem.A[act].toarray()
    n = problem.n
    k = act.size
    reg = 1e-9
    K = np.zeros((n + k, n + k))
    K[:n, :n] = reg * np.eye(n)
    K[:n, n:] = A_act.T
    K[n:, :n] = A_act
    K[n:, n:] = -reg * np.eye(k)
    rhs = np.concatenate([-problem.c, problem.b[act]])
    try:
        sol = np.linalg.solve(K, rhs)
        # Refinement against the unregularized system.
        K0 = K.copy()
        K0[:n, :n] = 0.0
        K0[n:, n:] = 0.0
        for _ in range(3):
            sol = sol + np.linalg.solve(K, rhs - K0 @ sol)
    except np.linalg.LinAlgError:
        return None
    x_p = sol[:n]
    y_p = np.zeros(problem.m)
    y_p[act] = np.maximum(sol[n:], 0.0)
    s_p = problem.b - problem.A @ x_p
    s_p[act] = 0.0
    if np.min(s_p) < -1e-9 * (1.0 + np.max(np.abs(problem.b), initial=0.0)):
        return None
    s_p = np.maximum(s_p, 0.0)
    r_p, r_d, gap = _residual_triple(problem, x_p, s_p, y_p)
    res = Residuals(float(r_p), float(r_d), float(gap))
    if res.worst < base_res.worst:
        return x_p, y_p, s_p, res
    return None


def _certificates(problem, geom, dx, dy, tol):
    """Normalized infeasibility certificates from iterate differences."""
    status = None
    info = {}
    ny = float(np.linalg.norm(dy))
    if ny > 0:
        yc = dy / ny
        pri = max(float(np.max(np.abs(problem.A.T @ yc))),
                  float(geom.distance(yc)))
        if pri <= tol and problem.b @ yc < -tol:
            status = INFEASIBLE
            info = {"certificate": yc, "certificate_residual": pri}
    nx = float(np.linalg.norm(dx))
    if status is None and nx > 0:
        xc = dx / nx
        if problem.c @ xc < -tol:
            ray = -(problem.A @ xc)
            dev = float(geom.distance(ray))
            if dev <= tol:
                status = UNBOUNDED
                info = {"certificate": xc, "certificate_residual": dev}
    return status, info


def solve(problem: ConicProblem, settings: SolverSettings = SolverSettings()) -> Solution:
    """Solve one conic program.

    Returns a :class:`Solution` whose status is ``optimal``,
    ``infeasible``, ``unbounded`` or ``max_iterations``; in the last
    case the best available iterates and their residuals are returned.
    """
    ws = _Workspace(problem, settings)
    geom = ws.geom
    n, m = problem.n, problem.m
    b_s = ws.scale_b(problem.b)

    x = np.zeros(n)
    s = geom.project(b_s)
    u = np.zeros(m)
    alpha = settings.alpha
    sigma = settings.sigma

    trace = []
    rho_updates = 0
    prev_x_chk = x.copy()
    prev_u_chk = u.copy()
    it = 0
    status = MAX_ITERATIONS
    res = Residuals(np.inf, np.inf, np.inf)
    info = {}
    x_u = np.zeros(n)
    s_u = s / ws.d
    y_u = np.zeros(m)

    while it < settings.max_iter:
        it += 1
        rhs = sigma * x - ws.c_s + ws.rho * (ws.At_s @ (b_s - s - u))
        x = ws.solve_M.solve(rhs)
        w = ws.A_s @ x
        w_rel = alpha * w + (1.0 - alpha) * (b_s - s)
        v = b_s - w_rel - u
        s = geom.project(v)
        u = s - v

        if it % settings.check_every == 0 or it == settings.max_iter:
            x_u, s_u, y_u = ws.unscale(x, s, u)
            r_p, r_d, gap = _residual_triple(problem, x_u, s_u, y_u)
            res = Residuals(float(r_p), float(r_d), float(gap))
            trace.append((it, res.primal, res.dual, res.gap))
            if res.worst <= settings.tol:
                status = OPTIMAL
                break
            dx = ws.e * (x - prev_x_chk)
            dy = (ws.rho / ws.cost_scale) * (ws.d * (u - prev_u_chk))
            cert_status, cert_info = _certificates(
                problem, geom, dx, dy, settings.infeas_tol)
            if cert_status is not None:
                status = cert_status
                info.update(cert_info)
                break
            prev_x_chk = x.copy()
            prev_u_chk = u.copy()
            if settings.adaptive_rho:
                ratio = (res.primal + 1e-300) / (res.dual + 1e-300)
                if ratio > 25.0 or ratio < 0.04:
                    new_rho = float(np.clip(ws.rho * np.sqrt(ratio), 1e-6, 1e6))
                    if new_rho != ws.rho:
                        u *= ws.rho / new_rho
                        ws.rho = new_rho
                        ws._factor()
                        rho_updates += 1

    info.update({"trace": np.asarray(trace), "rho_updates": rho_updates,
                 "rho_final": ws.rho})

    if status in (INFEASIBLE, UNBOUNDED):
        return Solution(x=x_u, y=y_u, s=s_u, objective=np.nan, status=status,
                        iterations=it, residuals=res, info=info)

    if status == OPTIMAL and settings.polish and problem.is_linear:
        polished = _polish_orthant(problem, x_u, y_u, s_u, res)
        if polished is not None:
            x_u, y_u, s_u, res = polished
            info["polished"] = True

    objective = float(problem.c @ x_u)
    return Solution(x=x_u, y=y_u, s=s_u, objective=objective, status=status,
                    iterations=it, residuals=res, info=info)


def solve_many(problem: ConicProblem, b_columns, settings: SolverSettings = SolverSettings(),
               warm_start=None):
    """Solve one problem per column of ``b_columns`` (sharing ``c``, ``A``, cones).

    Uses a single factorization and iterates all columns at once with a
    fixed step parameter (no adaptive updates), freezing each column at
    its own convergence. ``warm_start`` optionally seeds every column
    from an ``(x, s, y)`` triple in original variables, typically the
    solution of a representative column. Returns a list of
    :class:`Solution`.
    """
    b_columns = np.asarray(b_columns, dtype=float)
    if b_columns.ndim == 1:
        b_columns = b_columns[:, None]
    if b_columns.shape[0] != problem.m:
        raise ValueError(
            f"b_columns has {b_columns.shape[0]} rows, expected {problem.m}")
    B = b_columns.shape[1]
    ws = _Workspace(problem, settings)
    geom = ws.geom
    n, m = problem.n, problem.m

    # Working arrays hold only the still-active columns and are
    # compacted when columns freeze; per-iteration fancy indexing over
    # the full batch would dominate the runtime for wide batches.
    Ba = ws.scale_b(b_columns)
    if warm_start is None:
        Xa = np.zeros((n, Ba.shape[1]))
        Sa = geom.project(Ba)
        Ua = np.zeros((m, Ba.shape[1]))
    else:
        x0, s0, y0 = (np.asarray(v, dtype=float) for v in warm_start)
        Xa = np.repeat((x0 / ws.e)[:, None], B, axis=1)
        Sa = np.repeat((s0 * ws.d)[:, None], B, axis=1)
        Ua = np.repeat((y0 * ws.cost_scale / (ws.rho * ws.d))[:, None],
                       B, axis=1)
    act = np.arange(B)
    X_fin = np.empty((n, B))
    S_fin = np.empty((m, B))
    U_fin = np.empty((m, B))
    done_iter = np.full(B, settings.max_iter, dtype=int)
    done_res = [Residuals(np.inf, np.inf, np.inf)] * B
    statuses = [MAX_ITERATIONS] * B
    alpha = settings.alpha
    sigma = settings.sigma
    c_col = ws.c_s[:, None]
    c_norm = 1.0 + np.max(np.abs(problem.c), initial=0.0)

    it = 0
    while it < settings.max_iter and act.size:
        it += 1
        rhs = sigma * Xa - c_col + ws.rho * (ws.At_s @ (Ba - Sa - Ua))
        Xa = ws.solve_M.solve(rhs)
        W = ws.A_s @ Xa
        W_rel = alpha * W + (1.0 - alpha) * (Ba - Sa)
        V = Ba - W_rel - Ua
        Sa = geom.project(V)
        Ua = Sa - V

        if it % settings.check_every == 0 or it == settings.max_iter:
            x_u, s_u, y_u = ws.unscale(Xa, Sa, Ua)
            bact = b_columns[:, act]
            Ax = problem.A @ x_u
            r_p = (np.max(np.abs(Ax + s_u - bact), axis=0)
                   / (1.0 + np.max(np.abs(bact), axis=0, initial=0.0)))
            r_d = np.max(np.abs(problem.c[:, None] + problem.A.T @ y_u),
                         axis=0) / c_norm
            cx = problem.c @ x_u
            by = np.einsum("ij,ij->j", bact, y_u)
            gap = np.abs(cx + by) / (1.0 + np.abs(cx) + np.abs(by))
            worst = np.maximum(np.maximum(r_p, r_d), gap)
            conv = worst <= settings.tol
            last = it == settings.max_iter
            if np.any(conv) or last:
                take = conv | last
                for j in np.flatnonzero(take):
                    col = act[j]
                    if conv[j]:
                        statuses[col] = OPTIMAL
                        done_iter[col] = it
                    done_res[col] = Residuals(float(r_p[j]), float(r_d[j]),
                                              float(gap[j]))
                X_fin[:, act[take]] = Xa[:, take]
                S_fin[:, act[take]] = Sa[:, take]
                U_fin[:, act[take]] = Ua[:, take]
                keep = ~take
                act = act[keep]
                Xa = np.ascontiguousarray(Xa[:, keep])
                Sa = np.ascontiguousarray(Sa[:, keep])
                Ua = np.ascontiguousarray(Ua[:, keep])
                Ba = np.ascontiguousarray(Ba[:, keep])

    solutions = []
    for col in range(B):
        sub = ConicProblem(c=problem.c, A=problem.A, b=b_columns[:, col],
                           cones=problem.cones)
        x_u, s_u, y_u = ws.unscale(X_fin[:, col], S_fin[:, col],
                                   U_fin[:, col])
        res = done_res[col]
        status = statuses[col]
        info = {}
        if status == OPTIMAL and settings.polish and problem.is_linear:
            polished = _polish_orthant(sub, x_u, y_u, s_u, res)
            if polished is not None:
                x_u, y_u, s_u, res = polished
                info["polished"] = True
        solutions.append(Solution(
            x=x_u, y=y_u, s=s_u, objective=float(problem.c @ x_u),
            status=status, iterations=int(done_iter[col]), residuals=res,
            info=info))
    return solutions


def dump_problem(problem: ConicProblem) -> str:
    """Serialize a problem to a plain-text format for external cross-checks.

    Format (one record per line, whitespace separated, ``%.17g`` floats)::

        RLD-CONIC 1
        VARS <n>
        ROWS <m>
        OBJ <j> <c_j>          one line per structural nonzero of c
        A <i> <j> <value>      one line per nonzero of the constraint matrix
        B <i> <value>          one line per nonzero of the offset b
        CONE <nonneg|soc> <dim>   in row order
        END

    The problem reads: minimize c'x subject to b - A x in K.
    """
    lines = [f"RLD-CONIC 1", f"VARS {problem.n}", f"ROWS {problem.m}"]
    for j in np.flatnonzero(problem.c):
        lines.append(f"OBJ {j} {problem.c[j]:.17g}")
    coo = problem.A.tocoo()
    order = np.lexsort((coo.col, coo.row))
    for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
        if v != 0.0:
            lines.append(f"A {i} {j} {v:.17g}")
    for i in np.flatnonzero(problem.b):
        lines.append(f"B {i} {problem.b[i]:.17g}")
    for cone in problem.cones:
        kind = "nonneg" if isinstance(cone, NonNeg) else "soc"
        lines.append(f"CONE {kind} {cone.dim}")
    lines.append("END")
    return "\n".join(lines) + "\n"


def require_optimal(solution: Solution, context: str) -> Solution:
    """Raise :class:`SolverFailure` unless the solution is optimal."""
    if solution.status != OPTIMAL:
        raise SolverFailure(
            f"{context}: solver returned status {solution.status} "
            f"after {solution.iterations} iterations "
            f"(residuals {tuple(solution.residuals)})")
    return solution

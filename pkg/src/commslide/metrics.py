"""Gap functions, residuals, bound evaluation and reference solutions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .geometry import Box, stacked_V
from .model import LADObjective, Problem, evaluate_F, lad_prox
from .topology import LaplacianOperator, apply_laplacian, laplacian

__all__ = [
    "BoundHypothesisError",
    "UncertifiedReferenceError",
    "ReferenceSolveError",
    "ReferenceSolution",
    "BoundRHS",
    "BoundReport",
    "Certificate",
    "THEOREMS",
    "gap_Q",
    "perturbed_gap",
    "feasibility_residual",
    "certify_eps_delta",
    "dual_norm_bound",
    "theorem_bounds",
    "bound_report",
    "reference_solve",
    "lad_saddle_point",
    "replicate",
]


class BoundHypothesisError(ValueError):
    """Constants violate the hypotheses of the requested bound."""


class UncertifiedReferenceError(ValueError):
    """The reference optimum is not accurate enough for the requested test."""


class ReferenceSolveError(RuntimeError):
    """The reference solver could not reach the requested accuracy."""


def replicate(x_star, m: int) -> np.ndarray:
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    return np.tile(x_star, (m, 1))


def _stack(x, L: LaplacianOperator) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size != L.m * L.d:
        raise ValueError(f"expected {L.m * L.d} entries, got {x.size}")
    return x.reshape(L.m, L.d)


def gap_Q(z, z_bar, problem, L: LaplacianOperator) -> float:
    """``F(x) + <Lx, y_bar> - F(x_bar) - <L x_bar, y>`` for ``z = (x, y)``."""
    x, y = (_stack(v, L) for v in z)
    xb, yb = (_stack(v, L) for v in z_bar)
    return (evaluate_F(problem, x) + float(np.sum(apply_laplacian(L, x) * yb))
            - evaluate_F(problem, xb) - float(np.sum(apply_laplacian(L, xb) * y)))


def perturbed_gap(v, z, problem, L: LaplacianOperator, x_star, Y_sample) -> float:
    """Largest ``Q(z; (x*, y_bar)) - <v, y_bar>`` over a finite probe set.

    This is a lower estimate of the supremum over all dual points, useful
    as a diagnostic only.
    """
    Y_sample = list(Y_sample)
    if not Y_sample:
        raise ValueError("probe set is empty")
    v = _stack(v, L)
    xs = np.asarray(x_star, dtype=float)
    xs = replicate(xs, L.m) if xs.size == L.d else _stack(xs, L)
    return max(gap_Q(z, (xs, yb), problem, L) - float(np.sum(v * _stack(yb, L))) for yb in Y_sample)


def feasibility_residual(x, L: LaplacianOperator) -> float:
    """``||L x||_2``; zero exactly on consensus."""
    return float(np.linalg.norm(apply_laplacian(L, _stack(x, L))))


def dual_norm_bound(m: int, M: float, sigma_min_nonzero: float) -> float:
    """``sqrt(m) M / sigma_min``: norm of some optimal dual multiplier."""
    if not sigma_min_nonzero > 0:
        raise ValueError("smallest nonzero singular value must be positive")
    if m < 1 or M < 0:
        raise ValueError("need m >= 1 and M >= 0")
    return math.sqrt(m) * M / sigma_min_nonzero


# ---------------------------------------------------------------------------
# Bound right-hand sides

THEOREMS = {
    "dpd-convex": ("dpd-convex-primal", "dpd-convex-feasibility"),
    "dcs-convex": ("dcs-convex-primal", "dcs-convex-feasibility"),
    "dcs-strongly-convex": ("dcs-strongly-convex-primal", "dcs-strongly-convex-feasibility"),
    "sdcs-convex": ("sdcs-convex-primal-expectation", "sdcs-convex-feasibility-expectation"),
    "sdcs-strongly-convex": ("sdcs-strongly-convex-primal-expectation",
                             "sdcs-strongly-convex-feasibility-expectation"),
}

ALGORITHM_THEOREM = {
    "dpd_convex": "dpd-convex",
    "dcs_convex": "dcs-convex",
    "dcs_strongly_convex": "dcs-strongly-convex",
    "sdcs_convex": "sdcs-convex",
    "sdcs_strongly_convex": "sdcs-strongly-convex",
}


@dataclass(frozen=True)
class BoundRHS:
    theorem: str
    primal_id: str
    feas_id: str
    primal: float
    feas: float


def theorem_bounds(theorem: str, *, L_norm: float, N: int, V0: float, y0_norm: float = 0.0,
                   ystar_dist: float = 0.0, D_tilde: float | None = None, mu: float = 0.0,
                   C: float = 1.0, m: int | None = None, M: float | None = None,
                   sigma: float | None = None) -> BoundRHS:
    """Evaluate the right-hand sides of the convergence bounds.

    ``dpd-convex``: ``(|L|/N)[2 V0 + |y0|^2/2]`` and
    ``(2|L|/N)[3 sqrt(V0) + 2 |y* - y0|]``.
    ``dcs-convex``: ``(|L|/N)[3 V0 + |y0|^2/2 + 2 D~]`` and
    ``(|L|/N)[3 sqrt(6 V0 + 4 D~) + 4 |y* - y0|]``.
    ``sdcs-convex``: as ``dcs-convex`` with ``4 D~`` and ``8 D~`` in
    place of ``2 D~`` and ``4 D~``.
    ``dcs-strongly-convex`` and ``sdcs-strongly-convex``:
    ``2/(N(N+3)) [(mu/C) V0 + (2|L|^2 C/mu)|y0|^2 + 2 mu D~/C]`` and
    ``8|L|/(N(N+3)) [3 sqrt(2 D~ + V0) + (7|L| C/mu) |y* - y0|]``; these need
    ``N >= 2``.

    ``m``, ``M`` and ``sigma`` enter only through the inner iteration
    counts and are accepted for bookkeeping.
    """
    if theorem not in THEOREMS:
        raise BoundHypothesisError(f"unknown theorem id {theorem!r}")
    if not (L_norm > 0 and N >= 1 and V0 >= 0 and y0_norm >= 0 and ystar_dist >= 0):
        raise BoundHypothesisError("need L_norm > 0, N >= 1 and nonnegative V0, |y0|, |y*-y0|")
    pid, fid = THEOREMS[theorem]
    Ln = L_norm
    if theorem == "dpd-convex":
        p = Ln / N * (2.0 * V0 + 0.5 * y0_norm**2)
        f = 2.0 * Ln / N * (3.0 * math.sqrt(V0) + 2.0 * ystar_dist)
        return BoundRHS(theorem, pid, fid, p, f)
    if D_tilde is None or not D_tilde > 0:
        raise BoundHypothesisError("sliding bounds need D_tilde > 0")
    if theorem in ("dcs-convex", "sdcs-convex"):
        a, b = (2.0, 4.0) if theorem == "dcs-convex" else (4.0, 8.0)
        p = Ln / N * (3.0 * V0 + 0.5 * y0_norm**2 + a * D_tilde)
        f = Ln / N * (3.0 * math.sqrt(6.0 * V0 + b * D_tilde) + 4.0 * ystar_dist)
        return BoundRHS(theorem, pid, fid, p, f)
    if not mu > 0:
        raise BoundHypothesisError("strongly convex bounds need mu > 0")
    if not (math.isfinite(C) and C >= 1):
        raise BoundHypothesisError("strongly convex bounds need a finite growth constant C >= 1")
    if N < 2:
        raise BoundHypothesisError("strongly convex bounds hold for N >= 2 only")
    s = 2.0 / (N * (N + 3.0))
    p = s * (mu / C * V0 + 2.0 * Ln**2 * C / mu * y0_norm**2 + 2.0 * mu * D_tilde / C)
    f = 4.0 * Ln * s * (3.0 * math.sqrt(2.0 * D_tilde + V0) + 7.0 * Ln * C / mu * ystar_dist)
    return BoundRHS(theorem, pid, fid, p, f)


@dataclass
class BoundReport:
    theorem: str
    primal_id: str
    feas_id: str
    primal_bound_rhs: float
    feas_bound_rhs: float
    measured_primal: float
    measured_feas: float
    inputs: dict = field(default_factory=dict)
    conservative: bool = True
    reference_tolerance: float = 0.0

    @property
    def primal_ok(self) -> bool:
        return self.measured_primal <= self.primal_bound_rhs + self.reference_tolerance

    @property
    def feas_ok(self) -> bool:
        return self.measured_feas <= self.feas_bound_rhs

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "primal": {"id": self.primal_id, "rhs": self.primal_bound_rhs,
                       "measured": self.measured_primal, "holds": self.primal_ok},
            "feasibility": {"id": self.feas_id, "rhs": self.feas_bound_rhs,
                            "measured": self.measured_feas, "holds": self.feas_ok,
                            "conservative_dual_distance": self.conservative},
            "inputs": self.inputs,
            "reference_tolerance": self.reference_tolerance,
        }


def bound_report(trace, problem: Problem, L: LaplacianOperator, ref, spectral, D_tilde=None,
                 y_star=None, x_point=None) -> BoundReport:
    """Pair a run's ergodic residuals with the matching bound.

    Without ``y_star`` the distance ``|y* - y0|`` is replaced by
    ``|y0| + sqrt(m) M / sigma_min`` and the report is marked conservative.
    """
    mode = trace.schedule.mode
    theorem = ALGORITHM_THEOREM[mode]
    x0 = np.asarray(trace.manifest["x0"], dtype=float)
    y0 = np.asarray(trace.manifest["y0"], dtype=float)
    xs = replicate(ref.x_star, problem.m)
    V0 = stacked_V(problem.geoms, x0, xs)
    y0_norm = float(np.linalg.norm(y0))
    if y_star is None:
        ystar_dist = y0_norm + dual_norm_bound(problem.m, problem.M, spectral.min_nonzero_singular)
        conservative = True
    else:
        ystar_dist = float(np.linalg.norm(np.asarray(y_star) - y0))
        conservative = False
    D = problem.D_sq if D_tilde is None else D_tilde
    rhs = theorem_bounds(theorem, L_norm=spectral.op_norm, N=trace.N, V0=V0, y0_norm=y0_norm,
                         ystar_dist=ystar_dist, D_tilde=D, mu=problem.mu, C=problem.C,
                         m=problem.m, M=problem.M, sigma=problem.sigma)
    x = trace.x_ergodic if x_point is None else x_point
    inputs = {"V0": V0, "y0_norm": y0_norm, "ystar_dist": ystar_dist, "D_tilde": D,
              "L_norm": spectral.op_norm, "N": trace.N, "m": problem.m, "M": problem.M,
              "mu": problem.mu, "C": problem.C, "sigma": problem.sigma, "F_star": ref.F_star}
    return BoundReport(theorem, rhs.primal_id, rhs.feas_id, rhs.primal, rhs.feas,
                       evaluate_F(problem, x) - ref.F_star, feasibility_residual(x, L),
                       inputs, conservative, ref.tolerance)


@dataclass(frozen=True)
class Certificate:
    ok: bool
    primal_margin: float
    feas_margin: float


def certify_eps_delta(x, ref, eps: float, delta: float, problem, L: LaplacianOperator) -> Certificate:
    """Check ``F(x) - F* <= eps`` and ``|Lx| <= delta``; margins are slack amounts."""
    if not (eps > 0 and delta > 0):
        raise ValueError("eps and delta must be positive")
    if ref.tolerance > eps / 10.0:
        raise UncertifiedReferenceError(
            f"reference tolerance {ref.tolerance:.3g} exceeds eps/10 = {eps / 10:.3g}"
        )
    x = _stack(x, L)
    pm = eps - (evaluate_F(problem, x) - ref.F_star)
    fm = delta - feasibility_residual(x, L)
    return Certificate(pm >= 0 and fm >= 0, pm, fm)


# ---------------------------------------------------------------------------
# Centralised reference solutions

@dataclass(frozen=True)
class ReferenceSolution:
    x_star: np.ndarray
    F_star: float
    tolerance: float
    y_star: np.ndarray | None = None
    method: str = ""

    def to_dict(self):
        return {"x_star": self.x_star.tolist(), "F_star": self.F_star,
                "tolerance": self.tolerance, "method": self.method,
                "y_star": None if self.y_star is None else np.asarray(self.y_star).tolist()}


def _common_box(problem: Problem) -> Box:
    if not all(isinstance(a.cset, Box) for a in problem.agents):
        raise ReferenceSolveError("reference solves need box constraints")
    lo = np.max([a.cset.lo for a in problem.agents], axis=0)
    hi = np.min([a.cset.hi for a in problem.agents], axis=0)
    if np.any(lo > hi):
        raise ReferenceSolveError("agent constraint sets do not intersect")
    return Box(lo, hi)


def _lad_dual_value(A, b, z, lo, hi) -> float:
    c = A.T @ z
    return float(-b @ z + np.minimum(lo * c, hi * c).sum())


def reference_solve(problem: Problem, accuracy: float = 1e-9) -> ReferenceSolution:
    """Minimise ``sum_i f_i`` over the common feasible set with a certificate.

    LAD problems without a quadratic part are solved as linear programs and
    certified by a dual feasible point; with a quadratic part the merged
    problem is a LAD prox, certified by its duality gap.  Other objectives
    go through a cutting-plane method whose lower model certifies the gap.
    """
    box = _common_box(problem)
    objs = problem.objectives
    if all(type(o) is LADObjective for o in objs):
        sol = _lad_reference(problem, box, accuracy)
    else:
        sol = _cutting_plane_reference(problem, box, accuracy)
    if sol.tolerance > accuracy:
        raise ReferenceSolveError(
            f"certified accuracy {sol.tolerance:.3g} misses the target {accuracy:.3g}"
        )
    return sol


def _lad_reference(problem, box, accuracy):
    objs = problem.objectives
    A = np.concatenate([o.A for o in objs], axis=0)
    b = np.concatenate([o.b for o in objs])
    d = problem.d
    mus = np.array([o.mu for o in objs])
    lo, hi = box.lo, box.hi
    if mus.sum() > 0:
        rho = float(mus.sum())
        p = sum(o.mu * o.center for o in objs) / rho
        x, gap = lad_prox(A, b, np.zeros(d), p, rho, lo, hi, tol=1e-15)
        return ReferenceSolution(x, evaluate_F(problem, replicate(x, problem.m)), max(gap, 0.0),
                                 method="dual projected Newton")
    R = A.shape[0]
    if R == 0:
        x = box.center()
        return ReferenceSolution(x, evaluate_F(problem, replicate(x, problem.m)), 0.0,
                                 method="trivial")
    cost = np.concatenate([np.zeros(d), np.ones(R)])
    A_ub = np.block([[A, -np.eye(R)], [-A, -np.eye(R)]])
    b_ub = np.concatenate([b, -b])
    bounds = [(lo[j], hi[j]) for j in range(d)] + [(0, None)] * R
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise ReferenceSolveError(f"linear program failed: {res.message}")
    x = np.minimum(np.maximum(res.x[:d], lo), hi)
    F = evaluate_F(problem, replicate(x, problem.m))
    lam = res.ineqlin.marginals
    lower = -math.inf
    for z in (lam[R:] - lam[:R], lam[:R] - lam[R:]):
        z = np.clip(z, -1.0, 1.0)
        lower = max(lower, _lad_dual_value(A, b, z, lo, hi))
    if F - lower > accuracy:
        x, F, lower = _polish_lad(problem, A, b, x, lo, hi, F, lower)
    return ReferenceSolution(x, F, max(F - lower, 0.0), method="linear program")


def lad_saddle_point(problem: Problem, graph) -> tuple[np.ndarray, np.ndarray]:
    """A saddle point ``(x*, y*)`` of ``F(x) + <Lx, y>`` for LAD agents without a quadratic part.

    Solves the decentralised linear program with the consensus constraint
    ``Lx = 0`` written out; ``y*`` is read off its equality multipliers
    (up to a null-space component of ``L``, which does not change the
    Lagrangian).
    """
    objs = problem.objectives
    if not all(type(o) is LADObjective and o.mu == 0 for o in objs):
        raise ReferenceSolveError("saddle points are available for plain LAD agents only")
    if not all(isinstance(a.cset, Box) for a in problem.agents):
        raise ReferenceSolveError("saddle points need box constraints")
    m, d = problem.m, problem.d
    rows = [o.A.shape[0] for o in objs]
    R = sum(rows)
    n = m * d + R
    A_ub = np.zeros((2 * R, n))
    b_ub = np.zeros(2 * R)
    r0 = 0
    for i, o in enumerate(objs):
        r = rows[i]
        blk = slice(i * d, (i + 1) * d)
        t = np.arange(m * d + r0, m * d + r0 + r)
        A_ub[r0:r0 + r, blk] = o.A
        A_ub[R + r0:R + r0 + r, blk] = -o.A
        A_ub[np.arange(r0, r0 + r), t] = -1.0
        A_ub[np.arange(R + r0, R + r0 + r), t] = -1.0
        b_ub[r0:r0 + r] = o.b
        b_ub[R + r0:R + r0 + r] = -o.b
        r0 += r
    A_eq = np.hstack([np.kron(laplacian(graph, 1).dense(), np.eye(d)), np.zeros((m * d, R))])
    cost = np.concatenate([np.zeros(m * d), np.ones(R)])
    bounds = [(a.cset.lo[j], a.cset.hi[j]) for a in problem.agents for j in range(d)]
    bounds += [(0, None)] * R
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=np.zeros(m * d), bounds=bounds,
                  method="highs")
    if res.status != 0:
        raise ReferenceSolveError(f"linear program failed: {res.message}")
    x = res.x[:m * d].reshape(m, d)
    y = -np.asarray(res.eqlin.marginals).reshape(m, d)
    return x, y


def _polish_lad(problem, A, b, x, lo, hi, F, lower):
    """Snap to the vertex defined by the near-active rows and bounds."""
    resid = np.abs(A @ x - b)
    order = np.argsort(resid)
    d = x.size
    at_lo = np.isclose(x, lo, atol=1e-9)
    at_hi = np.isclose(x, hi, atol=1e-9)
    rows = []
    for i in order:
        rows.append(i)
        M = np.vstack([A[rows], np.eye(d)[at_lo | at_hi]])
        if np.linalg.matrix_rank(M) >= d:
            break
    M = np.vstack([A[rows], np.eye(d)[at_lo | at_hi]])
    rhs = np.concatenate([b[rows], np.where(at_lo, lo, hi)[at_lo | at_hi]])
    cand = np.linalg.lstsq(M, rhs, rcond=None)[0]
    cand = np.minimum(np.maximum(cand, lo), hi)
    Fc = evaluate_F(problem, replicate(cand, problem.m))
    if Fc < F:
        return cand, Fc, lower
    return x, F, lower


def _cutting_plane_reference(problem, box, accuracy, max_rounds: int = 3000):
    """Kelley's method on the box; exact in finitely many steps for piecewise-linear sums.

    The lower bound comes from a convex combination of the cuts (the LP
    multipliers, renormalised) minimised over the box in closed form, so it
    stays valid whatever the LP solver's tolerance.
    """
    m, d = problem.m, problem.d
    lo, hi = box.lo, box.hi
    x = box.center()
    cuts_a, cuts_g = [], []
    best_x, best_F, lower = None, math.inf, -math.inf
    for _ in range(max_rounds):
        F = evaluate_F(problem, replicate(x, m))
        g = sum(a.objective.subgrad(x) for a in problem.agents)
        if F < best_F:
            best_F, best_x = F, x.copy()
        cuts_a.append(F - float(g @ x))
        cuts_g.append(np.asarray(g, dtype=float))
        G = np.array(cuts_g)
        A_ub = np.hstack([G, -np.ones((len(cuts_a), 1))])
        res = linprog(np.r_[np.zeros(d), 1.0], A_ub=A_ub, b_ub=-np.array(cuts_a),
                      bounds=[(lo[j], hi[j]) for j in range(d)] + [(None, None)], method="highs")
        if res.status != 0:
            raise ReferenceSolveError(f"cutting-plane LP failed: {res.message}")
        lam = np.clip(-np.asarray(res.ineqlin.marginals), 0.0, None)
        if lam.sum() > 0:
            lam = lam / lam.sum()
            gl = lam @ G
            lower = max(lower, float(lam @ np.array(cuts_a)) + float(np.minimum(gl * lo, gl * hi).sum()))
        if best_F - lower <= accuracy:
            return ReferenceSolution(best_x, best_F, max(best_F - lower, 0.0), method="cutting plane")
        x = np.minimum(np.maximum(res.x[:d], lo), hi)
    raise ReferenceSolveError("cutting-plane method did not reach the target accuracy")

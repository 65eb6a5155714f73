"""Decentralized primal-dual (DPD) and communication-sliding (DCS, SDCS) drivers.

Each outer iteration runs two broadcast rounds, one for the extrapolated
primal point and one for the dual, then a local primal update.  DPD solves
the local subproblem exactly; DCS and SDCS replace it by ``T_k`` linearised
prox steps (the CS procedure) that need no communication.

All per-agent quantities are stored as ``(m, d)`` arrays, row ``i`` being
agent ``i``.  Vectorising across rows is only a shortcut for running the
agents one after another: every row is computed from its own agent's data and
mailboxes, with elementwise identical arithmetic.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, prox_step
from .model import (
    ExactProxUnavailable,
    LADObjective,
    Problem,
    composite_prox,
    truncated_normal,
    component_index,
)
from .netsim import Network, RoundLedger
from .schedule import (
    InnerSchedule,
    OuterSchedule,
    ScheduleError,
    inner_report,
    validate_outer,
)
from .topology import (
    DisconnectedGraphError,
    Graph,
    apply_laplacian,
    is_connected,
    laplacian,
    spectral_constants,
)

__all__ = [
    "ScheduleValidationError",
    "RunTrace",
    "run_dpd",
    "run_dcs",
    "run_sdcs",
    "cs_procedure",
    "ergodic_average",
    "agent_stream",
    "TRACE_VERSION",
]

TRACE_VERSION = "commslide-trace v1"
_DRAW_CHUNK = 1 << 15


class ScheduleValidationError(ScheduleError):
    """A schedule failed its mode's feasibility conditions."""

    def __init__(self, report, inner=None):
        self.report = report
        self.inner = inner
        names = list(report.failed) + ([] if inner is None or inner.passed else ["beta_w"])
        super().__init__(f"schedule violates: {', '.join(names)}")


@dataclass
class RunTrace:
    """Trajectory, ergodic output and counters of one run.

    ``snapshots`` holds ``(k, x_k, y_k)`` with ``x_k`` the primal point that
    enters the ergodic average (``x`` for DPD, ``x_hat`` for DCS/SDCS).
    """

    algorithm: str
    schedule: OuterSchedule
    inner: InnerSchedule | None
    ledger: RoundLedger
    x_ergodic: np.ndarray
    y_ergodic: np.ndarray
    x_last: np.ndarray
    y_last: np.ndarray
    x_hat_last: np.ndarray | None
    snapshots: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    subproblems: list = field(default_factory=list)
    store_every: int = 1

    @property
    def weights(self) -> np.ndarray:
        return self.schedule.theta

    @property
    def N(self) -> int:
        return self.schedule.N

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {TRACE_VERSION}\n")
        buf.write("k,F_ergodic,feas_ergodic,comm_rounds,evals_per_agent\n")
        for r in self.rows:
            buf.write(f"{r['k']},{r['F']:.17g},{r['feas']:.17g},{r['comm_rounds']},{r['evals']}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())


def ergodic_average(trace_or_snapshots, weights=None):
    """Recompute ``(sum theta_k)^{-1} sum theta_k z^k`` from stored snapshots."""
    if isinstance(trace_or_snapshots, RunTrace):
        snaps = trace_or_snapshots.snapshots
        if weights is None:
            weights = trace_or_snapshots.weights
        if trace_or_snapshots.store_every != 1:
            raise ValueError("snapshots were thinned; use the trace's running ergodic sums")
    else:
        snaps = list(trace_or_snapshots)
    if not snaps:
        raise ValueError("no snapshots to average")
    if weights is None:
        weights = np.ones(len(snaps))
    weights = np.asarray(weights, dtype=float)
    if weights.size != len(snaps):
        raise ValueError(f"{weights.size} weights for {len(snaps)} snapshots")
    xs = [s[1] if len(s) == 3 else s[0] for s in snaps]
    ys = [s[2] if len(s) == 3 else s[1] for s in snaps]
    wsum = weights.sum()
    x = sum(w * xi for w, xi in zip(weights, xs)) / wsum
    y = sum(w * yi for w, yi in zip(weights, ys)) / wsum
    return x, y


def agent_stream(seed: int, agent: int, k: int) -> np.random.Generator:
    """Independent generator for agent ``agent`` at outer iteration ``k``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(agent), int(k)]))


def cs_procedure(objective, cset, geom, T: int, eta: float, w, x, inner: InnerSchedule,
                 k: int = 1, mode: str = "exact", rng=None, ledger: RoundLedger | None = None,
                 agent: int = 0, history: list | None = None):
    """Approximately solve ``min_u <w,u> + f(u) + eta V(x,u)`` by linearisation.

    Starting from ``u^0 = x``, each of the ``T`` steps evaluates a
    (stochastic) subgradient ``h`` at ``u^{t-1}`` and takes

        u^t = argmin <w + h, u> + eta V(x, u) + eta beta_t V(u^{t-1}, u).

    Returns ``(u^T, u_hat^T)`` where ``u_hat^T`` is the ``lambda``-weighted
    average of ``u^1..u^T``.  ``history``, if given, receives every ``u^t``.
    """
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if not cset.contains(x):
        raise ValueError("CS procedure needs a feasible prox centre")
    if mode not in ("exact", "stochastic"):
        raise ValueError(f"unknown mode {mode!r}")
    stochastic = mode == "stochastic" and objective.sigma > 0.0
    if stochastic and rng is None:
        raise ValueError("stochastic mode needs an rng")
    lam, beta = inner.weights(int(T), eta)
    u = x
    acc = 0.0
    draws = None
    for t in range(int(T)):
        if stochastic:
            if t % _DRAW_CHUNK == 0:
                draws = objective.draw_noise(rng, min(_DRAW_CHUNK, int(T) - t))
            h = objective.noisy_subgrad(u, draws[t % _DRAW_CHUNK])
        else:
            h = objective.subgrad(u)
        u = prox_step(geom, cset, w + h, x, u, eta, eta * beta[t])
        acc = acc + lam[t] * u
        if history is not None:
            history.append(u)
    if ledger is not None:
        if mode == "stochastic":
            ledger.stoch_evals[agent] += int(T)
        else:
            ledger.subgrad_evals[agent] += int(T)
    return u, acc / lam.sum()


class _LADBatch:
    """All agents' LAD oracles on boxes, evaluated row-wise in one pass."""

    def __init__(self, problem: Problem):
        objs = problem.objectives
        self.m = problem.m
        self.A = np.stack([o.A for o in objs])
        self.b = np.stack([o.b for o in objs])
        self.mu = np.array([o.mu for o in objs])[:, None]
        self.c = np.stack([o.center for o in objs])
        self.lo = np.stack([a.cset.lo for a in problem.agents])
        self.hi = np.stack([a.cset.hi for a in problem.agents])
        self.kinds = [o.noise_kind for o in objs]
        self.sigmas = np.array([o.sigma for o in objs])
        self.std = np.array([o.coord_std for o in objs])[:, None]
        self.l = self.A.shape[1]
        self.objs = objs
        self.rows = np.arange(self.m)

    @staticmethod
    def applies(problem: Problem) -> bool:
        objs = problem.objectives
        if not all(type(o) is LADObjective for o in objs):
            return False
        if not all(isinstance(a.cset, Box) and a.geom.kind == "euclidean" for a in problem.agents):
            return False
        if len({o.A.shape for o in objs}) != 1:
            return False
        return len({o.noise_kind for o in objs if o.sigma > 0}) <= 1

    def subgrad(self, U):
        s = np.sign((self.A * U[:, None, :]).sum(-1) - self.b)
        return (self.A * s[:, :, None]).sum(1) + self.mu * (U - self.c)

    def noisy_subgrad(self, U, draws, noisy):
        kind = next(self.kinds[i] for i in range(self.m) if noisy[i])
        if kind == "bounded_gaussian":
            G = self.subgrad(U)
            if noisy.all():
                return G + self.std * truncated_normal(draws)
            G[noisy] = G[noisy] + self.std[noisy] * truncated_normal(draws[noisy])
            return G
        # component sampling
        J = component_index(draws[:, 0], self.l)
        a = self.A[self.rows, J]
        s = np.sign((a * U).sum(-1) - self.b[self.rows, J])
        comp = self.l * (a * s[:, None]) + self.mu * (U - self.c)
        if noisy.all():
            return comp
        G = self.subgrad(U)
        G[noisy] = comp[noisy]
        return G

    def cs(self, T, eta, W, X, inner, stochastic, rngs):
        lam, beta = inner.weights(int(T), eta)
        noisy = self.sigmas > 0.0 if stochastic else np.zeros(self.m, bool)
        use_noise = bool(noisy.any())
        U = X
        acc = 0.0
        draws = None
        for t in range(int(T)):
            if use_noise:
                if t % _DRAW_CHUNK == 0:
                    n = min(_DRAW_CHUNK, int(T) - t)
                    width = max(o.noise_width for o in self.objs)
                    draws = np.zeros((self.m, n, width))
                    for i in range(self.m):
                        if noisy[i]:
                            draws[i] = self.objs[i].draw_noise(rngs[i], n)
                H = self.noisy_subgrad(U, draws[:, t % _DRAW_CHUNK], noisy)
            else:
                H = self.subgrad(U)
            eb = eta * beta[t]
            U = np.minimum(np.maximum((eta * X + eb * U - (W + H)) / (eta + eb), self.lo), self.hi)
            acc = acc + lam[t] * U
        return U, acc / lam.sum()


def _prepare(problem: Problem, graph: Graph, init):
    if not isinstance(problem, Problem):
        raise TypeError("problem must be a Problem instance")
    if graph.m != problem.m:
        raise ValueError(f"graph has {graph.m} agents but the problem has {problem.m}")
    if graph.m < 2:
        raise DisconnectedGraphError("a single agent has no nonzero Laplacian eigenvalue")
    if not is_connected(graph):
        raise DisconnectedGraphError("communication graph is not connected")
    L = laplacian(graph, problem.d)
    spec = spectral_constants(L)
    init = dict(init or {})
    x0 = init.get("x0")
    x0 = problem.center() if x0 is None else np.array(x0, dtype=float).reshape(problem.m, problem.d)
    if not problem.contains(x0):
        raise ValueError("initial point is infeasible")
    y0 = init.get("y0")
    y0 = np.zeros((problem.m, problem.d)) if y0 is None else np.array(y0, dtype=float).reshape(problem.m, problem.d)
    return L, spec, x0, y0


def _check_schedule(schedule, inner, problem, spec, modes, validate):
    if schedule.mode not in modes:
        raise ScheduleError(f"schedule mode {schedule.mode!r} does not fit this algorithm ({modes})")
    if not validate:
        return None, None
    rep = validate_outer(schedule, spec.op_norm, problem.mu, problem.C)
    inner_bad = None
    if inner is not None:
        for k in range(schedule.N):
            r = inner_report(inner, float(schedule.eta[k]), problem.mu, problem.C, int(schedule.T[k]))
            if not r.passed:
                inner_bad = r
                break
    if not rep.passed or inner_bad is not None:
        raise ScheduleValidationError(rep, inner_bad)
    return rep, inner_bad


class _Recorder:
    def __init__(self, problem, L, theta, store_every, net, evals_of):
        self.problem, self.L, self.theta = problem, L, theta
        self.store_every = max(1, int(store_every))
        self.net = net
        self.evals_of = evals_of
        self.S_x = 0.0
        self.S_y = 0.0
        self.W = 0.0
        self.snapshots = []
        self.rows = []

    def add(self, k, X, Y):
        th = self.theta[k - 1]
        self.S_x = self.S_x + th * X
        self.S_y = self.S_y + th * Y
        self.W += th
        if (k - 1) % self.store_every == 0 or k == len(self.theta):
            self.snapshots.append((k, X.copy(), Y.copy()))
        xe = self.S_x / self.W
        self.rows.append({
            "k": k,
            "F": self.problem.value(xe),
            "feas": float(np.linalg.norm(apply_laplacian(self.L, xe))),
            "comm_rounds": self.net.ledger.comm_rounds,
            "evals": int(self.evals_of(self.net.ledger)),
        })

    def ergodic(self):
        return self.S_x / self.W, self.S_y / self.W


def _manifest(algorithm, problem, graph, spec, schedule, inner, x0, y0, seed=None):
    return {
        "algorithm": algorithm,
        "graph": {"m": graph.m, "edges": graph.edges_1based()},
        "spectral": {"op_norm": spec.op_norm, "min_nonzero_singular": spec.min_nonzero_singular},
        "constants": problem.constants(),
        "schedule": schedule.to_dict(),
        "inner": None if inner is None else inner.to_dict(),
        "seed": seed,
        "x0": np.asarray(x0).tolist(),
        "y0": np.asarray(y0).tolist(),
    }


def run_dpd(problem: Problem, graph: Graph, schedule: OuterSchedule, init=None, *,
            validate: bool = True, store_every: int = 1, network: Network | None = None) -> RunTrace:
    """Decentralized primal-dual method with exact local prox steps."""
    L, spec, x0, y0 = _prepare(problem, graph, init)
    for i, a in enumerate(problem.agents):
        if not a.objective.exact_prox_available(a.cset, a.geom):
            raise ExactProxUnavailable(
                f"agent {i + 1}: {type(a.objective).__name__} has no exact prox; use DCS instead"
            )
    _check_schedule(schedule, None, problem, spec, ("dpd_convex",), validate)
    net = network or Network(L)
    rec = _Recorder(problem, L, schedule.theta, store_every, net,
                    lambda led: led.prox_solves.max())
    x_prev2 = x0.copy()
    x_prev = x0.copy()
    y = y0.copy()
    for k in range(1, schedule.N + 1):
        a_k, eta_k, tau_k = schedule.alpha[k - 1], schedule.eta[k - 1], schedule.tau[k - 1]
        x_tilde = a_k * (x_prev - x_prev2) + x_prev
        v = net.mix(x_tilde)
        y = y + v / tau_k
        w = net.mix(y)
        x_new = np.empty_like(x_prev)
        for i, ag in enumerate(problem.agents):
            x_new[i] = composite_prox(ag.objective, ag.cset, w[i], x_prev[i], eta_k, ag.geom)
            net.ledger.prox_solves[i] += 1
        x_prev2, x_prev = x_prev, x_new
        rec.add(k, x_prev, y)
    xe, ye = rec.ergodic()
    return RunTrace("dpd", schedule, None, net.ledger, xe, ye, x_prev, y, None,
                    rec.snapshots, rec.rows,
                    _manifest("dpd", problem, graph, spec, schedule, None, x0, y0),
                    store_every=rec.store_every)


def _run_sliding(algorithm, problem, graph, outer, inner, init, seed, validate, store_every,
                 network, record_subproblems, batch):
    L, spec, x0, y0 = _prepare(problem, graph, init)
    modes = ("dcs_convex", "dcs_strongly_convex") if algorithm == "dcs" else (
        "sdcs_convex", "sdcs_strongly_convex")
    _check_schedule(outer, inner, problem, spec, modes, validate)
    stochastic = algorithm == "sdcs"
    net = network or Network(L)
    rec = _Recorder(problem, L, outer.theta, store_every, net,
                    lambda led: led.total_evals().max())
    use_batch = batch and _LADBatch.applies(problem)
    kernel = _LADBatch(problem) if use_batch else None
    x_prev2 = x0.copy()
    x_prev = x0.copy()
    x_hat = x0.copy()
    y = y0.copy()
    subproblems = []
    for k in range(1, outer.N + 1):
        a_k, eta_k, tau_k = outer.alpha[k - 1], outer.eta[k - 1], outer.tau[k - 1]
        T_k = int(outer.T[k - 1])
        x_tilde = a_k * (x_hat - x_prev2) + x_prev
        v = net.mix(x_tilde)
        y = y + v / tau_k
        w = net.mix(y)
        if record_subproblems:
            subproblems.append((k, w.copy(), x_prev.copy(), float(eta_k)))
        rngs = [agent_stream(seed, i, k) for i in range(problem.m)] if stochastic else None
        if kernel is not None:
            x_new, x_hat_new = kernel.cs(T_k, eta_k, w, x_prev, inner, stochastic, rngs)
            counter = net.ledger.stoch_evals if stochastic else net.ledger.subgrad_evals
            counter += T_k
        else:
            x_new = np.empty_like(x_prev)
            x_hat_new = np.empty_like(x_prev)
            for i, ag in enumerate(problem.agents):
                x_new[i], x_hat_new[i] = cs_procedure(
                    ag.objective, ag.cset, ag.geom, T_k, eta_k, w[i], x_prev[i], inner, k,
                    mode="stochastic" if stochastic else "exact",
                    rng=None if rngs is None else rngs[i], ledger=net.ledger, agent=i)
        x_prev2, x_prev = x_prev, x_new
        x_hat = x_hat_new
        rec.add(k, x_hat, y)
    xe, ye = rec.ergodic()
    return RunTrace(algorithm, outer, inner, net.ledger, xe, ye, x_prev, y, x_hat,
                    rec.snapshots, rec.rows,
                    _manifest(algorithm, problem, graph, spec, outer, inner, x0, y0,
                              seed if stochastic else None),
                    subproblems=subproblems, store_every=rec.store_every)


def run_dcs(problem: Problem, graph: Graph, outer: OuterSchedule, inner: InnerSchedule, init=None,
            *, validate: bool = True, store_every: int = 1, network: Network | None = None,
            record_subproblems: bool = False, batch: bool = True) -> RunTrace:
    """Decentralized communication sliding with exact subgradients."""
    return _run_sliding("dcs", problem, graph, outer, inner, init, None, validate, store_every,
                        network, record_subproblems, batch)


def run_sdcs(problem: Problem, graph: Graph, outer: OuterSchedule, inner: InnerSchedule, init=None,
             seed: int = 0, *, validate: bool = True, store_every: int = 1,
             network: Network | None = None, record_subproblems: bool = False,
             batch: bool = True) -> RunTrace:
    """Stochastic communication sliding.

    Agent ``i`` at outer iteration ``k`` draws from its own generator
    seeded by ``(seed, i, k)``, so traces do not depend on agent order.
    """
    if int(seed) < 0:
        raise ValueError("seed must be nonnegative")
    return _run_sliding("sdcs", problem, graph, outer, inner, init, int(seed), validate,
                        store_every, network, record_subproblems, batch)

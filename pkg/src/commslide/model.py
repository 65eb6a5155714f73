"""Agent objectives, stochastic oracles and problem instances.

The shipped family is least absolute deviations (LAD),

    f_i(x) = ||A_i x - b_i||_1 + (mu_i / 2) ||x - c_i||^2,

optionally with noisy subgradient oracles, plus a max-of-affine objective
that has no cheap exact prox.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .geometry import (
    EUCLIDEAN,
    BregmanGeometry,
    Box,
    ConstraintSet,
    geometry,
    set_from_dict,
)

__all__ = [
    "ExactProxUnavailable",
    "AgentObjective",
    "LADObjective",
    "MaxAffineObjective",
    "AgentProblem",
    "Problem",
    "composite_prox",
    "evaluate_F",
    "objective_from_dict",
    "TRUNC",
]

NOISE_KINDS = ("none", "bounded_gaussian", "bernoulli_component")
# Gaussian noise coordinates are truncated at TRUNC standard deviations.
TRUNC = 4.0
_PHI_LO = float(ndtr(-TRUNC))
_PHI_SPAN = float(ndtr(TRUNC) - ndtr(-TRUNC))


class ExactProxUnavailable(NotImplementedError):
    """The objective has no exact composite prox for this set and geometry."""


class AgentObjective:
    """Interface shared by all agent objectives.

    Subclasses provide ``value``, ``subgrad``, the sandwich constant via
    ``lipschitz_constant`` and a noise model.  Random draws are split from
    their use: ``draw_noise`` consumes the generator and ``noisy_subgrad``
    applies one row of draws, so block draws and one-at-a-time draws from the
    same generator give the same oracle outputs.
    """

    dim: int
    mu: float = 0.0
    noise_kind: str = "none"
    supports_exact_prox: bool = False

    def value(self, x) -> float:
        raise NotImplementedError

    def subgrad(self, x) -> np.ndarray:
        raise NotImplementedError

    def lipschitz_constant(self, cset: ConstraintSet) -> float:
        raise NotImplementedError

    def grad_bound(self, cset: ConstraintSet) -> float:
        """Upper bound on subgradient norms over ``cset``."""
        raise NotImplementedError

    @property
    def sigma(self) -> float:
        return 0.0

    noise_width: int = 0

    def draw_noise(self, rng, n: int) -> np.ndarray:
        return np.empty((n, 0))

    def noisy_subgrad(self, x, draw) -> np.ndarray:
        return self.subgrad(x)

    def stoch_subgrad(self, x, rng) -> np.ndarray:
        if self.sigma == 0.0:
            return self.subgrad(x)
        return self.noisy_subgrad(x, self.draw_noise(rng, 1)[0])

    def exact_prox_available(self, cset, geom=EUCLIDEAN) -> bool:
        return self.supports_exact_prox

    def prox(self, w, x_anchor, eta, cset, geom=EUCLIDEAN) -> np.ndarray:
        raise ExactProxUnavailable(f"{type(self).__name__} has no exact prox")

    def to_dict(self) -> dict:
        raise NotImplementedError


class LADObjective(AgentObjective):
    """``||A x - b||_1 + (mu/2)||x - c||^2`` with an optional noisy oracle.

    Parameters
    ----------
    A : (r, d) array
    b : (r,) array
    mu : float
        Strong convexity modulus; ``center`` defaults to the origin.
    noise : {"none", "bounded_gaussian", "bernoulli_component"}
        ``bounded_gaussian`` adds zero-mean truncated Gaussian noise with
        ``E|delta|^2 <= sigma^2`` and ``E exp(|delta|^2/sigma^2) <= e``.
        ``bernoulli_component`` samples one row ``j`` uniformly and returns
        ``r * a_j sign(a_j x - b_j)`` plus the exact quadratic part.
    sigma : float
        Noise level for ``bounded_gaussian``; derived from the data for
        ``bernoulli_component``.
    """

    def __init__(self, A, b, mu: float = 0.0, center=None, noise: str = "none",
                 sigma: float = 0.0):
        A = np.array(A, dtype=float, ndmin=2)
        b = np.array(b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise ValueError(f"A has {A.shape[0]} rows but b has {b.size} entries")
        if mu < 0:
            raise ValueError("mu must be nonnegative")
        if noise not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {noise!r}")
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if noise == "bernoulli_component" and A.shape[0] == 0:
            raise ValueError("component sampling needs at least one row")
        self.A = A
        self.b = b
        self.dim = A.shape[1]
        self.mu = float(mu)
        self.center = np.zeros(self.dim) if center is None else np.array(center, dtype=float).reshape(-1)
        self.noise_kind = noise
        self._sigma = float(sigma) if noise == "bounded_gaussian" else 0.0
        self.row_norms = np.linalg.norm(A, axis=1)
        self.row_norm_sum = float(self.row_norms.sum())
        rows_nz = np.count_nonzero(A, axis=1)
        self.separable = bool(np.all(rows_nz <= 1))
        for arr in (self.A, self.b, self.center):
            arr.flags.writeable = False

    @property
    def n_components(self) -> int:
        return self.A.shape[0]

    @property
    def sigma(self) -> float:
        if self.noise_kind == "bounded_gaussian":
            return self._sigma
        if self.noise_kind == "bernoulli_component":
            # Almost-sure bound on |G - f'|: covers variance and light tail at once.
            return float(self.n_components * self.row_norms.max() + self.row_norm_sum)
        return 0.0

    @property
    def coord_std(self) -> float:
        """Per-coordinate standard deviation of the untruncated Gaussian noise."""
        d = self.dim
        return self._sigma * math.sqrt(-math.expm1(-2.0 / d) / 2.0)

    @property
    def supports_exact_prox(self) -> bool:
        return True

    def residual(self, x) -> np.ndarray:
        return (self.A * x).sum(-1) - self.b

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        v = float(np.abs(self.residual(x)).sum())
        if self.mu:
            diff = x - self.center
            v += 0.5 * self.mu * float(diff @ diff)
        return v

    def subgrad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        s = np.sign(self.residual(x))
        return (self.A * s[:, None]).sum(0) + self.mu * (x - self.center)

    def component_subgrad(self, x, j: int) -> np.ndarray:
        """``r * a_j sign(a_j x - b_j)`` plus the quadratic part; averages to ``subgrad``."""
        x = np.asarray(x, dtype=float)
        a = self.A[j]
        s = np.sign((a * x).sum(-1) - self.b[j])
        return self.n_components * (a * s) + self.mu * (x - self.center)

    def lipschitz_constant(self, cset: ConstraintSet) -> float:
        # Sandwich constant: the l1 part can jump by 2|a_r| across a kink.
        return 2.0 * self.row_norm_sum + 0.5 * self.mu * cset.euclidean_diameter()

    def grad_bound(self, cset: ConstraintSet) -> float:
        far = float(np.linalg.norm(self.center - cset.center())) + cset.euclidean_diameter()
        return self.row_norm_sum + self.mu * far

    @property
    def noise_width(self) -> int:
        """Uniform draws consumed per oracle call."""
        return {"none": 0, "bounded_gaussian": self.dim, "bernoulli_component": 1}[self.noise_kind]

    def draw_noise(self, rng, n):
        if self.noise_kind == "bounded_gaussian":
            return rng.random((n, self.dim))
        if self.noise_kind == "bernoulli_component":
            return rng.random((n, 1))
        return np.empty((n, 0))

    def noisy_subgrad(self, x, draw):
        if self.noise_kind == "bounded_gaussian":
            if self._sigma == 0.0:
                return self.subgrad(x)
            return self.subgrad(x) + self.coord_std * truncated_normal(draw)
        if self.noise_kind == "bernoulli_component":
            return self.component_subgrad(x, component_index(draw[0], self.n_components))
        return self.subgrad(x)

    def exact_prox_available(self, cset, geom=EUCLIDEAN):
        return geom.kind == "euclidean" and isinstance(cset, Box)

    def prox(self, w, x_anchor, eta, cset, geom=EUCLIDEAN):
        if not self.exact_prox_available(cset, geom):
            raise ExactProxUnavailable("exact LAD prox needs Euclidean geometry on a box")
        w = np.asarray(w, dtype=float)
        x_anchor = np.asarray(x_anchor, dtype=float)
        rho = self.mu + eta
        p = (self.mu * self.center + eta * x_anchor) / rho
        if self.separable:
            return _separable_l1_prox(self.A, self.b, w, p, rho, cset.lo, cset.hi)
        x, _ = lad_prox(self.A, self.b, w, p, rho, cset.lo, cset.hi)
        return x

    def to_dict(self):
        return {
            "type": "lad",
            "rows": self.A.shape[0],
            "dim": self.dim,
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "mu": self.mu,
            "center": self.center.tolist(),
            "noise": self.noise_kind,
            "sigma": self._sigma,
        }


class MaxAffineObjective(AgentObjective):
    """``max_k <c_k, x> + e_k``; deliberately without an exact prox."""

    def __init__(self, C, e):
        self.C = np.array(C, dtype=float, ndmin=2)
        self.e = np.array(e, dtype=float).reshape(-1)
        if self.C.shape[0] != self.e.size or self.e.size == 0:
            raise ValueError("need matching, nonempty C and e")
        self.dim = self.C.shape[1]

    def value(self, x):
        return float(np.max(self.C @ np.asarray(x, dtype=float) + self.e))

    def subgrad(self, x):
        return self.C[int(np.argmax(self.C @ np.asarray(x, dtype=float) + self.e))].copy()

    def lipschitz_constant(self, cset):
        return 2.0 * float(np.linalg.norm(self.C, axis=1).max())

    def grad_bound(self, cset):
        return float(np.linalg.norm(self.C, axis=1).max())

    def to_dict(self):
        return {"type": "max_affine", "C": self.C.tolist(), "e": self.e.tolist()}


def truncated_normal(u) -> np.ndarray:
    """Map uniforms in [0,1) to standard normals truncated at +-TRUNC."""
    return np.clip(ndtri(_PHI_LO + _PHI_SPAN * np.asarray(u)), -TRUNC, TRUNC)


def component_index(u, n: int):
    """Uniform index in ``range(n)`` from a uniform draw in [0,1)."""
    return np.minimum((np.asarray(u) * n).astype(np.int64), n - 1)


def objective_from_dict(d: dict) -> AgentObjective:
    kind = d["type"]
    if kind == "lad":
        A = np.array(d["A"], dtype=float).reshape(int(d["rows"]), int(d["dim"]))
        return LADObjective(A, d["b"], mu=d.get("mu", 0.0), center=d.get("center"),
                            noise=d.get("noise", "none"), sigma=d.get("sigma", 0.0))
    if kind == "max_affine":
        return MaxAffineObjective(d["C"], d["e"])
    raise ValueError(f"unknown objective type {kind!r}")


# ---------------------------------------------------------------------------
# Exact prox for LAD on a box:
#   min_x <w,x> + ||Ax - b||_1 + (rho/2)||x - p||^2,  lo <= x <= hi.

def _lad_primal(A, b, w, p, rho, x):
    diff = x - p
    return float(w @ x + np.abs(A @ x - b).sum() + 0.5 * rho * diff @ diff)


def _solve_1d(w, t, c, p, rho, lo, hi):
    """Exact minimiser of ``w x + sum_k c_k |x - t_k| + rho/2 (x-p)^2`` on [lo, hi]."""
    order = np.argsort(t)
    t = t[order]
    c = c[order]
    total = c.sum()
    left = np.concatenate(([0.0], np.cumsum(c)))
    # slope of the l1 part on the piece left of t[j] is left[j] - (total - left[j])
    for j in range(t.size + 1):
        s = 2.0 * left[j] - total
        x = p - (w + s) / rho
        lo_j = -np.inf if j == 0 else t[j - 1]
        hi_j = np.inf if j == t.size else t[j]
        if lo_j <= x <= hi_j:
            return min(max(x, lo), hi)
    for j in range(t.size):
        below = w + rho * (t[j] - p) + 2.0 * left[j] - total
        above = w + rho * (t[j] - p) + 2.0 * left[j + 1] - total
        if below <= 0.0 <= above:
            return min(max(t[j], lo), hi)
    raise RuntimeError("1-D prox failed to bracket the minimiser")


def _separable_l1_prox(A, b, w, p, rho, lo, hi):
    d = A.shape[1]
    x = np.empty(d)
    for j in range(d):
        rows = np.nonzero(A[:, j])[0]
        a = A[rows, j]
        x[j] = _solve_1d(w[j], b[rows] / a, np.abs(a), p[j], rho, lo[j], hi[j])
    return x


def lad_prox(A, b, w, p, rho, lo, hi, tol: float = 1e-13, max_iter: int = 500):
    """Solve the LAD prox through its box-constrained dual.

    With ``z`` in ``[-1,1]^r`` the primal point is ``clip(p - (w + A'z)/rho)``
    and the dual is a concave piecewise quadratic, maximised by projected
    Newton steps with an accelerated-gradient fallback.  Returns the primal
    point and the certified duality gap.
    """
    A = np.asarray(A, dtype=float)
    r = A.shape[0]
    if r == 0:
        return np.minimum(np.maximum(p - w / rho, lo), hi), 0.0

    def primal_of(z):
        return np.minimum(np.maximum(p - (w + A.T @ z) / rho, lo), hi)

    def neg_dual(z):
        x = primal_of(z)
        diff = x - p
        return -float((w + A.T @ z) @ x + 0.5 * rho * diff @ diff - b @ z), x

    def finish(z):
        x = primal_of(z)
        return x, _lad_primal(A, b, w, p, rho, x) + neg_dual(z)[0]

    # warm start from the signs at the unconstrained-by-l1 point
    z = np.clip(np.sign(A @ primal_of(np.zeros(r)) - b), -1.0, 1.0)
    psi, x = neg_dual(z)
    best = (np.inf, z)
    for _ in range(max_iter):
        g = b - A @ x
        P = _lad_primal(A, b, w, p, rho, x)
        gap = P + psi
        if gap < best[0]:
            best = (gap, z)
        if gap <= tol * max(1.0, abs(P)):
            return x, gap
        proj_res = np.linalg.norm(z - np.clip(z - g, -1.0, 1.0))
        eps = min(1e-9, proj_res)
        act = ((z <= -1.0 + eps) & (g > 0)) | ((z >= 1.0 - eps) & (g < 0))
        free = ~act
        raw = p - (w + A.T @ z) / rho
        fx = (raw > lo) & (raw < hi)
        direction = -g.copy()
        if free.any():
            Af = A[np.ix_(free, fx)]
            H = Af @ Af.T / rho
            reg = 1e-12 * (np.trace(H) + 1.0)
            direction[free] = -np.linalg.solve(H + reg * np.eye(H.shape[0]), g[free])
        step = 1.0
        accepted = False
        for _ in range(60):
            z_new = np.clip(z + step * direction, -1.0, 1.0)
            psi_new, x_new = neg_dual(z_new)
            if psi_new <= psi + 1e-4 * float(g @ (z_new - z)):
                accepted = True
                break
            step *= 0.5
        if not accepted or np.array_equal(z_new, z):
            break
        z, psi, x = z_new, psi_new, x_new

    # accelerated projected gradient on the dual from the best point so far
    z = best[1]
    Lg = float(np.linalg.norm(A, 2) ** 2 / rho)
    if Lg == 0.0:
        return finish(z)
    yv, z_prev, tk = z.copy(), z.copy(), 1.0
    for _ in range(20000):
        gy = b - A @ primal_of(yv)
        z_new = np.clip(yv - gy / Lg, -1.0, 1.0)
        tk_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
        yv = z_new + ((tk - 1.0) / tk_new) * (z_new - z_prev)
        z_prev, tk = z_new, tk_new
        x, gap = finish(z_new)
        if gap < best[0]:
            best = (gap, z_new)
        if gap <= tol * max(1.0, abs(_lad_primal(A, b, w, p, rho, x))):
            break
    return finish(best[1])


def composite_prox(obj: AgentObjective, cset: ConstraintSet, w, x_anchor, eta: float,
                   geom: BregmanGeometry = EUCLIDEAN) -> np.ndarray:
    """``argmin_{x in cset} <w,x> + f(x) + eta V(x_anchor, x)``.

    Raises
    ------
    ExactProxUnavailable
        If the objective cannot solve this subproblem exactly.
    """
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if not obj.exact_prox_available(cset, geom):
        raise ExactProxUnavailable(
            f"{type(obj).__name__} has no exact prox on {cset.kind} with {geom.kind} geometry"
        )
    return obj.prox(w, x_anchor, eta, cset, geom)


@dataclass(frozen=True)
class AgentProblem:
    objective: AgentObjective
    cset: ConstraintSet
    geom: BregmanGeometry = EUCLIDEAN

    def __post_init__(self):
        if self.objective.dim != self.cset.dim:
            raise ValueError(
                f"objective dimension {self.objective.dim} != set dimension {self.cset.dim}"
            )

    @property
    def M(self) -> float:
        return self.objective.lipschitz_constant(self.cset)

    @property
    def mu(self) -> float:
        return self.objective.mu

    @property
    def sigma(self) -> float:
        return self.objective.sigma

    def to_dict(self):
        return {
            "objective": self.objective.to_dict(),
            "set": self.cset.to_dict(),
            "geometry": self.geom.kind,
        }


class Problem:
    """A list of agent problems sharing one decision dimension.

    Constants follow the global convention: ``M`` and ``sigma`` are maxima
    over agents, ``mu`` the minimum, ``C`` the largest growth constant and
    ``D_sq`` the sum of per-agent divergence bounds.
    """

    def __init__(self, agents: Sequence[AgentProblem], name: str = ""):
        agents = tuple(agents)
        if not agents:
            raise ValueError("need at least one agent")
        dims = {a.cset.dim for a in agents}
        if len(dims) != 1:
            raise ValueError(f"agents disagree on dimension: {sorted(dims)}")
        self.agents = agents
        self.name = name
        self.m = len(agents)
        self.d = dims.pop()

    def __len__(self):
        return self.m

    def __iter__(self):
        return iter(self.agents)

    def __getitem__(self, i):
        return self.agents[i]

    @property
    def objectives(self):
        return [a.objective for a in self.agents]

    @property
    def M(self) -> float:
        return max(a.M for a in self.agents)

    @property
    def mu(self) -> float:
        return min(a.mu for a in self.agents)

    @property
    def sigma(self) -> float:
        return max(a.sigma for a in self.agents)

    @property
    def C(self) -> float:
        return max(a.geom.growth_C for a in self.agents)

    @property
    def D_sq(self) -> float:
        return float(sum(a.cset.diameter_sq_bound(a.geom) for a in self.agents))

    @property
    def geoms(self):
        return [a.geom for a in self.agents]

    def center(self) -> np.ndarray:
        return np.stack([a.cset.center() for a in self.agents])

    def value(self, X) -> float:
        return evaluate_F(self, X)

    def contains(self, X, tol: float = 1e-12) -> bool:
        X = np.asarray(X, dtype=float).reshape(self.m, self.d)
        return all(a.cset.contains(x, tol) for a, x in zip(self.agents, X))

    def constants(self) -> dict:
        return {"m": self.m, "d": self.d, "M": self.M, "mu": self.mu, "sigma": self.sigma,
                "C": self.C, "D_sq": self.D_sq}

    def to_dict(self) -> dict:
        return {
            "format": "commslide-problem",
            "version": 1,
            "name": self.name,
            "m": self.m,
            "d": self.d,
            "agents": [a.to_dict() for a in self.agents],
            "constants": self.constants(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Problem":
        agents = [
            AgentProblem(objective_from_dict(a["objective"]), set_from_dict(a["set"]),
                         geometry(a.get("geometry", "euclidean")))
            for a in d["agents"]
        ]
        return cls(agents, name=d.get("name", ""))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Problem":
        return cls.from_dict(json.loads(Path(path).read_text()))


def evaluate_F(problem, X) -> float:
    """``F(x) = sum_i f_i(x_i)`` for a stacked point."""
    objs = problem.objectives if isinstance(problem, Problem) else list(problem)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(len(objs), -1)
    if X.shape[0] != len(objs):
        raise ValueError(f"{X.shape[0]} blocks for {len(objs)} objectives")
    return float(sum(f.value(x) for f, x in zip(objs, X)))

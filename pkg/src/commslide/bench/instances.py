"""Seeded LAD test instances."""
from __future__ import annotations

import numpy as np

from ..geometry import Box
from ..model import AgentProblem, LADObjective, Problem

FAMILIES = ("lad_convex", "lad_strongly_convex", "lad_stochastic", "lad_finite_sum")


def generate_instance(family: str, m: int, d: int, data_seed: int, *, rows: int = 3,
                      box: float = 2.0, mu: float | None = None,
                      sigma: float | str | None = None) -> Problem:
    """Draw a decentralized LAD problem.

    Agent ``i`` gets ``A_i`` with standard normal entries (``rows x d``) and
    ``b_i = A_i xi + e_i`` for a common ``xi ~ U[-1,1]^d`` and noise
    ``e_i ~ N(0, 0.25)``; every agent is constrained to ``[-box, box]^d``.

    Parameters
    ----------
    family : str
        ``lad_convex``; ``lad_strongly_convex`` (adds ``mu/2 |x - c_i|^2``
        with ``c_i ~ U[-1,1]^d``, default ``mu = 0.5``); ``lad_stochastic``
        (truncated Gaussian oracle noise, default ``sigma = M``);
        ``lad_finite_sum`` (one row sampled per oracle call).
    mu : float, optional
        Strong convexity modulus.  Zero unless the family is strongly
        convex; the stochastic families accept ``mu > 0`` too.
    sigma : float or "M", optional
        Noise level for ``lad_stochastic``.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    if m < 2 or d < 1:
        raise ValueError("need m >= 2 and d >= 1")
    if mu is None:
        mu = 0.5 if family == "lad_strongly_convex" else 0.0
    if family == "lad_convex" and mu != 0:
        raise ValueError("lad_convex has mu = 0")
    if family == "lad_strongly_convex" and not mu > 0:
        raise ValueError("lad_strongly_convex needs mu > 0")
    rng = np.random.default_rng(data_seed)
    xi = rng.uniform(-1.0, 1.0, d)
    data = []
    for _ in range(m):
        A = rng.standard_normal((rows, d))
        b = A @ xi + 0.5 * rng.standard_normal(rows)
        c = rng.uniform(-1.0, 1.0, d)
        data.append((A, b, c))
    cset = Box.cube(d, -box, box)
    noise = {"lad_stochastic": "bounded_gaussian", "lad_finite_sum": "bernoulli_component"}.get(
        family, "none")
    agents = [AgentProblem(LADObjective(A, b, mu=mu, center=c if mu > 0 else None), cset)
              for A, b, c in data]
    if noise == "bounded_gaussian":
        M = max(a.M for a in agents)
        s = M if sigma in (None, "M") else float(sigma)
        agents = [AgentProblem(LADObjective(A, b, mu=mu, center=c if mu > 0 else None,
                                            noise=noise, sigma=s), cset)
                  for A, b, c in data]
    elif noise == "bernoulli_component":
        agents = [AgentProblem(LADObjective(A, b, mu=mu, center=c if mu > 0 else None,
                                            noise=noise), cset)
                  for A, b, c in data]
    return Problem(agents, name=f"{family}:m={m}:d={d}:seed={data_seed}")

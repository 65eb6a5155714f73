"""Bregman prox geometry and constraint sets."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BregmanGeometry",
    "EUCLIDEAN",
    "ENTROPY",
    "geometry",
    "ConstraintSet",
    "Box",
    "Ball",
    "Simplex",
    "set_from_dict",
    "bregman_div",
    "stacked_V",
    "prox_step",
    "UnsupportedProxError",
]

MEMBERSHIP_TOL = 1e-12


class UnsupportedProxError(NotImplementedError):
    """No closed-form prox for this (geometry, set) pair."""


@dataclass(frozen=True)
class BregmanGeometry:
    """Distance-generating function: ``euclidean`` or ``entropy``."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("euclidean", "entropy"):
            raise ValueError(f"unknown geometry {self.kind!r}")

    @property
    def growth_C(self) -> float:
        # Quadratic growth V(x,u) <= C/2 |x-u|^2; unbounded for entropy on the simplex.
        return 1.0 if self.kind == "euclidean" else math.inf


EUCLIDEAN = BregmanGeometry("euclidean")
ENTROPY = BregmanGeometry("entropy")


def geometry(kind) -> BregmanGeometry:
    if isinstance(kind, BregmanGeometry):
        return kind
    return {"euclidean": EUCLIDEAN, "entropy": ENTROPY}[kind]


def bregman_div(geom: BregmanGeometry, x, u) -> float:
    """``V(x, u) = w(u) - w(x) - <grad w(x), u - x>``.

    Examples
    --------
    >>> bregman_div(EUCLIDEAN, [0.0, 0.0], [3.0, 4.0])
    12.5
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != u.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {u.shape}")
    if geom.kind == "euclidean":
        diff = u - x
        return 0.5 * float(diff @ diff) if diff.ndim == 1 else 0.5 * float(np.sum(diff * diff))
    if np.any(x <= 0.0):
        raise ValueError("entropy divergence needs a strictly positive first argument")
    if np.any(u < 0.0):
        raise ValueError("entropy divergence needs a nonnegative second argument")
    pos = u > 0.0
    kl = float(np.sum(u[pos] * np.log(u[pos] / x[pos])))
    # The linear terms cancel on the simplex; kept so the formula holds on the orthant.
    return kl - float(np.sum(u)) + float(np.sum(x))


def stacked_V(geoms, x, u) -> float:
    """Sum of per-agent divergences over stacked ``(m, d)`` points."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != u.shape or x.ndim != 2:
        raise ValueError(f"stacked points must share an (m, d) shape, got {x.shape} and {u.shape}")
    if isinstance(geoms, BregmanGeometry):
        geoms = [geoms] * x.shape[0]
    if len(geoms) != x.shape[0]:
        raise ValueError(f"{len(geoms)} geometries for {x.shape[0]} blocks")
    return float(sum(bregman_div(g, xi, ui) for g, xi, ui in zip(geoms, x, u)))


class ConstraintSet:
    """Closed convex set with a Euclidean projection and a centre point."""

    kind = "abstract"
    dim: int

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        raise NotImplementedError

    def project(self, v) -> np.ndarray:
        raise NotImplementedError

    def center(self) -> np.ndarray:
        raise NotImplementedError

    def euclidean_diameter(self) -> float:
        raise NotImplementedError

    def diameter_sq_bound(self, geom: BregmanGeometry) -> float:
        """``D`` with ``V(x, u) <= D`` over the set."""
        if geom.kind == "euclidean":
            return 0.5 * self.euclidean_diameter() ** 2
        raise UnsupportedProxError(f"no divergence bound for {geom.kind} on {self.kind}")

    def sample(self, rng, n: int) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Box(ConstraintSet):
    lo: np.ndarray
    hi: np.ndarray
    kind = "box"

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).reshape(-1)
        hi = np.array(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(lo > hi) or not np.all(np.isfinite(lo) & np.isfinite(hi)):
            raise ValueError("box needs finite bounds with lo <= hi")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, d: int, lo: float, hi: float) -> "Box":
        return cls(np.full(d, float(lo)), np.full(d, float(hi)))

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def project(self, v):
        return np.minimum(np.maximum(v, self.lo), self.hi)

    def center(self):
        return 0.5 * (self.lo + self.hi)

    def euclidean_diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def sample(self, rng, n):
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))

    def to_dict(self):
        return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class Ball(ConstraintSet):
    centre: np.ndarray
    radius: float
    kind = "euclidean_ball"

    def __post_init__(self):
        c = np.array(self.centre, dtype=float).reshape(-1)
        c.flags.writeable = False
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "centre", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.centre.size

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return bool(np.linalg.norm(np.asarray(x, dtype=float) - self.centre) <= self.radius + tol)

    def project(self, v):
        diff = v - self.centre
        nrm = float(np.linalg.norm(diff))
        if nrm <= self.radius:
            return v
        return self.centre + diff * (self.radius / nrm)

    def center(self):
        return self.centre.copy()

    def euclidean_diameter(self):
        return 2.0 * self.radius

    def sample(self, rng, n):
        dirs = rng.standard_normal((n, self.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        rad = self.radius * rng.random(n) ** (1.0 / self.dim)
        return self.centre + dirs * rad[:, None]

    def to_dict(self):
        return {"kind": "euclidean_ball", "center": self.centre.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Simplex(ConstraintSet):
    n: int
    kind = "simplex"

    @property
    def dim(self):
        return self.n

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= -tol) and abs(x.sum() - 1.0) <= tol * max(1, self.n))

    def project(self, v):
        # Sort-based Euclidean projection onto the probability simplex.
        s = np.sort(v)[::-1]
        css = np.cumsum(s) - 1.0
        idx = np.arange(1, v.size + 1)
        rho = np.nonzero(s - css / idx > 0)[0][-1]
        return np.maximum(v - css[rho] / (rho + 1), 0.0)

    def center(self):
        return np.full(self.n, 1.0 / self.n)

    def euclidean_diameter(self):
        return math.sqrt(2.0)

    def diameter_sq_bound(self, geom):
        if geom.kind == "entropy":
            # KL divergence measured from the barycentre; unbounded between arbitrary pairs.
            return math.log(self.n)
        return super().diameter_sq_bound(geom)

    def sample(self, rng, n):
        return rng.dirichlet(np.ones(self.n), size=n)

    def to_dict(self):
        return {"kind": "simplex", "dim": self.n}


def set_from_dict(d: dict) -> ConstraintSet:
    kind = d["kind"]
    if kind == "box":
        return Box(np.array(d["lo"]), np.array(d["hi"]))
    if kind == "euclidean_ball":
        return Ball(np.array(d["center"]), d["radius"])
    if kind == "simplex":
        return Simplex(int(d["dim"]))
    raise ValueError(f"unknown set kind {kind!r}")


def prox_step(geom: BregmanGeometry, cset: ConstraintSet, g, x_anchor, u_anchor,
              eta: float, eta_beta: float) -> np.ndarray:
    """Minimise ``<g,u> + eta V(x_anchor,u) + eta_beta V(u_anchor,u)`` over ``cset``.

    Euclidean geometry reduces to projecting a weighted average of the
    anchors shifted by ``-g``; the entropy/simplex pair has a multiplicative
    closed form.
    """
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if eta_beta < 0:
        raise ValueError(f"eta_beta must be nonnegative, got {eta_beta}")
    g = np.asarray(g, dtype=float)
    x_anchor = np.asarray(x_anchor, dtype=float)
    u_anchor = np.asarray(u_anchor, dtype=float)
    if geom.kind == "euclidean":
        if isinstance(cset, (Box, Ball, Simplex)):
            return cset.project((eta * x_anchor + eta_beta * u_anchor - g) / (eta + eta_beta))
    elif geom.kind == "entropy" and isinstance(cset, Simplex):
        if np.any(x_anchor <= 0.0) or (eta_beta > 0 and np.any(u_anchor <= 0.0)):
            raise ValueError("entropy prox anchors must lie in the simplex interior")
        z = eta * np.log(x_anchor) - g
        if eta_beta > 0:
            z = z + eta_beta * np.log(u_anchor)
        z = z / (eta + eta_beta)
        e = np.exp(z - z.max())
        return e / e.sum()
    raise UnsupportedProxError(f"no closed-form prox for {geom.kind} geometry on {cset.kind}")

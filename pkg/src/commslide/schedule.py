"""Outer and inner parameter sequences, and their feasibility validators.

Outer arrays are stored 0-based: ``alpha[k-1]`` is the value at outer
iteration ``k``.  Inner weights are functions of ``t = 1..T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ScheduleError",
    "OuterSchedule",
    "InnerSchedule",
    "ConditionResult",
    "ValidationReport",
    "MODES",
    "MODE_CONDITIONS",
    "dpd_schedule",
    "dcs_convex_schedule",
    "dcs_strongly_convex_schedule",
    "sdcs_convex_schedule",
    "sdcs_strongly_convex_schedule",
    "validate_outer",
    "validate_inner",
    "inner_report",
    "DEFAULT_T_CAP",
    "SLACK",
]

DEFAULT_T_CAP = 10**7
SLACK = 1e-12

MODES = ("dpd_convex", "dcs_convex", "dcs_strongly_convex", "sdcs_convex", "sdcs_strongly_convex")

_BASE = ("alpha_theta", "theta_tau", "eta_tau_L_k", "eta_tau", "eta_tau_theta")
MODE_CONDITIONS = {
    "dpd_convex": ("theta_eta",) + _BASE,
    "dcs_convex": _BASE + ("theta_eta_d",),
    "sdcs_convex": _BASE + ("theta_eta_d",),
    "dcs_strongly_convex": _BASE + ("theta_eta_ds",),
    "sdcs_strongly_convex": _BASE + ("theta_eta_ds",),
}


class ScheduleError(ValueError):
    """Invalid schedule inputs, or an inner count above the cap."""


@dataclass(frozen=True)
class OuterSchedule:
    mode: str
    N: int
    alpha: np.ndarray
    theta: np.ndarray
    eta: np.ndarray
    tau: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        if self.mode not in MODES:
            raise ScheduleError(f"unknown mode {self.mode!r}")
        if self.N < 1:
            raise ScheduleError(f"N must be at least 1, got {self.N}")
        for name in ("alpha", "theta", "eta", "tau"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            if arr.size != self.N:
                raise ScheduleError(f"{name} has {arr.size} entries, expected {self.N}")
            if not np.all(np.isfinite(arr)):
                raise ScheduleError(f"{name} has non-finite entries")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        T = np.array(self.T, dtype=np.int64).reshape(-1)
        if T.size != self.N:
            raise ScheduleError(f"T has {T.size} entries, expected {self.N}")
        T.flags.writeable = False
        object.__setattr__(self, "T", T)
        if np.any(self.eta <= 0) or np.any(self.tau <= 0) or np.any(self.theta <= 0):
            raise ScheduleError("eta, tau and theta must be positive")
        if np.any(self.alpha < 0):
            raise ScheduleError("alpha must be nonnegative")
        if np.any(T < 1):
            raise ScheduleError("inner counts must be at least 1")

    @property
    def total_inner(self) -> int:
        return int(self.T.sum())

    def replace(self, **changes) -> "OuterSchedule":
        kw = {k: getattr(self, k) for k in ("mode", "N", "alpha", "theta", "eta", "tau", "T")}
        kw.update(changes)
        return OuterSchedule(**kw)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "N": self.N,
            "alpha": self.alpha.tolist(),
            "theta": self.theta.tolist(),
            "eta": self.eta.tolist(),
            "tau": self.tau.tolist(),
            "T": self.T.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OuterSchedule":
        return cls(d["mode"], int(d["N"]), d["alpha"], d["theta"], d["eta"], d["tau"], d["T"])


@dataclass(frozen=True)
class InnerSchedule:
    """Inner weights ``lambda_t`` and ``beta_t``.

    ``convex``: ``lambda_t = t + 1``, ``beta_t = t / 2``.
    ``strongly_convex``: ``lambda_t = t`` and
    ``beta_t = (t + 1) mu / (2 eta_k C) + (t - 1) / 2``, so ``beta`` depends on
    the outer iteration through ``eta_k``.
    """

    kind: str = "convex"
    mu: float = 0.0
    C: float = 1.0

    def __post_init__(self):
        if self.kind not in ("convex", "strongly_convex"):
            raise ScheduleError(f"unknown inner schedule {self.kind!r}")
        if self.kind == "strongly_convex" and not (self.mu > 0 and math.isfinite(self.C)):
            raise ScheduleError("strongly convex inner schedule needs mu > 0 and finite C")

    def lam(self, t):
        t = np.asarray(t, dtype=float)
        return t + 1.0 if self.kind == "convex" else t

    def beta(self, t, eta: float):
        t = np.asarray(t, dtype=float)
        if self.kind == "convex":
            return t / 2.0
        return (t + 1.0) * self.mu / (2.0 * eta * self.C) + (t - 1.0) / 2.0

    def weights(self, T: int, eta: float):
        """Arrays ``(lambda_t, beta_t)`` for ``t = 1..T``."""
        t = np.arange(1, T + 1, dtype=float)
        return self.lam(t), self.beta(t, eta)

    def to_dict(self):
        return {"kind": self.kind, "mu": self.mu, "C": self.C}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d.get("mu", 0.0)), float(d.get("C", 1.0)))


def _positive(**vals):
    for name, v in vals.items():
        if not (isinstance(v, (int, float, np.integer, np.floating)) and math.isfinite(v) and v > 0):
            raise ScheduleError(f"{name} must be positive and finite, got {v!r}")


def _check_N(N):
    if int(N) != N or N < 1:
        raise ScheduleError(f"N must be a positive integer, got {N!r}")
    return int(N)


def _ceil_count(value: float, t_cap: int) -> int:
    if not math.isfinite(value) or value > t_cap:
        raise ScheduleError(
            f"inner iteration count {value:.6g} exceeds the cap {t_cap}; "
            "increase D_tilde or raise the cap explicitly"
        )
    return max(1, math.ceil(value))


def dpd_schedule(L_norm: float, N: int) -> OuterSchedule:
    """``alpha = theta = 1``, ``eta = 2 ||L||``, ``tau = ||L||``."""
    _positive(L_norm=L_norm)
    N = _check_N(N)
    one = np.ones(N)
    return OuterSchedule("dpd_convex", N, one, one, 2.0 * L_norm * one, L_norm * one,
                         np.ones(N, dtype=np.int64))


def _convex(mode, L_norm, m, spread, N, D_tilde, t_cap):
    _positive(L_norm=L_norm, m=m, D_tilde=D_tilde)
    N = _check_N(N)
    if not (math.isfinite(spread) and spread >= 0):
        raise ScheduleError("M^2 + sigma^2 must be finite and nonnegative")
    T = _ceil_count(m * spread * N / (L_norm**2 * D_tilde), t_cap)
    one = np.ones(N)
    outer = OuterSchedule(mode, N, one, one, 2.0 * L_norm * one, L_norm * one,
                          np.full(N, T, dtype=np.int64))
    return outer, InnerSchedule("convex")


def dcs_convex_schedule(L_norm, m, M, N, D_tilde, t_cap=DEFAULT_T_CAP):
    """Constant outer parameters with ``T_k = ceil(m M^2 N / (||L||^2 D~))``."""
    _positive(M=M)
    return _convex("dcs_convex", L_norm, m, M * M, N, D_tilde, t_cap)


def sdcs_convex_schedule(L_norm, m, M, sigma, N, D_tilde, t_cap=DEFAULT_T_CAP):
    """As :func:`dcs_convex_schedule` with ``M^2`` replaced by ``M^2 + sigma^2``."""
    _positive(M=M)
    if sigma < 0:
        raise ScheduleError("sigma must be nonnegative")
    return _convex("sdcs_convex", L_norm, m, M * M + sigma * sigma, N, D_tilde, t_cap)


def _strongly_convex_outer(mode, mu, C, L_norm, N):
    k = np.arange(1, N + 1, dtype=float)
    alpha = k / (k + 1.0)
    theta = k + 1.0
    eta = k * mu / (2.0 * C)
    tau = 4.0 * L_norm**2 * C / ((k + 1.0) * mu)
    return alpha, theta, eta, tau


def _sc_checks(mu, C, L_norm, m, M, N, D_tilde):
    _positive(mu=mu, L_norm=L_norm, m=m, M=M, D_tilde=D_tilde)
    if not (math.isfinite(C) and C >= 1.0):
        raise ScheduleError(f"growth constant C must be finite and at least 1, got {C!r}")
    return _check_N(N)


def dcs_strongly_convex_schedule(mu, C, L_norm, m, M, N, D_tilde, t_cap=DEFAULT_T_CAP):
    """Increasing weights ``theta_k = k + 1`` for a strongly convex objective."""
    N = _sc_checks(mu, C, L_norm, m, M, N, D_tilde)
    alpha, theta, eta, tau = _strongly_convex_outer("dcs_strongly_convex", mu, C, L_norm, N)
    r = math.sqrt(2.0 * m / D_tilde)
    T = _ceil_count(r * (C * M * N / mu) * max(r * 4.0 * C * M / mu, 1.0), t_cap)
    outer = OuterSchedule("dcs_strongly_convex", N, alpha, theta, eta, tau,
                          np.full(N, T, dtype=np.int64))
    return outer, InnerSchedule("strongly_convex", float(mu), float(C))


def sdcs_strongly_convex_schedule(mu, C, L_norm, m, M, sigma, N, D_tilde, t_cap=DEFAULT_T_CAP):
    N = _sc_checks(mu, C, L_norm, m, M, N, D_tilde)
    if sigma < 0:
        raise ScheduleError("sigma must be nonnegative")
    alpha, theta, eta, tau = _strongly_convex_outer("sdcs_strongly_convex", mu, C, L_norm, N)
    r = math.sqrt(m * (M * M + sigma * sigma) / D_tilde)
    T = _ceil_count(r * (2.0 * N * C / mu) * max(r * 8.0 * C / mu, 1.0), t_cap)
    outer = OuterSchedule("sdcs_strongly_convex", N, alpha, theta, eta, tau,
                          np.full(N, T, dtype=np.int64))
    return outer, InnerSchedule("strongly_convex", float(mu), float(C))


@dataclass(frozen=True)
class ConditionResult:
    name: str
    passed: bool
    worst_k: int | None
    margin: float

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "worst_k": self.worst_k,
                "margin": self.margin}


@dataclass(frozen=True)
class ValidationReport:
    mode: str
    conditions: tuple[ConditionResult, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    @property
    def failed(self) -> list[str]:
        return [c.name for c in self.conditions if not c.passed]

    def __getitem__(self, name) -> ConditionResult:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.conditions]

    def to_dict(self):
        return {"mode": self.mode, "passed": self.passed,
                "conditions": [c.to_dict() for c in self.conditions]}


def _leq(name, lhs, rhs, ks):
    """Check ``lhs <= rhs`` elementwise; margin ``rhs - lhs`` (negative = violated).

    The slack is absolute at unit scale and relative beyond it, since the
    equality cases carry rounding proportional to the magnitudes involved.
    """
    lhs = np.atleast_1d(np.asarray(lhs, dtype=float))
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    if lhs.size == 0:
        return ConditionResult(name, True, None, math.inf)
    margin = rhs - lhs
    scale = np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    ok = margin >= -SLACK * scale
    i = int(np.argmin(margin / scale))
    return ConditionResult(name, bool(ok.all()), int(ks[i]), float(margin[i]))


def _eq(name, lhs, rhs, ks):
    lhs = np.atleast_1d(np.asarray(lhs, dtype=float))
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    if lhs.size == 0:
        return ConditionResult(name, True, None, 0.0)
    dev = np.abs(lhs - rhs)
    scale = np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    i = int(np.argmax(dev / scale))
    return ConditionResult(name, bool(np.all(dev <= SLACK * scale)), int(ks[i]), float(-dev[i]))


def validate_outer(s: OuterSchedule, L_norm: float, mu: float = 0.0, C: float = 1.0) -> ValidationReport:
    """Check the feasibility conditions that apply to ``s.mode`` at every ``k``."""
    a, th, et, ta, T = s.alpha, s.theta, s.eta, s.tau, s.T.astype(float)
    N = s.N
    L2 = L_norm * L_norm
    ks = np.arange(2, N + 1)  # conditions linking k and k-1
    results = []
    for name in MODE_CONDITIONS[s.mode]:
        if name == "theta_eta":
            r = _leq(name, th[1:] * et[1:], th[:-1] * et[:-1], ks)
        elif name == "alpha_theta":
            r = _eq(name, a[1:] * th[1:], th[:-1], ks)
        elif name == "theta_tau":
            r = _leq(name, th[1:] * ta[1:], th[:-1] * ta[:-1], ks)
        elif name == "eta_tau_L_k":
            r = _leq(name, a[1:] * L2, et[:-1] * ta[1:], ks)
        elif name == "eta_tau":
            r = _eq(name, [th[0] * ta[0]], [th[-1] * ta[-1]], [N])
        elif name == "eta_tau_theta":
            r = _leq(name, [th[-1] * L2], [th[0] * ta[0] * et[-1]], [N])
        elif name == "theta_eta_d":
            w = th * (T + 1) * (T + 2) * et / (T * (T + 3))
            r = _leq(name, w[1:], w[:-1], ks)
        elif name == "theta_eta_ds":
            if not (mu > 0 and math.isfinite(C)):
                r = ConditionResult(name, False, None, -math.inf)
            else:
                r = _leq(name, th[1:] * et[1:], th[:-1] * (mu / C + et[:-1]), ks)
        else:  # pragma: no cover
            raise AssertionError(name)
        results.append(r)
    return ValidationReport(s.mode, tuple(results))


def inner_report(inner: InnerSchedule, eta_k: float, mu: float, C: float, T: int) -> ConditionResult:
    """Condition ``lambda_{t+1}(eta beta_{t+1} - mu/C) <= lambda_t (1 + beta_t) eta``."""
    if T < 1:
        raise ScheduleError("T must be at least 1")
    if not math.isfinite(C) and mu > 0:
        return ConditionResult("beta_w", False, None, -math.inf)
    t = np.arange(1, T + 1, dtype=float)
    lam = inner.lam(t)
    beta = inner.beta(t, eta_k)
    mc = mu / C if mu > 0 else 0.0
    lhs = lam[1:] * (eta_k * beta[1:] - mc)
    rhs = lam[:-1] * (1.0 + beta[:-1]) * eta_k
    return _leq("beta_w", lhs, rhs, np.arange(1, T))


def validate_inner(inner: InnerSchedule, eta_k: float, mu: float, C: float, T: int) -> bool:
    """True iff the inner weight condition holds for ``t = 1..T-1``."""
    return inner_report(inner, eta_k, mu, C, T).passed

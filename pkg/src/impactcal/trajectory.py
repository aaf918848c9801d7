"""Expected impact of deterministic trading trajectories and its extrema.

A trajectory x_t moves X shares over the volume-time horizon [0, T] with a
velocity v_t that never changes sign. With g(v) = gamma*sgn(v)|v|^alpha and
h(v) = eta*sgn(v)|v|^beta the expected impacts are

    E[I] = int_0^T g(v_t) dt
    E[J] = int_0^T (T - t)/T g(v_t) dt + 1/T int_0^T h(v_t) dt
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .model import ImpactParams

QUAD_OPTS = {"epsabs": 0.0, "epsrel": 1e-13, "limit": 500}


class TrajectoryError(ValueError):
    pass


class UncoveredCaseError(TrajectoryError):
    """No closed-form extremum exists for the requested (alpha, beta)."""


class RootFindingError(TrajectoryError):
    pass


def _is_one(x: float) -> bool:
    return math.isclose(x, 1.0, rel_tol=0.0, abs_tol=1e-12)


def _power_moment(a: float, L: float, w: Callable[[float], float], tau: float = 1.0) -> float:
    """int_0^L (s/tau)^a w(s) ds for a smooth weight w.

    Integrable endpoint singularities (-1 < a < 0) use the algebraic
    weight rule; large positive powers are split near the right end where
    their mass concentrates.
    """
    if L <= 0:
        return 0.0
    if a <= -1.0:
        return math.inf
    if a < 0.0:
        val, _ = integrate.quad(w, 0.0, L, weight="alg", wvar=(a, 0.0), **QUAD_OPTS)
        return val * tau ** (-a)
    # integrate over y = s / L in [0, 1]
    pts = sorted({1.0 - c / (a + 1.0) for c in (1.0, 4.0, 16.0, 64.0) if c < a + 1.0})
    val, _ = integrate.quad(lambda y: y**a * w(L * y), 0.0, 1.0, points=pts or None, **QUAD_OPTS)
    return val * L * (L / tau) ** a


@dataclass(frozen=True)
class Trajectory:
    kind: str
    X: float
    T: float

    def position(self, t):
        raise NotImplementedError

    def velocity(self, t):
        raise NotImplementedError

    def power_integral(self, p: float, weighted: bool = False) -> float:
        """int_0^T w(t) sgn(v_t)|v_t|^p dt with w = 1 or (T - t)/T."""
        raise NotImplementedError

    def sample(self, n: int = 101) -> list[tuple[float, float]]:
        t = np.linspace(0.0, self.T, n)
        return [(float(a), float(b)) for a, b in zip(t, np.atleast_1d(self.position(t)))]

    def negated(self) -> "Trajectory":
        raise NotImplementedError


@dataclass(frozen=True)
class PowerTrajectory(Trajectory):
    """v_t = A ((t - t0)/tau)^e for t > t0 (zero before), or A ((T - t)/tau)^e if ``reverse``.

    Covers the uniform schedule, TA, TB and the closed-form Euler-Lagrange
    solutions. ``tau`` keeps steep families (large e) representable.
    """

    A: float = 0.0
    e: float = 0.0
    t0: float = 0.0
    reverse: bool = False
    m: float | None = None
    tau: float = 1.0

    def velocity(self, t):
        t = np.asarray(t, float)
        if self.reverse:
            return self.A * (np.maximum(self.T - t, 0.0) / self.tau) ** self.e
        d = (t - self.t0) / self.tau
        live = d >= 0 if self.e >= 0 else d > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(live, self.A * np.where(live, d, 1.0) ** self.e, 0.0)

    def position(self, t):
        t = np.asarray(t, float)
        k = self.e + 1.0
        c = self.A * self.tau / k
        if self.reverse:
            return c * ((self.T / self.tau) ** k - (np.maximum(self.T - t, 0.0) / self.tau) ** k)
        start = (max(-self.t0, 0.0) / self.tau) ** k
        return c * ((np.maximum(t - self.t0, 0.0) / self.tau) ** k - start)

    def power_integral(self, p, weighted=False):
        sgn = math.copysign(1.0, self.A) if self.A != 0 else 0.0
        Ap = abs(self.A) ** p
        T = self.T
        a = self.e * p
        if self.reverse:
            # s = T - t; the (T - t)/T weight folds into the power
            if weighted:
                return sgn * Ap * self.tau / T * _power_moment(a + 1.0, T, lambda s: 1.0, self.tau)
            return sgn * Ap * _power_moment(a, T, lambda s: 1.0, self.tau)
        if self.t0 >= 0.0:
            L = T - self.t0
            w = (lambda s: (L - s) / T) if weighted else (lambda s: 1.0)
            return sgn * Ap * _power_moment(a, L, w, self.tau)
        # origin shifted left of 0: the integrand is smooth on [0, T]
        tau = self.tau
        f = (lambda t: (T - t) / T * ((t - self.t0) / tau) ** a) if weighted else (lambda t: ((t - self.t0) / tau) ** a)
        val, _ = integrate.quad(f, 0.0, T, **QUAD_OPTS)
        return sgn * Ap * val

    def negated(self):
        return PowerTrajectory(self.kind, -self.X, self.T, -self.A, self.e, self.t0, self.reverse, self.m, self.tau)


@dataclass(frozen=True)
class LogTrajectory(Trajectory):
    """TC: x_t = X log((T+m)/(T-t+m)) / log((T+m)/m)."""

    m: float = 1.0

    @property
    def _c(self):
        return self.X / math.log((self.T + self.m) / self.m)

    def position(self, t):
        t = np.asarray(t, float)
        return self._c * np.log((self.T + self.m) / (self.T - t + self.m))

    def velocity(self, t):
        t = np.asarray(t, float)
        return self._c / (self.T - t + self.m)

    def power_integral(self, p, weighted=False):
        c, T, m = self._c, self.T, self.m
        sgn = math.copysign(1.0, c)
        # substitute s = log(T - t + m): dt = -e^s ds, v = c e^{-s}
        def f(s):
            t = T + m - math.exp(s)
            w = (T - t) / T if weighted else 1.0
            return w * math.exp(s * (1.0 - p))
        val, _ = integrate.quad(f, math.log(m), math.log(T + m), **QUAD_OPTS)
        return sgn * abs(c) ** p * val

    def negated(self):
        return LogTrajectory(self.kind, -self.X, self.T, self.m)


@dataclass(frozen=True)
class SampledTrajectory(Trajectory):
    """Piecewise-linear trajectory through (t, x_t) knots."""

    times: tuple = ()
    positions: tuple = ()

    def __post_init__(self):
        t = np.asarray(self.times, float)
        x = np.asarray(self.positions, float)
        if t.size < 2 or t.size != x.size:
            raise TrajectoryError("need at least two matching knots")
        if t[0] != 0.0 or not math.isclose(t[-1], self.T):
            raise TrajectoryError("knots must span [0, T]")
        if np.any(np.diff(t) <= 0):
            raise TrajectoryError("knot times must increase")
        if x[0] != 0.0 or not math.isclose(x[-1], self.X, rel_tol=1e-12, abs_tol=1e-15):
            raise TrajectoryError("trajectory must start at 0 and end at X")
        dx = np.diff(x) * math.copysign(1.0, self.X)
        if np.any(dx < 0):
            raise TrajectoryError("velocity changes sign")

    def position(self, t):
        return np.interp(t, self.times, self.positions)

    def velocity(self, t):
        t_k = np.asarray(self.times)
        v_k = np.diff(self.positions) / np.diff(t_k)
        i = np.clip(np.searchsorted(t_k, t, side="right") - 1, 0, v_k.size - 1)
        return v_k[i]

    def power_integral(self, p, weighted=False):
        t = np.asarray(self.times, float)
        v = np.diff(np.asarray(self.positions, float)) / np.diff(t)
        a, b = t[:-1], t[1:]
        seg = b - a
        if weighted:
            seg = seg - (b**2 - a**2) / (2 * self.T)
        with np.errstate(divide="ignore"):
            vp = np.where(v != 0, np.sign(v) * np.abs(v) ** p, 0.0)
        return float(np.sum(vp * seg))

    def negated(self):
        return SampledTrajectory(self.kind, -self.X, self.T, self.times, tuple(-np.asarray(self.positions)))


def make_trajectory(kind: str, m: float | None, X: float, T: float) -> Trajectory:
    """Build the uniform schedule or one of the TA / TB / TC families."""
    if not (X > 0 and T > 0):
        raise TrajectoryError("X and T must be positive")
    kind = kind.upper() if kind.lower() != "uniform" else "uniform"
    if kind == "uniform":
        return PowerTrajectory("uniform", X, T, A=X / T, e=0.0)
    if m is None or not m > 0:
        raise TrajectoryError("trajectory parameter m must be positive")
    if kind == "TA":
        return PowerTrajectory("TA", X, T, A=m * X / T, e=m - 1.0, m=m, tau=T)
    if kind == "TB":
        return PowerTrajectory("TB", X, T, A=m * X / T, e=m - 1.0, reverse=True, m=m, tau=T)
    if kind == "TC":
        return LogTrajectory("TC", X, T, m=m)
    raise TrajectoryError(f"unknown trajectory kind {kind!r}")


def sampled_trajectory(times, positions) -> SampledTrajectory:
    times = tuple(float(t) for t in times)
    positions = tuple(float(x) for x in positions)
    return SampledTrajectory("sampled", positions[-1], times[-1], times, positions)


def expected_permanent(traj: Trajectory, gamma: float, alpha: float) -> float:
    return gamma * traj.power_integral(alpha)


def expected_realized(traj: Trajectory, gamma: float, alpha: float, eta: float, beta: float) -> float:
    return gamma * traj.power_integral(alpha, weighted=True) + eta / traj.T * traj.power_integral(beta)


@dataclass
class ExtremumResult:
    lower: float
    upper: float
    lower_attained: bool
    upper_attained: bool
    case: str = ""
    attaining_trajectory: Trajectory | None = None
    constants: tuple[float, float] | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self, n_samples: int = 101) -> dict:
        def ext(x):
            if math.isinf(x):
                return "inf" if x > 0 else "-inf"
            return float(x)

        return {
            "case": self.case,
            "lower": ext(self.lower),
            "upper": ext(self.upper),
            "lower_attained": self.lower_attained,
            "upper_attained": self.upper_attained,
            "constants": None if self.constants is None else {"C1": self.constants[0], "C2": self.constants[1]},
            "attaining_trajectory": None if self.attaining_trajectory is None else {
                "kind": self.attaining_trajectory.kind,
                "samples": self.attaining_trajectory.sample(n_samples),
            },
            "notes": list(self.notes),
        }


def extremum_permanent(gamma: float, alpha: float, X: float, T: float) -> ExtremumResult:
    """Infimum and supremum of E[I] over monotone trajectories from 0 to X."""
    if not (X > 0 and T > 0 and gamma >= 0 and alpha > 0):
        raise TrajectoryError("need X > 0, T > 0, gamma >= 0, alpha > 0")
    uniform = make_trajectory("uniform", None, X, T)
    if gamma == 0 or _is_one(alpha):
        val = gamma * X if _is_one(alpha) else 0.0
        return ExtremumResult(val, val, True, True, "alpha=1" if _is_one(alpha) else "gamma=0", uniform)
    val = gamma * T ** (1 - alpha) * X**alpha
    if alpha < 1:
        return ExtremumResult(0.0, val, False, True, "alpha<1", uniform)
    return ExtremumResult(val, math.inf, True, False, "alpha>1", uniform)


# ---- Euler-Lagrange solutions -------------------------------------------------

def solve_constants(gamma: float, eta: float, beta: float, X: float, T: float) -> tuple[float, float]:
    """(C1, C2) of the alpha = 1 Euler-Lagrange solution.

    Subtracting the two boundary equations leaves one equation in C1,
    which is monotone on (0, inf) and bracketed by geometric search.
    Returns C1 <= 0 when beta > 1 and the velocity constraint binds at the
    start (no interior solution); the trajectory then waits until
    t0 = -C1*eta*beta/gamma and C2 = 0.
    """
    if _is_one(beta):
        raise TrajectoryError("beta = 1 has no alpha=1 Euler-Lagrange solution")
    a = gamma * T / (eta * beta)
    p = beta / (beta - 1.0)
    k = (beta - 1.0) * eta / gamma

    def f(c1):
        return k * ((a + c1) ** p - c1**p) - X

    if beta > 1 and f(0.0) >= 0:
        tau = (eta * beta / gamma) * (X / k) ** (1.0 / p)
        t0 = T - tau
        return -gamma * t0 / (eta * beta), 0.0

    # f decreases on (0, inf) for beta < 1 and increases for beta > 1
    sign = -1.0 if beta < 1 else 1.0
    lo, hi = (1.0, 1.0) if beta < 1 else (0.0, 1.0)
    for _ in range(2000):
        if sign * f(hi) > 0:
            break
        hi *= 2.0
    else:
        raise RootFindingError("could not bracket C1 from above")
    if beta < 1:
        for _ in range(2000):
            if f(lo) > 0:
                break
            lo *= 0.5
        else:
            raise RootFindingError("could not bracket C1 from below")
        lo, hi = min(lo, hi), max(lo, hi)
    try:
        c1 = optimize.brentq(f, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=1000)
    except (RuntimeError, ValueError) as exc:
        raise RootFindingError(f"C1 root search failed: {exc}") from exc
    c2 = -k * c1**p
    return c1, c2


def el_solution(case: str, params, X: float, T: float) -> Trajectory:
    """Closed-form Euler-Lagrange trajectory for the realized-impact problem.

    case "a": alpha = 1, beta != 1, v_t = (gamma t/(eta beta) + C1)^(1/(beta-1)).
    case "b": beta = 1 with alpha < 1 or alpha > 2,
              x_t = X [1 - ((T-t)/T)^((alpha-2)/(alpha-1))].
    """
    alpha, beta, gamma, eta = params.alpha, params.beta, params.gamma, params.eta
    if case == "a":
        if not _is_one(alpha) or _is_one(beta):
            raise TrajectoryError("case a needs alpha = 1 and beta != 1")
        if not (gamma > 0 and eta > 0):
            raise TrajectoryError("case a needs gamma > 0 and eta > 0")
        c1, _ = solve_constants(gamma, eta, beta, X, T)
        e = 1.0 / (beta - 1.0)
        A = (gamma / (eta * beta)) ** e
        t0 = -c1 * eta * beta / gamma
        return PowerTrajectory("el-a", X, T, A=A, e=e, t0=t0)
    if case == "b":
        if not _is_one(beta) or _is_one(alpha):
            raise TrajectoryError("case b needs beta = 1 and alpha != 1")
        if 1 < alpha <= 2:
            raise UncoveredCaseError("no Euler-Lagrange solution for 1 < alpha <= 2")
        k = (alpha - 2.0) / (alpha - 1.0)
        return PowerTrajectory("el-b", X, T, A=k * X / T, e=k - 1.0, reverse=True, tau=T)
    raise TrajectoryError(f"unknown case {case!r}")


def _realized_bound_case_a(gamma, eta, beta, X, T, c1, c2, traj) -> float:
    if c1 <= 0:
        return expected_realized(traj, gamma, 1.0, eta, beta)
    a = gamma * T / (eta * beta)
    if math.isclose(beta, 0.5, abs_tol=1e-12):
        return eta**2 / (4 * gamma * T) * math.log(1 + 2 * gamma * T / (eta * c1)) + gamma * c2
    q = (2 * beta - 1) / (beta - 1)
    pre = eta**2 * beta**2 * (beta - 1) / (gamma * T * (2 * beta - 1))
    return pre * ((a + c1) ** q - c1**q) + gamma * c2


def extremum_realized(gamma: float, alpha: float, eta: float, beta: float, X: float, T: float) -> ExtremumResult:
    """Infimum and supremum of E[J] for alpha = 1 or beta = 1."""
    if not (X > 0 and T > 0 and gamma >= 0 and eta >= 0 and alpha > 0 and beta > 0):
        raise TrajectoryError("need X, T, alpha, beta > 0 and gamma, eta >= 0")
    a1, b1 = _is_one(alpha), _is_one(beta)
    base = eta * X / T
    uniform = make_trajectory("uniform", None, X, T)

    if a1 and b1:
        if gamma == 0:
            return ExtremumResult(base, base, True, True, "alpha=1,beta=1,gamma=0", uniform)
        return ExtremumResult(base, base + gamma * X, False, False, "alpha=1,beta=1")

    if a1:
        if eta == 0:
            return ExtremumResult(0.0, gamma * X, False, False, "alpha=1,eta=0")
        if gamma == 0:
            val = eta * (X / T) ** beta
            if beta < 1:
                return ExtremumResult(0.0, val, False, True, "alpha=1,beta<1,gamma=0", uniform)
            return ExtremumResult(val, math.inf, True, False, "alpha=1,beta>1,gamma=0", uniform)
        c1, c2 = solve_constants(gamma, eta, beta, X, T)
        traj = el_solution("a", ImpactParams(alpha, beta, gamma, eta), X, T)
        val = _realized_bound_case_a(gamma, eta, beta, X, T, c1, c2, traj)
        notes = []
        if c1 <= 0:
            notes.append("velocity constraint binds: trading starts at t0 > 0")
        if beta < 1:
            label = "alpha=1,beta=1/2" if math.isclose(beta, 0.5, abs_tol=1e-12) else "alpha=1,beta<1"
            return ExtremumResult(0.0, val, False, True, label, traj, (c1, c2), notes)
        return ExtremumResult(val, math.inf, True, False, "alpha=1,beta>1", traj, (c1, c2), notes)

    if b1:
        if gamma == 0:
            return ExtremumResult(base, base, True, True, "beta=1,gamma=0", uniform)
        if alpha < 1 or alpha > 2:
            k = (alpha - 2.0) / (alpha - 1.0)
            val = gamma * k ** (alpha - 1.0) * X**alpha * T ** (1.0 - alpha) + base
            traj = el_solution("b", ImpactParams(alpha, beta, gamma, eta), X, T)
            if alpha < 1:
                return ExtremumResult(base, val, False, True, "beta=1,alpha<1", traj)
            return ExtremumResult(val, math.inf, True, False, "beta=1,alpha>2", traj)
        return ExtremumResult(base, math.inf, False, False, "beta=1,1<alpha<=2")

    raise UncoveredCaseError(
        f"no closed-form extremum for alpha={alpha}, beta={beta}; use the numeric evaluators"
    )



"""Power-law impact functions, the joint normal law of (I, J), its
log-likelihood, and maximum-likelihood calibration.

Two likelihoods share one code path:

``full``
    (I, J) bivariate normal with per-window volatility sigma_t and the
    covariance implied by Brownian price noise.
``baseline``
    Constant per-instrument volatility, and I and J - I/2 modelled as
    independent normal margins (no permanent/temporary correlation).
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .features import ExecutionWindow, WindowArrays, as_arrays

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
EXPONENT_BOUNDS = (0.05, 3.0)
SCALE_BOUNDS = (1e-8, 100.0)
PARAM_NAMES = ("alpha", "beta", "gamma", "eta")


class ModelError(ValueError):
    pass


class InsufficientDataError(ModelError):
    pass


@dataclass(frozen=True)
class ImpactParams:
    alpha: float
    beta: float
    gamma: float
    eta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ModelError("impact exponents must be positive")
        if self.gamma < 0 or self.eta < 0:
            raise ModelError("impact scales must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma, self.eta])

    @classmethod
    def from_array(cls, x) -> "ImpactParams":
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class ImpactMoments:
    mu: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class FitTolerances:
    gtol: float = 1e-7
    max_iter: int = 1000
    min_windows: int = 100


@dataclass
class ModelFit:
    params: ImpactParams
    log_likelihood: float
    std_errors: np.ndarray
    n_obs: int
    converged: bool
    model: str = "full"
    grad_norm: float = math.nan
    iterations: int = 0
    se_reliable: bool = True
    message: str = ""
    instrument_sigma: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": asdict(self.params),
            "std_errors": dict(zip(PARAM_NAMES, map(float, self.std_errors))),
            "log_likelihood": float(self.log_likelihood),
            "n_obs": int(self.n_obs),
            "converged": bool(self.converged),
            "diagnostics": {
                "grad_norm": float(self.grad_norm),
                "iterations": int(self.iterations),
                "se_reliable": bool(self.se_reliable),
                "message": self.message,
            },
            "instrument_sigma": {k: float(v) for k, v in sorted(self.instrument_sigma.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelFit":
        diag = d.get("diagnostics", {})
        return cls(
            params=ImpactParams(**d["params"]),
            log_likelihood=float(d["log_likelihood"]),
            std_errors=np.array([d["std_errors"][k] for k in PARAM_NAMES], float),
            n_obs=int(d["n_obs"]),
            converged=bool(d["converged"]),
            model=d.get("model", "full"),
            grad_norm=float(diag.get("grad_norm", math.nan)),
            iterations=int(diag.get("iterations", 0)),
            se_reliable=bool(diag.get("se_reliable", True)),
            message=diag.get("message", ""),
            instrument_sigma=dict(d.get("instrument_sigma", {})),
        )


def signed_power(x, p):
    """sgn(x) * |x|**p without fractional powers of negatives."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.abs(x) ** p


def g_norm(params: ImpactParams, sigma, v, V):
    """Normalized permanent drift gamma * sigma * sgn(v) * |v/V|**alpha."""
    return params.gamma * np.asarray(sigma, float) * signed_power(np.asarray(v, float) / V, params.alpha)


def h_norm(params: ImpactParams, sigma, v, V):
    """Normalized temporary shift eta * sigma * sgn(v) * |v/V|**beta."""
    return params.eta * np.asarray(sigma, float) * signed_power(np.asarray(v, float) / V, params.beta)


def covariance(sigma, T, T_post):
    """Entries (c11, c12, c22) of the covariance of (I, J)."""
    s2 = np.asarray(sigma, float) ** 2
    return s2 * T_post, 0.5 * s2 * T, s2 * T / 3.0


def moments(params: ImpactParams, window: ExecutionWindow) -> ImpactMoments:
    if window.T_post <= 0.75 * window.T:
        raise ModelError("covariance is not positive definite for T_post <= 3T/4")
    g = float(g_norm(params, window.sigma, window.v, window.V))
    h = float(h_norm(params, window.sigma, window.v, window.V))
    c11, c12, c22 = covariance(window.sigma, window.T, window.T_post)
    return ImpactMoments(
        mu=np.array([window.T * g, 0.5 * window.T * g + h]),
        cov=np.array([[c11, c12], [c12, c22]], dtype=float),
    )


def instrument_sigma(w: WindowArrays) -> dict:
    """Root-mean-square sigma per instrument."""
    out = {}
    for inst in sorted(set(w.instrument.tolist())):
        m = w.instrument == inst
        out[inst] = float(np.sqrt(np.mean(w.sigma[m] ** 2)))
    return out


class _Design:
    """Observations and fixed covariance precomputed for one likelihood."""

    def __init__(self, w: WindowArrays, model: str = "full", sigma_map: dict | None = None):
        if model not in ("full", "baseline"):
            raise ModelError(f"unknown model {model!r}")
        self.model = model
        self.n = len(w)
        T, Tp = w.T, w.T_post
        if np.any(Tp <= 0.75 * T):
            raise ModelError("covariance is not positive definite for T_post <= 3T/4")
        ratio = w.v / w.V
        self.s = np.sign(ratio)
        self.u = np.abs(ratio)
        with np.errstate(divide="ignore"):
            self.lnu = np.where(self.u > 0, np.log(np.where(self.u > 0, self.u, 1.0)), 0.0)
        self.T = T
        if model == "full":
            sig = w.sigma
            self.y1, self.y2 = w.I, w.J
            c11, c12, c22 = covariance(sig, T, Tp)
            self.c = 0.5
        else:
            sigma_map = sigma_map if sigma_map is not None else instrument_sigma(w)
            sig = np.array([sigma_map[i] for i in w.instrument], float)
            s2 = sig**2
            self.y1, self.y2 = w.I, w.J - 0.5 * w.I
            c11 = s2 * Tp
            c12 = np.zeros_like(s2)
            c22 = s2 * (T / 3.0 - T / 2.0 + Tp / 4.0)
            self.c = 0.0
        self.sigma = sig
        self.sigma_map = sigma_map
        det = c11 * c22 - c12**2
        if np.any(det <= 0):
            raise ModelError("singular window covariance")
        self.p11, self.p12, self.p22 = c22 / det, -c12 / det, c11 / det
        self.logdet = np.log(det)
        self.const = float(np.sum(self.logdet)) + 2.0 * LOG_2PI * self.n

    def parts(self, alpha, beta):
        ua = np.where(self.u > 0, self.u ** alpha, 0.0)
        ub = np.where(self.u > 0, self.u ** beta, 0.0)
        a1 = self.T * self.sigma * self.s * ua
        b2 = self.sigma * self.s * ub
        return a1, b2

    def residuals(self, theta):
        alpha, beta, gamma, eta = theta
        a1, b2 = self.parts(alpha, beta)
        m1 = gamma * a1
        m2 = self.c * m1 + eta * b2
        return self.y1 - m1, self.y2 - m2, a1, b2

    def loglik(self, theta) -> float:
        r1, r2, _, _ = self.residuals(theta)
        q = self.p11 * r1 * r1 + 2.0 * self.p12 * r1 * r2 + self.p22 * r2 * r2
        return -0.5 * (float(np.sum(q)) + self.const)

    def loglik_terms(self, theta) -> np.ndarray:
        r1, r2, _, _ = self.residuals(theta)
        q = self.p11 * r1 * r1 + 2.0 * self.p12 * r1 * r2 + self.p22 * r2 * r2
        return -0.5 * (q + self.logdet + 2.0 * LOG_2PI)

    def grad(self, theta) -> np.ndarray:
        """Analytic gradient of the log-likelihood in (alpha, beta, gamma, eta)."""
        alpha, beta, gamma, eta = theta
        r1, r2, a1, b2 = self.residuals(theta)
        w1 = self.p11 * r1 + self.p12 * r2
        w2 = self.p12 * r1 + self.p22 * r2
        # mean derivatives: dm1 = (a1-part), dm2 = c*dm1 + (b2-part)
        da = gamma * a1 * self.lnu
        db = eta * b2 * self.lnu
        wg = w1 + self.c * w2
        return np.array([
            float(np.sum(wg * da)),
            float(np.sum(w2 * db)),
            float(np.sum(wg * a1)),
            float(np.sum(w2 * b2)),
        ])

    def profile_scales(self, alpha, beta) -> tuple[float, float]:
        """Generalized least-squares (gamma, eta) at fixed exponents."""
        a1, b2 = self.parts(alpha, beta)
        # columns of the mean in (gamma, eta): m = gamma*(a1, c*a1) + eta*(0, b2)
        x1g, x2g = a1, self.c * a1
        x2e = b2
        A = np.empty((2, 2))
        A[0, 0] = np.sum(self.p11 * x1g * x1g + 2 * self.p12 * x1g * x2g + self.p22 * x2g * x2g)
        A[0, 1] = A[1, 0] = np.sum(self.p12 * x1g * x2e + self.p22 * x2g * x2e)
        A[1, 1] = np.sum(self.p22 * x2e * x2e)
        b = np.array([
            np.sum(x1g * (self.p11 * self.y1 + self.p12 * self.y2) + x2g * (self.p12 * self.y1 + self.p22 * self.y2)),
            np.sum(x2e * (self.p12 * self.y1 + self.p22 * self.y2)),
        ])
        try:
            ge = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            ge = np.array([1.0, 0.1])
        lo, hi = SCALE_BOUNDS
        return float(np.clip(ge[0], lo, hi)), float(np.clip(ge[1], lo, hi))


def _canonical(w: WindowArrays) -> WindowArrays:
    """Sort windows so that sums, and therefore fits, do not depend on input order."""
    order = np.lexsort((w.J, w.I, w.T_post, w.T, w.sigma, w.V, w.v, w.instrument.astype(str)))
    return w.take(order)


def log_likelihood(params: ImpactParams, windows, model: str = "full", sigma_map: dict | None = None) -> float:
    """Joint normal log-likelihood summed over windows."""
    d = _Design(as_arrays(windows), model, sigma_map)
    return d.loglik(params.as_array())


def log_likelihood_grad(params: ImpactParams, windows, model: str = "full", sigma_map: dict | None = None) -> np.ndarray:
    d = _Design(as_arrays(windows), model, sigma_map)
    return d.grad(params.as_array())


def _numerical_hessian(d: _Design, theta: np.ndarray) -> np.ndarray:
    k = theta.size
    H = np.empty((k, k))
    for i in range(k):
        h = 1e-5 * max(abs(theta[i]), 1e-2)
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        H[:, i] = (d.grad(tp) - d.grad(tm)) / (2 * h)
    return 0.5 * (H + H.T)


def _standard_errors(d: _Design, theta: np.ndarray) -> tuple[np.ndarray, bool]:
    info = -_numerical_hessian(d, theta)
    try:
        np.linalg.cholesky(info)
        cov = np.linalg.inv(info)
        return np.sqrt(np.diag(cov)), True
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
        return np.sqrt(np.abs(np.diag(cov))), False


def _initial_guess(d: _Design) -> np.ndarray:
    best, best_ll = None, -np.inf
    grid = (0.3, 0.5, 0.7, 0.9, 1.2, 1.6)
    for a in grid:
        for b in grid:
            g, e = d.profile_scales(a, b)
            ll = d.loglik((a, b, g, e))
            if ll > best_ll:
                best, best_ll = np.array([a, b, g, e]), ll
    return best


def _fit(windows, init: ImpactParams | None, tol: FitTolerances, model: str) -> ModelFit:
    w = _canonical(as_arrays(windows))
    if len(w) < tol.min_windows:
        raise InsufficientDataError(f"need at least {tol.min_windows} windows, got {len(w)}")
    d = _Design(w, model)
    n = d.n
    lo_e, hi_e = EXPONENT_BOUNDS
    lo_s, hi_s = SCALE_BOUNDS
    bounds = [(lo_e, hi_e), (lo_e, hi_e), (math.log(lo_s), math.log(hi_s)), (math.log(lo_s), math.log(hi_s))]

    theta0 = _initial_guess(d) if init is None else init.as_array().astype(float)
    theta0[2:] = np.clip(theta0[2:], lo_s, hi_s)
    theta0[:2] = np.clip(theta0[:2], lo_e, hi_e)

    def to_theta(z):
        return np.array([z[0], z[1], math.exp(z[2]), math.exp(z[3])])

    def fun(z):
        th = to_theta(z)
        g = d.grad(th)
        g[2:] *= th[2:]
        return -d.loglik(th) / n, -g / n

    def projected_grad(z):
        _, g = fun(z)
        pg = g.copy()
        for i, (lo, hi) in enumerate(bounds):
            if z[i] <= lo + 1e-12 and g[i] > 0:
                pg[i] = 0.0
            if z[i] >= hi - 1e-12 and g[i] < 0:
                pg[i] = 0.0
        return float(np.max(np.abs(pg)))

    z = np.array([theta0[0], theta0[1], math.log(theta0[2]), math.log(theta0[3])])
    iters, msg = 0, ""
    for _ in range(4):
        res = optimize.minimize(
            fun, z, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": tol.max_iter, "ftol": 1e-16, "gtol": tol.gtol, "maxcor": 20},
        )
        z, iters, msg = res.x, iters + res.nit, str(res.message)
        if projected_grad(z) <= tol.gtol or iters >= tol.max_iter:
            break
    gnorm = projected_grad(z)
    converged = gnorm <= tol.gtol
    if not converged:
        log.warning("%s fit did not converge: gradient norm %.3g (%s)", model, gnorm, msg)
    theta = to_theta(z)
    se, ok = _standard_errors(d, theta)
    if not ok:
        log.warning("%s fit: observed information not positive definite; standard errors unreliable", model)
    return ModelFit(
        params=ImpactParams.from_array(theta),
        log_likelihood=d.loglik(theta),
        std_errors=se,
        n_obs=n,
        converged=converged,
        model=model,
        grad_norm=gnorm,
        iterations=iters,
        se_reliable=ok,
        message=msg,
        instrument_sigma=d.sigma_map or {},
    )


def fit_mle(windows, init: ImpactParams | None = None, tolerances: FitTolerances | None = None) -> ModelFit:
    """Maximum-likelihood fit of the full model.

    Without ``init`` the start point is the best (alpha, beta) on a coarse
    grid with (gamma, eta) profiled by generalized least squares.
    """
    return _fit(windows, init, tolerances or FitTolerances(), "full")


def fit_baseline(windows, init: ImpactParams | None = None, tolerances: FitTolerances | None = None) -> ModelFit:
    """Maximum-likelihood fit of the constant-volatility, uncorrelated baseline."""
    return _fit(windows, init, tolerances or FitTolerances(), "baseline")


def fit_model(windows, model: str = "full", init=None, tolerances=None) -> ModelFit:
    return _fit(windows, init, tolerances or FitTolerances(), model)

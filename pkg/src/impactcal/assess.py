"""Model scoring (CRPS on three margins, BIC) and the random-effect test on
the permanent-impact exponent."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import optimize, stats
from scipy.special import logsumexp

from .features import as_arrays
from .model import (
    EXPONENT_BOUNDS,
    SCALE_BOUNDS,
    FitTolerances,
    ImpactParams,
    ModelError,
    ModelFit,
    _canonical,
    _Design,
    covariance,
    fit_model,
    g_norm,
    h_norm,
    log_likelihood,
)

log = logging.getLogger(__name__)

N_PARAMS = 4
GH_NODES = 21
SQRT_PI = math.sqrt(math.pi)


class AssessError(ValueError):
    pass


def crps_normal(mu, sd, y):
    """CRPS of N(mu, sd^2) at y, negatively oriented (higher is better)."""
    mu, sd, y = np.broadcast_arrays(np.asarray(mu, float), np.asarray(sd, float), np.asarray(y, float))
    if np.any(~(sd > 0)):
        raise AssessError("CRPS needs a positive standard deviation")
    z = (y - mu) / sd
    val = -sd * (z * (2.0 * stats.norm.cdf(z) - 1.0) + 2.0 * stats.norm.pdf(z) - 1.0 / SQRT_PI)
    return val if val.ndim else float(val)


@dataclass(frozen=True)
class ScoreReport:
    crps_I: float
    crps_J: float
    crps_JminusIhalf: float
    bic: float
    n_obs: int
    model_label: str
    log_likelihood: float = math.nan

    def to_dict(self) -> dict:
        return asdict(self)


def bic(log_lik: float, n_obs: int, k: int = N_PARAMS) -> float:
    return k * math.log(n_obs) - 2.0 * log_lik


def margin_moments(fit: ModelFit, windows):
    """Per-window (mean, variance) of I, J and J - I/2 under the fitted model."""
    w = as_arrays(windows)
    p = fit.params
    T, Tp = w.T, w.T_post
    if fit.model == "full":
        sig = w.sigma
        g = g_norm(p, sig, w.v, w.V)
        h = h_norm(p, sig, w.v, w.V)
        m1, m2 = T * g, 0.5 * T * g + h
        c11, c12, c22 = covariance(sig, T, Tp)
        mD, vD = m2 - 0.5 * m1, c22 - c12 + 0.25 * c11
    elif fit.model == "baseline":
        smap = fit.instrument_sigma
        missing = sorted(set(w.instrument.tolist()) - set(smap))
        if missing:
            raise AssessError(f"baseline fit has no volatility for instruments {missing[:5]}")
        sig = np.array([smap[i] for i in w.instrument], float)
        g = g_norm(p, sig, w.v, w.V)
        m1 = T * g
        mD = h_norm(p, sig, w.v, w.V)
        c11 = sig**2 * Tp
        vD = sig**2 * (T / 3.0 - T / 2.0 + Tp / 4.0)
        # independent margins: J = (J - I/2) + I/2
        m2, c22 = mD + 0.5 * m1, vD + 0.25 * c11
    else:
        raise AssessError(f"unknown model {fit.model!r}")
    if np.any(vD <= 0):
        raise AssessError("non-positive variance for J - I/2")
    return (m1, c11), (m2, c22), (mD, vD)


def score_model(fit: ModelFit, windows, label: str | None = None, require_converged: bool = True) -> ScoreReport:
    """Mean CRPS per margin and BIC (k = 4) of a fitted model on ``windows``."""
    if require_converged and not fit.converged:
        raise AssessError(f"{fit.model} fit did not converge")
    w = as_arrays(windows)
    if len(w) == 0:
        raise AssessError("no observations")
    (m1, v1), (m2, v2), (mD, vD) = margin_moments(fit, w)
    sigma_map = fit.instrument_sigma if fit.model == "baseline" else None
    ll = log_likelihood(fit.params, w, fit.model, sigma_map)
    return ScoreReport(
        crps_I=float(np.mean(crps_normal(m1, np.sqrt(v1), w.I))),
        crps_J=float(np.mean(crps_normal(m2, np.sqrt(v2), w.J))),
        crps_JminusIhalf=float(np.mean(crps_normal(mD, np.sqrt(vD), w.J - 0.5 * w.I))),
        bic=bic(ll, len(w)),
        n_obs=len(w),
        model_label=label or fit.model,
        log_likelihood=ll,
    )


# ---- random effect on alpha ------------------------------------------------------

@dataclass(frozen=True)
class RandomEffectResult:
    sigma_alpha_hat: float
    p_value: float
    mu_alpha_hat: float
    n_groups: int
    lr_statistic: float = 0.0
    log_likelihood_null: float = math.nan
    log_likelihood_alt: float = math.nan
    beta: float = math.nan
    gamma: float = math.nan
    eta: float = math.nan
    model: str = "full"
    converged: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def boundary_p_value(lr: float) -> float:
    """P-value under the 50:50 mixture of chi2(0) and chi2(1)."""
    if lr <= 0:
        return 1.0
    return float(0.5 * stats.chi2.sf(lr, 1))


class _GroupedDesign:
    """Marginal likelihood over groups with alpha integrated out.

    Each group's integral uses Gauss-Hermite nodes centred at the mode of
    the integrand with the matching curvature scale.
    """

    def __init__(self, d: _Design, group_ids: np.ndarray, n_groups: int):
        self.d = d
        self.gid = group_ids
        self.G = n_groups
        self.starts = np.flatnonzero(np.r_[True, group_ids[1:] != group_ids[:-1]])
        self.x, w = hermgauss(GH_NODES)
        self.logw = np.log(w) + self.x**2
        self.mode = None
        self.kappa = d.p11 + 2 * d.c * d.p12 + d.c**2 * d.p22

    def _gsum(self, a):
        return np.add.reduceat(a, self.starts, axis=0)

    def _terms(self, alpha, beta, gamma, eta, derivs=False, scores=False):
        """Per-window log-likelihood at per-window alpha, shape (n, k).

        ``derivs`` adds the first two alpha-derivatives; ``scores`` adds the
        derivatives in (beta, log gamma, log eta).
        """
        d = self.d
        pos = (d.u > 0)[:, None]
        ua = np.where(pos, np.where(pos, d.u[:, None], 1.0) ** alpha, 0.0)
        m1 = gamma * (d.T * d.sigma * d.s)[:, None] * ua
        b2 = eta * np.where(d.u > 0, d.u ** beta, 0.0) * d.sigma * d.s
        r1 = d.y1[:, None] - m1
        r2 = (d.y2 - b2)[:, None] - d.c * m1
        p11, p12, p22 = d.p11[:, None], d.p12[:, None], d.p22[:, None]
        w1 = p11 * r1 + p12 * r2
        w2 = p12 * r1 + p22 * r2
        ll = -0.5 * (r1 * w1 + r2 * w2 + (d.logdet + 2 * math.log(2 * math.pi))[:, None])
        if not (derivs or scores):
            return ll
        wg = w1 + d.c * w2
        lnu = d.lnu[:, None]
        out = [ll]
        if derivs:
            dm = m1 * lnu
            out += [wg * dm, -self.kappa[:, None] * dm * dm + wg * dm * lnu]
        if scores:
            wb = w2 * b2[:, None]
            out += [wb * lnu, wg * m1, wb]
        return tuple(out)

    def _modes(self, mu, sd, beta, gamma, eta):
        """Mode and curvature scale of each group's integrand in z = (alpha - mu)/sd."""
        z = np.zeros(self.G) if self.mode is None else np.clip(self.mode, -8.0, 8.0)
        for _ in range(50):
            per = (mu + sd * z)[self.gid][:, None]
            _, d1, d2 = self._terms(per, beta, gamma, eta, derivs=True)
            g1 = sd * self._gsum(d1[:, 0]) - z
            g2 = sd * sd * self._gsum(d2[:, 0]) - 1.0
            step = np.where(g2 < 0, -g1 / np.where(g2 < 0, g2, -1.0), 0.5 * np.sign(g1))
            step = np.clip(step, -2.0, 2.0)
            z = z + step
            if np.max(np.abs(step)) < 1e-10:
                break
        per = (mu + sd * z)[self.gid][:, None]
        _, _, d2 = self._terms(per, beta, gamma, eta, derivs=True)
        curv = sd * sd * self._gsum(d2[:, 0]) - 1.0
        if np.any(curv >= 0):
            raise ModelError("random-effect quadrature: integrand has no interior mode")
        self.mode = z
        return z, 1.0 / np.sqrt(-curv)

    def loglik(self, mu, sd, beta, gamma, eta, grad=False):
        """Marginal log-likelihood; with ``grad`` also its gradient in
        (mu, sd, beta, log gamma, log eta).

        The integral runs over z with alpha = mu + sd * z and z standard
        normal, which keeps the quadrature well conditioned as sd -> 0.
        Gradients are posterior expectations of the complete-data scores
        over the same nodes.
        """
        zhat, scale = self._modes(mu, sd, beta, gamma, eta)
        z = zhat[:, None] + math.sqrt(2.0) * scale[:, None] * self.x[None, :]  # (G, k)
        res = self._terms((mu + sd * z)[self.gid], beta, gamma, eta, derivs=grad, scores=grad)
        ll = self._gsum(res[0] if grad else res)
        joint = ll - 0.5 * z * z - 0.5 * math.log(2 * math.pi) + self.logw[None, :]
        norm = logsumexp(joint, axis=1)
        total = float(np.sum(norm + np.log(math.sqrt(2.0) * scale)))
        if not grad:
            return total
        post = np.exp(joint - norm[:, None])
        dalpha = self._gsum(res[1])
        g = [np.sum(post * dalpha), np.sum(post * z * dalpha)]
        for sc in res[3:]:
            g.append(np.sum(post * self._gsum(sc)))
        return total, np.array(g)


def random_effect_test(
    windows,
    model: str = "full",
    min_groups: int = 10,
    min_windows: int = 1000,
    null_fit: ModelFit | None = None,
    tolerances: FitTolerances | None = None,
) -> RandomEffectResult:
    """Boundary likelihood-ratio test of a random instrument effect on alpha.

    Under the alternative alpha_g ~ N(mu_alpha, sigma_alpha^2) per
    instrument, with beta, gamma and eta shared. The null is the pooled fit.
    """
    w = _canonical(as_arrays(windows))
    if len(w) == 0:
        raise AssessError("no observations")
    insts, gid, counts = np.unique(w.instrument.astype(str), return_inverse=True, return_counts=True)
    if insts.size < min_groups:
        raise AssessError(f"need at least {min_groups} groups, got {insts.size}")
    if counts.min() < min_windows:
        raise AssessError(f"every group needs {min_windows} windows; smallest has {counts.min()}")
    d = _Design(w, model)
    for g in range(insts.size):
        if not np.any(d.u[gid == g] > 0):
            raise AssessError(f"group {insts[g]} has no traded volume; alpha is not identified")
    null = null_fit or fit_model(w, model, tolerances=tolerances)
    ll0 = log_likelihood(null.params, w, model)
    gd = _GroupedDesign(d, gid, insts.size)
    n = len(w)

    lo_e, hi_e = EXPONENT_BOUNDS
    ls = (math.log(SCALE_BOUNDS[0]), math.log(SCALE_BOUNDS[1]))
    bounds = [(lo_e, hi_e), (0.0, 1.0), (lo_e, hi_e), ls, ls]

    def fun(z):
        try:
            val, g = gd.loglik(z[0], z[1], z[2], math.exp(z[3]), math.exp(z[4]), grad=True)
        except ModelError:
            return 1e10, np.zeros(5)
        return -(val - ll0) / n, -g / n

    p0 = null.params
    best = None
    for sd0 in (0.02, 0.1):
        z0 = np.array([p0.alpha, sd0, p0.beta, math.log(p0.gamma), math.log(p0.eta)])
        gd.mode = None
        res = optimize.minimize(fun, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-10})
        if best is None or res.fun < best.fun:
            best = res
    z = best.x
    gd.mode = None
    ll1 = gd.loglik(z[0], z[1], z[2], math.exp(z[3]), math.exp(z[4]))
    lr = 2.0 * (ll1 - ll0)
    sd_hat = float(z[1])
    if lr <= 0 or sd_hat <= 0:
        lr, ll1 = 0.0, max(ll1, ll0)
        if sd_hat <= 0:
            sd_hat = 0.0
    return RandomEffectResult(
        sigma_alpha_hat=sd_hat,
        p_value=boundary_p_value(lr) if sd_hat > 0 else 1.0,
        mu_alpha_hat=float(z[0]),
        n_groups=int(insts.size),
        lr_statistic=float(lr),
        log_likelihood_null=float(ll0),
        log_likelihood_alt=float(ll1),
        beta=float(z[2]),
        gamma=math.exp(z[3]),
        eta=math.exp(z[4]),
        model=model,
        converged=bool(best.success),
    )

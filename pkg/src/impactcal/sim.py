"""Synthetic data: price paths along a trajectory, window-level impact pairs,
and whole tick days for end-to-end pipeline runs.

Random streams are keyed by (seed, instrument index) and advanced per window
(or per path chunk), so any window's draws depend only on its index.
"""
from __future__ import annotations

import datetime as dt_
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .clock import DEFAULT_SESSION, MS_PER_MINUTE, hhmm_to_ms, session_bounds
from .features import ExecutionWindow, WindowArrays, window_volatility
from .model import ImpactParams, covariance, g_norm, h_norm, signed_power
from .taq import TickRecord, write_ticks
from .trajectory import Trajectory

PATH_CHUNK = 4096


class SimulationError(ValueError):
    """The planted configuration cannot be rendered as valid ticks."""


@dataclass(frozen=True)
class VelocityLaw:
    """|v/V| ~ Uniform(low, high) with a fair random sign."""

    low: float = 0.01
    high: float = 0.5
    signed: bool = True

    def __post_init__(self):
        if not (0 <= self.low <= self.high <= 1):
            raise ValueError("velocity law needs 0 <= low <= high <= 1")


@dataclass(frozen=True)
class SimConfig:
    params: ImpactParams
    sigma_schedule: tuple = (0.02,)
    velocity_law: VelocityLaw = VelocityLaw()
    n_windows: int = 1000
    dt: float | None = None
    seed: int = 0
    volume: float = 1e6
    T: float = 1.0
    T_post: float = 2.0
    instrument: str = "SIM"

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if any(not s > 0 for s in self.sigma_schedule) or not self.sigma_schedule:
            raise ValueError("sigma schedule must be non-empty and positive")
        if self.n_windows < 0:
            raise ValueError("n_windows must be non-negative")
        if not self.T_post > 0.75 * self.T:
            raise ValueError("T_post must exceed 3T/4 for a valid covariance")


def _key(seed: int, stream: int) -> np.ndarray:
    return np.array([seed % 2**64, stream % 2**64], dtype=np.uint64)


def window_uniforms(seed: int, stream: int, start: int, n: int) -> np.ndarray:
    """(n, 4) uniforms in (0, 1); row i belongs to window ``start + i``.

    Philox emits four 64-bit words per counter step, and each window uses
    exactly one step, so a window's row does not depend on ``start``.
    """
    bg = np.random.Philox(key=_key(seed, stream), counter=np.array([start, 0, 0, 0], dtype=np.uint64))
    u = np.random.Generator(bg).random((n, 4))
    return u + 2.0**-54


def _substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def _sigma_at(schedule, idx):
    sched = np.asarray(schedule, float)
    return sched[np.asarray(idx) % sched.size]


def _draw_pairs(params, sigma, ratio, volume, T, T_post, z1, z2):
    v = ratio * volume / T
    g = g_norm(params, sigma, v, volume)
    h = h_norm(params, sigma, v, volume)
    mu1 = T * g
    mu2 = 0.5 * T * g + h
    c11, c12, c22 = covariance(sigma, T, T_post)
    l11 = np.sqrt(c11)
    l21 = c12 / l11
    l22 = np.sqrt(c22 - l21**2)
    return v, mu1 + l11 * z1, mu2 + l21 * z1 + l22 * z2


def simulate_window_arrays(config: SimConfig, stream: int = 0, start: int = 0) -> WindowArrays:
    """Draw (I, J) per window straight from the bivariate normal law."""
    n = config.n_windows
    u = window_uniforms(config.seed, stream, start, n)
    law = config.velocity_law
    mag = law.low + (law.high - law.low) * u[:, 0]
    sign = np.where(u[:, 1] < 0.5, -1.0, 1.0) if law.signed else np.ones(n)
    sigma = _sigma_at(config.sigma_schedule, np.arange(start, start + n))
    T = np.full(n, config.T)
    Tp = np.full(n, config.T_post)
    v, I, J = _draw_pairs(config.params, sigma, sign * mag, config.volume, T, Tp, ndtri(u[:, 2]), ndtri(u[:, 3]))
    return WindowArrays(
        v=v, V=np.full(n, float(config.volume)), sigma=sigma, I=I, J=J, T=T, T_post=Tp,
        instrument=np.full(n, config.instrument, dtype=object),
    )


def simulate_windows(config: SimConfig, stream: int = 0) -> list[ExecutionWindow]:
    w = simulate_window_arrays(config, stream)
    return [
        ExecutionWindow(
            instrument=config.instrument, window_index=i, v=float(w.v[i]), V=float(w.V[i]),
            sigma=float(w.sigma[i]), I=float(w.I[i]), J=float(w.J[i]), T=config.T, T_post=config.T_post,
        )
        for i in range(len(w))
    ]


# ---- price paths -------------------------------------------------------------

@dataclass
class PathResult:
    times: np.ndarray
    real_price: np.ndarray
    transaction_price: np.ndarray
    s_post: float
    I: float
    J: float


def _step_velocities(traj: Trajectory, n_steps: int) -> tuple[np.ndarray, float]:
    t = np.linspace(0.0, traj.T, n_steps + 1)
    x = np.asarray(traj.position(t), float)
    step = traj.T / n_steps
    return np.diff(x) / step, step


def _impact_rates(traj, params, sigma, n_steps, volume):
    v, step = _step_velocities(traj, n_steps)
    if volume is None:
        g = params.gamma * signed_power(v, params.alpha)
        h = params.eta * signed_power(v, params.beta)
    else:
        g = g_norm(params, sigma, v, volume)
        h = h_norm(params, sigma, v, volume)
    return g, h, step, _vwap_weights(v)


def _vwap_weights(v):
    # traded quantity per step; a flat schedule falls back to time weights
    q = np.abs(v)
    total = q.sum()
    return q / total if total > 0 else np.full(v.size, 1.0 / v.size)


def _n_steps(T, dt):
    dt = T / 1000.0 if dt is None else dt
    return max(int(round(T / dt)), 1)


def simulate_paths(
    traj: Trajectory,
    params: ImpactParams,
    sigma: float,
    n_paths: int,
    dt: float | None = None,
    seed: int = 0,
    volume: float | None = None,
    t_post: float | None = None,
    s0: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo (I, J) along ``traj`` by the Euler scheme.

    Velocity per step is the trajectory's average over the step, and J
    averages the transaction price weighted by the quantity traded in each
    step. With
    ``volume`` set the impact functions take the sigma-normalized form of
    the window model; otherwise the raw power laws in v. After T the drift
    is zero, so the move to T_post is one exact Gaussian increment.
    """
    T = traj.T
    t_post = 2.0 * T if t_post is None else t_post
    if t_post < T:
        raise ValueError("t_post must not precede T")
    n = _n_steps(T, dt)
    g, h, step, wts = _impact_rates(traj, params, sigma, n, volume)
    drift = np.concatenate([[0.0], np.cumsum(g * step)])
    h_avg = float(wts @ h)
    I_out = np.empty(n_paths)
    J_out = np.empty(n_paths)
    for c, lo in enumerate(range(0, n_paths, PATH_CHUNK)):
        m = min(PATH_CHUNK, n_paths - lo)
        rng = _substream(seed, c)
        z = rng.standard_normal((m, n))
        z_post = rng.standard_normal(m)
        B = np.zeros((m, n + 1))
        np.cumsum(z, axis=1, out=B[:, 1:])
        B *= sigma * math.sqrt(step)
        rel = B + drift  # (S_t - S_0)/S_0 on the grid
        # quantity-weighted average, real price at each step's midpoint
        avg = 0.5 * (rel[:, :-1] + rel[:, 1:]) @ wts
        J_out[lo:lo + m] = avg + h_avg
        I_out[lo:lo + m] = rel[:, -1] + sigma * math.sqrt(t_post - T) * z_post
    return I_out, J_out


def simulate_path(
    traj: Trajectory,
    params: ImpactParams,
    sigma: float,
    dt: float | None = None,
    seed: int = 0,
    volume: float | None = None,
    t_post: float | None = None,
    s0: float = 1.0,
) -> PathResult:
    """One Euler path of the real and transaction prices."""
    T = traj.T
    t_post = 2.0 * T if t_post is None else t_post
    n = _n_steps(T, dt)
    g, h, step, wts = _impact_rates(traj, params, sigma, n, volume)
    rng = _substream(seed, 0)
    z = rng.standard_normal(n)
    z_post = rng.standard_normal()
    S = np.empty(n + 1)
    S[0] = s0
    for k in range(n):
        S[k + 1] = S[k] + s0 * g[k] * step + s0 * sigma * math.sqrt(step) * z[k]
    s_post = S[-1] + s0 * sigma * math.sqrt(t_post - T) * z_post
    t = np.linspace(0.0, T, n + 1)
    # transaction price over step k carries that step's temporary shift
    S_tilde = S[:-1] + s0 * h
    s_bar = float(0.5 * (S[:-1] + S[1:]) @ wts) + s0 * float(wts @ h)
    return PathResult(t, S, S_tilde, float(s_post), (s_post - s0) / s0, (s_bar - s0) / s0)


# ---- tick days -----------------------------------------------------------------

@dataclass(frozen=True)
class Microstructure:
    ticks_per_window: int = 50
    trade_size: float = 100.0
    min_half_spread: float = 0.01
    quote_depth: float = 1000.0
    s0: float = 10.0
    unit_minutes: float = 15.0
    session: tuple = DEFAULT_SESSION
    start_date: str = "20240102"

    def __post_init__(self):
        if self.ticks_per_window < 3:
            raise ValueError("need at least 3 ticks per window")


@dataclass
class SimulatedTicks:
    days: dict = field(default_factory=dict)  # (instrument, YYYYMMDD) -> list[TickRecord]
    planted: list = field(default_factory=list)

    def write(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for (inst, date), recs in sorted(self.days.items()):
            p = out_dir / f"{inst}_{date}.csv"
            write_ticks(recs, p)
            paths.append(p)
        return paths


def _exact_bridge(rng, p_start, p_end, n_inc, sd, lift=0.0):
    """Log-price path with the given end points and exact increment sample sd.

    ``lift`` is the wanted mean log-level above the straight line between the
    end points; it is carried by a sine hump, as far as ``sd`` allows, and the
    noise is kept orthogonal to the hump so the sample sd stays exact.
    """
    d = math.log(p_end / p_start)
    i = np.arange(n_inc + 1)
    hump = np.sin(np.pi * i / n_inc)
    dh = np.diff(hump)
    var_dh = float(np.var(dh, ddof=1))
    a = lift / float(np.mean(hump[1:]))
    a_max = math.sqrt(0.9 * sd**2 / var_dh)
    a = min(max(a, -a_max), a_max)
    z = rng.standard_normal(n_inc)
    e = z - z.mean()
    e -= (e @ dh) / (dh @ dh) * dh
    e /= np.std(e, ddof=1)
    b = math.sqrt(sd**2 - a * a * var_dh)
    r = d / n_inc + a * dh + b * e
    return p_start * np.exp(np.cumsum(r))


def _fmt(x: float) -> float:
    return float(format(x, ".12g"))


def simulate_ticks(config: SimConfig, micro: Microstructure | None = None, stream: int = 0) -> SimulatedTicks:
    """Synthetic tick days whose window pipeline reproduces planted (I, J).

    Per window the signed flow is planted as buy/sell counts of equal-size
    trades, smart prices follow a bridge between window-boundary prices
    with the planted volatility, and trade prices are shifted so the window
    VWAP hits the planted realized impact. Whole days are generated, so the
    planted list holds every usable window of each day (at least
    ``config.n_windows``). Quotes are sized so every
    quote's smart price equals the planted real price and every trade sits
    on the side of the mid that Lee-Ready maps to its planted side.

    Because the post-trade price of window k is the opening price of window
    k + 2, the even and odd boundary prices form two separate walks. After
    the first window the sign of the planted flow is chosen so the drift
    pulls the walks together; it depends only on earlier draws, so (I, J)
    given v keeps the model law. Quotes widen tick by tick to absorb the
    remaining gap.
    """
    micro = micro or Microstructure()
    n_tk = micro.ticks_per_window
    q = micro.trade_size
    session_min = sum(hhmm_to_ms(b) - hhmm_to_ms(a) for a, b in micro.session) / MS_PER_MINUTE
    W = int(round(session_min / micro.unit_minutes))
    if W < 3 or not math.isclose(W * micro.unit_minutes, session_min):
        raise ValueError("session must split into at least 3 whole windows")
    usable = W - 1  # the last window has no post-trade price
    n_days = math.ceil(config.n_windows / usable) if config.n_windows else 0
    V = n_tk * q
    T, Tp = 1.0, 2.0
    law = config.velocity_law
    dates = np.busday_offset(
        np.datetime64(dt_.datetime.strptime(micro.start_date, "%Y%m%d").date()),
        np.arange(n_days), roll="forward",
    )

    out = SimulatedTicks()
    for day in range(n_days):
        date = str(dates[day]).replace("-", "")
        u = window_uniforms(config.seed, stream, day * W, W)
        mag = law.low + (law.high - law.low) * u[:, 0]
        sign = np.where(u[:, 1] < 0.5, -1.0, 1.0) if law.signed else np.ones(W)
        k_net = np.clip(np.rint(mag * n_tk), 1, n_tk).astype(int)
        sigma = _sigma_at(config.sigma_schedule, np.arange(day * W, day * W + W))
        z1, z2 = ndtri(u[:, 2]), ndtri(u[:, 3])
        v, I, J = np.empty(W), np.empty(W), np.empty(W)
        P = np.empty(W + 1)
        P[0] = micro.s0
        for k in range(W):
            # steer the flow so the drift pulls P[k+2] toward the other chain;
            # the sign depends only on earlier draws
            if law.signed and k >= 1 and P[k + 1] != P[k]:
                sign[k] = 1.0 if P[k + 1] > P[k] else -1.0
            v[k], I[k], J[k] = _draw_pairs(config.params, sigma[k], sign[k] * k_net[k] / n_tk, V, T, Tp,
                                           z1[k], z2[k])
            if k == 0:
                P[1] = P[0] * (1.0 + 0.5 * I[0])
            if k + 2 <= W:
                P[k + 2] = P[k] * (1.0 + I[k])
        rng = _substream(config.seed, stream, day)
        h_shift = h_norm(config.params, sigma, v, V)

        if np.any(P <= 0):
            raise SimulationError("planted price path went non-positive; lower sigma or impact")

        smart = np.empty(W * n_tk)
        price = np.empty(W * n_tk)
        side = np.empty(W * n_tk, dtype=int)
        for k in range(W):
            sl = slice(k * n_tk, (k + 1) * n_tk)
            n_inc = n_tk - 1 if k == 0 else n_tk
            sd = sigma[k] * math.sqrt(T / n_inc)
            line = 0.5 * math.log(P[k] * P[k + 1])
            lift = math.log(P[k] * (1.0 + J[k]) - P[k] * h_shift[k]) - line
            path = _exact_bridge(rng, P[k], P[k + 1], n_inc, sd, lift)
            smart[sl] = np.concatenate([[P[0]], path]) if k == 0 else path
            n_sell = (n_tk - k_net[k]) // 2
            n_unk = (n_tk - k_net[k]) % 2
            n_buy = n_tk - n_sell - n_unk
            if sign[k] < 0:
                n_buy, n_sell = n_sell, n_buy
            sides = np.array([1] * n_buy + [-1] * n_sell + [0] * n_unk)
            rng.shuffle(sides)
            if sides[0] == 0:
                sides[[0, 1]] = sides[[1, 0]]
            side[sl] = sides
            # unknown trades print at the previous trade's price
            base = smart[sl].copy()
            for i in range(1, n_tk):
                if sides[i] == 0:
                    base[i] = base[i - 1]
            c = P[k] * (1.0 + J[k]) - base.mean()
            price[sl] = base + c

        ts = _arrival_times(rng, date, micro, W * n_tk)
        recs = []
        for i in range(W * n_tk):
            k = i // n_tk
            p, S, sd_ = price[i], smart[i], side[i]
            # the mid sits just inside the trade and the quote just wide enough to hold S
            eps = 0.5 * micro.min_half_spread
            mid = p - eps * sd_
            s_half = max(micro.min_half_spread, abs(S - mid) + eps)
            bid, ask = _fmt(mid - s_half), _fmt(mid + s_half)
            if not bid > 0:
                raise SimulationError(f"{config.instrument} {date}: planted quotes would need a non-positive bid; "
                                      "lower sigma or impact")
            # size imbalance that puts the smart price on S
            r = (S - 0.5 * (bid + ask)) / (0.5 * (ask - bid))
            qb = _fmt(micro.quote_depth * (1.0 + r) / 2.0)
            qa = _fmt(micro.quote_depth * (1.0 - r) / 2.0)
            recs.append(TickRecord(int(ts[i]), _fmt(p), q, ask, bid, qa, qb))
        out.days[(config.instrument, date)] = recs

        for k in range(usable):
            out.planted.append(ExecutionWindow(
                instrument=config.instrument, window_index=k, v=float(v[k]), V=V, sigma=float(sigma[k]),
                I=float(I[k]), J=float(J[k]), T=T, T_post=Tp, s0=float(P[k]),
                s_bar=float(P[k] * (1 + J[k])), s_post=float(P[k + 2]), date=date,
            ))
    return out


def _arrival_times(rng, date, micro: Microstructure, n: int) -> np.ndarray:
    """Strictly increasing ms timestamps, denser near the open and close."""
    open_, close, breaks = session_bounds(date, micro.session)
    segs = []
    start = open_
    for b0, b1 in breaks:
        segs.append((start, b0))
        start = b1
    segs.append((start, close))
    eff = sum(b - a for a, b in segs)
    x = (np.arange(n) + 0.5) / n
    gaps = rng.exponential(1.0, n) * (0.4 + 2.4 * (x - 0.5) ** 2)
    pos = np.cumsum(gaps)
    pos = pos / pos[-1] * (eff - 1)
    ts = np.empty(n, dtype=np.int64)
    for i, off in enumerate(pos):
        for a, b in segs:
            if off <= b - a:
                ts[i] = a + int(off)
                break
            off -= b - a
        else:
            ts[i] = close
    for i in range(1, n):
        if ts[i] <= ts[i - 1]:
            ts[i] = ts[i - 1] + 1
    return ts

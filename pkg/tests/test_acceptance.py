"""Primary acceptance criteria, one test each.

Every test records a single PASS/FAIL line; the lines are repeated in the
terminal summary under "acceptance criteria".
"""
import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from impactcal.assess import crps_normal, random_effect_test, score_model
from impactcal.cli import main
from impactcal.features import WindowArrays
from impactcal.model import ImpactParams, covariance, fit_baseline, fit_mle
from impactcal.sim import SimConfig, simulate_paths, simulate_window_arrays
from impactcal.taq import Side, classify_trades, parse_ticks
from impactcal.trajectory import (
    expected_permanent,
    expected_realized,
    extremum_permanent,
    extremum_realized,
    make_trajectory,
    sampled_trajectory,
)

TRUE = ImpactParams(0.7, 0.7, 4.5, 0.05)
SCHEDULE = (0.01, 0.02, 0.03, 0.04)


def test_path_covariance_monte_carlo(acceptance):
    t0 = time.perf_counter()
    I, J = simulate_paths(make_trajectory("uniform", None, 1.0, 1.0), ImpactParams(0.7, 0.7, 0.0, 0.0),
                          0.02, 200_000, seed=2024)
    secs = time.perf_counter() - t0
    emp = np.cov(I, J)
    c11, c12, c22 = covariance(0.02, 1.0, 2.0)
    rel = [emp[0, 0] / c11 - 1, emp[0, 1] / c12 - 1, emp[1, 1] / c22 - 1]
    ok = max(map(abs, rel)) < 0.01 and secs < 120
    acceptance("path covariance vs closed form", ok,
               f"rel errors {', '.join(f'{r:+.4f}' for r in rel)} (tol 0.01), {secs:.1f}s (limit 120s)")


def test_mle_recovery(acceptance):
    w = simulate_window_arrays(SimConfig(TRUE, sigma_schedule=SCHEDULE, n_windows=50_000, seed=0))
    t0 = time.perf_counter()
    fit = fit_mle(w)
    secs = time.perf_counter() - t0
    z = (fit.params.as_array() - TRUE.as_array()) / fit.std_errors
    ok = fit.converged and np.all(np.abs(z) < 3) and 0.6 <= fit.params.alpha <= 0.8 and secs < 300
    est = ", ".join(f"{n}={v:.4f}" for n, v in zip(("alpha", "beta", "gamma", "eta"), fit.params.as_array()))
    acceptance("MLE recovery at 50k windows", ok,
               f"{est}; z-scores {np.round(z, 2).tolist()} (|z|<3); alpha in [0.6, 0.8]; {secs:.1f}s")


def _random_monotone(rng, X, T):
    n = int(rng.integers(2, 14))
    t = np.concatenate([[0.0], np.sort(rng.uniform(0, T, n - 2)), [T]])
    inc = rng.exponential(1.0, n - 1) ** rng.uniform(0.5, 3) * (rng.uniform(size=n - 1) > 0.25)
    if inc.sum() == 0:
        inc[-1] = 1.0
    x = np.minimum(np.concatenate([[0.0], np.cumsum(inc)]) * X / inc.sum(), X)
    x[-1] = X
    return sampled_trajectory(t, x)


BRANCHES = [
    # (label, gamma, alpha, eta, beta, X, T)
    ("alpha=1,beta=0.3", 1.0, 1.0, 1.0, 0.3, 1.0, 1.0),
    ("alpha=1,beta=0.8", 0.7, 1.0, 0.4, 0.8, 2.0, 1.5),
    ("alpha=1,beta=1/2", 1.0, 1.0, 1.0, 0.5, 1.0, 1.0),
    ("alpha=1,beta=2", 1.0, 1.0, 1.0, 2.0, 1.0, 1.0),
    ("alpha=1,beta=3", 0.5, 1.0, 2.0, 3.0, 1.5, 2.0),
    ("alpha=1,beta=2 binding", 1.0, 1.0, 1.0, 2.0, 0.1, 1.0),
    ("alpha=1,beta=1", 1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
    ("alpha=1,eta=0", 1.0, 1.0, 0.0, 0.6, 1.0, 1.0),
    ("alpha=1,gamma=0", 0.0, 1.0, 1.0, 0.6, 1.0, 1.0),
    ("beta=1,alpha=0.5", 1.0, 0.5, 0.3, 1.0, 1.0, 1.0),
    ("beta=1,alpha=0.8", 2.0, 0.8, 0.3, 1.0, 2.0, 3.0),
    ("beta=1,alpha=1.5", 1.0, 1.5, 0.3, 1.0, 1.0, 1.0),
    ("beta=1,alpha=2", 1.0, 2.0, 0.3, 1.0, 1.0, 1.0),
    ("beta=1,alpha=3", 1.0, 3.0, 0.3, 1.0, 1.0, 1.0),
    ("beta=1,alpha=4", 0.5, 4.0, 0.3, 1.0, 2.0, 1.5),
]


def test_bound_sandwich(acceptance):
    rng = np.random.default_rng(7)
    failures, checked = [], 0
    for label, g, a, e, b, X, T in BRANCHES:
        r = extremum_realized(g, a, e, b, X, T)
        for _ in range(200):
            val = expected_realized(_random_monotone(rng, X, T), g, a, e, b)
            checked += 1
            if not (r.lower - 1e-9 <= val <= r.upper + 1e-9):
                failures.append(f"{label}: {val} outside [{r.lower}, {r.upper}]")
        if r.upper_attained or r.lower_attained:
            bound = r.upper if r.upper_attained else r.lower
            got = expected_realized(r.attaining_trajectory, g, a, e, b)
            if not math.isclose(got, bound, rel_tol=1e-8):
                failures.append(f"{label}: attaining path gives {got}, bound {bound}")
    uni_err = 0.0
    for g, a, X, T in ((1.0, 0.5, 2.0, 1.0), (1.0, 0.7, 1.0, 1.0), (2.0, 1.0, 3.0, 5.0), (1.0, 1.5, 2.0, 4.0)):
        r = extremum_permanent(g, a, X, T)
        for _ in range(200):
            val = expected_permanent(_random_monotone(rng, X, T), g, a)
            checked += 1
            if not (r.lower - 1e-9 <= val <= r.upper + 1e-9):
                failures.append(f"permanent alpha={a}: {val} outside [{r.lower}, {r.upper}]")
        closed = g * T ** (1 - a) * X**a
        uni = expected_permanent(make_trajectory("uniform", None, X, T), g, a)
        uni_err = max(uni_err, abs(uni - closed))
    ok = not failures and uni_err <= 1e-10
    acceptance("trajectory bound sandwich", ok,
               f"{checked} random paths over {len(BRANCHES) + 4} branches, {len(failures)} outside; "
               f"uniform closed-form error {uni_err:.1e}" + (f"; first: {failures[0]}" if failures else ""))


def _approaches(vals, limit):
    # monotone over the tail (all but the first point), ending nearer the limit
    tail = vals[1:]
    if limit == math.inf:
        return all(b > a for a, b in zip(tail, tail[1:])) and vals[-1] > max(vals[0], 2 * tail[0])
    gaps = [abs(v - limit) for v in vals]
    return all(b < a for a, b in zip(gaps[1:], gaps[2:])) and gaps[-1] < gaps[0]


def test_family_limits(acceptance):
    M = (1.0, 10.0, 100.0, 1000.0)
    X, T, g, e = 1.5, 2.0, 0.8, 0.3
    claims = []

    def ta(m):
        return make_trajectory("TA", m, X, T)

    def tb(m):
        return make_trajectory("TB", m, X, T)

    for a in (0.5, 0.8):
        claims.append((f"TA E[I] alpha={a} -> 0", [expected_permanent(ta(m), g, a) for m in M], 0.0))
    for a in (1.5, 2.5):
        claims.append((f"TA E[I] alpha={a} -> inf", [expected_permanent(ta(m), g, a) for m in M], math.inf))
    for b in (0.3, 0.5, 0.8):
        claims.append((f"TA E[J] alpha=1 beta={b} -> 0", [expected_realized(ta(m), g, 1.0, e, b) for m in M], 0.0))
    for b in (1.5, 3.0):
        claims.append((f"TA E[J] alpha=1 beta={b} -> inf",
                       [expected_realized(ta(m), g, 1.0, e, b) for m in M], math.inf))
    for a in (0.5, 1.5):
        claims.append((f"TA E[J] beta=1 alpha={a} -> eta X/T",
                       [expected_realized(ta(m), g, a, e, 1.0) for m in M], e * X / T))
    for a in (1.5, 3.0):
        claims.append((f"TB E[J] beta=1 alpha={a} -> inf",
                       [expected_realized(tb(m), g, a, e, 1.0) for m in M], math.inf))
    claims.append(("TC E[J] alpha=2 beta=1 m->0+ -> eta X/T",
                   [expected_realized(make_trajectory("TC", m, X, T), g, 2.0, e, 1.0) for m in (1.0, 0.1, 0.01)],
                   e * X / T))
    claims.append(("TA E[J] alpha=beta=1 -> eta X/T",
                   [expected_realized(ta(m), g, 1.0, e, 1.0) for m in M], e * X / T))
    claims.append(("TB E[J] alpha=beta=1 -> eta X/T + gamma X",
                   [expected_realized(tb(m), g, 1.0, e, 1.0) for m in M], e * X / T + g * X))
    bad = [name for name, vals, lim in claims if not _approaches(vals, lim)]
    acceptance("TA/TB/TC limits", not bad, f"{len(claims) - len(bad)}/{len(claims)} limit claims monotone"
               + (f"; failing: {bad}" if bad else ""))


def _crps_integral(mu, sd, y):
    F = lambda x: stats.norm.cdf(x, mu, sd)
    lo, hi = min(mu - 12 * sd, y) - 1, max(mu + 12 * sd, y) + 1
    a = integrate.quad(lambda x: F(x) ** 2, lo, y, epsabs=1e-12, epsrel=1e-12, limit=400)[0]
    b = integrate.quad(lambda x: (F(x) - 1) ** 2, y, hi, epsabs=1e-12, epsrel=1e-12, limit=400)[0]
    return -(a + b)


def test_crps_correctness(acceptance):
    rng = np.random.default_rng(11)
    mu = rng.uniform(-2, 2, 100)
    sd = np.exp(rng.uniform(np.log(0.05), np.log(5), 100))
    y = mu + sd * rng.uniform(-4, 4, 100)
    err = max(abs(crps_normal(m, s, v) - _crps_integral(m, s, v)) for m, s, v in zip(mu, sd, y))
    n = 1_000_000
    worst = 0.0
    for m, s, v in ((0.0, 1.0, 0.0), (0.3, 0.5, 1.2), (-1.0, 2.0, -4.0), (0.0, 0.02, 0.01)):
        Y = rng.normal(m, s, n)
        Y2 = rng.normal(m, s, n)
        d = 0.5 * np.abs(Y - Y2) - np.abs(Y - v)
        z = abs(d.mean() - crps_normal(m, s, v)) / (d.std(ddof=1) / math.sqrt(n))
        worst = max(worst, z)
    ok = err <= 1e-6 and worst < 3
    acceptance("CRPS closed form", ok,
               f"max |closed - integral| {err:.1e} over 100 points (tol 1e-6); "
               f"energy form max |z| {worst:.2f} at 1e6 draws (tol 3)")


def test_model_comparison_direction(acceptance):
    schedule = tuple(np.geomspace(0.01, 0.04, 16))
    wins = 0
    for seed in range(100):
        w = simulate_window_arrays(SimConfig(TRUE, sigma_schedule=schedule, n_windows=2000, seed=seed))
        f, b = score_model(fit_mle(w), w), score_model(fit_baseline(w), w)
        wins += (f.bic < b.bic and f.crps_I > b.crps_I and f.crps_J > b.crps_J
                 and f.crps_JminusIhalf > b.crps_JminusIhalf)
    acceptance("full vs baseline on heteroskedastic data", wins >= 95, f"full model better on all four in {wins}/100 seeds (need 95)")


def _grouped(seed, sd_alpha, G=20, n=1000):
    rng = np.random.default_rng([seed, 99])
    parts = []
    for g in range(G):
        a = 0.7 + sd_alpha * rng.standard_normal()
        cfg = SimConfig(ImpactParams(a, 0.7, 4.5, 0.05), sigma_schedule=SCHEDULE, n_windows=n, seed=seed,
                        instrument=f"G{g:02d}")
        parts.append(simulate_window_arrays(cfg, stream=g))
    return WindowArrays(*(np.concatenate(c) for c in zip(*parts)))


@pytest.mark.slow
def test_random_effect_calibration(acceptance):
    null = sum(random_effect_test(_grouped(s, 0.0)).p_value < 0.05 for s in range(100))
    power = sum(random_effect_test(_grouped(s, 0.05)).p_value < 0.05 for s in range(100))
    acceptance("random-effect test size and power", null <= 10 and power >= 90,
               f"rejections at 5%: {null}/100 under shared alpha (max 10), "
               f"{power}/100 with sigma_alpha=0.05 over 20 groups (min 90)")


LEE_READY = """ts_ms,price,volume,bid,ask,bid_size,ask_size
1000,10.01,100,10.00,10.02,5,5
2000,10.02,100,10.00,10.02,5,5
3000,10.00,100,10.00,10.02,5,5
4000,10.015,100,10.00,10.02,5,5
5000,10.005,100,10.00,10.02,5,5
6000,10.01,100,10.00,10.02,5,5
7000,10.01,100,10.00,10.02,5,5
8000,10.03,100,10.02,10.04,5,5
9000,10.02,100,10.00,10.04,5,5
10000,10.05,100,10.00,10.04,5,5
11000,10.00,100,,,,
12000,10.02,100,10.00,10.04,5,5
"""
# first trade at mid, at ask, at bid, nearer ask, nearer bid, mid uptick,
# mid zero tick, mid uptick, mid downtick, above ask, no quote, mid uptick
LEE_READY_SIDES = [Side.UNKNOWN, Side.BUY, Side.SELL, Side.BUY, Side.SELL, Side.BUY,
                   Side.UNKNOWN, Side.BUY, Side.SELL, Side.BUY, Side.UNKNOWN, Side.BUY]


def test_lee_ready_fixture(acceptance, tmp_path):
    p = tmp_path / "FIX_20240102.csv"
    p.write_text(LEE_READY)
    parsed = parse_ticks(p)
    got = [c.side for c in classify_trades(parsed.records)]
    ok = len(got) == 12 and got == LEE_READY_SIDES and not parsed.diagnostics
    acceptance("Lee-Ready 12-tick fixture", ok,
               f"{sum(a == b for a, b in zip(got, LEE_READY_SIDES))}/12 sides as expected")


SIM_TOML = """
[taq]
min_valid_days = 1
[sim]
n_windows = 450
n_instruments = 3
sigma_schedule = [0.01, 0.02, 0.03, 0.04]
[run]
seed = 20240102
"""


def _pipeline(root, cfg):
    codes = [
        main(["simulate", str(cfg), "-o", str(root / "ticks")]),
        main(["ingest", str(root / "ticks"), "-o", str(root / "windows.csv"), "--config", str(cfg)]),
        main(["calibrate", str(root / "windows.csv"), "--model", "full", "-o", str(root / "full.json"),
              "--config", str(cfg)]),
        main(["calibrate", str(root / "windows.csv"), "--model", "baseline", "-o", str(root / "baseline.json"),
              "--config", str(cfg)]),
        main(["assess", str(root / "windows.csv"), str(root / "full.json"), str(root / "baseline.json"),
              "-o", str(root / "report.json"), "--config", str(cfg)]),
    ]
    files = {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
    return codes, files


def test_end_to_end_determinism(acceptance, tmp_path):
    cfg = tmp_path / "sim.toml"
    cfg.write_text(SIM_TOML)
    codes_a, a = _pipeline(tmp_path / "run1", cfg)
    codes_b, b = _pipeline(tmp_path / "run2", cfg)
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    ok = codes_a == codes_b == [0] * 5 and same
    acceptance("simulate -> ingest -> calibrate -> assess byte-identical", ok,
               f"exit codes {codes_a} / {codes_b}; {len(a)} files, "
               f"{sum(a[k] == b.get(k) for k in a)} identical")

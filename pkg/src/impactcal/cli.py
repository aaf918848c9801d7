"""Command-line entry point: ``impactcal <subcommand> ...``.

Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from .assess import AssessError, random_effect_test, score_model
from .clock import ClockError, build_volume_clock, session_bounds, session_segments
from .config import ConfigError, RunConfig, dump_json, envelope, load_config
from .features import FeatureError, WindowConfig, build_windows, read_window_table, write_window_table
from .model import FitTolerances, ImpactParams, InsufficientDataError, ModelError, ModelFit, fit_model
from .sim import Microstructure, SimConfig, SimulationError, VelocityLaw, simulate_ticks, simulate_windows
from .taq import TICK_FILE_RE, TickFormatError, classify_trades, day_is_complete, filter_universe, parse_ticks
from .trajectory import RootFindingError, TrajectoryError, extremum_permanent, extremum_realized

log = logging.getLogger("impactcal")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


def _read_windows(path):
    try:
        ws = read_window_table(path)
    except FileNotFoundError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    if not ws:
        raise DataError(f"{path}: no observations")
    return ws


def _tolerances(cfg: RunConfig) -> FitTolerances:
    return FitTolerances(gtol=cfg.gtol, max_iter=cfg.max_iter, min_windows=cfg.min_windows)


# ---- subcommands -----------------------------------------------------------------

def cmd_ingest(args, cfg: RunConfig) -> int:
    tick_dir = Path(args.tick_dir)
    if not tick_dir.is_dir():
        raise DataError(f"{tick_dir} is not a directory")
    by_inst = defaultdict(list)
    for p in sorted(tick_dir.iterdir()):
        m = TICK_FILE_RE.match(p.name)
        if m is None:
            if p.suffix == ".csv":
                log.warning("skipping %s: name is not <instrument>_<YYYYMMDD>.csv", p.name)
            continue
        by_inst[m["instrument"]].append((m["date"], p))
    if not by_inst:
        raise DataError(f"{tick_dir}: no tick files")

    session = cfg.session_pairs()
    days, flags = {}, {}
    for inst in sorted(by_inst):
        flags[inst] = []
        for date, path in sorted(by_inst[inst]):
            parsed = parse_ticks(path, ts_tolerance_ms=cfg.ts_tolerance_ms)
            for diag in parsed.diagnostics:
                log.warning("%s: %s", path.name, diag)
            ok = bool(parsed.records) and day_is_complete(parsed.records, session_segments(date, session))
            flags[inst].append(ok)
            if ok:
                days[(inst, date)] = parsed.records
            else:
                log.info("%s %s is incomplete, skipped", inst, date)
    kept = filter_universe(flags, cfg.min_valid_days)
    for inst in sorted(set(flags) - kept):
        log.warning("%s dropped: fewer than %d complete days", inst, cfg.min_valid_days)

    windows = []
    for (inst, date), recs in sorted(days.items()):
        if inst not in kept:
            continue
        open_, close, breaks = session_bounds(date, session)
        try:
            clock = build_volume_clock(recs, open_, close, breaks)
        except ClockError as exc:
            log.warning("%s %s skipped: %s", inst, date, exc)
            continue
        wc = WindowConfig(unit_minutes=cfg.window_unit_minutes, t_post_units=cfg.t_post_units,
                          sigma_floor=cfg.sigma_floor, instrument=inst, date=date)
        windows.extend(build_windows(classify_trades(recs), clock, wc))
    log.info("ingest: %d windows from %d instruments", len(windows), len(kept))
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    write_window_table(windows, args.output)
    return EXIT_OK


def cmd_calibrate(args, cfg: RunConfig) -> int:
    ws = _read_windows(args.windows)
    fit = fit_model(ws, args.model, tolerances=_tolerances(cfg))
    _write_text(args.output, dump_json(envelope("fit", fit.to_dict(), cfg)))
    if not fit.converged:
        raise NumericalError(f"{args.model} fit did not converge (gradient norm {fit.grad_norm:.3g})")
    return EXIT_OK


def _load_fit(path) -> ModelFit:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return ModelFit.from_dict(doc.get("result", doc))
    except FileNotFoundError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path} is not a fit document: {exc}") from exc


def cmd_assess(args, cfg: RunConfig) -> int:
    ws = _read_windows(args.windows)
    reports = []
    for path in args.fits:
        fit = _load_fit(path)
        reports.append(score_model(fit, ws, label=f"{fit.model}:{Path(path).stem}"))
    result = {"reports": [r.to_dict() for r in reports]}
    if len(reports) > 1:
        ref = reports[0]
        result["differences"] = [
            {
                "model_label": r.model_label,
                "reference": ref.model_label,
                "crps_I": ref.crps_I - r.crps_I,
                "crps_J": ref.crps_J - r.crps_J,
                "crps_JminusIhalf": ref.crps_JminusIhalf - r.crps_JminusIhalf,
                "bic": ref.bic - r.bic,
            }
            for r in reports[1:]
        ]
    _write_text(args.output, dump_json(envelope("assess", result, cfg)))
    csv_path = Path(args.csv) if args.csv else Path(args.output).with_suffix(".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_label", "margin", "crps", "bic", "n_obs"])
        for r in reports:
            for margin, val in (("I", r.crps_I), ("J", r.crps_J), ("J-I/2", r.crps_JminusIhalf)):
                w.writerow([r.model_label, margin, repr(val), repr(r.bic), r.n_obs])
    return EXIT_OK


def cmd_optimize(args, cfg: RunConfig) -> int:
    perm = extremum_permanent(args.gamma, args.alpha, args.X, args.T)
    real = extremum_realized(args.gamma, args.alpha, args.eta, args.beta, args.X, args.T)
    result = {
        "inputs": {"alpha": args.alpha, "beta": args.beta, "gamma": args.gamma, "eta": args.eta,
                   "X": args.X, "T": args.T},
        "permanent": perm.to_dict(),
        "realized": real.to_dict(),
    }
    _write_text(args.output, dump_json(envelope("extrema", result, cfg)))
    return EXIT_OK


def _sim_config(cfg: RunConfig, k: int) -> SimConfig:
    return SimConfig(
        params=ImpactParams(cfg.alpha, cfg.beta, cfg.gamma, cfg.eta),
        sigma_schedule=tuple(cfg.sigma_schedule),
        velocity_law=VelocityLaw(cfg.v_low, cfg.v_high),
        n_windows=cfg.n_windows,
        seed=cfg.seed,
        volume=cfg.volume,
        instrument=f"SIM{k:03d}",
    )


def cmd_simulate(args, cfg: RunConfig) -> int:
    out = Path(args.output)
    if cfg.output == "ticks":
        micro = Microstructure(
            ticks_per_window=cfg.ticks_per_window, trade_size=cfg.trade_size, s0=cfg.s0,
            unit_minutes=cfg.window_unit_minutes, session=cfg.session_pairs(), start_date=cfg.start_date,
        )
        planted = []
        for k in range(cfg.n_instruments):
            sim = simulate_ticks(_sim_config(cfg, k), micro, stream=k)
            sim.write(out)
            planted.extend(sim.planted)
        if args.planted:
            write_window_table(planted, args.planted)
    else:
        ws = []
        for k in range(cfg.n_instruments):
            ws.extend(simulate_windows(_sim_config(cfg, k), stream=k))
        out.parent.mkdir(parents=True, exist_ok=True)
        write_window_table(ws, out)
    return EXIT_OK


def cmd_random_effect(args, cfg: RunConfig) -> int:
    ws = _read_windows(args.windows)
    res = random_effect_test(ws, model=args.model, min_groups=cfg.re_min_groups,
                             min_windows=cfg.re_min_windows, tolerances=_tolerances(cfg))
    _write_text(args.output, dump_json(envelope("random_effect", res.to_dict(), cfg)))
    return EXIT_OK


# ---- wiring -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="impactcal", description="Market-impact calibration toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="tick files -> window table")
    s.add_argument("tick_dir")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("calibrate", parents=[common], help="fit a model to a window table")
    s.add_argument("windows")
    s.add_argument("--model", choices=("full", "baseline"), default="full")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("assess", parents=[common], help="score fitted models by CRPS and BIC")
    s.add_argument("windows")
    s.add_argument("fits", nargs="+")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--csv", help="flat CSV path (default: output with .csv suffix)")
    s.set_defaults(func=cmd_assess)

    s = sub.add_parser("optimize", parents=[common], help="extremal expected impact over trajectories")
    for name in ("alpha", "beta", "gamma", "eta", "X", "T"):
        s.add_argument(f"--{name}", type=float, required=True)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("simulate", parents=[common], help="synthetic ticks or windows")
    s.add_argument("sim_config", help="TOML configuration with a [sim] section")
    s.add_argument("-o", "--output", required=True, help="tick directory or window CSV")
    s.add_argument("--planted", help="also write the planted windows (tick output only)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("random-effect", parents=[common], help="test for a random effect on alpha")
    s.add_argument("windows")
    s.add_argument("--model", choices=("full", "baseline"), default="full")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_random_effect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse help or usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        path = args.sim_config if args.command == "simulate" else args.config
        cfg = load_config(path).with_overrides(args.set or [])
        return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"impactcal: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, RootFindingError, np.linalg.LinAlgError) as exc:
        print(f"impactcal: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, TickFormatError, FeatureError, ClockError, InsufficientDataError, AssessError,
            TrajectoryError, SimulationError, FileNotFoundError) as exc:
        print(f"impactcal: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ModelError as exc:
        print(f"impactcal: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

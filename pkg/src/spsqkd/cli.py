"""Command-line front end.

Every command writes a versioned JSON report (plus CSV tables where
relevant) into the output directory.  Exit codes: 0 success, 2 config or
schema error, 3 I/O error, 4 estimation failure, 5 strict-mode statistical
failure.
"""
from __future__ import annotations

import argparse
import logging
import secrets
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__, plotting
from .bb84_sim import SimConfig, analytic_for, simulate
from .config import RunConfig, bundled_text, load_config
from .errors import ConfigError, EstimationError
from .link_model import coupling_efficiency, cutoff_distance, keyrate_curve, sil_enhancement
from .photophysics import fit_pulsed_g2, fit_saturation, stability_stats
from .report import (SWEEP_HEADER, envelope, read_histogram, read_saturation,
                     read_stability, write_atomic, write_csv, write_report)

log = logging.getLogger("spsqkd")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ESTIMATION, EXIT_STRICT = 0, 2, 3, 4, 5


class StrictFailure(Exception):
    pass


def _maybe_plot(cfg: RunConfig, fn, *args) -> Optional[str]:
    if not cfg.output.plots:
        return None
    if not plotting.available():
        log.warning("matplotlib not installed; skipping figure")
        return None
    path = fn(*args)
    return str(path) if path else None


# -- commands (library-callable) ---------------------------------------------

def cmd_keyrate_sweep(cfg: RunConfig, out_dir=None):
    """Sweep K(d) for every configured repetition rate.

    Returns ``(rows, report)``; rows follow ``SWEEP_HEADER``.
    """
    params = cfg.protocol_params()
    distances = cfg.distances()
    rows, summary = [], []
    for r_s in cfg.sweep.r_s_values:
        curve = keyrate_curve(params, cfg.source_model(r_s), cfg.channel_model(),
                              distances, ec_leak_scaled_by_q=cfg.flags.ec_leak_scaled_by_q)
        for d, res in curve:
            rows.append((d, r_s, res.p_det, res.a_corr, res.e_tilde, res.delta_n,
                         res.s_finite, res.k_rate))
        summary.append({"r_s": r_s, "k_at_d_min": curve[0][1].k_rate,
                        "s_finite_at_d_min": curve[0][1].s_finite,
                        "cutoff_km": cutoff_distance(curve)})
    results = {"curves": summary, "n_rows": len(rows), "columns": list(SWEEP_HEADER)}
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / "sweep.csv", SWEEP_HEADER, rows)
        results["csv"] = str(out / "sweep.csv")
        results["figure"] = _maybe_plot(cfg, plotting.plot_sweep, rows, out / "sweep.png")
    report = envelope("sweep", cfg, results)
    if out_dir is not None:
        write_report(Path(out_dir) / "sweep_report.json", report)
    return rows, report


def cmd_fit_g2(cfg: RunConfig, histogram_csv, out_dir=None):
    est = cfg.estimators
    hist = read_histogram(histogram_csv, est.g2_rep_period_ns)
    fit = fit_pulsed_g2(hist, est.g2_side_peaks, shared_width=est.g2_shared_width,
                        baseline=est.g2_baseline)
    results = {"input": str(histogram_csv), "rep_period_ns": est.g2_rep_period_ns,
               **fit.as_dict()}
    if out_dir is not None:
        results["figure"] = _maybe_plot(cfg, plotting.plot_g2, hist, fit,
                                        Path(out_dir) / "g2_fit.png")
    report = envelope("fit-g2", cfg, results)
    if out_dir is not None:
        write_report(Path(out_dir) / "g2_report.json", report)
    return fit, report


def cmd_fit_saturation(cfg: RunConfig, csv_paths: List, out_dir=None,
                       compare: str = "enhancement"):
    """Fit one or two power sweeps.  With two, also report their ratio:
    ``enhancement`` = I_sat(first)/I_sat(second), ``coupling`` =
    I_sat(second)/I_sat(first) for (free-space, fibre) pairs."""
    if not 1 <= len(csv_paths) <= 2:
        raise ConfigError("fit-saturation takes one or two datasets")
    datasets = [read_saturation(p) for p in csv_paths]
    fits = [fit_saturation(d, cfg.estimators.saturation_weighting) for d in datasets]
    results = {"fits": [{"input": str(p), **f.as_dict()} for p, f in zip(csv_paths, fits)]}
    if len(fits) == 2:
        if compare == "coupling":
            results["coupling_efficiency"] = coupling_efficiency(fits[0], fits[1])
        else:
            results["sil_enhancement"] = sil_enhancement(fits[0], fits[1])
    if out_dir is not None:
        results["figure"] = _maybe_plot(cfg, plotting.plot_saturation, datasets, fits,
                                        [Path(p).stem for p in csv_paths],
                                        Path(out_dir) / "saturation_fit.png")
    report = envelope("fit-saturation", cfg, results)
    if out_dir is not None:
        write_report(Path(out_dir) / "saturation_report.json", report)
    return fits, report


def cmd_simulate(cfg: RunConfig, out_dir=None, strict: bool = False):
    sim = cfg.simulation
    if sim.seed is None:
        raise ConfigError("simulate needs a seed")
    sc = SimConfig(cfg.source_model(), cfg.channel_model(sim.distance_km),
                   cfg.protocol_params(), sim.num_pulses, sim.seed, sim.block_size,
                   cfg.flags.ec_leak_scaled_by_q)
    res = simulate(sc, workers=sim.workers)
    results = {"simulation": res.as_dict(), "analytic": analytic_for(sc).as_dict()}
    report = envelope("simulate", cfg, results, seed=sim.seed)
    if out_dir is not None:
        write_report(Path(out_dir) / "simulate_report.json", report)
    if strict and not res.analytic_comparison["passed"]:
        raise StrictFailure("simulation disagrees with the analytic model")
    return res, report


def cmd_stability(cfg: RunConfig, trace_csv, out_dir=None):
    est = cfg.estimators
    trace = read_stability(trace_csv)
    try:
        rep = stability_stats(trace, est.stability_window_s, est.blink_threshold)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    results = {"input": str(trace_csv), **rep.as_dict()}
    if out_dir is not None:
        results["figure"] = _maybe_plot(cfg, plotting.plot_stability, trace, rep,
                                        Path(out_dir) / "stability.png")
    report = envelope("stability", cfg, results)
    if out_dir is not None:
        write_report(Path(out_dir) / "stability_report.json", report)
    return rep, report


# -- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="YAML config or bundled profile name (default: fig4_default)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, help="RNG seed for randomized commands")
    common.add_argument("--strict", action="store_true",
                        help="exit 5 when statistical checks fail")
    common.add_argument("--ec-leak-scaled-by-q", action="store_true", default=None,
                        help="multiply the error-correction leak by q")
    common.add_argument("--plot", action="store_true", default=None,
                        help="also render PNG figures (needs matplotlib)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="spsqkd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    sub.add_parser("sweep", parents=[common], help="key rate versus fibre length")

    g = sub.add_parser("fit-g2", parents=[common], help="pulsed g2(0) from a histogram CSV")
    g.add_argument("histogram", help="CSV with header delay_ns,counts")
    g.add_argument("--rep-period-ns", type=float)
    g.add_argument("--side-peaks", type=int)
    g.add_argument("--baseline", choices=["fit", "valley", "none"])
    g.add_argument("--shared-width", action="store_true", default=None)

    s = sub.add_parser("fit-saturation", parents=[common],
                       help="saturation fit of one or two power sweeps")
    s.add_argument("datasets", nargs="+", help="CSV with header power_uw,counts_per_s")
    s.add_argument("--weighting", choices=["none", "poisson"])
    s.add_argument("--compare", choices=["enhancement", "coupling"], default="enhancement")

    m = sub.add_parser("simulate", parents=[common], help="Monte Carlo BB84 link")
    m.add_argument("--pulses", type=int)
    m.add_argument("--distance-km", type=float)
    m.add_argument("--workers", type=int)

    t = sub.add_parser("stability", parents=[common], help="photostability statistics")
    t.add_argument("trace", help="CSV with header time_s,counts_per_s")
    t.add_argument("--window-s", type=float)
    t.add_argument("--threshold", type=float)

    sub.add_parser("config", parents=[common],
                   help="print the bundled default config (or write it to --out)")
    return p


def _effective_config(args) -> RunConfig:
    cfg = load_config(args.config)
    ov = {"output": {}, "flags": {}, "simulation": {}, "estimators": {}}
    if args.out is not None:
        ov["output"]["dir"] = args.out
    if args.plot:
        ov["output"]["plots"] = True
    if args.ec_leak_scaled_by_q:
        ov["flags"]["ec_leak_scaled_by_q"] = True
    if args.seed is not None:
        ov["simulation"]["seed"] = args.seed
    pick = {
        "pulses": ("simulation", "num_pulses"), "distance_km": ("simulation", "distance_km"),
        "workers": ("simulation", "workers"),
        "rep_period_ns": ("estimators", "g2_rep_period_ns"),
        "side_peaks": ("estimators", "g2_side_peaks"),
        "baseline": ("estimators", "g2_baseline"),
        "shared_width": ("estimators", "g2_shared_width"),
        "weighting": ("estimators", "saturation_weighting"),
        "window_s": ("estimators", "stability_window_s"),
        "threshold": ("estimators", "blink_threshold"),
    }
    for arg, (section, key) in pick.items():
        v = getattr(args, arg, None)
        if v is not None:
            ov[section][key] = v
    if args.cmd == "simulate" and cfg.simulation.seed is None and args.seed is None:
        seed = secrets.randbits(63)
        print(f"seed: {seed}", file=sys.stderr)
        ov["simulation"]["seed"] = seed
    return cfg.with_overrides(**ov)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.cmd == "config":
            text = bundled_text() if args.config is None else load_config(args.config).to_yaml()
            if args.out:
                write_atomic(Path(args.out) / "config.yaml", text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        cfg = _effective_config(args)
        out = cfg.output.dir
        if args.cmd == "sweep":
            rows, rep = cmd_keyrate_sweep(cfg, out)
            for c in rep["results"]["curves"]:
                print(f"R_s={c['r_s']:.3g}/s  K(d_min)={c['k_at_d_min']:.4g} bits/s  "
                      f"cutoff={c['cutoff_km']} km")
        elif args.cmd == "fit-g2":
            fit, _ = cmd_fit_g2(cfg, args.histogram, out)
            print(f"g2(0) = {fit.g2_zero:.4f} +/- {fit.g2_uncertainty:.4f}")
        elif args.cmd == "fit-saturation":
            fits, rep = cmd_fit_saturation(cfg, args.datasets, out, args.compare)
            for path, f in zip(args.datasets, fits):
                print(f"{path}: I_sat = {f.i_sat:.4g} counts/s, P_sat = {f.p_sat:.4g} uW")
            for key in ("sil_enhancement", "coupling_efficiency"):
                if key in rep["results"]:
                    print(f"{key} = {rep['results'][key]:.4g}")
        elif args.cmd == "simulate":
            try:
                res, _ = cmd_simulate(cfg, out, args.strict)
            except StrictFailure as exc:
                print(f"strict: {exc}", file=sys.stderr)
                return EXIT_STRICT
            cmp = res.analytic_comparison
            print(f"P_det z={cmp['p_det']['z']:+.2f}  QBER z={cmp['qber']['z']:+.2f}  "
                  f"S rel diff={cmp['raw_secret_fraction']['rel_diff']:.2e}  "
                  f"{'PASS' if cmp['passed'] else 'FAIL'}")
        elif args.cmd == "stability":
            rep, _ = cmd_stability(cfg, args.trace, out)
            print(f"mean={rep.mean:.4g}  rel_std={rep.rel_std:.3g}  blinking={rep.blinking}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Command-line entry point: ``enzlink <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 simulation budget refused.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys

from .detection import Family, IsiMode
from .harness import (
    DEFAULT_BUDGET,
    FULL_SCALE_TRIALS,
    BudgetError,
    ExperimentSpec,
    Mode,
    ResultTable,
    run_experiment,
    write_plot_script,
)
from .physchem import PRESETS, ConfigError, binding_radius, load_config, rms_separation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3


def _int_list(text: str) -> list[int]:
    """Parse ``1,2,5`` or ``1-10`` (or a mix) into integers."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _float_list(text: str) -> list[float]:
    return [float(p) for p in text.split(",") if p.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--system", default="system1", help="preset name or JSON config path")
    p.add_argument("--enzymes", choices=("on", "off"), default="on")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0, help="master seed (64-bit unsigned)")
    p.add_argument("--out", help="CSV output path (stdout when omitted)")
    p.add_argument("--isi", choices=[m.value for m in IsiMode], default=IsiMode.FULL.value)
    p.add_argument("--family", choices=[f.value for f in Family], default=Family.POISSON.value)
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--budget", type=float, default=DEFAULT_BUDGET,
                   help="maximum estimated particle-steps before refusing")
    p.add_argument("--full-scale", action="store_true",
                   help=f"use {FULL_SCALE_TRIALS} trials and lift the budget cap")
    p.add_argument("--trial-csv", help="also write per-trial samples to this path")
    p.add_argument("--plot-script", action="store_true",
                   help="write a matplotlib script next to the CSV")
    p.add_argument("--ea-uses-da", action="store_true",
                   help="let the intermediate diffuse like a free information molecule")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="enzlink", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analytic", help="peak times, peak counts and decay intervals")
    _common(p)
    p.add_argument("--alphas", type=_float_list, help="comma-separated decay fractions")

    p = sub.add_parser("simulate", help="impulse-response trials against both analytic curves")
    _common(p)
    p.add_argument("--t-end-us", type=float, default=200.0)
    p.add_argument("--sample-every-us", type=float, default=5.0)

    p = sub.add_parser("detect", help="first-bit detection probability")
    _common(p)
    p.add_argument("--thresholds", type=_int_list, default=list(range(0, 11)))

    p = sub.add_parser("ber", help="bit error of a known or random sequence")
    _common(p)
    p.add_argument("--bits", help="known sequence such as 10110; random when omitted")
    p.add_argument("--n-bits", type=int, default=50)
    p.add_argument("--tb-us", type=float, default=120.0)
    p.add_argument("--threshold", type=int, default=1)

    p = sub.add_parser("sweep", help="expected error over a threshold x bit-interval grid")
    _common(p)
    p.add_argument("--thresholds", type=_int_list, default=list(range(1, 11)))
    p.add_argument("--tb-us", type=_float_list, default=[120.0])
    p.add_argument("--sequences", type=int, default=1000)
    p.add_argument("--n-bits", type=int, default=50)
    p.add_argument("--simulate", action="store_true", help="add simulated error rates")

    sub.add_parser("presets", help="print the built-in systems")
    return parser


def _spec(args) -> ExperimentSpec:
    mode = {
        "analytic": Mode.DECAY_INTERVAL,
        "simulate": Mode.IMPULSE_RESPONSE,
        "detect": Mode.FIRST_BIT_DETECTION,
        "ber": Mode.KNOWN_SEQUENCE_ERROR,
        "sweep": Mode.THRESHOLD_SWEEP,
    }[args.command]
    kw = dict(
        name=args.command,
        system=args.system,
        mode=mode,
        trials=FULL_SCALE_TRIALS if args.full_scale else args.trials,
        enzymes=args.enzymes == "on",
        master_seed=args.seed,
        isi=IsiMode(args.isi),
        family=Family(args.family),
        workers=args.threads,
        budget=float("inf") if args.full_scale else args.budget,
        ea_uses_da=args.ea_uses_da,
    )
    if args.command == "analytic" and args.alphas:
        kw["alphas"] = args.alphas
    elif args.command == "simulate":
        kw.update(t_end_us=args.t_end_us, sample_every_us=args.sample_every_us)
    elif args.command == "detect":
        kw["thresholds"] = args.thresholds
    elif args.command == "ber":
        kw.update(thresholds=[args.threshold], t_b_us=[args.tb_us], n_bits=args.n_bits)
        if args.bits:
            if set(args.bits) - {"0", "1"}:
                raise ConfigError(f"--bits must contain only 0 and 1, got {args.bits!r}")
            kw["bits"] = [int(c) for c in args.bits]
    elif args.command == "sweep":
        kw.update(thresholds=args.thresholds, t_b_us=args.tb_us, sequences=args.sequences,
                  n_bits=args.n_bits, simulate=args.simulate)
    return ExperimentSpec(**kw)


def _print_presets(out) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["system", "n_emit", "n_enzyme", "v_enz_um3", "k1_m3_per_s", "k_minus1_per_s",
                "k2_per_s", "r0_nm", "r_ob_nm", "dt_us", "r_rms_nm", "r_b_nm"])
    for name in PRESETS:
        cfg = load_config(name)
        w.writerow([name, cfg.n_emit, cfg.n_enzyme, f"{cfg.v_enz * 1e18:.6g}", cfg.k1,
                    cfg.k_minus1, cfg.k2, f"{cfg.rx_distance * 1e9:.6g}",
                    f"{cfg.rx_radius * 1e9:.6g}", f"{cfg.dt * 1e6:.6g}",
                    f"{rms_separation(cfg) * 1e9:.4g}", f"{binding_radius(cfg)[0] * 1e9:.4g}"])


def _emit(table: ResultTable, args) -> None:
    if args.out:
        path = table.write_csv(args.out)
        if args.plot_script:
            write_plot_script(path)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(table.schema)
        w.writerows(table.rows)
    if args.trial_csv and table.trial_data:
        table.write_trials(args.trial_csv)
    for key in ("t_max_lb_us", "t_max_noenzyme_us", "n_max_lb", "n_max_noenzyme",
                "sim_error", "sim_error_stderr", "analytic_lb_mean"):
        if key in table.metadata:
            print(f"{key}={table.metadata[key]:.6g}", file=sys.stderr)
    for opt in table.metadata.get("optimum", []):
        print(f"optimum t_b_us={opt['t_b_us']:g} {opt['column']}: xi={opt['xi']} "
              f"error={opt['value']:.4g}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        _print_presets(sys.stdout)
        return EXIT_OK
    try:
        table = run_experiment(_spec(args))
    except (ConfigError, FileNotFoundError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    _emit(table, args)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

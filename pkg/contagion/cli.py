"""
Command-line front end.

    python run_contagion.py simulate --alpha 0.6 --beta 0.6 --shock -0.1 --shock-bank B001
    python run_contagion.py phase --single-pair --alpha 0.1:3:0.1 --beta 0.1:3:0.1
    python run_contagion.py calibrate --panel panel.csv --window 84

Every command writes its results plus one manifest.json into --out.
Exit codes: 0 success (any verdict), 2 bad arguments, 3 input or
validation problems, 4 integration failure.
"""

import argparse
import logging
import math
import re
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import analysis, calibration, netgen, reporting
from .dynamics import IntegratorConfig, run
from .errors import ContagionError, IntegrationError, ValidationError
from .models import HoldingsMatrix, ModelParams, ShockSpec, single_pair
from .network import load_network, save_network

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_INTEGRATION = 4

RANGE_TOL = 1e-12

# options whose value may start with a minus sign
VALUE_OPTIONS = ("--alpha", "--beta", "--shock", "--magnitude", "--equity-multiple")
_NEGATIVE = re.compile(r"^-\.?\d")


def parse_range(text: str) -> List[float]:
    """`start:stop:step` with both ends inclusive, or a single number."""
    parts = text.split(":")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number or start:stop:step range: '{text}'")
    if len(values) == 1:
        return values
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"range must be start:stop:step, got '{text}'")
    start, stop, step = values
    if not step > 0 or stop < start:
        raise argparse.ArgumentTypeError(f"range needs step > 0 and stop >= start, got '{text}'")
    count = math.floor((stop - start) / step)
    if start + (count + 1) * step <= stop + RANGE_TOL * max(1.0, abs(stop)):
        count += 1
    return [round(start + k * step, 12) for k in range(count + 1)]


def attach_negative_values(argv: Sequence[str]) -> List[str]:
    """
    Rewrite `--alpha -3:-0.1:0.1` as `--alpha=-3:-0.1:0.1`.

    argparse only accepts a dash-led value on its own when it is a plain
    number, so negative ranges have to be glued to their option.
    """
    out: List[str] = []
    k = 0
    while k < len(argv):
        token = argv[k]
        if token in VALUE_OPTIONS and k + 1 < len(argv) and _NEGATIVE.match(argv[k + 1]):
            out.append(f"{token}={argv[k + 1]}")
            k += 2
        else:
            out.append(token)
            k += 1
    return out


def _pair(text: str) -> tuple:
    try:
        low, high = (float(p) for p in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LOW:HIGH, got '{text}'")
    return low, high


# Shared pieces

def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=None,
                        help="output directory (default: <command>_results)")
    common.add_argument("--seed", type=int, default=7, help="single source of all randomness")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--dt", type=float, default=None, help="time step (default min(tau)/50)")
    common.add_argument("--tmax", type=float, default=None, help="time horizon (default 200*max(tau))")
    common.add_argument("--quiet", action="store_true", help="warnings only, no summary")
    return common


def _network_options() -> argparse.ArgumentParser:
    group = argparse.ArgumentParser(add_help=False)
    group.add_argument("--holdings", "--net", dest="holdings", type=Path,
                       help="holdings CSV (bank_id,asset_id,amount)")
    group.add_argument("--banks", type=Path, help="banks CSV (bank_id,equity,cash_minus_liability)")
    group.add_argument("--single-pair", action="store_true",
                       help="use the 1 bank / 1 asset system instead of a network")
    return group


def _shock_options() -> argparse.ArgumentParser:
    group = argparse.ArgumentParser(add_help=False)
    group.add_argument("--shock", type=float, default=-0.1, help="relative equity shock s > -1")
    group.add_argument("--shock-bank", default=None, help="shocked bank (default: largest holder)")
    group.add_argument("--tau-a", type=float, default=1.0)
    group.add_argument("--tau-b", type=float, default=1.0)
    return group


def _network(args) -> HoldingsMatrix:
    if args.single_pair:
        return single_pair()
    if args.holdings is not None or args.banks is not None:
        if args.holdings is None or args.banks is None:
            raise ValidationError("--holdings and --banks must be given together")
        return load_network(args.holdings, args.banks)
    logger.info("No network given; generating one from seed %d", args.seed)
    return netgen.generate(netgen.GenSpec(seed=args.seed))


def _inputs(args) -> List[Path]:
    return [p for p in (getattr(args, "holdings", None), getattr(args, "banks", None),
                        getattr(args, "panel", None)) if p is not None]


def _shock_for(net: HoldingsMatrix, args) -> ShockSpec:
    bank = args.shock_bank
    if bank is None:
        bank = net.banks[int(np.argmax(net.holdings()))].id
    return ShockSpec(bank, args.shock)


def _config(args, params: ModelParams) -> IntegratorConfig:
    return IntegratorConfig.for_params(params, dt=args.dt, t_max=args.tmax)


def _config_dict(cfg: IntegratorConfig) -> Dict:
    return asdict(cfg)


class Outcome:
    """Files a command wrote and the settings that went into it."""

    def __init__(self, files: List[Path], params: Dict, config: Optional[Dict] = None,
                 summary: Optional[List[str]] = None):
        self.files = files
        self.params = params
        self.config = config
        self.summary = summary or []


# Commands

def cmd_simulate(args) -> Outcome:
    net = _network(args)
    params = ModelParams(args.alpha, args.beta, args.tau_a, args.tau_b)
    cfg = _config(args, params)
    if args.stride > 1:
        cfg = replace(cfg, sample_stride=args.stride)
    shock = _shock_for(net, args)
    traj = run(net, params, shock, cfg)
    files = reporting.write_trajectory(traj, args.out)
    summary = [
        f"Verdict: {traj.verdict.value}",
        f"Relaxation time: {traj.relaxation_time:.6g}",
        f"Failed banks: {len(traj.failed_banks)}",
        "Final prices: " + ", ".join(f"{a}={p:.4f}" for a, p in zip(traj.asset_ids, traj.final.p)),
    ]
    return Outcome(files, {"alpha": params.alpha, "beta": params.beta, "tau_a": params.tau_a,
                           "tau_b": params.tau_b, "shock_bank": shock.target_bank,
                           "shock": shock.magnitude}, _config_dict(cfg), summary)


def cmd_bankrank(args) -> Outcome:
    net = _network(args)
    params = ModelParams(args.alpha, args.beta, args.tau_a, args.tau_b)
    cfg = _config(args, params)
    trigger = _shock_for(net, args)
    reports = analysis.bank_rank(net, params, trigger, cfg, fortify=not args.no_fortify, jobs=args.jobs)
    files = [
        reporting.write_table(reporting.bankrank_table(reports), args.out / "bankrank.csv"),
        reporting.write_table(reporting.per_asset_rank_table(reports, net.asset_ids),
                              args.out / "bankrank_per_asset.csv"),
    ]
    summary = [f"Banks ranked: {len(reports)}"]
    summary += [f"#{k} {r.bank_id}: R={r.rank_value:.6g}" for k, r in enumerate(reports[:5], 1)]
    flagged = sum(1 for r in reports if r.flag)
    if flagged:
        summary.append(f"Flagged banks: {flagged}")
    return Outcome(files, {"alpha": params.alpha, "beta": params.beta, "tau_a": params.tau_a,
                           "tau_b": params.tau_b, "trigger_bank": trigger.target_bank,
                           "shock": trigger.magnitude, "fortify": not args.no_fortify},
                   _config_dict(cfg), summary)


def cmd_phase(args) -> Outcome:
    net = _network(args)
    shock = _shock_for(net, args)
    cfg = _config(args, ModelParams(0.0, 0.0, args.tau_a, args.tau_b))
    grid = analysis.phase_diagram(net, args.alpha, args.beta, shock, cfg, jobs=args.jobs,
                                  tau_a=args.tau_a, tau_b=args.tau_b)
    files = [reporting.write_table(reporting.phase_table(grid), args.out / "phase.csv")]
    counts = {}
    for v in grid.verdict.ravel():
        counts[v] = counts.get(v, 0) + 1
    summary = [f"Cells: {grid.verdict.size}"] + [f"{v}: {n}" for v, n in sorted(counts.items())]
    summary.append(f"Expected stability boundary: gamma = {analysis.transition_gamma(shock.magnitude):g}")
    return Outcome(files, {"alphas": list(args.alpha), "betas": list(args.beta),
                           "tau_a": args.tau_a, "tau_b": args.tau_b,
                           "shock_bank": shock.target_bank, "shock": shock.magnitude},
                   _config_dict(cfg), summary)


def cmd_quadrants(args) -> Outcome:
    net = _network(args)
    shock = _shock_for(net, args)
    cfg = _config(args, ModelParams(0.0, 0.0, args.tau_a, args.tau_b))
    outcomes = analysis.quadrant_study(net, args.magnitude, shock, cfg, jobs=args.jobs,
                                      tau_a=args.tau_a, tau_b=args.tau_b)
    files = [reporting.write_table(reporting.quadrant_table(outcomes), args.out / "quadrants.csv")]
    summary = [
        f"alpha={o.alpha:+g} beta={o.beta:+g}: {o.verdict.value}, {o.failures} failures, "
        f"value change {o.value_change:+.2%}"
        for o in outcomes
    ]
    return Outcome(files, {"magnitude": args.magnitude, "shock_bank": shock.target_bank,
                           "shock": shock.magnitude}, _config_dict(cfg), summary)


def cmd_rewire(args) -> Outcome:
    net = _network(args)
    params = ModelParams(args.alpha, args.beta, args.tau_a, args.tau_b)
    cfg = _config(args, params)
    shock = _shock_for(net, args)
    trials = analysis.rewire_experiment(net, params, shock, cfg, seed=args.seed, trials=args.trials,
                                        mode=args.mode, jobs=args.jobs)
    files = [reporting.write_table(reporting.rewire_table(trials, net.asset_ids),
                                   args.out / "rewire.csv")]
    worst = analysis.worst_hit_assets(trials, net.asset_ids)
    summary = [f"Trials: {len(trials)}",
               f"Distinct worst-hit assets: {len(set(worst))} ({', '.join(sorted(set(worst)))})"]
    return Outcome(files, {"alpha": params.alpha, "beta": params.beta, "trials": args.trials,
                           "mode": args.mode, "shock_bank": shock.target_bank,
                           "shock": shock.magnitude}, _config_dict(cfg), summary)


def cmd_calibrate(args) -> Outcome:
    panel = calibration.load_panel(args.panel, smoothing_days=args.smoothing)
    estimates = calibration.estimate_gamma(panel, window_days=args.window, step_days=args.step,
                                           floor=args.floor)
    files = [reporting.write_table(calibration.gamma_table(estimates), args.out / "gamma.csv")]
    regimes = [calibration.classify_regime(e).value for e in estimates]
    summary = [f"Windows: {len(estimates)}"]
    summary += [f"{r}: {regimes.count(r)}" for r in sorted(set(regimes))]
    return Outcome(files, {"window_days": args.window, "step_days": args.step,
                           "floor": args.floor, "smoothing_days": args.smoothing}, None, summary)


def cmd_generate(args) -> Outcome:
    spec = netgen.GenSpec(n_banks=args.n_banks, n_assets=args.n_assets, log_mean=args.log_mean,
                          log_sigma=args.log_sigma, sparsity=args.sparsity,
                          equity_multiple=args.equity_multiple, seed=args.seed,
                          weights=args.weights, pareto_shape=args.pareto_shape)
    net = netgen.generate(spec)
    files = list(save_network(net, args.out / "holdings.csv", args.out / "banks.csv"))
    files.append(reporting.network_report(net, args.out / "network_report.txt"))
    summary = [f"{net.n_banks} banks x {net.n_assets} assets",
               f"Holdings: {int(np.count_nonzero(net.weights))}"]
    params = {k: getattr(spec, k) for k in spec.__dataclass_fields__}
    params["equity_multiple"] = list(spec.equity_multiple)
    return Outcome(files, params, None, summary)


def cmd_replay(args) -> int:
    manifest = reporting.read_manifest(args.manifest)
    argv = list(manifest.argv)
    if args.out is not None:
        argv += ["--out", str(args.out)]
    logger.info("Replaying '%s' from %s", manifest.command, args.manifest)
    return main(argv)


COMMANDS = {
    "simulate": cmd_simulate,
    "bankrank": cmd_bankrank,
    "phase": cmd_phase,
    "quadrants": cmd_quadrants,
    "rewire": cmd_rewire,
    "calibrate": cmd_calibrate,
    "generate": cmd_generate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="run_contagion.py",
        description="Bank-asset contagion dynamics: simulation, BankRank, phase diagrams, calibration.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common, network, shock = _common_options(), _network_options(), _shock_options()

    p = sub.add_parser("simulate", parents=[common, network, shock], help="one shocked run")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--stride", type=int, default=1, help="keep every n-th step in the trajectory")

    p = sub.add_parser("bankrank", parents=[common, network, shock], help="BankRank of every bank")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--no-fortify", action="store_true",
                   help="skip raising banks that fail under the baseline trigger")

    p = sub.add_parser("phase", parents=[common, network, shock], help="(alpha, beta) phase diagram")
    p.add_argument("--alpha", type=parse_range, required=True, help="value or start:stop:step")
    p.add_argument("--beta", type=parse_range, required=True, help="value or start:stop:step")

    p = sub.add_parser("quadrants", parents=[common, network, shock],
                       help="all four sign combinations of alpha and beta")
    p.add_argument("--magnitude", type=float, default=0.5, help="|alpha| = |beta|")

    p = sub.add_parser("rewire", parents=[common, network, shock], help="randomly rewired networks")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--mode", choices=["column", "global"], default="column")

    p = sub.add_parser("calibrate", parents=[common], help="estimate gamma from a price panel")
    p.add_argument("--panel", type=Path, required=True,
                   help="CSV date,series_id,series_type,value")
    p.add_argument("--window", type=int, default=84, help="window length in observations")
    p.add_argument("--step", type=int, default=1, help="window advance in observations")
    p.add_argument("--floor", type=float, default=1e-3, help="minimum |equity return| per window")
    p.add_argument("--smoothing", type=int, default=None, help="moving-average length")

    p = sub.add_parser("generate", parents=[common], help="synthetic GIIPS-like network")
    p.add_argument("--n-banks", type=int, default=121)
    p.add_argument("--n-assets", type=int, default=5)
    p.add_argument("--log-mean", type=float, default=6.0)
    p.add_argument("--log-sigma", type=float, default=2.0)
    p.add_argument("--sparsity", type=float, default=0.4)
    p.add_argument("--equity-multiple", type=_pair, default=(0.05, 1.0), help="LOW:HIGH")
    p.add_argument("--weights", choices=["lognormal", "pareto"], default="lognormal")
    p.add_argument("--pareto-shape", type=float, default=1.2)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest", type=Path, help="manifest.json or its directory")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--quiet", action="store_true")
    return parser


def _print_banner(command: str, out: Path, outcome: Outcome):
    print("=" * 80)
    print(f"CONTAGION - {command}")
    print("=" * 80)
    print(f"\n✓ Output directory: {out}")
    for path in outcome.files:
        print(f"✓ {path}")
    print("\nSummary:")
    for line in outcome.summary:
        print(f"  • {line}")
    print()


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = attach_negative_values(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "replay":
        try:
            return cmd_replay(args)
        except (ContagionError, OSError, ValueError) as e:
            logger.error("%s", e)
            return EXIT_INPUT

    if args.jobs < 1:
        logger.error("--jobs must be at least 1")
        return EXIT_USAGE
    if args.out is None:
        args.out = Path(f"{args.command}_results")
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        outcome = COMMANDS[args.command](args)
        manifest = reporting.build_manifest(args.command, argv, outcome.params, outcome.config,
                                            _inputs(args), args.seed, outcome.files)
        manifest_path = reporting.write_manifest(manifest, args.out)
    except IntegrationError as e:
        logger.error("%s", e)
        return EXIT_INTEGRATION
    except (ContagionError, OSError) as e:
        logger.error("%s", e)
        return EXIT_INPUT

    if not args.quiet:
        outcome.files.append(manifest_path)
        _print_banner(args.command, args.out, outcome)
    return EXIT_OK

"""Command-line front end.

Examples
--------
    causaljam table --out tables.csv
    causaljam curve --n 500 --step 0.005 --out curve.csv
    causaljam bounds --n 100 --snr-inv 0.25 --tau 0.05
    causaljam simulate-codec --n 64 --theta 8 --snr-inv 0.2 --strategy chunk1 --trials 1000
    causaljam simulate-attack --toy --snr-inv 0.6 --trials 10000

Every flag can also be given in a TOML file passed with ``--config``; keys
are flag names with dashes replaced by underscores.  Command-line values
take precedence over the file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from typing import List, Optional, Sequence

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from . import __version__
from .attack import DEFAULT_EPSILON, DEFAULT_TAU, NoAttack, plan_attack
from .bounds import (
    compute_curve,
    compute_lower_bound,
    compute_slack_bound,
    compute_upper_bar,
    compute_upper_tilde,
    reference_oblivious,
    solve_chunked_signal,
)
from .codec import (
    ConfigurationError,
    budget_reference,
    generate_codebook,
    load_codebook,
    repetition_pair,
    save_codebook,
)
from .model import BlockConfig, ChannelParams, SolverConfig
from .sim import AdversaryStrategy, default_workers, run_attack_trials, run_codec_trials
from .waterfill import InfeasibleBudget

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3

TABLE_N = (50, 100, 150, 200)
TABLE_RATIOS = (0.1, 0.2, 0.3, 0.4)

log = logging.getLogger("causaljam")


class ConfigError(ValueError):
    """Invalid command-line or configuration-file input."""


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6g}"
    return str(v)


def _emit(text: str, out: Optional[str]) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _rows_text(header: Sequence[str], rows: List[Sequence], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([dict(zip(header, r)) for r in rows], indent=2) + "\n"
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _solver(args) -> SolverConfig:
    return SolverConfig(tau=args.tau, gamma=args.gamma, snr_grid_step=args.step,
                        strict_first_crossing=args.strict_first_crossing, workers=args.workers)


def _ratios(args, default=None) -> List[float]:
    vals = args.snr_inv if args.snr_inv is not None else default
    if not vals:
        raise ConfigError("at least one --snr-inv value is required")
    for r in vals:
        if not 0 < r < 1:
            raise ConfigError(f"N/P values must lie in (0, 1), got {r}")
    return list(vals)


def _ns(args, default=None) -> List[int]:
    vals = args.n if args.n is not None else default
    if not vals:
        raise ConfigError("at least one --n value is required")
    for n in vals:
        if n < 1:
            raise ConfigError(f"n must be a positive integer, got {n}")
    return list(vals)


_KINDS = {"lower": compute_lower_bound, "upper_bar": compute_upper_bar, "upper_tilde": compute_upper_tilde}
TABLE_HEADER = ("bound_kind", "n", "N_over_P", "value", "grid_step", "runtime_ms")


def _table_rows(ns, ratios, cfg, kinds, theta=None, threshold="n") -> List[tuple]:
    rows = []
    for kind in kinds:
        for n in ns:
            for r in ratios:
                params = ChannelParams.from_ratio(r)
                t0 = time.perf_counter()
                if kind in _KINDS:
                    value = _KINDS[kind](params, n, cfg).value
                elif kind == "tau_slack":
                    value = compute_slack_bound(params, n, SolverConfig(tau=cfg.tau, snr_grid_step=cfg.snr_grid_step)).value
                elif kind == "gamma_slack":
                    block = BlockConfig.from_n(n, theta)
                    value = compute_slack_bound(params, n, SolverConfig(gamma=cfg.gamma, snr_grid_step=cfg.snr_grid_step),
                                                block=block).value
                elif kind == "oblivious":
                    value = reference_oblivious(params, threshold)
                else:  # pragma: no cover
                    raise ConfigError(kind)
                rows.append((kind, n, r, float(value), cfg.snr_grid_step,
                             (time.perf_counter() - t0) * 1000.0))
    return rows


def cmd_table(args) -> int:
    """Tables of the three bounds over ``n`` and ``N/P``."""
    cfg = _solver(args)
    rows = _table_rows(_ns(args, TABLE_N), _ratios(args, TABLE_RATIOS), cfg,
                       ("lower", "upper_bar", "upper_tilde"))
    _emit(_rows_text(TABLE_HEADER, rows, args.format), args.out)
    return EXIT_OK


def cmd_bounds(args) -> int:
    """All bounds (plus slack variants when requested) for given parameters."""
    cfg = _solver(args)
    kinds = ["lower", "upper_bar", "upper_tilde", "oblivious"]
    if args.tau > 0:
        kinds.append("tau_slack")
    if args.gamma > 0:
        kinds.append("gamma_slack")
    ratios = _ratios(args)
    rows = _table_rows(_ns(args), ratios, cfg, kinds, args.theta, args.oblivious_threshold)
    _emit(_rows_text(TABLE_HEADER, rows, args.format), args.out)
    return EXIT_OK


CURVE_HEADER = ("N_over_P", "lower", "upper_bar", "upper_tilde", "oblivious")


def cmd_curve(args) -> int:
    """Sweep ``N/P`` from ``step`` to just below 1/2 at a fixed block length."""
    if not args.step > 0:
        raise ConfigError("--step must be positive")
    n = _ns(args, [500])
    if len(n) != 1:
        raise ConfigError("curve takes a single --n")
    cfg = _solver(args)
    rows = compute_curve(n[0], args.step, cfg, args.oblivious_threshold)
    _emit(_rows_text(CURVE_HEADER, rows, args.format), args.out)
    return EXIT_OK


def _params_one(args, default: float) -> ChannelParams:
    ratios = _ratios(args, [default])
    if len(ratios) != 1:
        raise ConfigError("simulations take a single --snr-inv")
    return ChannelParams(args.signal_power, ratios[0] * args.signal_power)


def _codec_setup(args):
    params = _params_one(args, 0.2)
    if args.codebook:
        cb = load_codebook(args.codebook)
    else:
        n = _ns(args, [64])[0]
        block = BlockConfig.from_n(n, args.theta)
        cfg = _solver(args)
        _, phi = solve_chunked_signal(params, block.K, block.theta, args.gamma, cfg)
        W = args.messages if args.messages else max(1, int(math.floor(2 ** (n * args.rate))))
        cb = generate_codebook(params, block, phi, args.beta, W, args.seed)
    if args.save_codebook:
        save_codebook(cb, args.save_codebook)
    return params, cb


def cmd_simulate_codec(args) -> int:
    """Monte-Carlo run of the list-and-check decoder against a strategy."""
    params, cb = _codec_setup(args)
    ref = budget_reference(cb.phi, params, cb.block, args.delta)
    nN = cb.n * params.noise_power
    if args.strategy == "none":
        strategy = AdversaryStrategy("none")
    elif args.strategy == "chunk1":
        strategy = AdversaryStrategy.all_in_chunk(0, nN, cb.block.K)
    else:
        plan = plan_attack(cb.average_powers(), params, args.tau_attack, args.epsilon)
        strategy = AdversaryStrategy("babble_only" if args.strategy == "babble" else "scaled_babble_push",
                                     plan=plan)
    report = run_codec_trials(cb, strategy, args.trials, args.seed, reference=ref,
                              randomize=args.random_tie_break, workers=args.workers)
    report.config.update(N_over_P=params.noise_power / params.signal_power, P=params.signal_power)
    _emit(report.to_json() + "\n", args.out)
    return EXIT_OK


def cmd_simulate_attack(args) -> int:
    """Monte-Carlo run of the two-stage attack."""
    if args.toy:
        params = _params_one(args, 0.6)
        n = _ns(args, [2])[0]
        cb = repetition_pair(n, params.signal_power)
        ref = None
    else:
        params, cb = _codec_setup(args)
        ref = budget_reference(cb.phi, params, cb.block, args.delta) if not params.plotkin_regime else None
    plan = plan_attack(cb.average_powers(), params, args.tau_attack, args.epsilon)
    report = run_attack_trials(cb, plan, args.trials, args.seed, reference=ref, workers=args.workers)
    report.config.update(N_over_P=params.noise_power / params.signal_power, P=params.signal_power,
                         rate=cb.rate, upper_bar=compute_upper_bar(params, cb.n).value)
    _emit(report.to_json() + "\n", args.out)
    return EXIT_OK


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML file with default values for any flag")
    p.add_argument("--n", type=int, nargs="+", help="block length(s)")
    p.add_argument("--snr-inv", type=float, nargs="+", help="N/P value(s) in (0, 1)")
    p.add_argument("--signal-power", type=float, default=1.0, help="P (default 1)")
    p.add_argument("--step", type=float, default=0.005, help="grid step of the power split and the N/P sweep")
    p.add_argument("--tau", type=float, default=0.0, help="converse slack for the tau_slack bound")
    p.add_argument("--gamma", type=float, default=0.0, help="achievability slack of the chunked problem")
    p.add_argument("--theta", type=int, default=None, help="chunk length (default ~sqrt(n))")
    p.add_argument("--delta", type=float, default=0.1, help="decoder reference offset fraction")
    p.add_argument("--beta", type=int, default=2, help="log2 of candidates per (message, chunk)")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--strict-first-crossing", action="store_true",
                   help="log inner minimizers that meet the energy condition early")
    p.add_argument("--oblivious-threshold", choices=("n", "2n"), default="n",
                   help="oblivious capacity positive for P>N ('n') or P>=2N ('2n')")
    p.add_argument("--workers", type=int, default=None, help="worker processes (env CAUSALJAM_WORKERS)")
    p.add_argument("-v", "--verbose", action="store_true")


def _simulation(p: argparse.ArgumentParser) -> None:
    p.add_argument("--messages", type=int, default=None, help="number of messages (overrides --rate)")
    p.add_argument("--rate", type=float, default=6 / 64, help="rate in bits per channel use")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="babble variance margin")
    p.add_argument("--tau-attack", type=float, default=DEFAULT_TAU, help="slack used by the attack plan")
    p.add_argument("--codebook", default=None, help="load a saved codebook instead of generating one")
    p.add_argument("--save-codebook", default=None, help="write the codebook used (.csv or binary)")
    p.add_argument("--random-tie-break", action="store_true", help="pick a random post-list member")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causaljam", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("bounds", cmd_bounds, "bounds for given n and N/P"),
        ("table", cmd_table, "tables of the three bounds"),
        ("curve", cmd_curve, "bound curves over N/P"),
        ("simulate-codec", cmd_simulate_codec, "decoder error rates under a jamming strategy"),
        ("simulate-attack", cmd_simulate_attack, "empirical behaviour of the two-stage attack"),
    ]
    for name, func, help_ in specs:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name.startswith("simulate"):
            _simulation(p)
        if name == "simulate-codec":
            p.add_argument("--strategy", choices=("none", "chunk1", "babble", "attack"), default="none")
        if name == "simulate-attack":
            p.add_argument("--toy", action="store_true", help="two-message repetition code")
        p.set_defaults(func=func)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config:
        with open(args.config, "rb") as fh:
            data = tomllib.load(fh)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(k.replace("-", "_") for k in data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in data.items()})
        args = parser.parse_args(argv)
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_CONFIG if exc.code else EXIT_OK
    except (ConfigError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"causaljam: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers is None:
        args.workers = default_workers()
    try:
        return args.func(args)
    except (NoAttack, InfeasibleBudget) as exc:
        print(f"causaljam: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ConfigurationError, ValueError) as exc:
        print(f"causaljam: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

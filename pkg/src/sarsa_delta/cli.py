"""Command-line entry point: ``sarsa-delta {run,sweep,verify,oracle}``.

Exit codes: 0 success, 1 usage or config error, 2 verification failure,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig, load_config
from .errors import ConfigError, DivergenceError, NumericalError
from .mdp import exact_q
from .runner import OUT_ENV, SWEEP_AXES, mean_final_error, run, sweep
from .verify import SUITES, verify

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_DIVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, metavar="PATH", help="experiment JSON")
    p.add_argument("--out", metavar="DIR", help=f"output directory (else ${OUT_ENV}, else the config's out_dir)")
    p.add_argument("--Z", type=int, help="replace the ladder by a generated one with Z+1 levels")
    p.add_argument("--gamma-max", type=float, help="largest discount of the generated ladder")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sarsa-delta", description="Delta-decomposed TD learners and checks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one experiment for each seed")
    _add_common(p)
    p.add_argument("--seed", type=int, help="run only this seed")

    p = sub.add_parser("sweep", help="run an experiment across values of one parameter")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", default="", help="comma-separated values; 'k' accepts 'a-b-c' per-level lists")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("verify", help="run a seeded property suite")
    p.add_argument("suite", choices=(*SUITES, "all"))

    p = sub.add_parser("oracle", help="dump exact action values at every ladder discount")
    _add_common(p)
    return parser


def _apply_ladder_flags(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.Z is None and args.gamma_max is None:
        return cfg
    old = dict(cfg.ladder or {})
    if args.Z is None and "Z" not in old:
        raise ConfigError("--gamma-max needs --Z or a generated ladder in the config")
    lad = {key: old[key] for key in ("alpha", "lambda", "gamma0", "gamma_max") if key in old}
    lad["Z"] = args.Z if args.Z is not None else int(old["Z"])
    if args.gamma_max is not None:
        lad["gamma_max"] = args.gamma_max
    new = replace(cfg, ladder=lad)
    new.validate()
    return new


def _parse_values(axis: str, text: str) -> list:
    out = []
    for tok in filter(None, (t.strip() for t in text.split(","))):
        if axis == "k" and "-" in tok:
            out.append([int(x) for x in tok.split("-")])
        elif axis in ("Z", "k", "n"):
            out.append(int(tok))
        else:
            out.append(float(tok))
    return out


def _cmd_run(cfg: ExperimentConfig, args) -> int:
    seeds = [args.seed] if args.seed is not None else cfg.seeds
    for seed in seeds:
        res = run(cfg, seed, args.out)
        verdicts = " ".join(f"{k}={v}" for k, v in res.verdicts.items())
        print(f"seed={seed} hash={res.config_hash} final_error={res.final_error:.6g} "
              f"wall={res.wall_clock:.2f}s -> {res.path} {verdicts}".rstrip())
    return EXIT_OK


def _cmd_sweep(cfg: ExperimentConfig, args) -> int:
    values = _parse_values(args.axis, args.values)
    pairs = sweep(cfg, args.axis, values, args.out, jobs=max(1, args.jobs))
    for label, err in mean_final_error(pairs).items():
        print(f"{args.axis}={label} mean_final_error={err:.6g}")
    print(f"{len(pairs)} runs")
    return EXIT_OK


def _cmd_oracle(cfg: ExperimentConfig, args) -> int:
    mdp = cfg.build_mdp()
    policy = cfg.build_policy(mdp)
    if policy is None:
        raise ConfigError("oracle needs a fixed policy, not 'greedy'")
    gammas = cfg.build_ladder().gammas if cfg.ladder is not None else [cfg.effective_gamma()]
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["gamma", "s", "a", "q"])
    for g in gammas:
        q = exact_q(mdp, policy, g)
        for s in range(mdp.n_states):
            for a in range(mdp.n_actions):
                writer.writerow([repr(float(g)), s, a, repr(float(q[s, a]))])
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "verify":
            checks = verify(args.suite)
            for c in checks:
                print(c.line())
            return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY
        cfg = _apply_ladder_flags(load_config(args.config), args)
        if args.out is not None:
            Path(args.out).mkdir(parents=True, exist_ok=True)
        return {"run": _cmd_run, "sweep": _cmd_sweep, "oracle": _cmd_oracle}[args.command](cfg, args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, NumericalError) as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())

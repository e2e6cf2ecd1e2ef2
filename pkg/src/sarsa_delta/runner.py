"""Dispatch an :class:`ExperimentConfig` to its learner and persist tidy CSV.

Every CSV starts with a ``# config_hash=... learner=... seed=... schema=N`` comment line
followed by an RFC-4180 header row.  Floats are written with ``repr`` so a
repeated ``(config, seed)`` reproduces the file byte for byte.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import actor_critic, linear, phased, tabular
from .config import ExperimentConfig
from .errors import ConfigError
from .ladder import TimescaleLadder, default_lambdas, horizon_k
from .mdp import TabularPolicy, exact_q, make_rng
from .phased import oracle_w

OUT_ENV = "SARSA_DELTA_OUT"
CSV_SCHEMA = 1
SWEEP_AXES = ("Z", "k", "n", "alpha", "lambda")


@dataclass
class RunResult:
    config_hash: str
    seed: int
    header: list[str]
    rows: list[list] = field(default_factory=list)
    final_error: float = float("nan")
    wall_clock: float = 0.0
    verdicts: dict = field(default_factory=dict)
    path: Path | None = None


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class _CsvSink:
    """Collects rows and, if given a path, streams them to disk as they arrive."""

    def __init__(self, path: Path | None, header: list[str], preamble: str):
        self.header = header
        self.rows: list[list] = []
        self._fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", newline="")
            self._fh.write(preamble + "\n")
            self._writer = csv.writer(self._fh, lineterminator="\n")
            self._writer.writerow(header)

    def write(self, row: list) -> None:
        self.rows.append(row)
        if self._fh is not None:
            self._writer.writerow([_fmt(x) for x in row])
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _resolve_out(cfg: ExperimentConfig, out_dir) -> Path | None:
    if out_dir is False:
        return None
    return Path(out_dir or os.environ.get(OUT_ENV) or cfg.out_dir)


def run(cfg: ExperimentConfig, seed: int, out_dir=None) -> RunResult:
    """Run one seeded experiment.  ``out_dir=False`` keeps results in memory only."""
    start = time.perf_counter()
    cfg.validate()
    base = _resolve_out(cfg, out_dir)
    path = None if base is None else base / f"{cfg.learner}_seed{seed}.csv"
    h = cfg.hash()
    preamble = f"# config_hash={h} learner={cfg.learner} seed={seed} schema={CSV_SCHEMA}"
    header, body = _DISPATCH[cfg.learner](cfg, seed)
    sink = _CsvSink(path, header, preamble)
    try:
        summary = {}
        for row in body(summary):
            sink.write(row)
    finally:
        sink.close()
    return RunResult(
        config_hash=h,
        seed=seed,
        header=header,
        rows=sink.rows,
        final_error=float(summary.get("final_error", float("nan"))),
        wall_clock=time.perf_counter() - start,
        verdicts=summary.get("verdicts", {}),
        path=path,
    )


# -- per-learner bodies: each returns (header, generator(summary) -> rows) ------------

def _tabular(cfg: ExperimentConfig, seed: int):
    mdp = cfg.build_mdp()
    policy = cfg.build_policy(mdp)
    delta = cfg.learner != "baseline-sarsa"
    ladder = cfg.build_ladder() if delta else None
    gamma = ladder.gamma if delta else cfg.effective_gamma()
    fixed_oracle = exact_q(mdp, policy, gamma) if policy is not None else None
    header = ["step", "sup_error"]

    def oracle_for(q):
        if fixed_oracle is not None:
            return fixed_oracle
        probs = np.full(q.shape, cfg.epsilon / q.shape[1])
        probs[np.arange(q.shape[0]), np.argmax(q, axis=1)] += 1.0 - cfg.epsilon
        return exact_q(mdp, TabularPolicy(probs), gamma)

    def body(summary):
        rows = []

        def log(t, q):
            rows.append([t, float(np.max(np.abs(q - oracle_for(q))))])

        lcfg = tabular.LearnerConfig(
            steps=cfg.steps, policy=policy, epsilon=cfg.epsilon, schedule=cfg.schedule,
            decay_power=cfg.decay_power, bootstrap=cfg.bootstrap,
            max_episode_steps=cfg.max_episode_steps if mdp.terminal_states else None,
            log_every=cfg.log_every, diverge_at=_guard(mdp, gamma),
        )
        rng = make_rng(seed)
        if delta:
            dt, trace = tabular.run_sarsa_delta(
                mdp, ladder, lcfg, rng, multistep=cfg.learner == "sarsa-delta-multistep")
            q_final = tabular.reconstruct_q(dt, ladder.Z)
        else:
            q_final, trace = tabular.run_baseline_sarsa(mdp, gamma, cfg.alpha, lcfg, rng)
        for t, q in zip(trace.steps, trace.q):
            log(t, q)
        if not trace.steps or trace.steps[-1] != cfg.steps:
            log(cfg.steps, q_final)
        yield from rows
        summary["final_error"] = rows[-1][1]

    return header, body


def _guard(mdp, gamma: float) -> float:
    r_max = max(float(np.max(np.abs(mdp.reward))), 1e-12)
    return 10.0 * r_max / (1.0 - gamma)


def _phased(cfg: ExperimentConfig, seed: int):
    mdp = cfg.build_mdp()
    policy = cfg.build_policy(mdp)
    if policy is None:
        raise ConfigError("phased learners evaluate a fixed policy; 'greedy' is not allowed")
    delta_mode = cfg.learner == "phased-delta"
    if delta_mode:
        ladder = cfg.build_ladder()
        header = ["phase"] + [f"delta_z{z}" for z in range(ladder.n_scales)] + [
            "delta_sum", "delta_q", "bound_rhs", "holds"]
        kwargs = {"ladder": ladder}
    else:
        header = ["phase", "delta_q", "bound_rhs", "holds"]
        kwargs = {"gamma": cfg.effective_gamma(), "k": int(cfg.k)}

    def body(summary):
        recs = phased.run_phased(mdp, policy, cfg.n, cfg.phases, cfg.delta, make_rng(seed), **kwargs)
        for rec in recs:
            rep = rec.report
            if delta_mode:
                yield [rec.phase, *rep.delta_w, rep.observed, rep.delta_q, rep.bound_rhs, rep.holds]
            else:
                yield [rec.phase, rep.delta_q, rep.bound_rhs, rep.holds]
        summary["final_error"] = recs[-1].report.observed
        summary["verdicts"] = {"bound_holds_all_phases": all(r.report.holds for r in recs[1:])}

    return header, body


def _linear(cfg: ExperimentConfig, seed: int):
    mdp = cfg.build_mdp()
    policy = cfg.build_policy(mdp)
    if policy is None:
        raise ConfigError("td-lambda learners evaluate a fixed policy; 'greedy' is not allowed")
    delta_mode = cfg.learner == "td-lambda-delta"
    if delta_mode:
        ladder = cfg.build_ladder()
        lam = cfg.lambda_ if cfg.lambda_ is not None else ladder.lambdas[-1]
    else:
        g = cfg.effective_gamma()
        lam = float(cfg.lambda_)
        ladder = TimescaleLadder([g], [horizon_k(g)], [lam], [cfg.alpha])
    T = cfg.T or linear.default_truncation(ladder)
    oracle = exact_q(mdp, policy, ladder.gamma)
    header = ["step", "sup_error"]

    def body(summary):
        rows = []
        model = linear.LinearDeltaModel.zeros(
            linear.FeatureMap.one_hot(mdp.n_states, mdp.n_actions), ladder)
        linear.run_linear(
            mdp, policy, model, cfg.steps, make_rng(seed), delta=delta_mode,
            alpha=cfg.alpha, lam=lam, T=T, schedule=cfg.schedule, decay_power=cfg.decay_power,
            max_episode_steps=cfg.max_episode_steps,
            callback=lambda t, q: rows.append([t, float(np.max(np.abs(q - oracle)))]),
            log_every=cfg.log_every,
        )
        final = model.q_table() if delta_mode else model.mono_table()
        rows.append([cfg.steps, float(np.max(np.abs(final - oracle)))])
        yield from rows
        summary["final_error"] = rows[-1][1]

    return header, body


def _alg2(cfg: ExperimentConfig, seed: int):
    mdp = cfg.build_mdp()
    ladder = cfg.build_ladder()
    header = ["episode", "return", "undiscounted_return", "length", "mean_abs_adv"] + [
        f"critic_loss_z{z}" for z in range(ladder.n_scales)]

    def body(summary):
        res = actor_critic.run_alg2(
            mdp, ladder, int(cfg.T), int(cfg.steps), seed,
            alpha_omega=cfg.alpha_omega, entropy_coef=cfg.entropy_coef,
            max_episode_steps=cfg.max_episode_steps, baseline=cfg.baseline,
        )
        for e in res.episodes:
            yield [e.episode, e.ret, e.undiscounted, e.length, e.mean_abs_adv, *e.critic_loss]
        opt = actor_critic.optimal_return(mdp, ladder.gamma)
        summary["final_error"] = opt - res.final_mean_return()
        summary["verdicts"] = {"final_mean_return": res.final_mean_return(), "optimal_return": opt}

    return header, body


_DISPATCH = {
    "baseline-sarsa": _tabular,
    "sarsa-delta-1step": _tabular,
    "sarsa-delta-multistep": _tabular,
    "phased-td": _phased,
    "phased-delta": _phased,
    "td-lambda": _linear,
    "td-lambda-delta": _linear,
    "alg2": _alg2,
}


# -- sweeps -------------------------------------------------------------------------

def with_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with one sweepable field set to ``value``."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"cannot sweep {axis!r}; sweepable axes: {', '.join(SWEEP_AXES)}")
    ladder = dict(cfg.ladder) if cfg.ladder is not None else None
    changes = {}
    if axis == "Z":
        if ladder is None or "gammas" in ladder:
            raise ConfigError("sweeping Z needs a generated ladder ({'Z': ...})")
        ladder["Z"] = int(value)
        ladder.pop("ks", None)
        ladder.pop("lambdas", None)
    elif axis == "k":
        if cfg.learner == "phased-td":
            changes["k"] = int(value)
        elif ladder is not None:
            ladder["ks"] = list(value) if isinstance(value, (list, tuple)) else [int(value)] * (
                len(ladder["gammas"]) if "gammas" in ladder else int(ladder["Z"]) + 1)
        else:
            changes["k"] = int(value)
    elif axis == "n":
        changes["n"] = int(value)
    elif axis == "alpha":
        changes["alpha"] = float(value)
        if ladder is not None:
            ladder["alpha"] = float(value)
            ladder.pop("alphas", None)
    elif axis == "lambda":
        changes["lambda_"] = float(value)
        if ladder is not None:
            ladder["lambda"] = float(value)
            ladder.pop("lambdas", None)
    new = replace(cfg, ladder=ladder, **changes)
    new.validate()
    return new


def _run_job(args):
    cfg, seed, out = args
    return run(cfg, seed, out)


def sweep(
    cfg: ExperimentConfig,
    axis: str,
    values: Sequence,
    out_dir=None,
    jobs: int = 1,
) -> list[tuple[object, RunResult]]:
    """Run ``values x seeds``; writes ``sweep_<axis>.csv`` with one row per run."""
    variants = [(v, with_axis(cfg, axis, v)) for v in values]
    base = _resolve_out(cfg, out_dir)
    tasks = []
    for v, c in variants:
        sub = False if base is None else base / f"{axis}={_label(v)}"
        tasks.extend(((v, (c, s, sub)) for s in c.seeds))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_run_job, [t for _, t in tasks]))
    else:
        results = [_run_job(t) for _, t in tasks]
    pairs = [(v, r) for (v, _), r in zip(tasks, results)]
    if base is not None:
        base.mkdir(parents=True, exist_ok=True)
        with open(base / f"sweep_{axis}.csv", "w", newline="") as fh:
            fh.write(f"# config_hash={cfg.hash()} learner={cfg.learner} axis={axis} schema={CSV_SCHEMA}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["axis", "value", "seed", "config_hash", "final_error"])
            for v, r in pairs:
                w.writerow([axis, _label(v), r.seed, r.config_hash, _fmt(r.final_error)])
    return pairs


def _label(v) -> str:
    if isinstance(v, (list, tuple)):
        return "-".join(str(x) for x in v)
    return str(v)


def mean_final_error(pairs: Iterable[tuple[object, RunResult]]) -> dict:
    acc: dict = {}
    for v, r in pairs:
        acc.setdefault(_label(v), []).append(r.final_error)
    return {k: float(np.mean(x)) for k, x in acc.items()}

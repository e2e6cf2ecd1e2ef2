"""Tabular SARSA and SARSA(Delta): one-step and multi-step delta estimators.

The delta table holds ``W[z, s, a]`` with ``W_0 = Q_{gamma_0}`` and
``W_z = Q_{gamma_z} - Q_{gamma_{z-1}}``, so ``Q_{gamma_z}`` is the prefix sum
over the first z+1 levels.  W_0 learns as plain SARSA at ``gamma_0``; levels
z >= 1 bootstrap off the level below and see no direct reward on a single step.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DivergenceError
from .ladder import TimescaleLadder
from .mdp import MdpSpec, Step, TabularPolicy, pair_transition, step as env_step

ON_POLICY = "on-policy"
GREEDY = "greedy"


@dataclass
class DeltaTable:
    w: np.ndarray
    ladder: TimescaleLadder

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.ndim != 3 or self.w.shape[0] != self.ladder.n_scales:
            raise ValueError(
                f"delta table shape {self.w.shape} does not match {self.ladder.n_scales} timescales"
            )

    @classmethod
    def zeros(cls, ladder: TimescaleLadder, n_states: int, n_actions: int) -> "DeltaTable":
        return cls(np.zeros((ladder.n_scales, n_states, n_actions)), ladder)

    @property
    def Z(self) -> int:
        return self.ladder.Z

    def q_at(self, z: int, s: int, a: int) -> float:
        """``Q_{gamma_z}(s, a)`` as the running sum ``W_0 + ... + W_z``."""
        total = 0.0
        for u in range(z + 1):
            total += self.w[u, s, a]
        return total

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["z", "s", "a", "w"])
            for z, s, a in np.ndindex(self.w.shape):
                writer.writerow([z, s, a, repr(float(self.w[z, s, a]))])

    @classmethod
    def read_csv(cls, path, ladder: TimescaleLadder) -> "DeltaTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        S = 1 + max(int(r["s"]) for r in rows)
        A = 1 + max(int(r["a"]) for r in rows)
        table = cls.zeros(ladder, S, A)
        for r in rows:
            table.w[int(r["z"]), int(r["s"]), int(r["a"])] = float(r["w"])
        return table


def _check_z(dt: DeltaTable, z: int) -> None:
    if not 0 <= z <= dt.Z:
        raise IndexError(f"timescale index {z} outside 0..{dt.Z}")


def reconstruct_q(dt: DeltaTable, z: int) -> np.ndarray:
    """``Q_{gamma_z} = sum_{u <= z} W_u`` as a full table."""
    _check_z(dt, z)
    q = dt.w[0].copy()
    for u in range(1, z + 1):
        q += dt.w[u]
    return q


def baseline_sarsa_step(q: np.ndarray, tr: Step, gamma: float, alpha: float) -> np.ndarray:
    """In-place SARSA update ``Q(s,a) += alpha [r + gamma Q(s',a') - Q(s,a)]``."""
    s, a, r, s2, a2 = tr[:5]
    boot = 0.0 if _done(tr) else q[s2, a2]
    q[s, a] += alpha * (r + gamma * boot - q[s, a])
    return q


def _done(tr) -> bool:
    return len(tr) > 5 and bool(tr[5])


def delta_single_step_target(dt: DeltaTable, z: int, tr: Step) -> float:
    _check_z(dt, z)
    s, a, r, s2, a2 = tr[:5]
    gammas = dt.ladder.gammas
    if _done(tr):
        return float(r) if z == 0 else 0.0
    if z == 0:
        return r + gammas[0] * dt.w[0, s2, a2]
    return (gammas[z] - gammas[z - 1]) * dt.q_at(z - 1, s2, a2) + gammas[z] * dt.w[z, s2, a2]


def multi_step_targets(dt: DeltaTable, window: Sequence[Step]) -> list[float]:
    """Targets ``G^0 .. G^Z`` for the first pair of ``window``.

    ``window`` must hold ``k_Z`` chained transitions unless the episode ends
    inside it, in which case targets are truncated at the terminal step and
    bootstrap with zero.
    """
    lad = dt.ladder
    n = len(window)
    if n == 0 or (n < lad.k and not _done(window[-1])):
        raise ValueError(f"window of {n} transitions is shorter than k_Z = {lad.k}")
    targets = []
    for z in range(lad.n_scales):
        k = min(lad.ks[z], n)
        end = window[k - 1]
        bootstrap = not _done(end)
        g = lad.gammas[z]
        if z == 0:
            ret = 0.0
            for j in range(k):
                ret += g ** j * window[j].r
            if bootstrap:
                ret += g ** k * dt.w[0, end.s_next, end.a_next]
        else:
            gp = lad.gammas[z - 1]
            ret = 0.0
            for j in range(1, k):
                ret += (g ** j - gp ** j) * window[j].r
            if bootstrap:
                s2, a2 = end.s_next, end.a_next
                ret += (g ** k - gp ** k) * dt.q_at(z - 1, s2, a2) + g ** k * dt.w[z, s2, a2]
        targets.append(ret)
    return targets


def apply_targets(
    dt: DeltaTable, s: int, a: int, targets: Sequence[float], alphas: Sequence[float] | None = None
) -> DeltaTable:
    """Move each ``W_z(s, a)`` a step ``alpha_z`` toward ``G^z`` (in place)."""
    if len(targets) != dt.ladder.n_scales:
        raise ValueError(f"expected {dt.ladder.n_scales} targets, got {len(targets)}")
    alphas = dt.ladder.alphas if alphas is None else alphas
    for z, g in enumerate(targets):
        dt.w[z, s, a] += alphas[z] * (g - dt.w[z, s, a])
    return dt


def select_action(q: np.ndarray, s: int, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy on ``q[s]``; ties go to the lowest action id."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(q.shape[1]))
    return int(np.argmax(q[s]))


# -- online learners ------------------------------------------------------------

@dataclass
class LearnerConfig:
    """Shared knobs for the online tabular learners.

    ``policy`` fixes the behaviour policy (prediction); when it is ``None`` the
    learner acts epsilon-greedily on its own ``Q_{gamma_Z}`` estimate (control).
    ``bootstrap="greedy"`` replaces the bootstrap action by the argmax action.
    """

    steps: int
    policy: TabularPolicy | None = None
    epsilon: float = 0.1
    schedule: str = "constant"
    decay_power: float = 1.0
    bootstrap: str = ON_POLICY
    start: tuple[int, int] | None = None
    max_episode_steps: int | None = None
    log_every: int = 0
    diverge_at: float = np.inf


@dataclass
class LearnerTrace:
    steps: list[int] = field(default_factory=list)
    q: list[np.ndarray] = field(default_factory=list)
    episodes: int = 0


def _alpha_scale(cfg: LearnerConfig, visits: np.ndarray, s: int, a: int) -> float:
    if cfg.schedule == "constant":
        return 1.0
    if cfg.schedule == "visits":
        return (1.0 + visits[s, a]) ** (-cfg.decay_power)
    raise ValueError(f"unknown alpha schedule {cfg.schedule!r}")


def _act(cfg: LearnerConfig, q_fn, s: int, n_actions: int, rng) -> int:
    if cfg.policy is not None:
        return cfg.policy.sample(s, rng)
    if cfg.epsilon > 0.0 and rng.random() < cfg.epsilon:
        return int(rng.integers(n_actions))
    return int(np.argmax(q_fn(s)))


def _stream(mdp: MdpSpec, cfg: LearnerConfig, q_fn, rng) -> Iterable[Step]:
    """Transitions of the behaviour policy; episodes restart at ``cfg.start``.

    Yields ``None`` at each episode boundary so windows can be flushed.
    """
    start_s = 0 if cfg.start is None else cfg.start[0]
    taken = 0
    while taken < cfg.steps:
        s = start_s
        a = _act(cfg, q_fn, s, mdp.n_actions, rng) if cfg.start is None else cfg.start[1]
        ep_len = 0
        while taken < cfg.steps:
            r, s2 = env_step(mdp, s, a, rng)
            a2 = _act(cfg, q_fn, s2, mdp.n_actions, rng)
            done = mdp.is_terminal(s2)
            taken += 1
            ep_len += 1
            yield Step(s, a, r, s2, a2, done)
            if done or (cfg.max_episode_steps and ep_len >= cfg.max_episode_steps):
                yield None
                break
            s, a = s2, a2


def _greedy(tr: Step, q_fn) -> Step:
    if _done(tr):
        return tr
    return tr._replace(a_next=int(np.argmax(q_fn(tr.s_next))))


def run_baseline_sarsa(
    mdp: MdpSpec, gamma: float, alpha: float, cfg: LearnerConfig, rng: np.random.Generator
) -> tuple[np.ndarray, LearnerTrace]:
    q = np.zeros((mdp.n_states, mdp.n_actions))
    visits = np.zeros_like(q)
    trace = LearnerTrace()
    q_fn = lambda s: q[s]  # noqa: E731
    t = 0
    for tr in _stream(mdp, cfg, q_fn, rng):
        if tr is None:
            trace.episodes += 1
            continue
        if cfg.bootstrap == GREEDY:
            tr = _greedy(tr, q_fn)
        scale = _alpha_scale(cfg, visits, tr.s, tr.a)
        baseline_sarsa_step(q, tr, gamma, alpha * scale)
        visits[tr.s, tr.a] += 1
        if abs(q[tr.s, tr.a]) > cfg.diverge_at:
            raise DivergenceError(f"|Q| exceeded {cfg.diverge_at} at step {t}")
        t += 1
        if cfg.log_every and t % cfg.log_every == 0:
            trace.steps.append(t)
            trace.q.append(q.copy())
    return q, trace


def run_sarsa_delta(
    mdp: MdpSpec,
    ladder: TimescaleLadder,
    cfg: LearnerConfig,
    rng: np.random.Generator,
    multistep: bool = True,
) -> tuple[DeltaTable, LearnerTrace]:
    """Online SARSA(Delta).  With ``multistep=False`` every ``k_z`` is taken as 1."""
    ladder.check()
    if not multistep:
        ladder = ladder.replace(ks=[1] * ladder.n_scales)
    dt = DeltaTable.zeros(ladder, mdp.n_states, mdp.n_actions)
    visits = np.zeros((mdp.n_states, mdp.n_actions))
    trace = LearnerTrace()
    Z = ladder.Z
    q_fn = lambda s: reconstruct_q_row(dt, Z, s)  # noqa: E731
    window: deque[Step] = deque()
    t = 0

    def update_front():
        nonlocal t
        head = window[0]
        if multistep:
            targets = multi_step_targets(dt, window)
        else:
            targets = [delta_single_step_target(dt, z, head) for z in range(Z + 1)]
        scale = _alpha_scale(cfg, visits, head.s, head.a)
        apply_targets(dt, head.s, head.a, targets, [al * scale for al in ladder.alphas])
        visits[head.s, head.a] += 1
        window.popleft()
        if np.abs(dt.w[:, head.s, head.a]).max() > cfg.diverge_at:
            raise DivergenceError(f"|W| exceeded {cfg.diverge_at} at step {t}")
        t += 1
        if cfg.log_every and t % cfg.log_every == 0:
            trace.steps.append(t)
            trace.q.append(reconstruct_q(dt, Z))

    for tr in _stream(mdp, cfg, q_fn, rng):
        if tr is None:
            trace.episodes += 1
            # only a true terminal lets short windows bootstrap with zero
            while window and _done(window[-1]):
                update_front()
            window.clear()
            continue
        if cfg.bootstrap == GREEDY:
            tr = _greedy(tr, q_fn)
        window.append(tr)
        if len(window) >= ladder.k:
            update_front()
    return dt, trace


def reconstruct_q_row(dt: DeltaTable, z: int, s: int) -> np.ndarray:
    row = dt.w[0, s].copy()
    for u in range(1, z + 1):
        row += dt.w[u, s]
    return row


def expected_delta_backup(dt: DeltaTable, mdp: MdpSpec, policy: TabularPolicy) -> np.ndarray:
    """Single-step targets for every (z, s, a) with samples replaced by expectations over P and pi."""
    gammas = dt.ladder.gammas
    M = pair_transition(mdp, policy)
    S, A = mdp.n_states, mdp.n_actions
    q_prev = np.zeros(S * A)
    out = np.empty_like(dt.w)
    for z in range(dt.ladder.n_scales):
        w_next = M @ dt.w[z].ravel()
        if z == 0:
            out[0] = mdp.reward + gammas[0] * w_next.reshape(S, A)
        else:
            out[z] = ((gammas[z] - gammas[z - 1]) * (M @ q_prev) + gammas[z] * w_next).reshape(S, A)
        q_prev = q_prev + dt.w[z].ravel()
    return out

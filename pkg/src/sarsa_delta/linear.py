"""Linear TD(lambda) and TD(lambda, Delta) with truncated forward-view returns.

Both learners see the same transition stream.  At step t they update on the
pair ``(s_t, a_t)`` using the window of the next ``T`` transitions and their
current weights, so the two runs stay comparable step for step.

The delta TD error used here is
``d^z = (g_z - g_{z-1}) Q_{z-1}(s', a') + g_z W_z(s', a') - W_z(s, a)``;
the trailing term is read at the current pair, which is what makes the levels
sum to the ordinary TD error at ``gamma_Z``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .ladder import TimescaleLadder, horizon_k, lambda_threshold
from .mdp import (
    MdpSpec,
    Step,
    TabularPolicy,
    bellman_backup,
    make_rng,
    pair_transition,
    sample_trajectory,
    step as step_env,
)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Features ``phi(s, a)`` stored as rows of an ``(S*A, d)`` matrix."""

    matrix: np.ndarray
    n_actions: int

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __call__(self, s: int, a: int) -> np.ndarray:
        return self.matrix[s * self.n_actions + a]

    def values(self, theta: np.ndarray) -> np.ndarray:
        """``<theta, phi(s,a)>`` for all pairs, shaped ``(S, A)`` (or ``(..., S, A)``)."""
        out = np.asarray(theta) @ self.matrix.T
        return out.reshape(*out.shape[:-1], -1, self.n_actions)

    @classmethod
    def one_hot(cls, n_states: int, n_actions: int) -> "FeatureMap":
        return cls(np.eye(n_states * n_actions), n_actions)

    @classmethod
    def random(cls, n_states: int, n_actions: int, dim: int, rng: np.random.Generator) -> "FeatureMap":
        return cls(rng.uniform(-1.0, 1.0, (n_states * n_actions, dim)), n_actions)


@dataclass
class LinearDeltaModel:
    features: FeatureMap
    ladder: TimescaleLadder
    theta_z: np.ndarray
    theta_mono: np.ndarray

    @classmethod
    def zeros(cls, features: FeatureMap, ladder: TimescaleLadder) -> "LinearDeltaModel":
        d = features.dim
        return cls(features, ladder, np.zeros((ladder.n_scales, d)), np.zeros(d))

    def w_tables(self) -> np.ndarray:
        """``W_z`` for every level, shape ``(Z+1, S, A)``."""
        return self.features.values(self.theta_z)

    def q_table(self, z: int | None = None) -> np.ndarray:
        """``Q_{gamma_z}`` as the sum of the first z+1 delta tables (default z = Z)."""
        z = self.ladder.Z if z is None else z
        return self.features.values(self.theta_z[: z + 1].sum(axis=0))

    def mono_table(self) -> np.ndarray:
        return self.features.values(self.theta_mono)


@dataclass(frozen=True)
class Window:
    """A chained run of transitions stored column-wise."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    a_next: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.s)

    @classmethod
    def from_steps(cls, steps: Sequence[Step]) -> "Window":
        cols = list(zip(*steps)) if steps else [()] * 6
        return cls(
            np.asarray(cols[0], dtype=np.intp),
            np.asarray(cols[1], dtype=np.intp),
            np.asarray(cols[2], dtype=float),
            np.asarray(cols[3], dtype=np.intp),
            np.asarray(cols[4], dtype=np.intp),
            np.asarray(cols[5] if len(cols) > 5 else [False] * len(cols[0]), dtype=bool),
        )

    def head(self, T: int) -> "Window":
        """First ``T`` steps, cut after a terminal transition."""
        stop = T
        ends = np.flatnonzero(self.done[:T])
        if ends.size:
            stop = ends[0] + 1
        return Window(self.s[:stop], self.a[:stop], self.r[:stop],
                      self.s_next[:stop], self.a_next[:stop], self.done[:stop])


def _prepare(buffer, T: int) -> Window:
    w = buffer if isinstance(buffer, Window) else Window.from_steps(list(buffer))
    if len(w) < T and not (len(w) and w.done[: len(w)].any()):
        raise ValueError(f"window holds {len(w)} steps, need {T}")
    return w.head(T)


def td_errors(win: Window, q: np.ndarray, gamma: float) -> np.ndarray:
    """``r + gamma Q(s', a') - Q(s, a)`` per step, zero bootstrap past a terminal."""
    boot = np.where(win.done, 0.0, q[win.s_next, win.a_next])
    return win.r + gamma * boot - q[win.s, win.a]


def delta_td_errors(win: Window, w: np.ndarray, gammas: Sequence[float]) -> np.ndarray:
    """Per-level TD errors, shape ``(Z+1, len(win))``."""
    live = ~win.done
    out = np.empty((len(gammas), len(win)))
    nxt = np.where(live, w[0][win.s_next, win.a_next], 0.0)
    out[0] = win.r + gammas[0] * nxt - w[0][win.s, win.a]
    q_below = nxt.copy()  # Q_{gamma_{z-1}}(s', a')
    for z in range(1, len(gammas)):
        nxt = np.where(live, w[z][win.s_next, win.a_next], 0.0)
        out[z] = (gammas[z] - gammas[z - 1]) * q_below + gammas[z] * nxt - w[z][win.s, win.a]
        q_below = q_below + nxt
    return out


def _geometric_sum(errors: np.ndarray, ratio: float) -> float:
    return float(errors @ ratio ** np.arange(errors.shape[-1]))


def lambda_return(buffer, q: np.ndarray, gamma: float, lam: float, T: int) -> float:
    """Truncated ``G = Q(s_t, a_t) + sum_{k<T} (lam gamma)^k delta_{t+k}``."""
    win = _prepare(buffer, T)
    return float(q[win.s[0], win.a[0]]) + _geometric_sum(td_errors(win, q, gamma), lam * gamma)


def delta_lambda_return(buffer, model: LinearDeltaModel, z: int, T: int) -> float:
    """Truncated delta return ``G^z = W_z(s_t, a_t) + sum_{k<T} (lam_z g_z)^k d^z_{t+k}``."""
    lad = model.ladder
    if not 0 <= z <= lad.Z:
        raise IndexError(f"timescale index {z} outside 0..{lad.Z}")
    win = _prepare(buffer, T)
    w = model.w_tables()
    errs = delta_td_errors(win, w[: z + 1], lad.gammas[: z + 1])[z]
    return float(w[z][win.s[0], win.a[0]]) + _geometric_sum(errs, lad.lambdas[z] * lad.gammas[z])


def delta_lambda_returns(win: Window, w: np.ndarray, ladder: TimescaleLadder) -> np.ndarray:
    """All ``G^z`` at once for an already-prepared window."""
    errs = delta_td_errors(win, w, ladder.gammas)
    ratios = np.asarray(ladder.lambdas) * np.asarray(ladder.gammas)
    powers = ratios[:, None] ** np.arange(len(win))[None, :]
    return w[:, win.s[0], win.a[0]] + (errs * powers).sum(axis=1)


def tdlambda_update(model: LinearDeltaModel, buffer, alpha: float, gamma: float, lam: float, T: int) -> LinearDeltaModel:
    """``theta += alpha (G^{gamma,lambda} - Q(s_t, a_t)) phi(s_t, a_t)`` on the window head."""
    win = _prepare(buffer, T)
    q = model.mono_table()
    g = lambda_return(win, q, gamma, lam, T)
    s, a = win.s[0], win.a[0]
    model.theta_mono = model.theta_mono + alpha * (g - q[s, a]) * model.features(s, a)
    return model


def tdlambda_delta_update(
    model: LinearDeltaModel, buffer, T: int, alphas: Sequence[float] | None = None
) -> LinearDeltaModel:
    """``theta^z += alpha_z (G^z - W_z(s_t, a_t)) phi(s_t, a_t)`` for every level."""
    win = _prepare(buffer, T)
    alphas = np.asarray(model.ladder.alphas if alphas is None else alphas)
    w = model.w_tables()
    g = delta_lambda_returns(win, w, model.ladder)
    s, a = win.s[0], win.a[0]
    step = alphas * (g - w[:, s, a])
    model.theta_z = model.theta_z + step[:, None] * model.features(s, a)[None, :]
    return model


# -- equivalence and operator checks ------------------------------------------------

@dataclass
class EquivalenceReport:
    steps: int
    max_deviation: float
    max_td_error_gap: float
    max_return_gap: float
    deviations: np.ndarray


def default_truncation(ladder: TimescaleLadder) -> int:
    return 4 * horizon_k(ladder.gamma)


def check_equivalence(
    mdp: MdpSpec,
    policy: TabularPolicy,
    ladder: TimescaleLadder,
    steps: int,
    alpha: float,
    lambda_gamma_product: float,
    *,
    features: FeatureMap | None = None,
    T: int | None = None,
    seed: int = 0,
    enforce: bool = True,
) -> EquivalenceReport:
    """Run TD(lambda) and TD(lambda, Delta) side by side on one stream.

    Returns the largest ``||sum_z theta^z - theta^gamma||_inf`` seen, together
    with the largest gaps between ``sum_z d^z`` and ``d^gamma`` and between the
    summed delta returns and the monolithic return.  With ``enforce`` the
    matching conditions (equal step sizes, equal ``lambda_z gamma_z``) are
    required; switching it off allows counterexample runs.
    """
    ladder.check()
    if enforce:
        if any(a != alpha for a in ladder.alphas):
            raise ConfigError(f"equivalence needs alpha_z = {alpha} at every level, got {ladder.alphas}")
        prods = [l * g for l, g in zip(ladder.lambdas, ladder.gammas)]
        if any(abs(p - lambda_gamma_product) > 1e-12 for p in prods):
            raise ConfigError(f"equivalence needs lambda_z gamma_z = {lambda_gamma_product}, got {prods}")
        for lam, g in zip(ladder.lambdas, ladder.gammas):
            if lam >= lambda_threshold(g):
                raise ConfigError(f"lambda_z = {lam} at gamma_z = {g} is past the contraction range")
    if features is None:
        features = FeatureMap.one_hot(mdp.n_states, mdp.n_actions)
    T = default_truncation(ladder) if T is None else T
    gamma = ladder.gamma
    lam = lambda_gamma_product / gamma
    model = LinearDeltaModel.zeros(features, ladder)
    deviations = np.zeros(steps + 1)
    td_gap = ret_gap = 0.0
    if steps == 0:
        return EquivalenceReport(0, 0.0, 0.0, 0.0, deviations)
    rng = make_rng(seed)
    s0 = int(rng.integers(mdp.n_states))
    start = (s0, policy.sample(s0, rng))
    traj = sample_trajectory(mdp, policy, start, steps + T, rng, seed=seed)
    full = Window.from_steps(traj.steps)
    if full.done.any():
        raise ConfigError("equivalence runs need a continuing MDP")
    for t in range(steps):
        win = Window(full.s[t:t + T], full.a[t:t + T], full.r[t:t + T],
                     full.s_next[t:t + T], full.a_next[t:t + T], full.done[t:t + T])
        q = model.mono_table()
        w = model.w_tables()
        td_gap = max(td_gap, float(np.max(np.abs(
            delta_td_errors(win, w, ladder.gammas).sum(axis=0) - td_errors(win, q, gamma)))))
        g_mono = lambda_return(win, q, gamma, lam, T)
        g_delta = delta_lambda_returns(win, w, ladder)
        ret_gap = max(ret_gap, abs(float(g_delta.sum()) - g_mono))
        tdlambda_update(model, win, alpha, gamma, lam, T)
        tdlambda_delta_update(model, win, T)
        deviations[t + 1] = np.max(np.abs(model.theta_z.sum(axis=0) - model.theta_mono))
    return EquivalenceReport(steps, float(deviations.max()), td_gap, ret_gap, deviations)


def apply_T_lambda(mdp: MdpSpec, policy: TabularPolicy, q: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    """``T_lambda Q = Q + (I - lam gamma P^pi)^{-1} (TQ - Q)`` by direct solve."""
    if lam * gamma >= 1.0:
        raise ValueError(f"lambda * gamma = {lam * gamma} must be below 1")
    q = np.asarray(q, dtype=float)
    M = pair_transition(mdp, policy)
    resid = (bellman_backup(mdp, policy, q, gamma) - q).ravel()
    corr = np.linalg.solve(np.eye(mdp.n_pairs) - lam * gamma * M, resid)
    return q + corr.reshape(q.shape)


def contraction_coeff(gamma: float, lam: float) -> float:
    """Sup-norm Lipschitz constant ``gamma |1 - lam| / (1 - lam gamma)`` of ``T_lambda``."""
    if lam * gamma >= 1.0:
        raise ValueError(f"lambda * gamma = {lam * gamma} must be below 1")
    return gamma * abs(1.0 - lam) / (1.0 - lam * gamma)


def stated_contraction_coeff(gamma: float, lam: float) -> float:
    """The looser ``gamma / |1 - lam gamma|`` form, kept for side-by-side reports."""
    return gamma / abs(1.0 - lam * gamma)


def is_contraction_regime(gamma: float, lam: float) -> bool:
    return 0.0 <= lam < lambda_threshold(gamma)


@dataclass
class ContractionRow:
    gamma: float
    lam: float
    coeff: float
    stated_coeff: float
    max_ratio: float
    holds: bool


def contraction_sweep(
    gamma: float,
    lambdas: Sequence[float],
    n_pairs: int,
    seed: int = 0,
    n_states: int = 6,
    n_actions: int = 2,
    tol: float = 1e-10,
) -> list[ContractionRow]:
    """Observed ``||T Q1 - T Q2|| / ||Q1 - Q2||`` against the coefficient, over random MDPs."""
    from .mdp import random_mdp

    rows = []
    for i, lam in enumerate(lambdas):
        rng = make_rng(seed, i)
        coeff = contraction_coeff(gamma, lam)
        worst = 0.0
        for _ in range(n_pairs):
            mdp = random_mdp(n_states, n_actions, rng)
            policy = TabularPolicy(rng.dirichlet(np.ones(n_actions), n_states))
            q1 = rng.normal(0.0, 5.0, (n_states, n_actions))
            q2 = rng.normal(0.0, 5.0, (n_states, n_actions))
            num = np.max(np.abs(apply_T_lambda(mdp, policy, q1, gamma, lam)
                                - apply_T_lambda(mdp, policy, q2, gamma, lam)))
            worst = max(worst, num / np.max(np.abs(q1 - q2)))
        rows.append(ContractionRow(gamma, lam, coeff, stated_contraction_coeff(gamma, lam),
                                   worst, worst <= coeff + tol))
    return rows


def run_linear(
    mdp: MdpSpec,
    policy: TabularPolicy,
    model: LinearDeltaModel,
    steps: int,
    rng: np.random.Generator,
    *,
    delta: bool,
    alpha: float = 0.1,
    lam: float = 0.0,
    T: int | None = None,
    schedule: str = "constant",
    decay_power: float = 1.0,
    max_episode_steps: int | None = None,
    callback=None,
    log_every: int = 0,
) -> LinearDeltaModel:
    """Online forward-view TD(lambda) (``delta=False``) or TD(lambda, Delta).

    Updates lag the stream by ``T`` steps; episodes restart from a uniformly
    drawn state, and windows that hit a terminal are flushed with zero
    bootstrap.  ``callback(t, q_table)`` fires every ``log_every`` updates.
    """
    T = default_truncation(model.ladder) if T is None else T
    gamma = model.ladder.gamma
    visits = np.zeros((mdp.n_states, mdp.n_actions))
    base_alphas = np.asarray(model.ladder.alphas)
    buf: list[Step] = []
    t = 0

    def update(win: Window) -> None:
        nonlocal t
        s, a = int(win.s[0]), int(win.a[0])
        scale = 1.0 if schedule == "constant" else (1.0 + visits[s, a]) ** (-decay_power)
        if delta:
            tdlambda_delta_update(model, win, len(win), base_alphas * scale)
        else:
            tdlambda_update(model, win, alpha * scale, gamma, lam, len(win))
        visits[s, a] += 1
        t += 1
        if callback and log_every and t % log_every == 0:
            callback(t, model.q_table() if delta else model.mono_table())

    taken = 0
    while taken < steps:
        s = int(rng.integers(mdp.n_states))
        while mdp.is_terminal(s):
            s = int(rng.integers(mdp.n_states))
        a = policy.sample(s, rng)
        buf.clear()
        ep_len = 0
        done = False
        while taken < steps:
            r, s2 = step_env(mdp, s, a, rng)
            a2 = policy.sample(s2, rng)
            done = mdp.is_terminal(s2)
            buf.append(Step(s, a, r, s2, a2, done))
            taken += 1
            ep_len += 1
            if len(buf) >= T:
                update(Window.from_steps(buf))
                buf.pop(0)
            if done or (max_episode_steps and ep_len >= max_episode_steps):
                break
            s, a = s2, a2
        if done:
            for i in range(len(buf)):
                update(Window.from_steps(buf[i:]))
    return model

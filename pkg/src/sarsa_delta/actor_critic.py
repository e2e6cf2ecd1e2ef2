"""On-policy actor-critic with delta critics and a delta-GAE advantage.

Critics are linear delta models trained on truncated delta lambda-returns; the
actor is a softmax over linear action preferences, updated with the plain
policy-gradient step ``omega += alpha A grad log pi`` (no ratio clipping).
Updates for the pair visited T steps ago fire once T later transitions are
buffered; at the end of an episode the remaining pairs are flushed with
truncated windows.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DivergenceError
from .ladder import TimescaleLadder
from .linear import FeatureMap, LinearDeltaModel, Window, _prepare, delta_lambda_returns
from .mdp import MdpSpec, Step, make_rng, step as env_step

# Critics share the linear delta model's layout; the monolithic weights go unused.
CriticParams = LinearDeltaModel


@dataclass
class SoftmaxPolicyParams:
    """``pi(a|s) = softmax_a <omega, phi(s, a)>``."""

    omega: np.ndarray
    features: FeatureMap

    @classmethod
    def zeros(cls, features: FeatureMap) -> "SoftmaxPolicyParams":
        return cls(np.zeros(features.dim), features)

    def logits(self, s: int) -> np.ndarray:
        A = self.features.n_actions
        return self.features.matrix[s * A:(s + 1) * A] @ self.omega

    def probs(self, s: int) -> np.ndarray:
        z = self.logits(s)
        e = np.exp(z - z.max())
        return e / e.sum()

    def table(self, n_states: int | None = None) -> np.ndarray:
        """``pi(a|s)`` for every state, shape ``(S, A)``."""
        z = self.features.values(self.omega)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def log_prob(self, s: int, a: int) -> float:
        z = self.logits(s)
        m = z.max()
        return float(z[a] - m - np.log(np.exp(z - m).sum()))

    def grad_log_prob(self, s: int, a: int) -> np.ndarray:
        """``phi(s, a) - sum_b pi(b|s) phi(s, b)``."""
        A = self.features.n_actions
        feats = self.features.matrix[s * A:(s + 1) * A]
        return feats[a] - self.probs(s) @ feats

    def sample(self, s: int, rng: np.random.Generator) -> int:
        cum = np.cumsum(self.probs(s))
        return min(int(np.searchsorted(cum, rng.random(), side="right")), len(cum) - 1)


def delta_gae(buffer, critics: CriticParams, ladder: TimescaleLadder, T: int) -> float:
    """``A = sum_{k<T} (lam_Z g_Z)^k d_{t+k}`` with ``d = r + g_Z sum_z W_z(s',a') - sum_z W_z(s,a)``."""
    win = _prepare(buffer, T)
    q = critics.q_table()
    return _gae_from_table(win, q, ladder)


def _gae_from_table(win: Window, q: np.ndarray, ladder: TimescaleLadder) -> float:
    g = ladder.gamma
    boot = np.where(win.done, 0.0, q[win.s_next, win.a_next])
    errs = win.r + g * boot - q[win.s, win.a]
    ratio = ladder.lambdas[-1] * g
    return float(errs @ ratio ** np.arange(len(win)))


def state_baseline_gae(win: Window, q: np.ndarray, pi: np.ndarray, ladder: TimescaleLadder) -> float:
    """Delta-GAE with ``V(s) = sum_a pi(a|s) sum_z W_z(s, a)`` in place of the pair values.

    Its conditional mean given (s, a) is ``Q(s, a) - V(s)`` at the critic's
    fixed point, so the actor still gets a signal once the critics are exact.
    """
    v = (pi * q).sum(axis=1)
    g = ladder.gamma
    boot = np.where(win.done, 0.0, v[win.s_next])
    errs = win.r + g * boot - v[win.s]
    ratio = ladder.lambdas[-1] * g
    return float(errs @ ratio ** np.arange(len(win)))


def gae(buffer, q: np.ndarray, gamma: float, lam: float, T: int) -> float:
    """Standard GAE on a single action-value table."""
    win = _prepare(buffer, T)
    boot = np.where(win.done, 0.0, q[win.s_next, win.a_next])
    errs = win.r + gamma * boot - q[win.s, win.a]
    return float(errs @ (lam * gamma) ** np.arange(len(win)))


def critic_step(critics: CriticParams, buffer, ladder: TimescaleLadder, T: int) -> tuple[CriticParams, np.ndarray]:
    """Half-gradient step on ``(G^z - W_z(s, a))^2 / 2`` for every level.

    Returns the updated critics and the per-level squared errors before the step.
    """
    win = _prepare(buffer, T)
    w = critics.w_tables()
    g = delta_lambda_returns(win, w, ladder)
    s, a = win.s[0], win.a[0]
    err = g - w[:, s, a]
    step = np.asarray(ladder.alphas) * err
    critics.theta_z = critics.theta_z + step[:, None] * critics.features(s, a)[None, :]
    return critics, err ** 2


def policy_step(
    policy: SoftmaxPolicyParams,
    s: int,
    a: int,
    advantage: float,
    alpha_omega: float,
    entropy_coef: float = 0.0,
) -> SoftmaxPolicyParams:
    """``omega += alpha (A grad log pi(a|s) + c grad H(pi(.|s)))``."""
    grad = advantage * policy.grad_log_prob(s, a)
    if entropy_coef:
        A = policy.features.n_actions
        feats = policy.features.matrix[s * A:(s + 1) * A]
        p = policy.probs(s)
        logp = np.log(np.clip(p, 1e-300, None))
        h = -(p @ logp)
        # d/d logit_b of entropy = -p_b (log p_b + H)
        grad = grad + entropy_coef * (-(p * (logp + h)) @ feats)
    policy.omega = policy.omega + alpha_omega * grad
    return policy


def numerical_grad_log_prob(policy: SoftmaxPolicyParams, s: int, a: int, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``log pi(a|s)`` in each coordinate of omega."""
    base = policy.omega.copy()
    g = np.zeros_like(base)
    for i in range(base.size):
        bump = np.zeros_like(base)
        bump[i] = eps
        policy.omega = base + bump
        up = policy.log_prob(s, a)
        policy.omega = base - bump
        down = policy.log_prob(s, a)
        g[i] = (up - down) / (2.0 * eps)
    policy.omega = base
    return g


@dataclass
class EpisodeRecord:
    episode: int
    ret: float
    undiscounted: float
    length: int
    mean_abs_adv: float
    critic_loss: list[float]


@dataclass
class Alg2Result:
    episodes: list[EpisodeRecord] = field(default_factory=list)
    policy: SoftmaxPolicyParams | None = None
    critics: CriticParams | None = None
    updates: int = 0
    steps: int = 0

    def final_mean_return(self, last: int = 100) -> float:
        tail = self.episodes[-last:]
        return float(np.mean([e.ret for e in tail])) if tail else float("nan")


def run_alg2(
    mdp: MdpSpec,
    ladder: TimescaleLadder,
    T: int,
    steps: int,
    seed: int,
    *,
    alpha_omega: float = 0.1,
    entropy_coef: float = 0.0,
    start_state: int = 0,
    max_episode_steps: int = 200,
    features: FeatureMap | None = None,
    policy_features: FeatureMap | None = None,
    baseline: str = "state",
) -> Alg2Result:
    """Interleaved act / critic / actor loop for ``steps`` environment steps.

    Episode returns are discounted with ``gamma_Z`` from the start state.
    Raises :class:`DivergenceError` if any critic value exceeds
    ``10 r_max / (1 - gamma_Z)``.
    """
    ladder.check()
    if baseline not in ("state", "action"):
        raise ValueError(f"baseline must be 'state' or 'action', got {baseline!r}")
    rng = make_rng(seed)
    features = features or FeatureMap.one_hot(mdp.n_states, mdp.n_actions)
    critics = CriticParams.zeros(features, ladder)
    policy = SoftmaxPolicyParams.zeros(policy_features or features)
    r_max = max(float(np.max(np.abs(mdp.reward))), 1e-12)
    guard = 10.0 * r_max / (1.0 - ladder.gamma)
    result = Alg2Result(policy=policy, critics=critics)
    taken = 0
    episode = 0

    def update(win: Window, advs: list, losses: list) -> None:
        _, sq = critic_step(critics, win, ladder, len(win))
        w = critics.w_tables()
        if np.abs(w).max() > guard:
            raise DivergenceError(f"critic magnitude {np.abs(w).max():.3g} exceeded guard {guard:.3g}")
        if baseline == "action":
            adv = _gae_from_table(win, critics.q_table(), ladder)
        else:
            adv = state_baseline_gae(win, critics.q_table(), policy.table(), ladder)
        policy_step(policy, int(win.s[0]), int(win.a[0]), adv, alpha_omega, entropy_coef)
        advs.append(abs(adv))
        losses.append(sq)
        result.updates += 1

    while taken < steps:
        buf: deque[Step] = deque()
        advs, losses = [], []
        ret = undisc = 0.0
        s = start_state
        a = policy.sample(s, rng)
        length = 0
        ended = False
        while taken < steps:
            r, s2 = env_step(mdp, s, a, rng)
            done = mdp.is_terminal(s2)
            a2 = policy.sample(s2, rng)
            buf.append(Step(s, a, r, s2, a2, done))
            ret += ladder.gamma ** length * r
            undisc += r
            length += 1
            taken += 1
            if len(buf) >= T:
                update(Window.from_steps(list(buf)), advs, losses)
                buf.popleft()
            if done or length >= max_episode_steps:
                ended = True
                break
            s, a = s2, a2
        if not ended:
            break  # step budget ran out mid-episode: no flush, no record
        # flush: terminal windows bootstrap with zero, time-limit windows from their last pair
        while buf:
            update(Window.from_steps(list(buf)), advs, losses)
            buf.popleft()
        loss = np.mean(losses, axis=0).tolist() if losses else [0.0] * ladder.n_scales
        result.episodes.append(EpisodeRecord(
            episode, ret, undisc, length, float(np.mean(advs)) if advs else 0.0, loss))
        episode += 1
    result.steps = taken
    return result


def uniform_policy_return(mdp: MdpSpec, gamma: float, start_state: int = 0) -> float:
    """Exact discounted return of the uniform policy from ``start_state``."""
    from .mdp import TabularPolicy, exact_q

    pol = TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
    return float(pol.probs[start_state] @ exact_q(mdp, pol, gamma)[start_state])


def optimal_return(mdp: MdpSpec, gamma: float, start_state: int = 0) -> float:
    from .mdp import optimal_policy

    _, q = optimal_policy(mdp, gamma)
    return float(q[start_state].max())


def sweep_seeds(mdp: MdpSpec, ladder: TimescaleLadder, T: int, steps: int, seeds: Sequence[int], **kw) -> list[Alg2Result]:
    return [run_alg2(mdp, ladder, T, steps, s, **kw) for s in seeds]

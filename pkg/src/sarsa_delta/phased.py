"""Phased TD(k) and phased TD(Delta), plus the bias/variance error bounds.

Each phase samples ``n`` fresh trajectories from every (s, a) and replaces the
estimate for that pair by the average k-step target, bootstrapping only from
the previous phase's tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ladder import TimescaleLadder
from .mdp import MdpSpec, TabularPolicy, exact_q_ladder, make_rng, sample_batch


@dataclass(frozen=True)
class PhaseBatch:
    """Rollouts from every (s, a): ``states``/``actions`` are ``(S, A, n, H + 1)``."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    @property
    def horizon(self) -> int:
        return self.rewards.shape[-1]


@dataclass(frozen=True)
class PhasedState:
    q_hat: np.ndarray | None = None
    w_hat: np.ndarray | None = None
    phase: int = 0
    n: int = 0

    @classmethod
    def zeros(cls, mdp: MdpSpec, n: int, ladder: TimescaleLadder | None = None) -> "PhasedState":
        shape = (mdp.n_states, mdp.n_actions)
        if ladder is None:
            return cls(q_hat=np.zeros(shape), n=n)
        return cls(w_hat=np.zeros((ladder.n_scales, *shape)), n=n)


@dataclass
class ErrorReport:
    delta_q: float
    delta_w: list[float] = field(default_factory=list)
    bound_rhs: float = math.inf
    holds: bool = True

    @property
    def observed(self) -> float:
        """The quantity the bound constrains: the summed W errors, else the Q error."""
        return float(sum(self.delta_w)) if self.delta_w else self.delta_q


def sample_phase(
    mdp: MdpSpec, policy: TabularPolicy, horizon: int, n: int, rng: np.random.Generator
) -> PhaseBatch:
    S, A = mdp.n_states, mdp.n_actions
    ss, aa = np.meshgrid(np.arange(S), np.arange(A), indexing="ij")
    starts_s = np.repeat(ss.ravel(), n)
    starts_a = np.repeat(aa.ravel(), n)
    st, ac, rw = sample_batch(mdp, policy, starts_s, starts_a, horizon, rng)
    return PhaseBatch(
        st.reshape(S, A, n, horizon + 1),
        ac.reshape(S, A, n, horizon + 1),
        rw.reshape(S, A, n, horizon),
    )


def _k_step_average(prev: np.ndarray, batch: PhaseBatch, gamma: float, k: int) -> np.ndarray:
    disc = gamma ** np.arange(k)
    ret = batch.rewards[..., :k] @ disc
    ret = ret + gamma ** k * prev[batch.states[..., k], batch.actions[..., k]]
    return ret.mean(axis=-1)


def phased_td_update(
    state: PhasedState,
    mdp: MdpSpec,
    policy: TabularPolicy,
    gamma: float,
    k: int,
    n: int,
    rng: np.random.Generator | None = None,
    batch: PhaseBatch | None = None,
) -> PhasedState:
    """One phase of TD(k): ``Q_t(s,a) = mean_j [sum_{i<k} gamma^i r_i + gamma^k Q_{t-1}(s_k, a_k)]``."""
    if k < 1 or n < 1:
        raise ValueError("k and n must be positive")
    if batch is None:
        batch = sample_phase(mdp, policy, k, n, rng)
    q = _k_step_average(state.q_hat, batch, gamma, k)
    return PhasedState(q_hat=q, w_hat=state.w_hat, phase=state.phase + 1, n=n)


def phased_delta_update(
    state: PhasedState,
    mdp: MdpSpec,
    policy: TabularPolicy,
    ladder: TimescaleLadder,
    n: int,
    rng: np.random.Generator | None = None,
    batch: PhaseBatch | None = None,
) -> PhasedState:
    """One synchronous phase of TD(Delta) over all levels.

    Level 0 is phased TD(k_0) at ``gamma_0``; level z >= 1 averages
    ``sum_{i=1}^{k_z-1} (g_z^i - g_{z-1}^i) r_i
    + (g_z^k - g_{z-1}^k) Q_{z-1}(s_k, a_k) + g_z^k W_z(s_k, a_k)`` with k = k_z.
    """
    ladder.check()
    if batch is None:
        batch = sample_phase(mdp, policy, ladder.k, n, rng)
    prev = state.w_hat
    new = np.empty_like(prev)
    new[0] = _k_step_average(prev[0], batch, ladder.gammas[0], ladder.ks[0])
    q_prev = prev[0].copy()  # Q_{gamma_{z-1}} from the previous phase
    for z in range(1, ladder.n_scales):
        g, gp, k = ladder.gammas[z], ladder.gammas[z - 1], ladder.ks[z]
        i = np.arange(k)
        coef = g ** i - gp ** i
        s_k, a_k = batch.states[..., k], batch.actions[..., k]
        target = (
            batch.rewards[..., :k] @ coef
            + (g ** k - gp ** k) * q_prev[s_k, a_k]
            + g ** k * prev[z][s_k, a_k]
        )
        new[z] = target.mean(axis=-1)
        q_prev += prev[z]
    return PhasedState(q_hat=state.q_hat, w_hat=new, phase=state.phase + 1, n=n)


def hoeffding_eps(k: int, delta: float, n: int) -> float:
    """``sqrt(2 ln(2k / delta) / n)``."""
    if k < 1 or n < 1 or not 0.0 < delta < 1.0:
        raise ValueError(f"need k >= 1, n >= 1, 0 < delta < 1; got k={k}, n={n}, delta={delta}")
    return math.sqrt(2.0 * math.log(2.0 * k / delta) / n)


def phased_td_bound(eps: float, gamma: float, k: int, prev_error: float) -> float:
    """Variance term ``eps (1 - g^k) / (1 - g)`` plus bias term ``g^k * prev_error``."""
    return eps * (1.0 - gamma ** k) / (1.0 - gamma) + gamma ** k * prev_error


def variance_reduction_term(ladder: TimescaleLadder) -> float:
    """``sum_{z<Z} (g_z^{k_{z+1}} - g_z^{k_z}) / (1 - g_z)``; nonpositive for nondecreasing k."""
    g, k = ladder.gammas, ladder.ks
    return sum((g[z] ** k[z + 1] - g[z] ** k[z]) / (1.0 - g[z]) for z in range(ladder.Z))


def bias_introduction_term(ladder: TimescaleLadder, prev_errors: Sequence[float]) -> float:
    g, k = ladder.gammas, ladder.ks
    return sum(
        (g[z] ** k[z] - g[z] ** k[z + 1]) * sum(prev_errors[: z + 1]) for z in range(ladder.Z)
    )


def phased_delta_bound(eps: float, ladder: TimescaleLadder, prev_errors: Sequence[float]) -> float:
    if len(prev_errors) != ladder.n_scales:
        raise ValueError(f"need {ladder.n_scales} previous errors, got {len(prev_errors)}")
    gamma, k = ladder.gamma, ladder.k
    return (
        eps * (1.0 - gamma ** k) / (1.0 - gamma)
        + eps * variance_reduction_term(ladder)
        + bias_introduction_term(ladder, prev_errors)
        + gamma ** k * sum(prev_errors)
    )


def oracle_w(mdp: MdpSpec, policy: TabularPolicy, gammas: Sequence[float]) -> np.ndarray:
    """True delta tables ``Q_{g_z} - Q_{g_{z-1}}`` (level 0 is ``Q_{g_0}``)."""
    q = exact_q_ladder(mdp, policy, gammas)
    w = q.copy()
    w[1:] -= q[:-1]
    return w


def measure_errors(
    state: PhasedState, oracle: np.ndarray, bound_rhs: float | None = None
) -> ErrorReport:
    """Sup-norm errors of the current estimates.

    ``oracle`` holds the true delta tables, shape ``(Z+1, S, A)``.  For a TD(k)
    state only the last level's cumulative sum (``Q_{gamma_Z}``) is compared.
    """
    q_true = oracle.sum(axis=0)
    if state.w_hat is not None:
        delta_w = [float(np.max(np.abs(state.w_hat[z] - oracle[z]))) for z in range(len(oracle))]
        delta_q = float(np.max(np.abs(state.w_hat.sum(axis=0) - q_true)))
    else:
        delta_w = []
        delta_q = float(np.max(np.abs(state.q_hat - q_true)))
    report = ErrorReport(delta_q, delta_w)
    if bound_rhs is not None:
        report.bound_rhs = float(bound_rhs)
        report.holds = report.observed <= report.bound_rhs
    return report


@dataclass
class PhaseRecord:
    phase: int
    report: ErrorReport


def run_phased(
    mdp: MdpSpec,
    policy: TabularPolicy,
    n: int,
    phases: int,
    delta: float,
    rng: np.random.Generator,
    *,
    gamma: float | None = None,
    k: int | None = None,
    ladder: TimescaleLadder | None = None,
    oracle: np.ndarray | None = None,
) -> list[PhaseRecord]:
    """Run phased TD(k) (``gamma``, ``k``) or TD(Delta) (``ladder``), checking the bound every phase.

    Record 0 is the initial all-zero state; record t compares the phase-t error
    to the bound evaluated with the observed phase-(t-1) error.
    """
    delta_mode = ladder is not None
    gammas = ladder.gammas if delta_mode else [gamma]
    if oracle is None:
        oracle = oracle_w(mdp, policy, gammas)
    if not delta_mode:
        oracle = oracle.sum(axis=0, keepdims=True)
    eps = hoeffding_eps(ladder.k if delta_mode else k, delta, n)
    state = PhasedState.zeros(mdp, n, ladder)
    report = measure_errors(state, oracle)
    records = [PhaseRecord(0, report)]
    for t in range(1, phases + 1):
        if delta_mode:
            state = phased_delta_update(state, mdp, policy, ladder, n, rng)
            rhs = phased_delta_bound(eps, ladder, report.delta_w)
        else:
            state = phased_td_update(state, mdp, policy, gamma, k, n, rng)
            rhs = phased_td_bound(eps, gamma, k, report.delta_q)
        report = measure_errors(state, oracle, rhs)
        records.append(PhaseRecord(t, report))
    return records


def bound_holds_rate(
    mdp: MdpSpec,
    policy: TabularPolicy,
    seeds: Sequence[int],
    n: int,
    phases: int,
    delta: float,
    **kwargs,
) -> float:
    """Fraction of seeded runs in which the bound holds at every phase."""
    gammas = kwargs["ladder"].gammas if kwargs.get("ladder") is not None else [kwargs["gamma"]]
    oracle = oracle_w(mdp, policy, gammas)
    good = 0
    for seed in seeds:
        recs = run_phased(mdp, policy, n, phases, delta, make_rng(seed), oracle=oracle, **kwargs)
        good += all(r.report.holds for r in recs[1:])
    return good / len(seeds)

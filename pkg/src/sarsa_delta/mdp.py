"""Finite MDPs, test environments, samplers and the exact policy-evaluation oracle.

Rewards are a function of (state, action) only.  Terminal states are encoded
directly in the transition tensor as absorbing self-loops with zero reward, so
the linear-solve oracle needs no special casing for episodic tasks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, NumericalError

STOCHASTIC_TOL = 1e-12
RESIDUAL_TOL = 1e-10


def _frozen(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=float, copy=True)
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """A finite MDP ``(S, A, P, r)``.

    ``transition[s, a, s']`` is a probability, ``reward[s, a]`` lies in [-1, 1].
    """

    transition: np.ndarray
    reward: np.ndarray
    terminal_states: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        P = _frozen(self.transition)
        r = _frozen(self.reward)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ConfigError(f"transition must have shape (S, A, S), got {P.shape}")
        if r.shape != P.shape[:2]:
            raise ConfigError(f"reward shape {r.shape} does not match transition {P.shape[:2]}")
        if P.shape[0] < 1 or P.shape[1] < 1:
            raise ConfigError("need at least one state and one action")
        if np.any(P < 0):
            raise ConfigError("transition probabilities must be nonnegative")
        row_err = np.abs(P.sum(axis=2) - 1.0)
        if np.any(row_err > STOCHASTIC_TOL):
            s, a = np.unravel_index(np.argmax(row_err), row_err.shape)
            raise ConfigError(f"transition row ({s}, {a}) sums to {P[s, a].sum()!r}, not 1")
        if not np.all(np.isfinite(r)) or np.any(np.abs(r) > 1.0):
            raise ConfigError("rewards must be finite and bounded in [-1, 1]")
        terminals = frozenset(int(s) for s in self.terminal_states)
        for s in terminals:
            if not 0 <= s < P.shape[0]:
                raise ConfigError(f"terminal state {s} out of range")
            if np.any(P[s, :, s] != 1.0) or np.any(r[s] != 0.0):
                raise ConfigError(f"terminal state {s} must absorb with zero reward")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "terminal_states", terminals)
        object.__setattr__(self, "_cum", np.cumsum(P, axis=2))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    def is_terminal(self, s: int) -> bool:
        return s in self.terminal_states

    def terminal_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.terminal_states)] = True
        return mask

    def to_dict(self) -> dict:
        return {
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "terminal_states": sorted(self.terminal_states),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MdpSpec":
        return cls(
            transition=np.asarray(d["transition"], dtype=float),
            reward=np.asarray(d["reward"], dtype=float),
            terminal_states=frozenset(d.get("terminal_states", ())),
        )


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Row-stochastic table ``probs[s, a]``."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 2:
            raise ConfigError(f"policy table must be 2-D, got shape {p.shape}")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > STOCHASTIC_TOL):
            raise ConfigError("policy rows must be probability vectors")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "_cum", np.cumsum(p, axis=1))

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> "TabularPolicy":
        probs = np.zeros((len(actions), n_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)

    def sample(self, s: int, rng: np.random.Generator) -> int:
        return _draw(self._cum[s], rng.random())


class Step(NamedTuple):
    s: int
    a: int
    r: float
    s_next: int
    a_next: int
    done: bool = False


@dataclass(frozen=True)
class Trajectory:
    steps: tuple
    seed: int | None = None

    def __len__(self):
        return len(self.steps)

    def states(self) -> list[int]:
        return [st.s for st in self.steps]


def _draw(cum_row: np.ndarray, u: float) -> int:
    # cumsum can end a hair below 1.0; clamp to the last index
    return min(int(np.searchsorted(cum_row, u, side="right")), len(cum_row) - 1)


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for ``seed`` or for a deterministic sub-stream ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


# -- canonical environments ---------------------------------------------------

def make_ring(n_states: int, reward_vector: Sequence[float] | None = None) -> MdpSpec:
    """Deterministic single-action ring: state ``i`` moves to ``(i + 1) % n``.

    The default reward vector is +1 at state 0 and 0 elsewhere.
    """
    if n_states < 2:
        raise ConfigError("ring needs at least 2 states")
    if reward_vector is None:
        reward_vector = [1.0] + [0.0] * (n_states - 1)
    if len(reward_vector) != n_states:
        raise ConfigError(
            f"reward_vector has length {len(reward_vector)}, expected {n_states}"
        )
    P = np.zeros((n_states, 1, n_states))
    P[np.arange(n_states), 0, (np.arange(n_states) + 1) % n_states] = 1.0
    r = np.asarray(reward_vector, dtype=float).reshape(n_states, 1)
    return MdpSpec(P, r)


LEFT, RIGHT = 0, 1


def make_chain(
    n_states: int,
    goal_reward: float = 1.0,
    step_reward: float = 0.0,
    slip: float = 0.0,
) -> MdpSpec:
    """Left/right chain with an absorbing goal at the right end.

    Each action moves in its direction with probability ``1 - slip`` and the
    other way with probability ``slip``; moves off the left edge stay put.
    Since rewards depend on (s, a) only, ``r[s, a]`` is the expected reward of
    the move: ``goal_reward`` weighted by the chance of landing on the goal,
    ``step_reward`` otherwise.
    """
    if n_states < 2:
        raise ConfigError("chain needs at least 2 states")
    if not 0.0 <= slip <= 0.5:
        raise ConfigError(f"slip must lie in [0, 0.5], got {slip}")
    goal = n_states - 1
    P = np.zeros((n_states, 2, n_states))
    r = np.zeros((n_states, 2))
    for s in range(goal):
        left, right = max(s - 1, 0), s + 1
        P[s, LEFT, left] += 1.0 - slip
        P[s, LEFT, right] += slip
        P[s, RIGHT, right] += 1.0 - slip
        P[s, RIGHT, left] += slip
        for a in (LEFT, RIGHT):
            p_goal = P[s, a, goal]
            r[s, a] = p_goal * goal_reward + (1.0 - p_goal) * step_reward
    P[goal, :, goal] = 1.0
    return MdpSpec(P, r, frozenset({goal}))


def make_self_loop(reward: float = 1.0) -> MdpSpec:
    """One state, one action, constant reward."""
    return MdpSpec(np.ones((1, 1, 1)), np.full((1, 1), float(reward)))


def random_mdp(
    n_states: int,
    n_actions: int,
    rng: np.random.Generator,
    branching: int | None = None,
) -> MdpSpec:
    """Dense (or ``branching``-sparse) random MDP with rewards uniform in [-1, 1]."""
    P = rng.random((n_states, n_actions, n_states))
    if branching is not None and branching < n_states:
        for s in range(n_states):
            for a in range(n_actions):
                drop = rng.choice(n_states, n_states - branching, replace=False)
                P[s, a, drop] = 0.0
    P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(-1.0, 1.0, (n_states, n_actions))
    return MdpSpec(P, r)


def mdp_from_config(d: dict) -> MdpSpec:
    """Build an MDP from its structured-text description.

    Either an explicit ``{"transition": ..., "reward": ...}`` table or one of
    the generator kinds ``ring``, ``chain``, ``self_loop``, ``random``.
    """
    kind = d.get("kind", "explicit")
    try:
        if kind == "explicit":
            return MdpSpec.from_dict(d)
        if kind == "ring":
            return make_ring(int(d["n_states"]), d.get("rewards"))
        if kind == "chain":
            return make_chain(
                int(d["n_states"]),
                float(d.get("goal_reward", 1.0)),
                float(d.get("step_reward", 0.0)),
                float(d.get("slip", 0.0)),
            )
        if kind == "self_loop":
            return make_self_loop(float(d.get("reward", 1.0)))
        if kind == "random":
            return random_mdp(
                int(d["n_states"]),
                int(d.get("n_actions", 2)),
                make_rng(int(d.get("seed", 0))),
                d.get("branching"),
            )
    except KeyError as e:
        raise ConfigError(f"mdp of kind {kind!r} is missing field {e.args[0]!r}") from None
    raise ConfigError(
        f"unknown mdp kind {kind!r}; expected one of explicit, ring, chain, self_loop, random"
    )


# -- sampling -----------------------------------------------------------------

def _check_pair(mdp: MdpSpec, s: int, a: int) -> None:
    if not (0 <= s < mdp.n_states and 0 <= a < mdp.n_actions):
        raise IndexError(f"(s={s}, a={a}) out of range for {mdp.n_states}x{mdp.n_actions} MDP")


def step(mdp: MdpSpec, s: int, a: int, rng: np.random.Generator) -> tuple[float, int]:
    """Sample one transition; returns ``(reward, next_state)``."""
    _check_pair(mdp, s, a)
    return float(mdp.reward[s, a]), _draw(mdp._cum[s, a], rng.random())


def sample_trajectory(
    mdp: MdpSpec,
    policy: TabularPolicy,
    start: tuple[int, int],
    horizon: int,
    rng: np.random.Generator,
    seed: int | None = None,
) -> Trajectory:
    """Roll out ``horizon`` chained steps from ``start``, stopping early at a terminal."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    s, a = start
    steps = []
    for _ in range(horizon):
        r, s2 = step(mdp, s, a, rng)
        a2 = policy.sample(s2, rng)
        done = mdp.is_terminal(s2)
        steps.append(Step(s, a, r, s2, a2, done))
        if done:
            break
        s, a = s2, a2
    return Trajectory(tuple(steps), seed)


def sample_batch(
    mdp: MdpSpec,
    policy: TabularPolicy,
    starts_s: np.ndarray,
    starts_a: np.ndarray,
    horizon: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised rollouts from many start pairs at once.

    Returns ``states`` and ``actions`` of shape ``(B, horizon + 1)`` and
    ``rewards`` of shape ``(B, horizon)``.  Terminal states keep absorbing, so
    every row has the full length.
    """
    starts_s = np.asarray(starts_s, dtype=np.intp)
    starts_a = np.asarray(starts_a, dtype=np.intp)
    B = starts_s.shape[0]
    S = mdp.n_states
    states = np.empty((B, horizon + 1), dtype=np.intp)
    actions = np.empty((B, horizon + 1), dtype=np.intp)
    rewards = np.empty((B, horizon))
    states[:, 0], actions[:, 0] = starts_s, starts_a
    pol_cum = policy._cum
    for i in range(horizon):
        s, a = states[:, i], actions[:, i]
        rewards[:, i] = mdp.reward[s, a]
        u = rng.random(B)
        s2 = (mdp._cum[s, a] <= u[:, None]).sum(axis=1)
        np.minimum(s2, S - 1, out=s2)
        u = rng.random(B)
        a2 = (pol_cum[s2] <= u[:, None]).sum(axis=1)
        np.minimum(a2, mdp.n_actions - 1, out=a2)
        states[:, i + 1], actions[:, i + 1] = s2, a2
    return states, actions, rewards


# -- exact oracle ---------------------------------------------------------------

def pair_transition(mdp: MdpSpec, policy: TabularPolicy) -> np.ndarray:
    """The (SA x SA) matrix ``P^pi[(s,a), (s',a')] = P(s'|s,a) pi(a'|s')``."""
    M = mdp.transition[:, :, :, None] * policy.probs[None, None, :, :]
    return M.reshape(mdp.n_pairs, mdp.n_pairs)


def bellman_backup(mdp: MdpSpec, policy: TabularPolicy, q: np.ndarray, gamma: float) -> np.ndarray:
    """``TQ = r + gamma P^pi Q``."""
    M = pair_transition(mdp, policy)
    return mdp.reward + gamma * (M @ np.asarray(q).ravel()).reshape(q.shape)


def exact_q(mdp: MdpSpec, policy: TabularPolicy, gamma: float) -> np.ndarray:
    """Solve ``Q = r + gamma P^pi Q`` directly."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    M = pair_transition(mdp, policy)
    r = mdp.reward.ravel()
    q = np.linalg.solve(np.eye(mdp.n_pairs) - gamma * M, r)
    residual = np.max(np.abs(q - (r + gamma * M @ q)))
    if residual > RESIDUAL_TOL:
        raise NumericalError(f"exact_q residual {residual:.3e} exceeds {RESIDUAL_TOL}")
    return q.reshape(mdp.n_states, mdp.n_actions)


def exact_q_ladder(mdp: MdpSpec, policy: TabularPolicy, gammas: Sequence[float]) -> np.ndarray:
    """Stack of ``exact_q`` tables, shape ``(len(gammas), S, A)``."""
    return np.stack([exact_q(mdp, policy, g) for g in gammas])


def optimal_policy(mdp: MdpSpec, gamma: float, max_iter: int = 1000) -> tuple[TabularPolicy, np.ndarray]:
    """Policy iteration with ``exact_q`` as the evaluation step.

    Returns the greedy deterministic policy and its action values.
    """
    actions = np.zeros(mdp.n_states, dtype=int)
    for _ in range(max_iter):
        policy = TabularPolicy.deterministic(actions, mdp.n_actions)
        q = exact_q(mdp, policy, gamma)
        best = q.max(axis=1, keepdims=True)
        # keep the incumbent action on ties so iteration terminates
        keep = q[np.arange(mdp.n_states), actions] >= best[:, 0] - 1e-12
        new = np.where(keep, actions, np.argmax(q, axis=1))
        if np.array_equal(new, actions):
            return policy, q
        actions = new
    raise NumericalError("policy iteration did not converge")


def state_occupancy(
    mdp: MdpSpec, policy: TabularPolicy, start: tuple[int, int], horizon: int
) -> np.ndarray:
    """Expected visit counts of ``s_t`` for t < horizon, via powers of ``P^pi``.

    Terminal states are excluded after they are first entered, matching the
    truncation in :func:`sample_trajectory`.
    """
    M = pair_transition(mdp, policy)
    live = ~np.repeat(mdp.terminal_mask(), mdp.n_actions)
    dist = np.zeros(mdp.n_pairs)
    dist[start[0] * mdp.n_actions + start[1]] = 1.0
    visits = np.zeros(mdp.n_states)
    for _ in range(horizon):
        dist = dist * live
        visits += dist.reshape(mdp.n_states, mdp.n_actions).sum(axis=1)
        dist = dist @ M
    return visits


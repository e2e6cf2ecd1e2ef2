"""Seeded property suites backing ``sarsa-delta verify``.

Each suite returns a list of :class:`Check` lines; the CLI prints them and
exits nonzero if any fails.  Seeds are fixed so a suite is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ladder import TimescaleLadder, build_doubling_ladder, horizon_k, matched_lambdas
from .linear import check_equivalence, contraction_sweep
from .mdp import MdpSpec, TabularPolicy, make_rng, random_mdp
from .phased import (
    PhasedState,
    bound_holds_rate,
    phased_delta_update,
    phased_td_update,
    sample_phase,
    variance_reduction_term,
)

SUITES = ("t1", "t2", "t3", "t4", "identities")

MDP_SEED = 2024
EQUIV_SEED = 7
CONTRACTION_SEED = 11
BOUND_SEEDS = range(200)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def test_mdp(n_states: int = 6, n_actions: int = 2, seed: int = MDP_SEED) -> MdpSpec:
    """Dense random continuing MDP shared by the suites."""
    return random_mdp(n_states, n_actions, make_rng(seed))


def equivalence_ladder(lambda_gamma: float = 0.45, alpha: float = 0.05, Z: int = 3) -> TimescaleLadder:
    base = build_doubling_ladder(Z, alpha=alpha)
    return base.replace(lambdas=tuple(matched_lambdas(base.gammas, lambda_gamma)))


def suite_t1(steps: int = 10_000, tol: float = 1e-8) -> list[Check]:
    mdp = test_mdp()
    pol = TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
    rep = check_equivalence(mdp, pol, equivalence_ladder(), steps, 0.05, 0.45, seed=EQUIV_SEED)
    return [Check("t1 parameter equivalence", rep.max_deviation <= tol,
                  f"max |sum_z theta_z - theta| = {rep.max_deviation:.3e} over {steps} steps (tol {tol:g})")]


def suite_t2(gamma: float = 0.9, lambdas=(0.0, 0.5, 0.9, 1.0, 1.02), n_pairs: int = 100) -> list[Check]:
    rows = contraction_sweep(gamma, lambdas, n_pairs, seed=CONTRACTION_SEED)
    return [
        Check(f"t2 contraction lambda={r.lam:g}", r.holds,
              f"max ratio {r.max_ratio:.6f} <= coeff {r.coeff:.6f} (looser form {r.stated_coeff:.4f})")
        for r in rows
    ]


def suite_t3(n: int = 128, k: int = 4, gamma: float = 0.9, delta: float = 0.1,
             phases: int = 20, seeds=BOUND_SEEDS, min_rate: float = 0.9) -> list[Check]:
    mdp = test_mdp(5, 2)
    pol = TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
    rate = bound_holds_rate(mdp, pol, seeds, n, phases, delta, gamma=gamma, k=k)
    return [Check("t3 phased TD(k) bound", rate >= min_rate,
                  f"holds in {rate:.1%} of {len(seeds)} runs (need {min_rate:.0%})")]


def suite_t4(n: int = 128, delta: float = 0.1, phases: int = 20, seeds=BOUND_SEEDS,
             min_rate: float = 0.9, Z: int = 2) -> list[Check]:
    mdp = test_mdp(5, 2)
    pol = TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
    ladder = build_doubling_ladder(Z)
    rate = bound_holds_rate(mdp, pol, seeds, n, phases, delta, ladder=ladder)
    vr = variance_reduction_term(ladder)
    return [
        Check("t4 phased TD(Delta) bound", rate >= min_rate,
              f"holds in {rate:.1%} of {len(seeds)} runs (need {min_rate:.0%})"),
        Check("t4 variance-reduction term", vr <= 0.0, f"{vr:.6f} <= 0"),
    ]


def equal_k_gap(mdp: MdpSpec, policy: TabularPolicy, ladder: TimescaleLadder,
                n: int, phases: int, seed: int) -> float:
    """Largest ``|sum_z W_z - Q|`` when both learners see the same rollouts."""
    if len(set(ladder.ks)) != 1:
        raise ValueError("equal-k collapse needs identical k_z")
    k = ladder.k
    rng = make_rng(seed)
    sd = PhasedState.zeros(mdp, n, ladder)
    sq = PhasedState.zeros(mdp, n)
    worst = 0.0
    for _ in range(phases):
        batch = sample_phase(mdp, policy, k, n, rng)
        sd = phased_delta_update(sd, mdp, policy, ladder, n, batch=batch)
        sq = phased_td_update(sq, mdp, policy, ladder.gamma, k, n, batch=batch)
        worst = max(worst, float(np.max(np.abs(sd.w_hat.sum(axis=0) - sq.q_hat))))
    return worst


def suite_identities(tol: float = 1e-10) -> list[Check]:
    mdp = test_mdp()
    pol = TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
    rep = check_equivalence(mdp, pol, equivalence_ladder(), 2000, 0.05, 0.45, seed=EQUIV_SEED)
    small = test_mdp(5, 2)
    spol = TabularPolicy.uniform(small.n_states, small.n_actions)
    base = build_doubling_ladder(2)
    flat = base.replace(ks=(horizon_k(base.gamma),) * base.n_scales)
    gap = equal_k_gap(small, spol, flat, 64, 20, seed=3)
    ladders = [build_doubling_ladder(z) for z in range(6)]
    worst_vr = max(variance_reduction_term(l) for l in ladders)
    return [
        Check("td-error sum", rep.max_td_error_gap <= tol,
              f"max |sum_z d_z - d| = {rep.max_td_error_gap:.3e} (tol {tol:g})"),
        Check("lambda-return sum", rep.max_return_gap <= tol,
              f"max |sum_z G_z - G| = {rep.max_return_gap:.3e} (tol {tol:g})"),
        Check("equal-k collapse", gap <= tol, f"max |sum_z W_z - Q| = {gap:.3e} (tol {tol:g})"),
        Check("variance-reduction sign", worst_vr <= 0.0,
              f"largest term over Z=0..5 doubling ladders: {worst_vr:.6f}"),
    ]


_SUITES = {
    "t1": suite_t1,
    "t2": suite_t2,
    "t3": suite_t3,
    "t4": suite_t4,
    "identities": suite_identities,
}


def verify(suite: str) -> list[Check]:
    if suite == "all":
        return [c for name in SUITES for c in _SUITES[name]()]
    if suite not in _SUITES:
        raise KeyError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)} or 'all'")
    return _SUITES[suite]()

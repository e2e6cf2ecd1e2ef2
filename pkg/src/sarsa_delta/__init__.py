"""Delta-decomposed temporal-difference learners over a ladder of discount factors."""

from .errors import ConfigError, DivergenceError, NumericalError
from .ladder import TimescaleLadder, build_doubling_ladder, horizon_k, validate
from .mdp import MdpSpec, TabularPolicy, exact_q, make_chain, make_ring, make_rng, make_self_loop, random_mdp
from .tabular import DeltaTable, reconstruct_q

__all__ = [
    "ConfigError",
    "DeltaTable",
    "DivergenceError",
    "MdpSpec",
    "NumericalError",
    "TabularPolicy",
    "TimescaleLadder",
    "build_doubling_ladder",
    "exact_q",
    "horizon_k",
    "make_chain",
    "make_ring",
    "make_rng",
    "make_self_loop",
    "random_mdp",
    "reconstruct_q",
    "validate",
]

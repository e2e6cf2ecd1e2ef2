"""Exception types shared across the package.

The CLI maps these onto process exit codes (see ``sarsa_delta.cli``).
"""


class ConfigError(ValueError):
    """Invalid configuration: bad shapes, broken invariants, missing fields."""


class DivergenceError(RuntimeError):
    """A learner's estimates blew past the divergence guard."""


class NumericalError(RuntimeError):
    """A direct solve returned a result that fails its own residual check."""

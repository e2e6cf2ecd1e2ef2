"""The timescale ladder ``(gamma_z, k_z, lambda_z, alpha_z)`` for z = 0..Z."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigError


@dataclass(frozen=True)
class TimescaleLadder:
    gammas: tuple[float, ...]
    ks: tuple[int, ...]
    lambdas: tuple[float, ...]
    alphas: tuple[float, ...]

    def __post_init__(self):
        for name in ("gammas", "lambdas", "alphas"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))

    @property
    def Z(self) -> int:
        return len(self.gammas) - 1

    @property
    def n_scales(self) -> int:
        return len(self.gammas)

    @property
    def gamma(self) -> float:
        """The largest discount, ``gamma_Z``."""
        return self.gammas[-1]

    @property
    def k(self) -> int:
        return self.ks[-1]

    def check(self) -> "TimescaleLadder":
        problems = validate(self)
        if problems:
            raise ConfigError("invalid ladder: " + "; ".join(problems))
        return self

    def replace(self, **changes) -> "TimescaleLadder":
        fields = {
            "gammas": self.gammas, "ks": self.ks,
            "lambdas": self.lambdas, "alphas": self.alphas,
        }
        fields.update(changes)
        return TimescaleLadder(**fields)

    def to_dict(self) -> dict:
        return {
            "gammas": list(self.gammas), "ks": list(self.ks),
            "lambdas": list(self.lambdas), "alphas": list(self.alphas),
        }


def horizon_k(gamma: float) -> int:
    """Bootstrap depth ``ceil(1 / (1 - gamma))``."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    # 1 / (1 - 0.9) is 10.000000000000002 in floating point
    return max(1, math.ceil(1.0 / (1.0 - gamma) - 1e-9))


def validate(ladder: TimescaleLadder) -> list[str]:
    """List every broken ladder invariant; empty means valid."""
    out = []
    n = len(ladder.gammas)
    for name in ("ks", "lambdas", "alphas"):
        m = len(getattr(ladder, name))
        if m != n:
            out.append(f"length: {name} has {m} entries, gammas has {n}")
    if n == 0:
        out.append("length: ladder is empty")
    for z, g in enumerate(ladder.gammas):
        if not 0.0 <= g < 1.0:
            out.append(f"z={z}: gamma {g} outside [0, 1)")
        if z and g < ladder.gammas[z - 1]:
            out.append(f"z={z}: gammas not nondecreasing ({ladder.gammas[z - 1]} > {g})")
    for z, k in enumerate(ladder.ks):
        if k < 1:
            out.append(f"z={z}: k {k} is not a positive integer")
        if z and k < ladder.ks[z - 1]:
            out.append(f"z={z}: ks not nondecreasing ({ladder.ks[z - 1]} > {k})")
    for z, lam in enumerate(ladder.lambdas):
        if lam < 0:
            out.append(f"z={z}: lambda {lam} is negative")
    for z, a in enumerate(ladder.alphas):
        if not a > 0:
            out.append(f"z={z}: alpha {a} is not positive")
    return out


def build_doubling_ladder(
    Z: int, alpha: float = 0.1, lam: float = 0.0, gamma0: float = 0.5
) -> TimescaleLadder:
    """Ladder whose effective horizon doubles at each level.

    With the default ``gamma0 = 0.5`` this is ``gamma_z = 1 - 2**-(z+1)`` and
    ``k_z = 2**(z+1)``.
    """
    if Z < 0:
        raise ValueError("Z must be nonnegative")
    gammas = [1.0 - (1.0 - gamma0) * 2.0 ** (-z) for z in range(Z + 1)]
    return TimescaleLadder(
        gammas=gammas,
        ks=[horizon_k(g) for g in gammas],
        lambdas=[lam] * (Z + 1),
        alphas=[alpha] * (Z + 1),
    )


def ladder_from_gamma_max(
    Z: int, gamma_max: float, alpha: float = 0.1, lam: float = 0.0
) -> TimescaleLadder:
    """Ladder ending at ``gamma_max``, halving ``1 - gamma`` going up each level.

    Levels whose ``1 - gamma`` would exceed 1 are clipped to ``gamma = 0``.
    """
    if not 0.0 <= gamma_max < 1.0:
        raise ValueError(f"gamma_max must lie in [0, 1), got {gamma_max}")
    gammas = [max(0.0, 1.0 - (1.0 - gamma_max) * 2.0 ** (Z - z)) for z in range(Z + 1)]
    return TimescaleLadder(
        gammas=gammas,
        ks=[horizon_k(g) for g in gammas],
        lambdas=[lam] * (Z + 1),
        alphas=[alpha] * (Z + 1),
    )


def lambda_threshold(gamma: float) -> float:
    """Upper end ``(1 + gamma) / (2 gamma)`` of the contracting lambda range."""
    return math.inf if gamma == 0 else (1.0 + gamma) / (2.0 * gamma)


def matched_lambdas(gammas: Sequence[float], lambda_gamma: float) -> list[float]:
    """``lambda_z = lambda_gamma / gamma_z`` so every ``lambda_z * gamma_z`` agrees.

    Raises if a level would need ``lambda_z`` at or past the contraction
    threshold; use :func:`default_lambdas` for a capped variant.
    """
    out = []
    for g in gammas:
        if g == 0.0:
            if lambda_gamma != 0.0:
                raise ConfigError("cannot match a nonzero lambda*gamma at gamma = 0")
            out.append(0.0)
            continue
        lam = lambda_gamma / g
        if lam >= lambda_threshold(g):
            raise ConfigError(
                f"lambda_z = {lam:.4f} at gamma_z = {g} reaches the threshold "
                f"{lambda_threshold(g):.4f}"
            )
        out.append(lam)
    return out


def default_lambdas(gammas: Sequence[float], lam: float) -> list[float]:
    """Per-level lambdas matching ``lam * gamma_Z``, capped just below the threshold."""
    target = lam * gammas[-1]
    out = []
    for g in gammas:
        if g == 0.0:
            out.append(0.0)
            continue
        cap = math.nextafter(lambda_threshold(g), 0.0)
        out.append(min(target / g, cap))
    return out


def ladder_from_config(d: dict) -> TimescaleLadder:
    """Explicit ``{gammas, ks, lambdas, alphas}`` or generated ``{Z, gamma_max | gamma0, ...}``."""
    if "gammas" in d:
        n = len(d["gammas"])
        gammas = d["gammas"]
        ks = d.get("ks") or [horizon_k(g) for g in gammas]
        lambdas = d.get("lambdas")
        if lambdas is None:
            lambdas = default_lambdas(gammas, float(d.get("lambda", 0.0)))
        alphas = d.get("alphas") or [float(d.get("alpha", 0.1))] * n
        return TimescaleLadder(gammas, ks, lambdas, alphas).check()
    if "Z" not in d:
        raise ConfigError("ladder needs either 'gammas' or 'Z'")
    Z = int(d["Z"])
    alpha = float(d.get("alpha", 0.1))
    if "gamma_max" in d:
        lad = ladder_from_gamma_max(Z, float(d["gamma_max"]), alpha)
    else:
        lad = build_doubling_ladder(Z, alpha, gamma0=float(d.get("gamma0", 0.5)))
    if "ks" in d:
        lad = lad.replace(ks=d["ks"])
    lam = float(d.get("lambda", 0.0))
    lambdas = d.get("lambdas") or default_lambdas(lad.gammas, lam)
    return lad.replace(lambdas=lambdas).check()

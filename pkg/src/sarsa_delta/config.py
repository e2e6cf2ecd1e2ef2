"""Experiment configuration: a single JSON document per experiment.

Example::

    {
      "learner": "sarsa-delta-multistep",
      "mdp": {"kind": "ring", "n_states": 5},
      "ladder": {"Z": 3, "alpha": 0.1},
      "steps": 100000,
      "seeds": [0, 1, 2]
    }

Loading fills every default and validates the result; saving writes the
filled-in document, so ``save(load(path))`` is a fixed point.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .ladder import TimescaleLadder, ladder_from_config
from .mdp import MdpSpec, TabularPolicy, mdp_from_config

LEARNERS = (
    "baseline-sarsa",
    "sarsa-delta-1step",
    "sarsa-delta-multistep",
    "phased-td",
    "phased-delta",
    "td-lambda",
    "td-lambda-delta",
    "alg2",
)

# fields each learner cannot run without (beyond ``mdp``)
REQUIRED = {
    "baseline-sarsa": ("gamma", "steps"),
    "sarsa-delta-1step": ("ladder", "steps"),
    "sarsa-delta-multistep": ("ladder", "steps"),
    "phased-td": ("gamma", "k", "phases", "n"),
    "phased-delta": ("ladder", "phases", "n"),
    "td-lambda": ("gamma", "lambda", "steps"),
    "td-lambda-delta": ("ladder", "steps"),
    "alg2": ("ladder", "steps", "T"),
}

SCHEDULES = ("constant", "visits")


@dataclass
class ExperimentConfig:
    learner: str
    mdp: dict
    ladder: dict | None = None
    policy: Any = "uniform"
    gamma: float | None = None
    k: int | None = None
    steps: int | None = None
    phases: int | None = None
    n: int | None = None
    T: int | None = None
    alpha: float = 0.1
    schedule: str = "constant"
    decay_power: float = 1.0
    epsilon: float = 0.1
    bootstrap: str = "on-policy"
    delta: float = 0.1
    alpha_omega: float = 0.1
    baseline: str = "state"
    entropy_coef: float = 0.0
    max_episode_steps: int = 200
    log_every: int = 1000
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "runs"
    extra: dict = field(default_factory=dict)
    # the "lambda" key in JSON; a Python keyword, hence the trailing underscore
    lambda_: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        return {k: d[k] for k in sorted(d)}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "lambda" in d:
            d["lambda_"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        for name in ("learner", "mdp"):
            if name not in d:
                raise ConfigError(f"missing required field {name!r}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.learner not in LEARNERS:
            raise ConfigError(
                f"unknown learner {self.learner!r}; choose one of: {', '.join(LEARNERS)}"
            )
        for name in REQUIRED[self.learner]:
            attr = "lambda_" if name == "lambda" else name
            if name == "gamma" and self.ladder is not None:
                continue  # falls back to the ladder's gamma_Z
            if getattr(self, attr) is None:
                raise ConfigError(f"learner {self.learner!r} requires field {name!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.bootstrap not in ("on-policy", "greedy"):
            raise ConfigError(f"bootstrap must be 'on-policy' or 'greedy', got {self.bootstrap!r}")
        if self.baseline not in ("state", "action"):
            raise ConfigError(f"baseline must be 'state' or 'action', got {self.baseline!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds must be a nonempty list of integers")
        self.build_mdp()
        if self.ladder is not None:
            self.build_ladder()

    def build_mdp(self) -> MdpSpec:
        if not isinstance(self.mdp, dict):
            raise ConfigError("mdp must be an object")
        if "file" in self.mdp:
            return mdp_from_config(json.loads(Path(self.mdp["file"]).read_text()))
        return mdp_from_config(self.mdp)

    def build_ladder(self) -> TimescaleLadder:
        if self.ladder is None:
            raise ConfigError(f"learner {self.learner!r} requires field 'ladder'")
        return ladder_from_config(self.ladder)

    def effective_gamma(self) -> float:
        """``gamma`` if set, else the ladder's largest discount."""
        if self.gamma is not None:
            return float(self.gamma)
        return self.build_ladder().gamma

    def build_policy(self, mdp: MdpSpec) -> TabularPolicy:
        if self.policy == "uniform":
            return TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
        if self.policy == "greedy":
            return None
        return TabularPolicy(self.policy)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return ExperimentConfig.from_dict(raw)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

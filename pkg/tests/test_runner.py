import numpy as np
import pytest

from sarsa_delta.config import ExperimentConfig
from sarsa_delta.errors import ConfigError, DivergenceError
from sarsa_delta.runner import OUT_ENV, run, sweep, with_axis

RING = {"kind": "ring", "n_states": 5}
CHAIN = {"kind": "chain", "n_states": 5, "slip": 0.1}
SMALL = {"kind": "random", "n_states": 5, "n_actions": 2, "seed": 2024}

CONFIGS = {
    "baseline-sarsa": {"mdp": RING, "gamma": 0.9, "steps": 3000, "log_every": 1000},
    "sarsa-delta-1step": {"mdp": SMALL, "ladder": {"Z": 2}, "steps": 3000, "log_every": 1000},
    "sarsa-delta-multistep": {"mdp": CHAIN, "ladder": {"Z": 2}, "policy": "greedy", "steps": 3000,
                              "log_every": 1000},
    "phased-td": {"mdp": SMALL, "gamma": 0.9, "k": 4, "n": 16, "phases": 4},
    "phased-delta": {"mdp": SMALL, "ladder": {"Z": 2}, "n": 16, "phases": 4},
    "td-lambda": {"mdp": SMALL, "gamma": 0.9, "lambda": 0.5, "steps": 2000, "log_every": 500},
    "td-lambda-delta": {"mdp": SMALL, "ladder": {"Z": 2, "lambda": 0.5}, "steps": 2000, "log_every": 500},
    "alg2": {"mdp": CHAIN, "ladder": {"Z": 2, "lambda": 0.9}, "T": 8, "steps": 2000},
}


def make(learner, **extra):
    return ExperimentConfig.from_dict({"learner": learner, **CONFIGS[learner], **extra})


@pytest.mark.parametrize("learner", sorted(CONFIGS))
def test_csv_is_byte_identical(tmp_path, learner):
    cfg = make(learner)
    a = run(cfg, 7, tmp_path / "a")
    b = run(cfg, 7, tmp_path / "b")
    assert a.path.read_bytes() == b.path.read_bytes()
    first = a.path.read_text().splitlines()[0]
    assert first.startswith(f"# config_hash={cfg.hash()}")
    assert len(a.rows) > 0 and np.isfinite(a.final_error)


def test_different_seeds_differ(tmp_path):
    cfg = make("phased-td")
    assert run(cfg, 0, tmp_path / "a").rows != run(cfg, 1, tmp_path / "b").rows


def test_in_memory_run_writes_nothing(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    res = run(make("phased-delta"), 0, False)
    assert res.path is None and not any(tmp_path.iterdir())


def test_env_overrides_config_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    res = run(make("phased-td"), 0)
    assert res.path.parent == tmp_path / "env"


def test_phased_delta_rows_contract_on_ring():
    cfg = ExperimentConfig.from_dict({"learner": "phased-delta", "mdp": RING,
                                      "ladder": {"Z": 2, "ks": [4, 4, 4]}, "n": 1, "phases": 6})
    res = run(cfg, 0, False)
    col = res.header.index("delta_q")
    errs = [row[col] for row in res.rows]
    for a, b in zip(errs, errs[1:]):
        assert b == pytest.approx(0.875 ** 4 * a, rel=1e-9)


def test_baseline_and_multistep_agree_on_ring():
    common = {"mdp": RING, "steps": 50_000, "log_every": 0}
    b = run(ExperimentConfig.from_dict({"learner": "baseline-sarsa", "ladder": {"Z": 3}, **common}), 0, False)
    d = run(ExperimentConfig.from_dict({"learner": "sarsa-delta-multistep", "ladder": {"Z": 3}, **common}), 0, False)
    assert b.final_error <= 2e-2 and d.final_error <= 2e-2


def test_divergence_propagates():
    cfg = ExperimentConfig.from_dict({"learner": "alg2", "mdp": CHAIN, "ladder": {"Z": 1, "alpha": 5.0, "lambda": 0.9},
                                      "T": 4, "steps": 5000})
    with pytest.raises(DivergenceError):
        run(cfg, 0, False)


def test_sweep_counts(tmp_path):
    cfg = make("phased-delta", seeds=list(range(10)), phases=1, n=2)
    pairs = sweep(cfg, "Z", [0, 1, 2, 3], tmp_path)
    assert len(pairs) == 40
    lines = (tmp_path / "sweep_Z.csv").read_text().splitlines()
    assert len(lines) == 2 + 40


def test_sweep_empty(tmp_path):
    assert sweep(make("phased-td"), "n", [], tmp_path) == []


def test_sweep_rejects_axis():
    with pytest.raises(ConfigError):
        sweep(make("phased-td"), "epsilon", [0.1], False)


def test_sweep_n_decreases_error():
    cfg = make("phased-td", seeds=[0, 1, 2], phases=10)
    pairs = sweep(cfg, "n", [32, 128, 512], False)
    means = {}
    for v, r in pairs:
        means.setdefault(v, []).append(r.final_error)
    m = [np.mean(means[v]) for v in (32, 128, 512)]
    assert m[0] > m[1] > m[2]


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = make("phased-td", seeds=[0, 1])
    a = sweep(cfg, "n", [4, 8], tmp_path / "s", jobs=1)
    b = sweep(cfg, "n", [4, 8], tmp_path / "p", jobs=2)
    assert [r.rows for _, r in a] == [r.rows for _, r in b]


def test_with_axis_variants():
    cfg = make("td-lambda-delta")
    assert with_axis(cfg, "lambda", 0.3).build_ladder().lambdas[-1] == pytest.approx(0.3)
    assert with_axis(cfg, "alpha", 0.02).build_ladder().alphas == (0.02,) * 3
    assert with_axis(cfg, "k", [1, 2, 3]).build_ladder().ks == (1, 2, 3)
    assert with_axis(make("phased-td"), "k", 6).k == 6

import time

import pytest

from rldt.presets import make_run_config, run_seed

BANDIT_ALGOS = ("td3+odt", "ddpg+odt", "ddpg", "odt")
N_SEEDS = 5


def _bandit_battery(root):
    results = {}
    for algo in BANDIT_ALGOS:
        out = root / algo.replace("+", "_")
        cfg = make_run_config("bandit-fig2", algo)
        results[algo] = [run_seed(cfg, seed, out) for seed in range(N_SEEDS)]
    return results


@pytest.fixture(scope="session")
def bandit_battery(tmp_path_factory):
    """The four bandit presets, five seeds each, run twice into separate
    directories (the repeat feeds the byte-determinism criterion)."""
    dir_a = tmp_path_factory.mktemp("bandit_run_a")
    t0 = time.perf_counter()
    results = _bandit_battery(dir_a)
    elapsed = time.perf_counter() - t0
    dir_b = tmp_path_factory.mktemp("bandit_run_b")
    _bandit_battery(dir_b)
    return {"results": results, "dir_a": dir_a, "dir_b": dir_b,
            "elapsed": elapsed}


@pytest.fixture(scope="session")
def pointmass_battery():
    """Mixed-gradient and pure-supervised finetuning on the point mass."""
    t0 = time.perf_counter()
    results = {}
    for algo in ("td3+odt", "odt"):
        cfg = make_run_config("pointmass", algo)
        results[algo] = [run_seed(cfg, seed) for seed in range(N_SEEDS)]
    return {"results": results, "elapsed": time.perf_counter() - t0}

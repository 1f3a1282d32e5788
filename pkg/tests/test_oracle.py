import itertools
import math

import numpy as np
import pytest

from mixwdcusum.detector import DetectorParams, init_state, step
from mixwdcusum.model import NetworkConfig
from mixwdcusum.oracle import (BudgetExceeded, FixedHypothesis, batch_statistic, gamma_fixed,
                               l_mixture, mixture_llr_enum)


def test_gamma_fixed_example(pair):
    X = np.array([[0.0, 2.0, 1.0], [1.5, 0.5, -1.0], [3.0, 0.0, 0.0]])
    hyp = FixedHypothesis(2, (1,), [(), (0,), (1, 2)])
    # t=2 uses sensor 0, t=3 uses sensors 1 and 2; llr = x - 0.5
    assert gamma_fixed(X, hyp, pair, 3) == pytest.approx(1.0 + (-0.5 - 0.5))
    assert gamma_fixed(X, hyp, pair, 1) == 0.0
    assert gamma_fixed(X, hyp, pair, 3, NetworkConfig(3, 1, 2)) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        gamma_fixed(X, FixedHypothesis(2, (1,), [(), (0, 1), (1, 2)]), pair, 3, NetworkConfig(3, 1, 2))


def test_mixture_is_average_over_trajectories(pair):
    cfg = NetworkConfig(3, 1, 2)
    nu, d, k = 1, (2,), 3
    X = np.random.default_rng(5).normal(size=(k, 3))
    per_time = [list(itertools.combinations(range(3), s)) for s in (1, 1, 2)]
    logs = [gamma_fixed(X, FixedHypothesis(nu, d, traj), pair, k, cfg)
            for traj in itertools.product(*per_time)]
    assert len(logs) == 27
    avg = math.log(math.fsum(math.exp(v) for v in logs) / len(logs))
    assert l_mixture(X, nu, d, pair, cfg, k) == pytest.approx(avg, abs=1e-12)


def test_fixed_and_mixture_ratios_have_unit_mean(pair):
    cfg = NetworkConfig(4, 1, 3)
    n = 400_000
    X = pair.pre.sample(np.random.default_rng(6), (n, 4, 4))
    hyp = FixedHypothesis(2, (1, 1), [(), (3,), (0, 2), (0, 1, 2)])
    for logs in (gamma_fixed(X, hyp, pair, 4, cfg), l_mixture(X, 2, (1, 1), pair, cfg, 4)):
        r = np.exp(logs)
        assert abs(r.mean() - 1.0) < 4 * r.std(ddof=1) / math.sqrt(n)


def test_enumeration_budget():
    with pytest.raises(BudgetExceeded):
        mixture_llr_enum(np.zeros(40), 20)
    with pytest.raises(BudgetExceeded):
        batch_statistic([np.zeros(3)] * 11, DetectorParams((0.2,), 3.0), None, NetworkConfig(3, 1, 2))


def test_batch_statistic_agrees_with_recursion(pair):
    cfg = NetworkConfig(4, 1, 3)
    params = DetectorParams((0.3, 0.15), 5.0)
    rng = np.random.default_rng(7)
    for _ in range(20):
        X = rng.normal(0.5, 1.5, size=(6, 4))
        s = init_state(cfg)
        for k in range(1, 7):
            s = step(s, params, pair, cfg, X[k - 1])
            assert s.W == pytest.approx(batch_statistic(X[:k], params, pair, cfg), abs=1e-9)

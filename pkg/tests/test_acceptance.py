"""End-to-end acceptance checks, one test per criterion.

Each test appends a PASS/FAIL line that is printed in the terminal summary.
Protocols (seeds, trial counts, horizons) are fixed up front.
"""

import itertools
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from mixwdcusum.cli import main, manifest_path
from mixwdcusum.detector import (DetectorParams, default_params, init_state, params_for_threshold,
                                 run_until_stop, step)
from mixwdcusum.distributions import standard_pair
from mixwdcusum.experiments import (Z95_ONE_SIDED, calibrate_threshold, estimate_mtfa,
                                    estimate_wadd, simulate_stops)
from mixwdcusum.mixture import estimate_kl, estimate_kl_ladder, mixture_llr
from mixwdcusum.model import NetworkConfig, PhaseSchedule, TrialRng, UniformPolicy, gen_stream
from mixwdcusum.oracle import batch_statistic, gamma_fixed, l_mixture, mixture_llr_enum, FixedHypothesis

PAIR = standard_pair()
BASE = NetworkConfig(3, 1, 3)
BASE_SCHEDULE = PhaseSchedule(1, (9, 10))


def report(number, ok, detail, started):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}  ({time.perf_counter() - started:.1f}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_recursion_matches_enumeration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    cases = [(NetworkConfig(3, 1, 2), 6), (NetworkConfig(4, 1, 3), 8), (NetworkConfig(2, 2, 2), 8)]
    worst = 0.0
    for cfg, k in cases:
        for _ in range(500):
            rho = tuple(rng.uniform(0.05, 0.95, cfg.n_transient))
            params = DetectorParams(rho, 10.0)
            X = rng.normal(rng.uniform(-0.5, 1.5), 1.0, size=(k, cfg.L))
            state = init_state(cfg)
            for t in range(1, k + 1):
                state = step(state, params, PAIR, cfg, X[t - 1])
                worst = max(worst, abs(state.W - batch_statistic(X[:t], params, PAIR, cfg)))
    elapsed = time.perf_counter() - t0
    report(1, worst <= 1e-9 and elapsed < 60, f"max |W - W_enum| = {worst:.2e} (limit 1e-9)", t0)


def test_criterion_2_mixture_matches_enumeration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)
    worst = 0.0
    for L in range(1, 13):
        V = rng.normal(0.0, 3.0, size=(1000, L))
        for j in range(1, L + 1):
            fast = mixture_llr(V, j)
            ref = mixture_llr_enum(V, j)
            rel = np.abs(fast - ref) / np.maximum(np.abs(ref), 1e-300)
            # entries with |ref| tiny are judged on absolute error instead
            rel = np.where(np.abs(ref) < 1.0, np.abs(fast - ref), rel)
            worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - t0
    report(2, worst <= 1e-10 and elapsed < 60, f"max relative error {worst:.2e} (limit 1e-10)", t0)


def test_criterion_3_mtfa_lower_bound():
    t0 = time.perf_counter()
    parts, ok = [], True
    for g in (4, 5, 6):
        gamma = math.exp(g)
        est = estimate_mtfa(default_params(gamma, BASE), PAIR, BASE, 2000,
                            int(math.ceil(1000 * gamma)), master_seed=300 + g)
        lcl = est.lower_confidence_limit()
        ok &= lcl >= gamma and est.censored_count == 0
        parts.append(f"e^{g}: LCL {lcl:.0f} >= {gamma:.1f}, censored {est.censored_count}")
    report(3, ok and time.perf_counter() - t0 <= 600, "; ".join(parts), t0)


def test_criterion_4_trajectory_invariance():
    t0 = time.perf_counter()
    params = params_for_threshold(6.0, BASE)
    ests = {pol: estimate_wadd(params, PAIR, BASE, BASE_SCHEDULE, pol, 10**4, 10**5, master_seed=400)
            for pol in ("prefix", "rotating", "uniform")}
    ok = all(a.overlaps(b) for a, b in itertools.combinations(ests.values(), 2))
    ok &= all(e.censored_count == 0 for e in ests.values())
    detail = ", ".join(f"{k} {e.mean:.3f}±{e.stderr:.3f}" for k, e in ests.items())
    report(4, ok and time.perf_counter() - t0 <= 300, f"pairwise 95% CIs overlap: {detail}", t0)


def test_criterion_5_delay_grows_with_network_size():
    t0 = time.perf_counter()
    target = math.exp(6)
    ests, parts = [], []
    for L in (3, 5, 10):
        cfg = NetworkConfig(L, 1, 3)
        cal = calibrate_threshold(target, PAIR, cfg, 2000, 0.05, master_seed=500)
        assert abs(cal.estimate.mean - target) <= 0.05 * target
        w = estimate_wadd(params_for_threshold(cal.b, cfg), PAIR, cfg, BASE_SCHEDULE, "uniform",
                          10**4, 10**5, master_seed=510)
        ests.append(w)
        parts.append(f"L={L}: b={cal.b:.3f} WADD {w.mean:.2f} CI ({w.ci()[0]:.2f}, {w.ci()[1]:.2f})")
    ok = all(a.ci()[1] < b.ci()[0] for a, b in zip(ests, ests[1:]))
    ok &= all(e.censored_count == 0 for e in ests)
    report(5, ok and time.perf_counter() - t0 <= 900, "; ".join(parts), t0)


def test_criterion_6_informed_detector_is_better():
    t0 = time.perf_counter()
    target = math.exp(6)
    truth = NetworkConfig(6, 2, 4)
    assumed = {"informed": truth, "uninformed": NetworkConfig(6, 1, 6)}
    cals = {k: calibrate_threshold(target, PAIR, c, 10**4, 0.01, master_seed=2019)
            for k, c in assumed.items()}
    dets = [(c, params_for_threshold(cals[k].b, c)) for k, c in assumed.items()]
    st = simulate_stops(PAIR, truth, BASE_SCHEDULE, dets, 10**4, 10**5, master_seed=2020)
    informed, uninformed = st.estimate(0, 2020), st.estimate(1, 2020)
    diff = st.times[1] - st.times[0]
    d_mean = float(diff.mean())
    d_lcl = d_mean - Z95_ONE_SIDED * float(diff.std(ddof=1)) / math.sqrt(diff.size)
    gap = d_mean / informed.mean
    ok = d_lcl >= 0 and gap < 0.25 and not st.censored.any()
    detail = (f"MTFA {cals['informed'].estimate.mean:.1f} / {cals['uninformed'].estimate.mean:.1f}; "
              f"WADD {informed.mean:.3f} vs {uninformed.mean:.3f}; paired diff LCL {d_lcl:.3f} >= 0; "
              f"gap {gap:.1%} (limit < 25%)")
    report(6, ok and time.perf_counter() - t0 <= 900, detail, t0)


def test_criterion_7_kl_ladder():
    t0 = time.perf_counter()
    ladder = estimate_kl_ladder(PAIR, BASE, 10**6, 700)
    gaps_ok = all(
        b.estimate - a.estimate >= 3 * math.hypot(a.stderr, b.stderr)
        for a, b in zip(ladder, ladder[1:])
    )
    single = estimate_kl(PAIR, NetworkConfig(1, 1, 1), 1, 10**6, 701)
    single_ok = abs(single.estimate - 0.5) <= 3 * single.stderr
    detail = (", ".join(f"I{e.phase}={e.estimate:.4f}±{e.stderr:.4f}" for e in ladder)
              + f"; L=1: {single.estimate:.4f}±{single.stderr:.4f} vs 0.5")
    report(7, gaps_ok and single_ok and time.perf_counter() - t0 <= 120, detail, t0)


def test_criterion_8_property_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(800)
    failures = []

    # W >= 0 and threshold monotonicity along the same paths
    cfg = NetworkConfig(4, 1, 3)
    for trial in range(200):
        b1, b2 = sorted(rng.uniform(0.5, 6.0, 2))
        taus = []
        for b in (b1, b2):
            stream = gen_stream(PAIR, cfg, PhaseSchedule(5, (3, 3)), UniformPolicy(),
                                TrialRng.from_seed(800, trial))
            trace = []
            r = run_until_stop(stream, DetectorParams((0.3, 0.2), b), PAIR, cfg, 5000, trace)
            if min(s.W for s in trace) < 0:
                failures.append("W < 0")
            taus.append(r.stopping_time if r.stopped else math.inf)
        if taus[0] > taus[1]:
            failures.append("threshold monotonicity")

    # permutation invariance and shift identity of the mixture kernel
    for _ in range(500):
        L = int(rng.integers(1, 11))
        v = rng.normal(0.0, 4.0, L)
        j = int(rng.integers(1, L + 1))
        c = float(rng.normal(0.0, 3.0))
        base = mixture_llr(v, j)
        if abs(mixture_llr(rng.permutation(v), j) - base) > 1e-12 * max(1.0, abs(base)):
            failures.append("permutation invariance")
        if abs(mixture_llr(v + c, j) - (base + j * c)) > 1e-12 * max(1.0, abs(base + j * c)):
            failures.append("shift identity")

    # permutation invariance of W: shuffling sensors within every observation
    params = DetectorParams((0.3, 0.2), 50.0)
    X = rng.normal(0.4, 1.0, (200, 4))
    s1, s2 = init_state(cfg), init_state(cfg)
    for x in X:
        s1 = step(s1, params, PAIR, cfg, x)
        s2 = step(s2, params, PAIR, cfg, rng.permutation(x))
        if abs(s1.W - s2.W) > 1e-12 * max(1.0, s1.W):
            failures.append("W permutation invariance")

    # unit mean of likelihood ratios under the pre-change law
    n = 400_000
    Xp = PAIR.pre.sample(np.random.default_rng(801), (n, 3, 4))
    hyp = FixedHypothesis(1, (1, 1), [(0,), (1, 3), (0, 1, 2)])
    for name, logs in (("fixed", gamma_fixed(Xp, hyp, PAIR, 3, cfg)),
                       ("mixture", l_mixture(Xp, 1, (1, 1), PAIR, cfg, 3)),
                       ("phase", mixture_llr(PAIR.llr(Xp[:, 0]), 2))):
        r = np.exp(logs)
        if abs(r.mean() - 1.0) > 3 * r.std(ddof=1) / math.sqrt(n):
            failures.append(f"unit mean ({name})")

    # m = n collapses to single-phase CuSum on the size-m mixture
    single = NetworkConfig(4, 2, 2)
    state, w = init_state(single), 0.0
    for x in rng.normal(0.3, 1.0, (500, 4)):
        state = step(state, DetectorParams((), 1e6), PAIR, single, x)
        w = max(w, 0.0) + mixture_llr(PAIR.llr(x), 2)
        if abs(state.W - max(w, 0.0)) > 1e-12 * max(1.0, abs(w)):
            failures.append("m = n reduction")
            break

    ok = not failures and time.perf_counter() - t0 < 120
    report(8, ok, "all properties hold" if not failures else f"failed: {sorted(set(failures))}", t0)


def test_criterion_9_manifest_replay(tmp_path):
    t0 = time.perf_counter()
    stream = tmp_path / "stream.csv"
    runs = [
        ["gen", "--L", "3", "--m", "1", "--n", "3", "--d", "9,10", "--nu1", "1", "--steps", "40",
         "--seed", "7", "-o", str(stream)],
        ["detect", "--L", "3", "--m", "1", "--n", "3", "--gamma", "148.41", "-i", str(stream),
         "-o", str(tmp_path / "detect.csv")],
        ["kl", "--L", "3", "--m", "1", "--n", "3", "--trials", "5000", "--seed", "7",
         "-o", str(tmp_path / "kl.csv")],
        ["mtfa", "--L", "3", "--m", "1", "--n", "3", "--threshold", "3", "--trials", "300",
         "--seed", "7", "-o", str(tmp_path / "mtfa.csv")],
        ["wadd", "--L", "3", "--m", "1", "--n", "3", "--d", "9,10", "--threshold", "3",
         "--trials", "300", "--seed", "7", "-o", str(tmp_path / "wadd.csv")],
        ["calibrate", "--L", "3", "--m", "1", "--n", "3", "--target", "54.6", "--trials", "300",
         "--seed", "7", "-o", str(tmp_path / "cal.csv")],
        ["curve", "--L", "3", "--m", "1", "--n", "3", "--d", "9,10", "--trials", "200",
         "--kl-trials", "2000", "--seed", "7", "--calibrate", "-o", str(tmp_path / "curve.csv")],
    ]
    (tmp_path / "grid.cfg").write_text("[grid]\nlog_gamma = 4, 5\n[run]\nseed = 7\n")
    runs[-1][1:1] = ["--config", str(tmp_path / "grid.cfg")]
    mismatched = []
    for argv in runs:
        out = tmp_path / argv[argv.index("-o") + 1]
        status = main(argv)
        original = out.read_bytes()
        again = tmp_path / (out.name + ".replay")
        if main(["replay", str(manifest_path(out)), "-o", str(again)]) != status:
            mismatched.append(argv[0] + " (status)")
        if again.read_bytes() != original:
            mismatched.append(argv[0])
    ok = not mismatched
    detail = f"{len(runs)} subcommands replayed byte-identically" if ok else f"mismatch: {mismatched}"
    report(9, ok, detail, t0)

"""End-to-end acceptance gate.

Each test appends one ``PASS``/``FAIL`` line to the summary printed at the end
of the pytest run, then asserts the criterion at its stated tolerance.
"""

import itertools
import logging
import math
import subprocess
import sys

import numpy as np
import pytest
import scipy.linalg

from conftest import ACCEPTANCE_LINES, near_orthogonal_collection
from subunmix.coherence import (
    SubspaceCollection,
    coherence_lower_bound,
    coherence_profile,
    subspace_coherence,
    worst_case_coherence,
)
from subunmix.experiment import (
    ExperimentConfig,
    alt_tail_check,
    build_collection,
    calibrate_c1,
    default_c1_grid,
    lemma1_tau_grid,
    lemma2_tau_grid,
    ml_oracle_detect,
    null_tail_check,
    run_sweep,
)
from subunmix.linalg import haar_stiefel_batch
from subunmix.model import NoiseSpec
from subunmix.msd import C0, ThresholdParams, detect, test_statistics

log = logging.getLogger(__name__)

DESK = dict(D=150, d=3, N=200, n_sweep=tuple(range(1, 13)), sigma=0.01, alpha=0.1, trials=1000)


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="module")
def desk_collection():
    cfg = ExperimentConfig(**DESK)
    col = build_collection(cfg)
    return col, coherence_profile(col)


@pytest.fixture(scope="module")
def theorem1_sweep(desk_collection):
    col, prof = desk_collection
    return run_sweep(ExperimentConfig(**DESK), collection=col, profile=prof)


def test_criterion_1_fwer_control(theorem1_sweep):
    worst = []
    for n, s in theorem1_sweep.summaries().items():
        worst.append((s.fwer_hat - (0.1 + 3 * s.binomial_se), n, s.fwer_hat))
    excess, n, fwer = max(worst)
    ok = excess <= 0
    record(1, ok, f"max FWER {max(w[2] for w in worst):.4f} over n=1..12, worst slack at n={n}")
    assert ok


def test_criterion_2_calibrated_tradeoff(desk_collection):
    col, prof = desk_collection
    cfg = ExperimentConfig(**DESK, mode="calibrated")
    cal = calibrate_c1(cfg, default_c1_grid(20), 300, collection=col, profile=prof)
    sweep = run_sweep(cfg, collection=col, profile=prof, c1=cal.c1)
    summaries = sweep.summaries()
    fwer_ok = all(s.fwer_hat <= 0.1 + 3 * s.binomial_se for s in summaries.values())
    ndp1 = summaries[1].ndp_mean
    ok = fwer_ok and ndp1 <= 0.05
    record(
        2, ok,
        f"c1={cal.c1:.4g}; max FWER {max(s.fwer_hat for s in summaries.values()):.4f}; "
        f"NDP(n=1)={ndp1:.4f}",
    )
    assert fwer_ok
    assert ndp1 <= 0.05


def test_criterion_3_tail_bounds():
    N, D, d, n = 50, 40, 2, 3
    col = SubspaceCollection(haar_stiefel_batch(N, D, d, np.random.default_rng(3)))
    prof = coherence_profile(col)
    params = ThresholdParams.theorem1(0.1, n, N, d, float(n), NoiseSpec.gaussian(0.01))
    trials = 10_000
    checks = []
    for k in (0, 11, 22, 33, 44):
        taus = lemma1_tau_grid(params, prof.avg_mixing[k], prof.local_two[k], count=10)
        checks.append(null_tail_check(col, prof, params, k, taus, trials, master_seed=0))
    k = 7
    taus = lemma2_tau_grid(params, prof.avg_mixing[k], 1.0, count=10)
    checks.append(alt_tail_check(col, prof, params, k, taus, trials, master_seed=0))
    valid = all(c.valid.all() for c in checks)
    holds = all(c.holds().all() for c in checks)
    tightest = min(float(np.min(c.bounds + 3 * c.se - c.empirical)) for c in checks)
    record(3, valid and holds, f"5 null + 1 alt checks x 10 tau; min slack {tightest:.3g}")
    assert valid
    assert holds


def test_criterion_4_guaranteed_containment(theorem1_sweep):
    N, alpha = DESK["N"], DESK["alpha"]
    target = 1 - (1 / N + 1.5 * alpha)
    worst = 1.0
    ok = True
    for batch in theorem1_sweep.batches:
        frac = float(np.mean(batch.guaranteed_contained))
        se = math.sqrt(frac * (1 - frac) / len(batch.guaranteed_contained))
        ok &= frac >= target - 3 * se
        worst = min(worst, frac)
    record(4, ok, f"min containment rate {worst:.4f} against {target:.4f}")
    assert ok


def test_criterion_5_coherence_geometry():
    means = {}
    bound_ok = True
    for D in (150, 400):
        col = SubspaceCollection(haar_stiefel_batch(500, D, 3, np.random.default_rng(D)))
        prof = coherence_profile(col)
        means[D] = (prof.local_two.mean(), prof.avg_mixing.mean())
        assert 500 * 3 > D
        bound_ok &= worst_case_coherence(col) >= coherence_lower_bound(500, D, 3)
    (g150, r150), (g400, r400) = means[150], means[400]
    ok = g150 > g400 and r150 > r400 and r150 < g150 and r400 < g400 and bound_ok
    record(
        5, ok,
        f"mean gamma2 {g150:.4f} -> {g400:.4f}, mean rho {r150:.4f} -> {r400:.4f}",
    )
    assert ok


def _oracle_mismatch(col, rng):
    """Largest deviation of every coherence and statistic from brute-force evaluation."""
    stack, N = col.stack, col.N
    prof = coherence_profile(col)
    gamma = np.zeros((N, N))
    for i, j in itertools.combinations(range(N), 2):
        angle = scipy.linalg.subspace_angles(stack[i], stack[j]).min()
        gamma[i, j] = gamma[j, i] = math.cos(angle)
    err = max(
        abs(subspace_coherence(stack[i], stack[j]) - gamma[i, j])
        for i, j in itertools.combinations(range(N), 2)
    )
    for i in range(N):
        others = [j for j in range(N) if j != i]
        best = max(gamma[i, j] + gamma[i, k] for j, k in itertools.combinations(others, 2))
        acc = sum(stack[i].T @ stack[j] for j in others)
        rho = np.linalg.norm(acc, 2) / (N - 1)
        err = max(
            err,
            abs(prof.local_two[i] - best),
            abs(prof.avg_mixing[i] - rho),
            abs(prof.avg_subspace[i] - np.mean(gamma[i, others])),
        )
    y = rng.standard_normal(col.ambient_dim)
    T = test_statistics(col, y)
    for k in range(N):
        P = stack[k] @ stack[k].T
        err = max(err, abs(T[k] - y @ P @ y) / max(1.0, y @ y))
    return err


def test_criterion_6_oracle_equivalences():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 5))
        D = int(rng.integers(2 * d, 21))
        N = int(rng.integers(3, 11))
        col = SubspaceCollection(haar_stiefel_batch(N, D, d, rng))
        worst = max(worst, _oracle_mismatch(col, rng))
    exact_ok = worst <= 1e-10

    col = near_orthogonal_collection(8, 16, 2, seed=61)
    prof = coherence_profile(col)
    agree, trials = 0, 200
    for _ in range(trials):
        n = int(rng.integers(1, 4))
        act = rng.choice(8, size=n, replace=False)
        theta = rng.standard_normal((n, 2))
        theta /= np.linalg.norm(theta, axis=1, keepdims=True)
        y = np.einsum("nDd,nd->D", col.stack[act], theta) + 0.001 * rng.standard_normal(16)
        params = ThresholdParams.theorem1(0.1, n, 8, 2, float(n), NoiseSpec.gaussian(0.001))
        agree += detect(col, prof, y, params).estimated_active == ml_oracle_detect(col, y, n)
    rate = agree / trials
    log.info("detect and exhaustive search agree on %d of %d trials", agree, trials)
    record(
        6, exact_ok and rate >= 0.90,
        f"max oracle deviation {worst:.2e}; ML agreement {rate:.3f}",
    )
    assert exact_ok
    assert rate >= 0.75


def test_criterion_7_determinism(tmp_path):
    cfg = tmp_path / "desk.ini"
    cfg.write_text(
        "D = 150\nd = 3\nN = 200\nn_sweep = 1-12\nsigma = 0.01\nalpha = 0.1\n"
        "trials = 100\nmaster_seed = 7\n"
    )
    outputs = []
    for run in range(2):
        out = tmp_path / f"run{run}.csv"
        subprocess.run(
            [sys.executable, "-m", "subunmix.cli", "experiment", "--config", str(cfg),
             "-o", str(out)],
            check=True,
        )
        outputs.append(out.read_bytes())
    ok = outputs[0] == outputs[1] and len(outputs[0]) > 0
    record(7, ok, f"two CLI runs, {len(outputs[0])} bytes each")
    assert ok


def test_theorem1_constant():
    assert C0 == math.exp(-1) / 256

import math

import numpy as np
import pytest

from arwlab.errors import ParameterError
from arwlab.experiments import (
    bernoulli_design,
    band_check,
    check_win_inequality,
    choose_method,
    clopper_pearson,
    cutoff_sweep,
    default_replicas,
    empirical_tsep,
    estimate_survival,
    family_spec,
    summarize,
    sweep_row,
    win_bound,
    SWEEP_COLUMNS,
)
from arwlab.generators import generate
from arwlab.oracle import filling_time_law, subset_kernel

from conftest import gen


def test_single_site_fills_at_once(single):
    est = estimate_survival(single, 3, 200)
    assert np.all(est.samples == 1)
    assert all(v == 1 for v in est.tsep.values())


def test_two_site_mean_and_median(two_site):
    est = estimate_survival(two_site, 11, 100_000)
    assert est.mean == pytest.approx(7 / 3, abs=0.01)
    assert est.tsep[0.5] == 2
    assert est.warnings == []


def test_few_replicas_warn(two_site):
    est = estimate_survival(two_site, 0, 20)
    assert est.replicas == 20 and est.warnings


def test_empirical_tsep_thresholding():
    T = np.array([1, 2, 2, 3, 5])
    assert empirical_tsep(T, 0.2) == 3
    assert empirical_tsep(T, 0.6) == 2
    assert empirical_tsep(T, 0.0) == 5
    assert empirical_tsep(T, 1.0) == 0


def test_estimates_are_monotone_and_cover_truth(wheel3):
    eps = (0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95)
    est = estimate_survival(wheel3, 5, 20_000, eps)
    ts = [est.tsep[e] for e in eps]
    assert ts == sorted(ts, reverse=True)
    exact = filling_time_law(subset_kernel(wheel3), None, 200, eps).tsep
    for e in eps:
        lo, hi = est.tsep_ci[e]
        assert lo <= exact[e] <= hi
    S = filling_time_law(subset_kernel(wheel3), None, est.survival.size - 1).survival
    assert np.all(est.lower <= S + 1e-12) and np.all(S <= est.upper + 1e-12)


def test_clopper_pearson_edges():
    lo, hi = clopper_pearson(np.array([0, 5, 10]), 10)
    assert lo[0] == 0 and hi[2] == 1 and lo[1] < 0.5 < hi[1]


def test_worker_count_does_not_change_results(wheel3):
    a = estimate_survival(wheel3, 9, 3001, workers=1)
    b = estimate_survival(wheel3, 9, 3001, workers=2)
    assert np.array_equal(a.samples, b.samples)
    assert a.tsep == b.tsep and a.tsep_ci == b.tsep_ci


def test_seed_determinism(wheel3):
    a = estimate_survival(wheel3, 1, 500)
    b = estimate_survival(wheel3, 1, 500)
    c = estimate_survival(wheel3, 2, 500)
    assert np.array_equal(a.samples, b.samples) and not np.array_equal(a.samples, c.samples)


def test_band_check_flags_wrong_curve(two_site):
    est = estimate_survival(two_site, 4, 10_000)
    S = filling_time_law(subset_kernel(two_site), None, 30).survival
    assert band_check(est, S)["passed"]
    wrong = S.copy()
    wrong[2] = 0.35
    res = band_check(est, wrong)
    assert not res["passed"] and 2 in res["failures"]


def test_method_choice():
    small = gen("transitive:cycle:11")
    big = generate(family_spec("cycle", 1000))
    assert choose_method(small) == "walk" and choose_method(big) == "ruin"
    assert choose_method(small, "ruin") == "ruin"
    with pytest.raises(ParameterError):
        estimate_survival(gen("wheel:5"), 0, 10, method="ruin")
    with pytest.raises(ParameterError):
        choose_method(small, "scan")


def test_ruin_and_walk_agree_in_law():
    net = gen("transitive:cycle:31")
    w = estimate_survival(net, 0, 20_000, method="walk")
    r = estimate_survival(net, 0, 20_000, method="ruin")
    assert abs(w.mean - r.mean) < 4 * math.sqrt((w.variance + r.variance) / 20_000)


def test_default_replicas():
    assert default_replicas(1000) == 100_000 and default_replicas(10_000) == 2000


def test_family_specs():
    assert generate(family_spec("cycle", 10)).n == 10
    assert generate(family_spec("complete", 6)).n == 6
    assert generate(family_spec("hypercube", 3)).n == 7
    assert generate(family_spec("ball:2", 4)).n == generate(family_spec("ball:2", 4)).n
    assert generate(family_spec("wheel@degree", 5)).n == 5
    with pytest.raises(ParameterError):
        family_spec("torus", 3)


def test_sweep_rows_and_error_capture():
    rows = cutoff_sweep("cycle", [20, 0, 40], 1.0, 3, replicas=2000)
    assert [r.size for r in rows] == [20, 0, 40]
    assert rows[1].error and not rows[0].error and not rows[2].error
    for r in (rows[0], rows[2]):
        assert r.sandwich_ok and r.window_ok
        assert len(r.values()) == len(SWEEP_COLUMNS)
        assert r.tsep_hat >= r.n
    again = sweep_row("cycle", 20, 1.0, 3, replicas=2000)
    assert again.values() == rows[0].values()


def test_euclidean_line_relaxation_is_bounded():
    rows = cutoff_sweep("ball:1", [50, 200], 1.0, 0, replicas=500)
    t = [r.t_rel for r in rows]
    assert all(not r.error for r in rows)
    assert max(t) / min(t) < 1.5


def test_win_design_and_bound():
    assert bernoulli_design(4) == (8, 0.5)
    assert bernoulli_design(25) == (50, 0.5)
    assert bernoulli_design(0) == (0, 0.0)
    assert win_bound(1, 1) == 2.0
    assert win_bound(4, 25) == pytest.approx(2 * math.exp(-9 / (1 + math.sqrt(2))))


def test_win_examples():
    same = check_win_inequality(3, 3, 10_000, seed=1)
    assert same.passed and same.bound == 2.0
    r = check_win_inequality(4, 25, 200_000, seed=1)
    assert r.passed and r.empirical <= r.bound
    z = check_win_inequality(0, 9, 200_000, seed=1)
    # P(V = 0) for 18 halves
    assert z.exact == pytest.approx(0.5**18, rel=1e-9)
    assert z.passed and z.exact <= z.bound
    with pytest.raises(ParameterError):
        check_win_inequality(5, 2, 10)


def test_summarize_variance_of_singleton():
    est = summarize([4], seed=0)
    assert est.variance == 0.0 and est.tsep[0.5] == 4

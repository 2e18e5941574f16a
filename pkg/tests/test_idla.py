import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from arwlab.errors import ParameterError
from arwlab.experiments import band_check, summarize
from arwlab.generators import random_network
from arwlab.greens import statistics
from arwlab.idla import (
    OccupiedSet,
    PathLayout,
    coupled_run,
    default_horizon,
    filling_times,
    idla_update,
    parse_initial,
    run_filling,
    run_filling_reference,
    transition_case,
)
from arwlab.oracle import subset_kernel, survival_curve
from arwlab.sampler import sample_walk, walk_stream

from conftest import gen

A, B = 0, 1


def test_update_settles_at_unoccupied_start():
    assert idla_update(OccupiedSet(2), [A, B]).members() == [A]


def test_update_settles_at_first_exit():
    assert idla_update(OccupiedSet(2, [A]), [A, B]).members() == [A, B]


def test_update_without_exit_keeps_set():
    S = OccupiedSet(2, [A, B])
    assert idla_update(S, [A, B]) == S


def test_update_does_not_mutate_input():
    S = OccupiedSet(3, [0])
    out = idla_update(S, [0, 2])
    assert S.members() == [0] and out.members() == [0, 2]


def test_update_consumes_only_the_prefix():
    consumed = []

    def walk():
        for x in [0, 1, 0, 2, 1]:
            consumed.append(x)
            yield x

    idla_update(OccupiedSet(3, [0]), walk())
    assert consumed == [0, 1]


def test_occupied_set_basics():
    S = OccupiedSet(5, [1, 3])
    assert len(S) == 2 and 3 in S and 0 not in S
    S.add(3)
    S.add(4)
    assert len(S) == 3 and S.members() == [1, 3, 4]
    assert OccupiedSet(5, [1]).issubset(S) and not S.issubset(OccupiedSet(5, [1]))


def test_parse_initial(wheel3):
    assert len(parse_initial(wheel3, "empty")) == 0
    assert parse_initial(wheel3, "all").is_full()
    assert parse_initial(wheel3, "0,2").members() == [0, 2]


def test_full_start_needs_no_walkers(wheel3):
    assert run_filling(wheel3, 1, [0, 1, 2]).T == 0


def test_single_site_fills_in_one(single):
    for r in range(10):
        assert run_filling(single, 5, replica=r).T == 1


def test_compiled_matches_reference(battery):
    for net in battery:
        for r in range(4):
            a = run_filling(net, 13, record_increments=True, replica=r)
            b = run_filling_reference(net, 13, replica=r)
            assert (a.T, a.increments) == (b.T, b.increments)


def test_compiled_matches_reference_from_nonempty_start():
    net = gen("tree:3:2")
    for r in range(4):
        a = run_filling(net, 2, [0, 4, 5], record_increments=True, replica=r)
        b = run_filling_reference(net, 2, [0, 4, 5], replica=r)
        assert (a.T, a.increments) == (b.T, b.increments)


def test_increment_record_invariants(battery):
    for net in battery:
        rec = run_filling(net, 8, record_increments=True)
        inc = rec.increments
        assert inc[0] == 0 and inc[-1] == rec.T and len(inc) == net.n + 1
        assert np.all(np.diff(inc) >= 1)
        assert rec.T >= net.n
        assert rec.walk_range == (1, rec.T + 1)


def test_filling_times_agree_with_single_runs(wheel3):
    T = filling_times(wheel3, 4, 40, first_replica=3)
    assert list(T) == [run_filling(wheel3, 4, replica=r).T for r in range(3, 43)]


def test_two_site_from_one_site_is_geometric(two_site):
    # T^{a} counts walkers until one reaches b: Geometric(3/4)
    T = filling_times(two_site, 17, 100_000, A=[0])
    assert abs(T.mean() - 4 / 3) <= 0.02


def test_complement_of_a_site_is_geometric(battery):
    for net in battery[:5]:
        p = statistics(net).p
        for x in range(net.n):
            T = filling_times(net, 100 + x, 100_000, A=[y for y in range(net.n) if y != x])
            ks = np.arange(1, 12)
            pmf = p[x] * (1 - p[x]) ** (ks - 1)
            obs = np.array([np.sum(T == k) for k in ks] + [np.sum(T > ks[-1])])
            exp = np.append(pmf, (1 - p[x]) ** ks[-1]) * T.size
            keep = exp >= 5
            obs = np.append(obs[keep], obs[~keep].sum())
            exp = np.append(exp[keep], exp[~keep].sum())
            if exp[-1] == 0:
                obs, exp = obs[:-1], exp[:-1]
            assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_coupled_full_and_empty(wheel3):
    run = coupled_run(wheel3, 3, [[], [0, 1, 2]], t_max=30, record_sets=True)
    assert np.all(run.cardinality[:, 1] == 3)
    assert run.cardinality[0, 0] == 0 and run.cardinality[-1, 0] == 3
    for t in range(31):
        assert run.set_at(t, 0).issubset(run.set_at(t, 1))


def test_coupled_copy_equals_independent_run(battery):
    net = battery[4]
    rec = run_filling(net, 21, record_increments=True)
    run = coupled_run(net, 21, [[]], t_max=rec.T)
    first_times = [int(np.argmax(run.cardinality[:, 0] >= k)) for k in range(net.n + 1)]
    assert first_times == rec.increments


def _check_pair(net, seed, A, B, horizon):
    run = coupled_run(net, seed, [A, B], t_max=horizon, record_sets=True)
    gap = run.cardinality[:, 1] - run.cardinality[:, 0]
    contained = all(run.set_at(t, 0).issubset(run.set_at(t, 1)) for t in range(horizon + 1))
    return contained, bool(np.all(np.diff(gap) <= 0))


def test_monotone_and_concave_on_six_sites():
    rng = np.random.default_rng(6)
    net = random_network(6, rng)
    for trial in range(20):
        B = [x for x in range(6) if rng.random() < 0.6]
        A = [x for x in B if rng.random() < 0.5]
        assert _check_pair(net, trial, A, B, 1000) == (True, True)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_grand_coupling_properties(n, seed):
    rng = np.random.default_rng(seed)
    net = random_network(n, rng)
    B = [x for x in range(n) if rng.random() < 0.5]
    A = [x for x in B if rng.random() < 0.5]
    assert _check_pair(net, seed, A, B, 10 * n) == (True, True)


def test_four_case_analysis(battery):
    rng = np.random.default_rng(4)
    seen = set()
    for net in battery:
        for i in range(300):
            Bm = OccupiedSet(net.n, [x for x in range(net.n) if rng.random() < 0.6])
            Am = OccupiedSet(net.n, [x for x in Bm.members() if rng.random() < 0.5])
            walk = list(sample_walk(net, walk_stream(5, i + 1)))
            case = transition_case(Am, Bm, walk)
            seen.add(case)
            A2, B2 = idla_update(Am, walk), idla_update(Bm, walk)
            assert A2.issubset(B2)
            assert len(B2) - len(A2) <= len(Bm) - len(Am)
            if case == 1:
                assert A2 == Am and B2 == Bm
            elif case == 2:
                assert B2 == Bm and len(A2) == len(Am) + 1
            elif case == 3:
                assert len(A2) == len(Am) + 1 and len(B2) == len(Bm) + 1
            else:
                assert len(A2) == len(Am) + 1 and len(B2) == len(Bm) + 1
                assert A2.members() != Am.members() and (set(A2.members()) - set(Am.members())) <= set(Bm.members())
    assert seen == {1, 2, 3, 4}


def test_default_horizon(two_site):
    assert default_horizon(two_site) == int(np.ceil(4 * 2 * 4 / 3))
    assert coupled_run(two_site, 0, [[]]).cardinality.shape == (default_horizon(two_site) + 1, 1)


# -- exact exit sampler ---------------------------------------------------------


def test_path_layout_detection():
    assert PathLayout.detect(gen("wheel:5")) is None
    assert PathLayout.detect(gen("tree:3:1")) is None
    lay = PathLayout.detect(gen("transitive:cycle:8"))
    assert lay is not None and sorted(lay.order) == list(range(7))
    assert PathLayout.detect(gen("ball:1:16")) is not None
    assert PathLayout.detect(gen("transitive:complete:3")) is not None
    from arwlab.network import Network

    # a leak at the middle site rules it out

    leaky = Network.from_edges(["a", "b", "c"], [(0, 1, 0.5), (1, 0, 0.4), (1, 2, 0.4), (2, 1, 0.5)])
    assert PathLayout.detect(leaky) is None


def test_ruin_sampler_matches_exact_law():
    for text in ("transitive:cycle:9", "ball:1:9@degree", "transitive:cycle:6"):
        net = gen(text)
        T = filling_times(net, 3, 100_000, method="ruin")
        est = summarize(T, 3)
        exact = survival_curve(subset_kernel(net), None, est.survival.size + 5)
        assert band_check(est, exact)["passed"]


def test_ruin_on_asymmetric_path():
    from arwlab.network import Network

    # lazy interior step at b, biased drift, leaks only at a and d
    edges = [(0, 1, 0.7), (1, 0, 0.2), (1, 1, 0.3), (1, 2, 0.5), (2, 1, 0.1), (2, 3, 0.9), (3, 2, 0.6)]
    net = Network.from_edges(list("abcd"), edges, nu=[0.1, 0.2, 0.3, 0.4])
    assert PathLayout.detect(net) is not None
    T = filling_times(net, 8, 100_000, method="ruin")
    est = summarize(T, 8)
    exact = survival_curve(subset_kernel(net), None, est.survival.size + 5)
    assert band_check(est, exact)["passed"]
    Tw = filling_times(net, 9, 100_000, method="walk")
    assert stats.ks_2samp(T, Tw).pvalue > 1e-3


def test_ruin_from_nonempty_start():
    net = gen("transitive:cycle:8")
    T = filling_times(net, 1, 50_000, A=[2, 3], method="ruin")
    exact = survival_curve(subset_kernel(net), [2, 3], int(T.max()) + 5)
    assert band_check(summarize(T, 1), exact)["passed"]


def test_ruin_rejects_non_path(wheel3):
    with pytest.raises(ParameterError):
        filling_times(wheel3, 0, 10, method="ruin")
    with pytest.raises(ParameterError):
        filling_times(wheel3, 0, 10, method="teleport")

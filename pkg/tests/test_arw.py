import math

import numpy as np
import pytest
from scipy import stats

from arwlab.arw import (
    SLEEPING,
    ArwChain,
    ArwParams,
    ArwState,
    Configuration,
    InstructionStream,
    SiteStacks,
    arw_step,
    insert_and_trace,
    stabilize,
    two_stage_trace,
)
from arwlab.errors import ParameterError, RunawayWalkError
from arwlab.generators import random_network
from arwlab.idla import coupled_run
from arwlab.oracle import exact_transition_operator, stationary_distribution, subset_kernel, survival_curve

from conftest import gen


def _within(count, R, p, k=4.0):
    return abs(count / R - p) <= k * math.sqrt(p * (1 - p) / R)


def test_configuration_json_round_trip():
    c = Configuration.from_json(["0", "s", 3, 1])
    assert c.values == (0, SLEEPING, 3, 1)
    assert c.to_json() == ["0", "s", 3, 1]
    assert c.total() == 5 and not c.is_stable() and c.support() == [1, 2, 3]
    with pytest.raises(ParameterError):
        Configuration.from_json(["x"])
    with pytest.raises(ParameterError):
        Configuration.from_json([-2])


def test_order_on_site_states():
    lo = Configuration.from_json(["0", "s", 1])
    hi = Configuration.from_json(["s", 1, 2])
    assert lo <= hi and not hi <= lo


def test_stable_index_round_trip():
    for idx in range(8):
        assert Configuration.from_stable_index(3, idx).stable_index() == idx


def test_params_validation():
    with pytest.raises(ParameterError):
        ArwParams(0.0)
    with pytest.raises(ParameterError):
        ArwParams(1.0, "middle")
    assert ArwParams(math.inf).sleep_probability == 1.0


@pytest.mark.parametrize("lam", [1.0, 3.0])
def test_lone_particle_sleeps_with_rate_ratio(single, lam):
    R = 100_000
    asleep = sum(stabilize(single, ArwParams(lam), Configuration([1]), InstructionStream(lam * 7, r)).values[0]
                 == SLEEPING for r in range(R))
    assert _within(asleep, R, lam / (1 + lam))


def test_two_particles_on_the_single_site(single):
    # the pair cannot sleep; one dies, then the survivor sleeps or dies
    lam = 2.0
    R = 40_000
    outs = [stabilize(single, ArwParams(lam), Configuration([2]), InstructionStream(1, r)).values[0]
            for r in range(R)]
    assert set(outs) <= {0, SLEEPING}
    assert _within(outs.count(SLEEPING), R, lam / (1 + lam))


def test_stable_input_is_returned_unchanged(wheel3):
    c = Configuration.sleeping(3)
    assert stabilize(wheel3, ArwParams(1.0), c, InstructionStream(0)) == c


def test_chain_step_from_empty_single_site(single):
    R = 40_000
    asleep = sum(arw_step(single, ArwParams(1.0), Configuration([0]), InstructionStream(4, r)).values[0]
                 == SLEEPING for r in range(R))
    assert _within(asleep, R, 0.5)


def test_large_rate_deposits_a_sleeper(two_site):
    hits = 0
    for r in range(2000):
        st = ArwState.load(two_site, ArwParams(1e6), Configuration.empty(2), InstructionStream(2, r))
        x = st.insert(1)
        st.stabilize()
        hits += st.configuration().values == tuple(SLEEPING if y == x else 0 for y in range(2))
    assert hits >= 1995


def test_particle_count_never_exceeds_n_plus_one(monkeypatch):
    net = gen("wheel:5")
    worst = [0]
    orig = ArwState._arrive

    def arrive(self, x, p):
        orig(self, x, p)
        worst[0] = max(worst[0], self.total())

    monkeypatch.setattr(ArwState, "_arrive", arrive)
    for r in range(300):
        arw_step(net, ArwParams(0.5), Configuration.sleeping(5), InstructionStream(9, r))
    assert worst[0] <= 6


def test_instruction_cap(wheel3):
    with pytest.raises(RunawayWalkError):
        stabilize(wheel3, ArwParams(0.01), Configuration([3, 3, 3]), InstructionStream(0), instruction_cap=2)


def test_abelian_law_across_selection_rules():
    net = random_network(3, np.random.default_rng(12))
    start = Configuration.from_json([2, "s", 1])
    R = 100_000
    tables = []
    for rule, seed in (("lowest", 1), ("highest", 2)):
        outs = [stabilize(net, ArwParams(1.0, rule), start, InstructionStream(seed, r)).stable_index()
                for r in range(R)]
        tables.append(np.bincount(outs, minlength=8))
    table = np.array(tables)
    table = table[:, table.sum(axis=0) > 0]
    assert stats.chi2_contingency(table).pvalue > 1e-3


def test_random_rule_matches_exact_operator(wheel3):
    # one chain step from all-sleeping under random selection
    P = exact_transition_operator(wheel3, 1.5)
    R = 40_000
    outs = [arw_step(wheel3, ArwParams(1.5, "random"), Configuration.sleeping(3), InstructionStream(3, r))
            .stable_index() for r in range(R)]
    obs = np.bincount(outs, minlength=8)
    exp = P[7] * R
    keep = exp > 0
    assert obs[~keep].sum() == 0
    assert stats.chisquare(obs[keep], exp[keep]).pvalue > 1e-3


def test_chain_matches_operator_power(wheel3):
    P = exact_transition_operator(wheel3, 1.0)
    target = np.linalg.matrix_power(P, 4)[0]
    R = 40_000
    counts = np.zeros(8)
    for r in range(R):
        chain = ArwChain(wheel3, ArwParams(1.0), 5, replica=r)
        for _ in range(4):
            conf = chain.step()
        counts[conf.stable_index()] += 1
    assert stats.chisquare(counts, target * R).pvalue > 1e-3


def test_stage_one_of_a_spread_configuration_is_empty(wheel3):
    c = Configuration.from_json([1, "s", "0"])
    zeta, xi = two_stage_trace(wheel3, ArwParams(1.0), c, InstructionStream(3))
    assert zeta == c and xi.is_stable()


def test_stage_one_never_sleeps_and_never_adds_particles(battery):
    rng = np.random.default_rng(8)
    for net in battery:
        for r in range(50):
            vals = [int(v) for v in rng.integers(-1, 4, net.n)]
            c = Configuration(vals)
            zeta, xi = two_stage_trace(net, ArwParams(0.7), c, InstructionStream(r, r))
            assert all(v in (0, SLEEPING, 1) for v in zeta.values)
            assert zeta.sleepers() <= c.sleepers()
            # a sleeper in zeta was there from the start and never disturbed
            assert all(c.values[x] == SLEEPING for x in range(net.n) if zeta.values[x] == SLEEPING)
            assert xi.total() <= zeta.total() <= c.total()
            assert xi.is_stable()


def test_support_of_stage_one_is_the_idla_set(battery):
    for net in battery:
        for r in range(40):
            t = 1 + r % (2 * net.n + 2)
            zeta, _ = insert_and_trace(net, ArwParams(1.0), t, InstructionStream(77, r))
            run = coupled_run(net, 77, [[]], t_max=t, record_sets=True, replica=r)
            assert zeta.support() == run.set_at(t, 0).members()
            assert zeta.sleepers() == 0


def test_full_stage_one_frequency_matches_filling_law(wheel3):
    t = 4
    R = 40_000
    full = 0
    for r in range(R):
        zeta, _ = insert_and_trace(wheel3, ArwParams(1.0), t, InstructionStream(5, r))
        full += zeta.values == (1, 1, 1)
    p = 1 - survival_curve(subset_kernel(wheel3), None, t)[t]
    assert _within(full, R, p)


def test_output_given_full_stage_one_is_stationary(wheel3):
    lam = 1.0
    pi = stationary_distribution(exact_transition_operator(wheel3, lam))
    counts = np.zeros(8)
    for r in range(60_000):
        zeta, xi = insert_and_trace(wheel3, ArwParams(lam), 5, InstructionStream(6, r))
        if zeta.values == (1, 1, 1):
            counts[xi.stable_index()] += 1
    assert stats.chisquare(counts, pi * counts.sum()).pvalue > 1e-3


def test_infinite_rate_freezes_the_stage_one_support(wheel3):
    for r in range(200):
        zeta, xi = insert_and_trace(wheel3, ArwParams(math.inf), 3, InstructionStream(1, r))
        assert xi.values == tuple(SLEEPING if v else 0 for v in zeta.values)


# -- site-wise stacks and order preservation ------------------------------------


def _from_ranks(ranks):
    # 0 -> empty, 1 -> sleeping, r >= 2 -> r - 1 active
    return Configuration([0 if r == 0 else SLEEPING if r == 1 else int(r) - 1 for r in ranks])


def _random_pair(rng, n):
    lo = rng.integers(0, 4, n)
    hi = lo + rng.integers(0, 3, n) * (rng.random(n) < 0.5)
    return _from_ranks(lo), _from_ranks(hi)


def test_stage_one_preserves_order_under_site_stacks():
    rng = np.random.default_rng(3)
    violations = 0
    trials = 0
    for k in range(100):
        net = random_network(int(rng.integers(2, 8)), rng)
        stacks = SiteStacks(net, k)
        for _ in range(20):
            a, b = _random_pair(rng, net.n)
            assert a <= b
            za, zb = stacks.stage_one(a), stacks.stage_one(b)
            violations += not za <= zb
            trials += 1
    assert trials == 2000 and violations == 0


def test_site_stacks_are_abelian_path_by_path():
    rng = np.random.default_rng(10)
    for k in range(50):
        net = random_network(int(rng.integers(2, 8)), rng)
        stacks = SiteStacks(net, k)
        c = Configuration([int(v) for v in rng.integers(-1, 4, net.n)])
        base = stacks.stage_one(c, "lowest")
        assert stacks.stage_one(c, "highest") == base
        assert stacks.stage_one(c, "random", np.random.default_rng(k)) == base

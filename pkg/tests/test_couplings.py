import math
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from arwlab.acceptance import MONO_KERNEL, monotonicity_means, total_variation
from arwlab.couplings import (BLUE, PopulationGuard, coupled_monotonicity_trial, dominated,
                              influence_set, run_branching_dominator, run_two_color)
from arwlab.lattice import Box, InitialLaw, JumpKernel, sample_counts, stream
from arwlab.particlewise import ParticleRandomness, simulate_labeled
from arwlab.sitewise import InstructionTape, Odometer, SiteConfiguration, run_continuous, stabilize
from arwlab.verify import suite_branching

SYM = JumpKernel.simple_symmetric(1)


# -- two-color system ---------------------------------------------------------

def test_blue_must_start_in_U():
    with pytest.raises(ValueError):
        run_two_color({(3,): 1}, {}, [(0,)], MONO_KERNEL, 1.0)


@given(st.integers(0, 2**32 - 1))
def test_blue_only_run_is_restricted_arw(seed):
    U = Box(2).sites()
    blue = sample_counts(InitialLaw.poisson(1.0), U, seed)
    run = run_two_color(blue, {}, U, MONO_KERNEL, 1.0, seed, ("r",), domain=U)
    ref = stabilize(SiteConfiguration(U, blue), InstructionTape(MONO_KERNEL, 1.0, seed, ("r", BLUE)))
    assert run.M == ref.M
    assert run.odometer(BLUE) == Odometer({s: k for s, k in ref.odometer.items() if k})
    assert not run.red or set(run.red) <= {(-3,), (3,)}


@given(st.integers(0, 2**32 - 1))
def test_particle_conservation_and_exit_times(seed):
    eta = sample_counts(InitialLaw.constant(1), Box(3).sites(), seed)
    t = coupled_monotonicity_trial(Box(1).sites(), Box(2).sites(), Box(3).sites(), eta,
                                   MONO_KERNEL, 1.0, seed)
    for run in t.runs:
        assert sum(run.blue.values()) + sum(run.red.values()) >= run.initial_blue
        assert run.conversions == sorted(run.conversions)
        assert run.exit_count(math.inf) == run.M
    assert t.runs[0].M == t.M_restricted
    # the restricted run cannot exit more blues than it started with
    assert t.M_restricted <= t.runs[0].initial_blue


def test_colorblind_projection_matches_single_color_law():
    # one blue at 0 (U = {0}) and one red at 1, both frozen outside V_1:
    # forgetting colors gives ARW on V_1 started from (0, 1, 1)
    box = Box(1)
    n = 100_000
    two, one = Counter(), Counter()
    for s in range(n):
        run = run_two_color({(0,): 1}, {(1,): 1}, [(0,)], MONO_KERNEL, 1.0, 5, ("cb", s),
                            domain=box)
        two[tuple(sorted(run.colorblind().items()))] += 1
        rep = run_continuous(SiteConfiguration(box, {(0,): 1, (1,): 1}),
                             InstructionTape(MONO_KERNEL, 1.0, 6, ("cb", s)))
        one[tuple(sorted(rep.config.as_dict().items()))] += 1
    K = len(set(one) | set(two))
    assert total_variation(one, two) <= 1.2 * math.sqrt(2 * K / n)


def test_exit_count_nondecreasing_in_horizon():
    eta = sample_counts(InitialLaw.constant(1), Box(4).sites(), 0)
    t = coupled_monotonicity_trial(Box(1).sites(), Box(2).sites(), Box(4).sites(), eta,
                                   MONO_KERNEL, 1.0, 0, ("T",))
    run = t.runs[1]
    grid = [0.0] + run.conversions + [math.inf]
    counts = [run.exit_count(T) for T in grid]
    assert counts == sorted(counts) and counts[-1] == run.M


def test_horizon_truncates_two_color_run():
    run = run_two_color({(0,): 3}, {}, [(0,)], SYM, 0.1, 0, horizon=0.2)
    assert all(e[0] <= 0.2 for e in run.events)


def test_adding_reds_raises_mean_exits():
    m = monotonicity_means(600, seed=3)
    means = m.mean(axis=0)
    assert means[0] < means[1] < means[2]


def test_documented_red_addition_counterexample():
    # Adding a red particle can lower a blue toppling count.  U = {0}, one
    # blue at 0, reds at -1: with two reds the blue stack at 0 is read once
    # by the end of the run, with one red it is read twice.
    one = run_two_color({(0,): 1}, {(-1,): 1}, [(0,)], MONO_KERNEL, 1.0, 1141)
    two = run_two_color({(0,): 1}, {(-1,): 2}, [(0,)], MONO_KERNEL, 1.0, 1141)
    assert one.odometer(BLUE)[(0,)] == 2
    assert two.odometer(BLUE)[(0,)] == 1
    assert not dominated(one, two)


def test_dominated_is_reflexive_and_detects_missing_topplings():
    run = run_two_color({(0,): 2}, {(1,): 1}, [(0,)], MONO_KERNEL, 1.0, 9)
    assert dominated(run, run)
    bare = run_two_color({}, {}, [(0,)], MONO_KERNEL, 1.0, 9)
    assert dominated(bare, run)
    if run.events:
        assert not dominated(run, bare)


def test_trial_requires_nested_sets():
    with pytest.raises(ValueError):
        coupled_monotonicity_trial([(0,)], [(1,)], [(0,), (1,)], {}, MONO_KERNEL, 1.0)


# -- influence sets -----------------------------------------------------------

def test_influence_of_missing_label_is_empty():
    rand = ParticleRandomness(SYM, 1.0, 0)
    assert influence_set({(0,): 1}, ((0,), 2), 1.0, rand).sites == frozenset()


def test_influence_at_time_zero_is_start_site():
    rand = ParticleRandomness(SYM, 1.0, 0)
    assert influence_set({(0,): 1, (3,): 1}, ((0,), 1), 0.0, rand).sites == {(0,)}


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 1.0, 2.0]))
def test_influence_of_lone_particle_is_its_trail(seed, t):
    rand = ParticleRandomness(SYM, 1.0, seed)
    run = simulate_labeled({(0,): 1}, rand, horizon=t)
    trail = {(0,)} | {e[4] for e in run.events if e[2] == "jump"}
    assert influence_set({(0,): 1}, ((0,), 1), t, rand).sites == trail


@given(st.integers(0, 2**32 - 1))
def test_influence_within_putative_reach(seed):
    eta = sample_counts(InitialLaw.bernoulli(0.5), Box(5), seed)
    rand = ParticleRandomness(SYM, 1.0, seed)
    labels = sorted((x, i) for x, c in eta.items() for i in range(1, c + 1))
    if not labels:
        return
    lab = labels[int(stream(seed, "pick").integers(len(labels)))]
    rec = influence_set(eta, lab, 1.0, rand)
    assert lab[0] in rec.sites
    assert all(len(row) == 4 for row in rec.to_csv_rows())


# -- branching dominator ------------------------------------------------------

def test_branching_time_zero_is_origin():
    run = run_branching_dominator(1.0, SYM, 0.0, 0)
    assert run.sites == {(0,)} and run.population == 1


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 1.0]))
def test_branching_trail_and_counts(seed, lam):
    run = run_branching_dominator(lam, SYM, 1.0, seed)
    assert run.j_sites <= run.i_visited
    assert run.sites <= run.i_visited | run.j_sites
    assert run.n_I >= 1


def test_branching_population_guard():
    with pytest.raises(PopulationGuard):
        run_branching_dominator(3.0, SYM, 5.0, 0, cap=50)


def test_branching_snapshot_csv():
    run = run_branching_dominator(1.0, JumpKernel.simple_symmetric(2), 0.5, 1, record=True)
    lines = run.snapshot_csv().splitlines()
    assert lines[0] == "time,x0,x1" and len(lines) == len(run.sites) + 1
    assert run.snapshots[0] == (0.0, 1, 0, 1)


def test_branching_suite_small_scale():
    rep = suite_branching(seed=0, scale=0.05)
    assert rep.passed, rep.text()


def test_branching_dominates_influence_surrogate():
    # mean influence-set size stays below the mean I/J footprint
    t, lam = 1.0, 1.0
    n = 300
    infl = []
    for s in range(n):
        eta = sample_counts(InitialLaw.bernoulli(0.5), Box(8), s, ("inf",))
        eta[(0,)] = max(eta.get((0,), 0), 1)
        rec = influence_set(eta, ((0,), 1), t, ParticleRandomness(SYM, lam, s, ("inf",)))
        infl.append(len(rec.sites))
    z = [len(run_branching_dominator(lam, SYM, t, s, ("dom",)).sites) for s in range(n)]
    assert sum(infl) / n <= sum(z) / n

import math

import pytest
from hypothesis import given, strategies as st

from arwlab.acceptance import labeled_finals, sitewise_finals, total_variation
from arwlab.lattice import Box, InitialLaw, JumpKernel, sample_counts, spiral_order, stream
from arwlab.particlewise import (PASSIVE, ParticleRandomness, finite_volume_window, labels_of,
                                 particle_reach_probability, restrict, simulate_labeled,
                                 well_definedness_probe)
from arwlab.verify import suite_particlewise

SYM = JumpKernel.simple_symmetric(1)
RIGHT = JumpKernel.nearest_neighbor_1d(1.0)


def test_labels_are_site_and_index():
    assert labels_of({(1,): 2, (0,): 1, (5,): 0}) == [((0,), 1), ((1,), 1), ((1,), 2)]


def test_randomness_rejects_zero_rate():
    with pytest.raises(ValueError):
        ParticleRandomness(SYM, 0.0)


def test_streams_ignore_other_particles():
    a = ParticleRandomness(SYM, 1.0, 3)
    b = ParticleRandomness(SYM, 1.0, 3)
    b.jump(((7,), 2), 50)
    assert [a.jump(((0,), 1), k) for k in range(30)] == [b.jump(((0,), 1), k) for k in range(30)]
    assert [a.nap(((0,), 1), k) for k in range(30)] == [b.nap(((0,), 1), k) for k in range(30)]


def test_shifted_randomness_translates():
    a = ParticleRandomness(SYM, 1.0, 3)
    b = a.shifted((4,))
    assert [a.jump(((0,), 1), k) for k in range(10)] == [b.jump(((4,), 1), k) for k in range(10)]


def test_lone_particle_on_right_walk():
    rand = ParticleRandomness(RIGHT, 1.0, 2)
    run = simulate_labeled({(0,): 1}, rand)
    assert run.absorbed
    kinds = [e[2] for e in run.events]
    assert kinds[-1] == "sleep" and set(kinds[:-1]) <= {"jump"}
    lab = ((0,), 1)
    assert run.particles[lab].state == PASSIVE
    assert run.max_distance(lab) == len(kinds) - 1


def test_shared_site_first_event_is_jump(oracles):
    n = 100_000
    jumps = 0
    for s in range(n):
        run = simulate_labeled({(0,): 2}, ParticleRandomness(SYM, 1.0, 0, ("pair", s)),
                               horizon=50.0)
        jumps += run.events[0][2] == "jump"
    assert jumps / n == oracles["shared_site_first_event_jump_fraction"]


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.3, 1.0, 3.0]))
def test_counting_projection_and_passive_alone(seed, lam):
    box = Box(5)
    eta = sample_counts(InitialLaw.bernoulli(0.5), box, seed)
    run = simulate_labeled(eta, ParticleRandomness(SYM, lam, seed), window=box)
    total = sum(eta.values())
    for t in sorted({e[0] for e in run.events})[:50]:
        cnt = run.counting(t)
        assert sum(1 if v == "rho" else v for v in cnt.values()) == total
    occupants = [p.position for p in run.particles.values()]
    for p in run.particles.values():
        if p.state == PASSIVE:
            assert occupants.count(p.position) == 1
            assert p.position in box


@given(st.integers(0, 2**32 - 1), st.integers(-6, 6))
def test_translation_covariance(seed, u):
    eta = sample_counts(InitialLaw.poisson(0.6), Box(4), seed)
    rand = ParticleRandomness(SYM, 0.8, seed)
    run = simulate_labeled(eta, rand, horizon=2.0)
    moved = simulate_labeled({(x[0] + u,): c for x, c in eta.items()}, rand.shifted((u,)),
                             horizon=2.0)
    sh = lambda x: (x[0] + u,)
    assert [(t, (sh(x), i), k, sh(a), sh(b)) for t, (x, i), k, a, b in run.events] == moved.events


def test_excluding_a_particle_keeps_others():
    rand = ParticleRandomness(RIGHT, 1.0, 8)
    # excluding the only other particle reproduces the lone run exactly
    far = simulate_labeled({(0,): 1, (1000,): 1}, rand, exclude=[((1000,), 1)])
    alone = simulate_labeled({(0,): 1}, rand)
    assert far.events == alone.events


# -- finite windows -----------------------------------------------------------

def test_window_edge_cases():
    eta = sample_counts(InitialLaw.poisson(1.0), Box(6), 5)
    rand = ParticleRandomness(SYM, 1.0, 5)
    assert finite_volume_window(eta, [], (0,), 1.0, rand) == ((), ())
    full = simulate_labeled(eta, rand, horizon=1.0).history_at((0,), 1.0)
    assert finite_volume_window(eta, Box(10).sites(), (0,), 1.0, rand) == full
    assert restrict(eta, [(0,), (99,)]) == ({(0,): eta[(0,)]} if eta[(0,)] else {})


def test_probe_empty_configuration_settles_immediately():
    rand = ParticleRandomness(SYM, 1.0, 0)
    res = well_definedness_probe({}, spiral_order(1, 20), (0,), 2.0, 20, rand)
    assert res.n_star == 1 and res.history == ((), ())


def test_probe_rejects_short_sequence():
    with pytest.raises(ValueError):
        well_definedness_probe({}, spiral_order(1, 5), (0,), 1.0, 10,
                               ParticleRandomness(SYM, 1.0))


@given(st.integers(0, 2**32 - 1))
def test_probe_matches_brute_force(seed):
    seq = spiral_order(1, 25)
    eta = sample_counts(InitialLaw.bernoulli(0.4), seq, seed)
    rand = ParticleRandomness(SYM, 0.5, seed)
    fast = well_definedness_probe(eta, seq, (0,), 1.5, 25, rand)
    slow = well_definedness_probe(eta, seq, (0,), 1.5, 25, rand, brute_force=True)
    assert (fast.n_star, fast.history, fast.changes) == (slow.n_star, slow.history, slow.changes)


def test_probe_accepts_callable_configuration():
    seq = spiral_order(1, 30)
    eta = sample_counts(InitialLaw.bernoulli(0.3), seq, 4)
    rand = ParticleRandomness(SYM, 0.5, 4)
    a = well_definedness_probe(eta, seq, (0,), 2.0, 30, rand)
    b = well_definedness_probe(lambda x: eta.get(x, 0), seq, (0,), 2.0, 30, rand)
    assert a == b


# -- reach probability ----------------------------------------------------------

def test_reach_zero_distance_is_certain():
    est = particle_reach_probability(SYM, 1.0, InitialLaw.poisson(1.0), 0, 50)
    assert est.estimate == 1.0 and est.reached == 50


@pytest.mark.parametrize("lam", [0.5, 1.0])
@pytest.mark.parametrize("L", [1, 2, 3, 5])
def test_reach_lone_particle(oracles, lam, L):
    # only the origin is occupied and every step goes right:
    # distance L is reached iff the first L clock rings are jumps
    target = oracles["reach_lone_particle"][f"{lam},{L}"]
    est = particle_reach_probability(RIGHT, lam, InitialLaw.bernoulli(0.0), L, 4000,
                                     seed=1, key=("lone", lam, L))
    assert est.ci_low <= target <= est.ci_high


def test_reach_monotone_in_distance():
    law = InitialLaw.bernoulli(0.5)
    kw = dict(samples=300, radius=12, seed=2, key=("mono",))
    values = [particle_reach_probability(SYM, 1.0, law, L, **kw).reached for L in range(0, 6)]
    assert values == sorted(values, reverse=True)


def test_reach_cap_limits_counts():
    law = InitialLaw.poisson(3.0)
    a = particle_reach_probability(RIGHT, 1.0, law, 2, 200, seed=3, K=0)
    b = particle_reach_probability(RIGHT, 1.0, InitialLaw.bernoulli(0.0), 2, 200, seed=3)
    # K = 0 leaves the tagged particle alone, as in the empty law
    assert a.reached == b.reached


def test_reach_rejects_bad_arguments():
    with pytest.raises(ValueError):
        particle_reach_probability(SYM, 1.0, InitialLaw.poisson(1.0), -1, 10)
    with pytest.raises(ValueError):
        particle_reach_probability(SYM, 1.0, InitialLaw.poisson(1.0), 5, 10, radius=3)


# -- agreement with the site-wise engine ---------------------------------------------

def test_final_law_matches_sitewise_small():
    kernel = JumpKernel.from_support([((1,), 0.5), ((-1,), 0.5)], bias=(1,))
    box = Box(1)
    counts = {s: 1 for s in box}
    n = 5000
    a = sitewise_finals(n, kernel, 1.0, box, counts, 7)
    b = labeled_finals(n, kernel, 1.0, box, counts, 7)
    K = len(set(a) | set(b))
    assert total_variation(a, b) <= 1.2 * math.sqrt(2 * K / n)


def test_particlewise_suite_small_scale():
    rep = suite_particlewise(seed=0, scale=0.05)
    assert rep.passed, rep.text()

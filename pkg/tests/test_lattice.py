import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from arwlab.lattice import (TRUNCATED, Box, DriftWarning, HalfSpace, InitialLaw, JumpKernel,
                            escape_level, half_space_occupation, lundberg_exponent,
                            sample_counts, sample_initial, sample_occupations, spiral_order,
                            stream)


# -- kernels ----------------------------------------------------------------

def test_kernel_rejects_bad_sums_and_duplicates():
    with pytest.raises(ValueError):
        JumpKernel.from_support([((1,), 0.5), ((-1,), 0.4)])
    with pytest.raises(ValueError):
        JumpKernel.from_support([((1,), 0.5), ((1,), 0.5)])


def test_kernel_rejects_staying_put():
    with pytest.raises(ValueError, match="p\\(o\\) = 1"):
        JumpKernel.from_support([((0, 0), 1.0)])
    # some mass at the origin is fine
    JumpKernel.from_support([((0,), 0.5), ((1,), 0.5)], bias=(1,))


def test_kernel_sum_tolerance():
    JumpKernel.from_support([((1,), 0.75 + 5e-13), ((-1,), 0.25)])
    with pytest.raises(ValueError):
        JumpKernel.from_support([((1,), 0.75 + 1e-10), ((-1,), 0.25)])


def test_kernel_json_layout():
    k = JumpKernel.nearest_neighbor_1d(0.75)
    assert k.to_json() == {"dim": 1, "support": [[[1], 0.75], [[-1], 0.25]], "bias": [1]}


@st.composite
def kernels(draw):
    dim = draw(st.integers(1, 3))
    offs = draw(st.lists(st.tuples(*[st.integers(-3, 3)] * dim), min_size=2, max_size=6,
                         unique=True))
    w = draw(st.lists(st.integers(1, 20), min_size=len(offs), max_size=len(offs)))
    tot = sum(w)
    probs = [x / tot for x in w]
    probs[-1] = 1.0 - math.fsum(probs[:-1])
    bias = draw(st.one_of(st.none(), st.tuples(*[st.integers(-4, 4)] * dim).filter(any)))
    return JumpKernel.from_support(list(zip(offs, probs)), bias=bias)


@given(kernels())
def test_kernel_json_round_trip(k):
    assert JumpKernel.from_json(k.to_json()) == k


@given(kernels(), st.data())
def test_projection_sums_to_one(k, data):
    v = data.draw(st.tuples(*[st.integers(-3, 3)] * k.dim).filter(any))
    proj = k.projected(v)
    assert math.isclose(sum(proj.values()), 1.0, abs_tol=1e-12)
    hs = HalfSpace(v)
    assert math.isclose(k.projected_drift(v),
                        sum(p * hs.level(o) for o, p in zip(k.offsets, k.probs)), abs_tol=1e-12)


def test_kernel_sampling_frequencies():
    k = JumpKernel.from_support([((1, 0), 0.4), ((-1, 0), 0.1), ((0, 1), 0.3), ((0, -1), 0.2)])
    n = 10**6
    idx = np.searchsorted(k.cumulative(), stream(5, "kernel-freq").random(n), side="right")
    freq = np.bincount(idx, minlength=4) / n
    for f, p in zip(freq, k.probs):
        assert abs(f - p) <= 4 * math.sqrt(p * (1 - p) / n)


# -- half-spaces and boxes ----------------------------------------------------

def test_half_space_rational_normal_is_exact():
    hs = HalfSpace((Fraction(1, 3), Fraction(2, 3)))
    assert hs.normal == (1, 2)
    assert (2, -1) in hs and (-2, 1) in hs and (1, 0) not in hs
    assert HalfSpace((0.5, 1.0)).normal == (1, 2)


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=3).filter(any),
       st.lists(st.integers(-9, 9), min_size=3, max_size=3), st.integers(1, 7))
def test_half_space_scale_invariant(v, x, c):
    x = tuple(x[: len(v)])
    assert (x in HalfSpace(v)) == (x in HalfSpace([c * a for a in v]))
    assert (x in HalfSpace(v)) == (sum(a * b for a, b in zip(x, v)) <= 0)


@given(st.integers(0, 6), st.integers(1, 3))
def test_box_volume_and_membership(n, d):
    box = Box(n, d)
    sites = box.sites()
    assert len(sites) == box.volume == (2 * n + 1) ** d
    assert all(s in box for s in sites)
    assert (n + 1,) + (0,) * (d - 1) not in box


@given(st.integers(1, 2), st.integers(0, 3), st.booleans())
def test_spiral_exhausts_boxes(d, r, flip):
    order = spiral_order(d, Box(r, d).volume, flip=flip)
    assert sorted(order) == sorted(Box(r, d).sites())
    assert order[0] == (0,) * d


# -- initial laws -------------------------------------------------------------

def test_constant_law_fills_box():
    config = sample_initial(InitialLaw.constant(1), Box(2), seed=3)
    assert config.counts == [1] * 5 and not any(config.sleeping)


def test_bernoulli_zero_is_empty():
    assert sample_initial(InitialLaw.bernoulli(0.0), Box(3), seed=9).interior_total() == 0


def test_poisson_mean_in_band(oracles):
    band = oracles["initial_poisson_band"]
    config = sample_initial(InitialLaw.poisson(0.5), Box(band["radius"]), seed=band["seed"])
    mean = config.interior_total() / len(config.sites)
    assert band["lo"] <= mean <= band["hi"]


@pytest.mark.parametrize("values", [[1, -1], [0, 1.5], [], [True, 2]])
def test_empirical_law_rejects_bad_entries(values):
    with pytest.raises(ValueError):
        InitialLaw.empirical(values)


def test_empirical_law_json():
    law = InitialLaw.empirical([0, 0, 3])
    assert law.mean == 1.0
    assert InitialLaw.from_json(law.to_json()) == law


def test_counts_do_not_depend_on_other_sites():
    law = InitialLaw.poisson(2.0)
    small = sample_counts(law, Box(2), 4, ("k",))
    big = sample_counts(law, Box(5), 4, ("k",))
    assert all(big[s] == c for s, c in small.items())


@given(st.integers(0, 2**63), st.lists(st.one_of(st.integers(-50, 50), st.text(max_size=4)),
                                       max_size=4))
def test_streams_are_reproducible(seed, key):
    a = stream(seed, *key).random(4)
    b = stream(seed, *key).random(4)
    assert np.array_equal(a, b)


def test_stream_keys_distinguish_signs_and_nesting():
    draws = {tuple(stream(0, *k).random(2)) for k in [(1,), (-1,), ((1,),), (1, 1), ("1",)]}
    assert len(draws) == 5


# -- occupation of H_v --------------------------------------------------------

def test_occupation_deterministic_right_walk():
    k = JumpKernel.nearest_neighbor_1d(1.0)
    hs = HalfSpace((1,))
    rng = stream(0, "occ")
    assert half_space_occupation(k, hs, (0,), 100, rng) == 1
    assert half_space_occupation(k, hs, (1,), 100, rng) == 0
    ell, trunc = sample_occupations(k, (1,), 1000, 100, rng)
    assert np.all(ell == 1) and not trunc.any()


def test_occupation_law_matches_absorbing_chain(oracles):
    probs = np.array(oracles["occupation_law_p075"]["probs"])
    k = JumpKernel.nearest_neighbor_1d(0.75)
    ell, trunc = sample_occupations(k, None, 10**5, 10**5, stream(1, "occ-law"))
    assert not trunc.any()
    emp = np.bincount(ell, minlength=probs.size) / ell.size
    m = max(emp.size, probs.size)
    emp = np.pad(emp, (0, m - emp.size))
    ref = np.pad(probs, (0, m - probs.size))
    assert 0.5 * np.abs(emp - ref).sum() < 0.01


def test_scalar_and_vector_occupations_agree_in_law():
    k = JumpKernel.nearest_neighbor_1d(0.75)
    rng = stream(2, "scalar")
    scalar = np.array([half_space_occupation(k, HalfSpace((1,)), (0,), 10**4, rng)
                       for _ in range(5000)])
    vec, _ = sample_occupations(k, None, 5000, 10**4, stream(2, "vector"))
    se = math.sqrt(scalar.var() / 5000 + vec.var() / 5000)
    assert abs(scalar.mean() - vec.mean()) < 4 * se


def test_occupation_truncation_and_drift_warning():
    k = JumpKernel.simple_symmetric(1)
    with pytest.warns(DriftWarning):
        out = half_space_occupation(k, HalfSpace((1,)), (0,), 50, stream(0, "t"))
    assert out is TRUNCATED and not out
    ell, trunc = sample_occupations(k, (1,), 100, 50, stream(0, "t"))
    assert trunc.all() and (ell >= 1).all()


def test_lundberg_exponent_nearest_neighbor():
    # E[exp(-theta S)] = 1 at theta = log(p/q) for a +-1 walk
    assert math.isclose(lundberg_exponent({1: 0.75, -1: 0.25}), math.log(3), rel_tol=1e-10)
    assert lundberg_exponent({1: 1.0}) == math.inf
    k = JumpKernel.nearest_neighbor_1d(0.75)
    c = escape_level(k)
    assert 3.0 ** -c < 1e-6 <= 3.0 ** -(c - 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert escape_level(JumpKernel.simple_symmetric(1), (1,)) is None

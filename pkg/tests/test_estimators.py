import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from arwlab.estimators import (DensityCriterion, FEstimate, NotNearestNeighbor,
                               F_from_occupations, density_criterion, estimate_F,
                               estimate_F_exact_1d, exit_density_sweep,
                               rolling_lower_bound_report, sample_F_occupations, sweep_replica)
from arwlab.experiment import ExperimentSpec
from arwlab.lattice import DriftWarning, InitialLaw, JumpKernel
from arwlab.oracles import F_closed_form_nn

NN75 = JumpKernel.nearest_neighbor_1d(0.75)
RIGHT = JumpKernel.nearest_neighbor_1d(1.0)


# -- F_v(lambda) --------------------------------------------------------------

@pytest.mark.parametrize("lam", ["0.1", "0.2", "0.5"])
def test_exact_solver_matches_fixture(oracles, lam):
    ref = oracles["F_p075"][lam]
    ex = estimate_F_exact_1d(NN75, float(lam))
    assert ex.residual < 1e-8
    for key in ("series", "closed_form"):
        assert ex.lower - 1e-12 <= ref[key] <= ex.upper + 1e-12


def test_closed_form_special_value():
    assert math.isclose(F_closed_form_nn(0.75, 0.5), math.sqrt(6) - 2, rel_tol=1e-12)


@given(st.floats(0.55, 0.98), st.floats(0.01, 5.0))
def test_exact_solver_matches_closed_form(p, lam):
    ex = estimate_F_exact_1d(JumpKernel.nearest_neighbor_1d(p), lam)
    assert ex.lower <= F_closed_form_nn(p, lam) + 1e-12
    assert F_closed_form_nn(p, lam) <= ex.upper + 1e-12
    assert ex.residual < 1e-8


def test_exact_solver_with_holding_steps():
    # a 2d walk projected on e1 has a lazy step; compare with Monte Carlo
    k = JumpKernel.from_support([((1, 0), 0.4), ((-1, 0), 0.1), ((0, 1), 0.3), ((0, -1), 0.2)],
                                bias=(1, 0))
    ex = estimate_F_exact_1d(k, 0.5)
    mc = estimate_F(k, 0.5, samples=40_000, seed=2)
    assert abs(mc.estimate - ex.estimate) <= 4 * mc.stderr


def test_exact_solver_closed_cases():
    for lam in (0.1, 1.0, 7.0):
        assert estimate_F_exact_1d(RIGHT, lam).estimate == 1.0 / (1.0 + lam)
    sym = JumpKernel.simple_symmetric(1)
    ex = estimate_F_exact_1d(sym, 1.0, v=(1,))
    assert ex.estimate == 0.0 and ex.warning
    assert estimate_F_exact_1d(JumpKernel.nearest_neighbor_1d(0.3), 1.0, v=(1,)).estimate == 0.0


def test_exact_solver_rejects_long_steps():
    k = JumpKernel.from_support([((2,), 0.7), ((-1,), 0.3)], bias=(1,))
    with pytest.raises(NotNearestNeighbor):
        estimate_F_exact_1d(k, 1.0)


def test_fixed_depth_bracket_narrows():
    wide = estimate_F_exact_1d(NN75, 0.1, depth=2)
    narrow = estimate_F_exact_1d(NN75, 0.1, depth=32)
    assert wide.residual > narrow.residual
    assert wide.lower <= narrow.lower <= narrow.upper <= wide.upper


def test_monte_carlo_deterministic_walk_is_exact():
    for lam in (0.1, 0.25, 1.0):
        mc = estimate_F(RIGHT, lam, samples=1000)
        assert mc.estimate == 1.0 / (1.0 + lam) and mc.stderr == 0.0 and mc.truncated == 0


def test_monte_carlo_zero_drift_warns_and_truncates():
    with pytest.warns(DriftWarning):
        mc = estimate_F(JumpKernel.simple_symmetric(1), 1.0, v=(1,), samples=200, max_steps=200)
    assert mc.warning and mc.truncated > 0
    assert mc.lower <= mc.estimate <= mc.upper


def test_F_monotone_in_lambda_on_shared_samples():
    ell, trunc, _ = sample_F_occupations(NN75, None, 5000, 10_000, seed=4)
    values = [F_from_occupations(ell, trunc, lam).estimate for lam in (0.05, 0.1, 0.5, 1, 3)]
    assert values == sorted(values, reverse=True)


@given(st.lists(st.integers(1, 30), min_size=2, max_size=50), st.floats(0.01, 4.0))
def test_F_from_occupations_bracket(ell, lam):
    ell = np.array(ell)
    trunc = ell > 20
    est = F_from_occupations(ell, trunc, lam)
    assert 0 <= est.lower <= est.estimate <= est.upper <= 1
    exact = float(np.mean((1 + lam) ** -ell.astype(float)))
    assert math.isclose(est.upper, exact, rel_tol=1e-9, abs_tol=1e-15)


def test_F_estimate_rejects_bad_bracket():
    with pytest.raises(ValueError):
        FEstimate(0.5, 0.0, 1, 0, "x", 1.0, lower=0.6, upper=0.7)


def test_F_json_schema():
    doc = estimate_F_exact_1d(NN75, 0.5).to_json()
    assert doc["schema"] == "arwlab.fv/1" and doc["method"] == "absorbing-chain"


# -- density criterion --------------------------------------------------------

def test_criterion_margin_is_exact():
    F = estimate_F_exact_1d(RIGHT, 1.0)
    crit = DensityCriterion(mu=0.6, lam=1.0, v=(1,), F=F)
    assert crit.margin == 0.6 - 1.0 + 0.5
    assert crit.verdict == "satisfied"
    assert DensityCriterion(0.4, 1.0, (1,), F).verdict == "not satisfied"


def test_criterion_falls_back_to_monte_carlo():
    k = JumpKernel.from_support([((2,), 0.7), ((-1,), 0.3)], bias=(1,))
    crit = density_criterion(k, 1.0, 0.9, samples=2000)
    assert crit.F.method == "monte-carlo"
    assert crit.to_json()["verdict"] in ("satisfied", "not satisfied", "undecided")


def test_criterion_undecided_when_bracket_straddles():
    F = FEstimate(0.5, 0.0, 1, 1, "monte-carlo", 1.0, lower=0.4, upper=0.6)
    assert DensityCriterion(0.5, 1.0, (1,), F).verdict == "undecided"


# -- exit densities -------------------------------------------------------------

def test_sweep_trivial_cases():
    spec = ExperimentSpec(kernel=NN75, lam=1.0, law=InitialLaw.bernoulli(0.0), radii=(0, 3),
                          replicas=4)
    curve = exit_density_sweep(spec)
    assert [p.mean for p in curve.points] == [0.0, 0.0]
    one = ExperimentSpec(kernel=RIGHT, lam=1.0, radii=(0,), replicas=400)
    pt = exit_density_sweep(one).points[0]
    assert abs(pt.mean - 0.5) <= 4 * pt.stderr


def test_sweep_strategies_give_identical_M():
    base = ExperimentSpec(kernel=NN75, lam=0.5, law=InitialLaw.poisson(1.0), seed=3)
    for n in (0, 2, 5):
        for r in range(5):
            a = sweep_replica(base, n, r)
            b = sweep_replica(base.with_overrides(strategy="leveling-rolling-finishing"), n, r)
            c = sweep_replica(base.with_overrides(strategy="stack"), n, r)
            assert a[0] == b[0] == c[0] and a[2] == b[2]


def test_sweep_cap_limits_initial_counts():
    spec = ExperimentSpec(kernel=NN75, lam=0.5, law=InitialLaw.poisson(3.0), K=1, seed=1)
    _, _, total = sweep_replica(spec, 4, 0)
    assert total <= 9


def test_sweep_threads_and_checkpoint(tmp_path):
    spec = ExperimentSpec(kernel=NN75, lam=0.5, law=InitialLaw.poisson(0.5), radii=(2, 4),
                          replicas=6, seed=5)
    one = exit_density_sweep(spec, threads=1).to_csv()
    two = exit_density_sweep(spec, threads=2).to_csv()
    assert one == two
    first = exit_density_sweep(spec, checkpoint_dir=tmp_path).to_csv()
    assert sorted(p.name for p in tmp_path.iterdir()) == ["radius-2.json", "radius-4.json"]
    # a tampered checkpoint is reused only under the same fingerprint
    ck = tmp_path / "radius-2.json"
    ck.write_text(ck.read_text().replace('"values": [', '"values": [0.5, '))
    resumed = exit_density_sweep(spec, checkpoint_dir=tmp_path)
    assert resumed.points[0].replicas == 7
    other = exit_density_sweep(spec.with_overrides(seed=6), checkpoint_dir=tmp_path)
    assert other.points[0].replicas == 6
    assert first == one


def test_sweep_csv_columns():
    spec = ExperimentSpec(kernel=NN75, lam=0.5, radii=(1,), replicas=3)
    header = exit_density_sweep(spec).to_csv().splitlines()[0]
    assert header == "n,volume,mean,stderr,replicas,strategy,seed"


def test_rolling_report_inequality():
    spec = ExperimentSpec(kernel=NN75, lam=0.5, law=InitialLaw.poisson(1.0),
                          strategy="leveling-rolling-finishing", seed=2)
    rep = rolling_lower_bound_report(spec, 6, replicas=40)
    assert rep.inequality_always
    assert rep.frequency_within_bound
    doc = rep.to_json()
    assert doc["schema"] == "arwlab.rolling/1" and doc["F"]["method"] == "absorbing-chain"

"""Acceptance experiments, one function per criterion.

Every function returns a :class:`CriterionResult` whose ``line()`` is the
one-line pass/fail summary printed by the test suite and by
``scripts/run_acceptance.py``.
"""
from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .couplings import coupled_monotonicity_trial, dominated, run_branching_dominator
from .estimators import (estimate_F, estimate_F_exact_1d, exit_density_sweep,
                         rolling_lower_bound_report)
from .experiment import ExperimentSpec
from .lattice import Box, InitialLaw, JumpKernel, sample_counts, spiral_order, stream
from .particlewise import ParticleRandomness, simulate_labeled, well_definedness_probe
from .sitewise import InstructionTape, SiteConfiguration, stabilize

Z99 = float(stats.norm.ppf(0.99))


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    runtime: float = 0.0
    limit: float = math.inf
    data: dict = field(default_factory=dict, repr=False)

    @property
    def in_time(self) -> bool:
        return self.runtime <= self.limit

    def line(self) -> str:
        status = "PASS" if self.passed and self.in_time else "FAIL"
        limit = "" if math.isinf(self.limit) else f", limit {self.limit:g}s"
        return (f"criterion {self.number:2d} {status}  {self.name}: {self.detail} "
                f"[{self.runtime:.1f}s{limit}]")


def _timed(number: int, name: str, limit: float):
    def wrap(fn: Callable[..., tuple[bool, str, dict]]):
        def run(*args, **kw) -> CriterionResult:
            t0 = time.perf_counter()
            ok, detail, data = fn(*args, **kw)
            return CriterionResult(number, name, ok, detail, time.perf_counter() - t0, limit, data)
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


# ---------------------------------------------------------------------------
# 1. Abelianness
# ---------------------------------------------------------------------------

def random_instance(rng: np.random.Generator):
    """Small random stabilization instance: window, counts, kernel and lambda.

    ``d`` is 1 or 2, the window has at most 25 sites and at most 12
    particles are placed uniformly on it.
    """
    d = int(rng.integers(1, 3))
    if d == 1:
        box = Box(int(rng.integers(0, 13)), 1)
        p = float(rng.choice([0.5, 0.75, 1.0, float(rng.uniform(0.05, 0.95))]))
        kernel = JumpKernel.nearest_neighbor_1d(p)
    else:
        box = Box(int(rng.integers(0, 3)), 2)
        if rng.random() < 0.5:
            kernel = JumpKernel.simple_symmetric(2)
        else:
            kernel = JumpKernel.from_support(
                [((1, 0), 0.4), ((-1, 0), 0.1), ((0, 1), 0.3), ((0, -1), 0.2)], bias=(1, 0))
    lam = float(rng.choice([0.1, 1.0, 5.0]))
    sites = box.sites()
    counts: dict = {}
    for _ in range(int(rng.integers(0, 13))):
        s = sites[int(rng.integers(len(sites)))]
        counts[s] = counts.get(s, 0) + 1
    return box, counts, kernel, lam


def strategies_agree(box, counts, kernel, lam, seed, key) -> tuple[bool, int]:
    """Stabilize with every strategy on one tape; returns ``(agree, M)``."""
    tape = InstructionTape(kernel, lam, seed, key)
    config = SiteConfiguration(box, counts)
    ref = stabilize(config, tape, "greedy-sweep")
    others = [stabilize(config, tape, "stack"),
              stabilize(config, tape, "random", order_seed=seed + 1),
              stabilize(config, tape, "random", order_seed=seed + 2),
              stabilize(config, tape, "leveling-rolling-finishing",
                        v=kernel.bias or (1,) * kernel.dim)]
    ok = all(r.config == ref.config and r.odometer == ref.odometer and r.M == ref.M
             for r in others)
    return ok, ref.M


@_timed(1, "abelianness", 10.0)
def criterion_1(instances: int = 500, seed: int = 0):
    """Every strategy yields the same final configuration and odometer."""
    rng = stream(seed, "acceptance", 1)
    bad = []
    for k in range(instances):
        box, counts, kernel, lam = random_instance(rng)
        ok, _ = strategies_agree(box, counts, kernel, lam, seed, ("abelian", k))
        if not ok:
            bad.append(k)
    return (not bad, f"{instances - len(bad)}/{instances} instances agree across 5 orders",
            {"mismatches": bad})


# ---------------------------------------------------------------------------
# 2, 3. F_v(lambda)
# ---------------------------------------------------------------------------

@_timed(2, "F closed cases", 5.0)
def criterion_2(samples: int = 100_000, seed: int = 0):
    """``p(+1) = 1``: exact solver gives ``1/(1+lam)``; Monte Carlo within 3 SE."""
    kernel = JumpKernel.nearest_neighbor_1d(1.0)
    parts, ok = [], True
    for lam in (0.1, 0.25, 1.0):
        target = 1.0 / (1.0 + lam)
        ex = estimate_F_exact_1d(kernel, lam)
        mc = estimate_F(kernel, lam, samples=samples, seed=seed, key=("acceptance", 2))
        good = ex.estimate == target and abs(mc.estimate - target) <= 3 * mc.stderr
        ok &= good
        parts.append(f"lam={lam}: exact={ex.estimate:.12g} mc={mc.estimate:.12g}±{mc.stderr:.1e}")
    return ok, "; ".join(parts), {}


@_timed(3, "F oracle agreement", 30.0)
def criterion_3(samples: int = 100_000, seed: int = 0):
    """``p(+1) = 0.75``: Monte Carlo within 3 SE of the linear solve."""
    kernel = JumpKernel.nearest_neighbor_1d(0.75)
    parts, ok = [], True
    for lam in (0.1, 0.2, 0.5):
        ex = estimate_F_exact_1d(kernel, lam)
        mc = estimate_F(kernel, lam, samples=samples, seed=seed, key=("acceptance", 3))
        z = (mc.estimate - ex.estimate) / mc.stderr
        good = ex.residual < 1e-8 and abs(z) <= 3
        ok &= good
        parts.append(f"lam={lam}: oracle={ex.estimate:.8f} mc={mc.estimate:.5f} z={z:+.2f}")
    return ok, "; ".join(parts), {}


# ---------------------------------------------------------------------------
# 4, 5. Exit densities
# ---------------------------------------------------------------------------

@_timed(4, "rolling lower bound", 60.0)
def criterion_4(replicas: int = 1000, n: int = 32, seed: int = 0, threads: int = 1):
    """``M_n >= sum eta_0 - N_n`` always; mean density at least the margin minus 3 SE."""
    spec = ExperimentSpec(kernel=JumpKernel.nearest_neighbor_1d(1.0), lam=0.1,
                          law=InitialLaw.constant(1), strategy="leveling-rolling-finishing",
                          seed=seed)
    rep = rolling_lower_bound_report(spec, n, replicas, threads=threads)
    margin = 1.0 - 0.1 / 1.1
    ok = rep.inequality_always and rep.mean_M >= margin - 3 * rep.stderr_M
    detail = (f"inequality {rep.inequality_holds}/{rep.replicas}; mean M/|V|={rep.mean_M:.4f}"
              f"±{rep.stderr_M:.4f} vs margin {margin:.4f}; sleep freq {rep.sleep_frequency:.4f}"
              f" vs 1-F {rep.one_minus_F:.4f}")
    return ok, detail, {"report": rep.to_json()}


@_timed(5, "exit density floor vs contrast", 300.0)
def criterion_5(replicas: int = 100, contrast_replicas: int = 100, seed: int = 0,
                threads: int = 1, floor: float = 0.05, ceiling: float = 0.02):
    """Biased kernel keeps ``M_n/|V_n|`` above a floor; the symmetric contrast drops below a ceiling."""
    radii = (8, 16, 32, 64)
    main = ExperimentSpec(kernel=JumpKernel.nearest_neighbor_1d(0.75), lam=0.1,
                          law=InitialLaw.poisson(0.5), radii=radii, seed=seed)
    contrast = ExperimentSpec(kernel=JumpKernel.from_support([((1,), 0.5), ((-1,), 0.5)], bias=(1,)),
                              lam=4.0, law=InitialLaw.poisson(0.1), radii=radii, seed=seed)
    c1 = exit_density_sweep(main, replicas=replicas, threads=threads)
    c2 = exit_density_sweep(contrast, replicas=contrast_replicas, threads=threads)
    ok_main = c1.bounded_away_from_zero(floor)
    last = c2.points[-1]
    ok_contrast = last.mean < ceiling
    detail = ("main " + ", ".join(f"n={p.n}:{p.mean:.3f}(lo {p.ci()[0]:.3f})" for p in c1.points)
              + f"; contrast n=64: {last.mean:.4f}")
    return ok_main and ok_contrast, detail, {"main": c1.to_csv(), "contrast": c2.to_csv()}


# ---------------------------------------------------------------------------
# 6. Monotonicity
# ---------------------------------------------------------------------------

MONO_KERNEL = JumpKernel.nearest_neighbor_1d(0.75)


def monotonicity_means(trials: int, seed: int = 0, law: InitialLaw | None = None):
    """Paired differences of ``M_U`` under ``P_[U]``, ``P_U'``, ``P_U''``."""
    law = InitialLaw.constant(1) if law is None else law
    U, U1, U2 = Box(1).sites(), Box(2).sites(), Box(4).sites()
    out = np.zeros((trials, 3))
    for r in range(trials):
        eta = sample_counts(law, U2, seed, ("mono", r))
        t = coupled_monotonicity_trial(U, U1, U2, eta, MONO_KERNEL, 1.0, seed, ("mono", r))
        out[r] = t.counts
    return out


def pathwise_red_monotonicity(instances: int, seed: int = 0, law: InitialLaw | None = None):
    """Instances where adding the reds of ``V_4 - V_2`` lowers some toppling count."""
    law = InitialLaw.constant(1) if law is None else law
    U, U1, U2 = Box(1).sites(), Box(2).sites(), Box(4).sites()
    bad = []
    for r in range(instances):
        eta = sample_counts(law, U2, seed, ("pathwise", r))
        t = coupled_monotonicity_trial(U, U1, U2, eta, MONO_KERNEL, 1.0, seed, ("pathwise", r))
        if not dominated(t.runs[1], t.runs[2]):
            bad.append(r)
    return bad


@_timed(6, "two-color monotonicity", 120.0)
def criterion_6(trials: int = 10_000, instances: int = 100, seed: int = 0):
    """Ordered means with one-sided 99% bounds; exact pathwise toppling-count dominance."""
    m = monotonicity_means(trials, seed)
    means = m.mean(axis=0)
    lows = []
    for a, b in ((0, 1), (1, 2)):
        d = m[:, b] - m[:, a]
        lows.append(float(d.mean() - Z99 * d.std(ddof=1) / math.sqrt(trials)))
    ordered = means[0] <= means[1] <= means[2] and min(lows) > 0
    bad = pathwise_red_monotonicity(instances, seed)
    detail = (f"means {means[0]:.4f} <= {means[1]:.4f} <= {means[2]:.4f} "
              f"(99% lower bounds of differences {lows[0]:.4f}, {lows[1]:.4f}); "
              f"pathwise dominance {instances - len(bad)}/{instances}")
    return ordered and not bad, detail, {"means": means.tolist(), "violations": bad,
                                         "means_ordered": bool(ordered)}


# ---------------------------------------------------------------------------
# 7. Branching bound
# ---------------------------------------------------------------------------

def branching_sizes(lam: float, t: float, runs: int, seed: int = 0,
                    kernel: JumpKernel | None = None) -> np.ndarray:
    kernel = JumpKernel.simple_symmetric(1) if kernel is None else kernel
    return np.array([len(run_branching_dominator(lam, kernel, t, seed, ("branch", lam, t, r)).sites)
                     for r in range(runs)], dtype=float)


@_timed(7, "branching bound", 120.0)
def criterion_7(runs: int = 10_000, seed: int = 0):
    """Mean ``|Z_t|`` plus 3 SE stays below ``exp(2 (1 + lam) t)``."""
    parts, ok = [], True
    for lam in (0.5, 1.0):
        for t in (0.5, 1.0):
            z = branching_sizes(lam, t, runs, seed)
            mean, se = z.mean(), z.std(ddof=1) / math.sqrt(runs)
            bound = math.exp(2 * (1 + lam) * t)
            ok &= mean + 3 * se <= bound
            parts.append(f"(lam={lam},t={t}) {mean:.3f}±{se:.3f} <= {bound:.2f}")
    return ok, "; ".join(parts), {}


# ---------------------------------------------------------------------------
# 8. Well-definedness
# ---------------------------------------------------------------------------

PROBE_KERNEL = JumpKernel.simple_symmetric(1)


@_timed(8, "well-definedness probe", 300.0)
def criterion_8(samples: int = 1000, pairs: int = 100, max_n: int = 200, seed: int = 0):
    """Histories at 0 settle within 200 sites; two exhaustion orders agree."""
    law = InitialLaw.bernoulli(0.3)
    seq = spiral_order(1, max_n)
    flipped = spiral_order(1, max_n, flip=True)
    sites = sorted(set(seq) | set(flipped))
    unstable = 0
    for s in range(samples):
        eta = sample_counts(law, sites, seed, ("probe", s))
        rand = ParticleRandomness(PROBE_KERNEL, 0.5, seed, ("probe", s))
        if not well_definedness_probe(eta, seq, (0,), 2.0, max_n, rand).stabilized:
            unstable += 1
    mismatch, compared = 0, 0
    for s in range(pairs):
        eta = sample_counts(law, sites, seed, ("pair", s))
        rand = ParticleRandomness(PROBE_KERNEL, 0.5, seed, ("pair", s))
        a = well_definedness_probe(eta, seq, (0,), 2.0, max_n, rand)
        b = well_definedness_probe(eta, flipped, (0,), 2.0, max_n, rand)
        if a.stabilized and b.stabilized:
            compared += 1
            mismatch += a.history != b.history
    frac = unstable / samples
    ok = frac < 0.01 and mismatch == 0 and compared == pairs
    return ok, (f"not stabilized {unstable}/{samples}; order-independent {compared - mismatch}"
                f"/{pairs} pairs"), {}


# ---------------------------------------------------------------------------
# 9. Site-wise vs particle-wise law
# ---------------------------------------------------------------------------

def _key(config: SiteConfiguration):
    return config.state()


def sitewise_finals(samples: int, kernel, lam, box, counts, seed) -> Counter:
    config = SiteConfiguration(box, counts)
    out = Counter()
    for s in range(samples):
        tape = InstructionTape(kernel, lam, seed, ("law-site", s))
        out[_key(stabilize(config, tape).config)] += 1
    return out


def labeled_finals(samples: int, kernel, lam, box, counts, seed) -> Counter:
    out = Counter()
    for s in range(samples):
        rand = ParticleRandomness(kernel, lam, seed, ("law-particle", s))
        run = simulate_labeled(counts, rand, window=box)
        out[_key(run.final_configuration(box))] += 1
    return out


def total_variation(a: Counter, b: Counter) -> float:
    na, nb = sum(a.values()), sum(b.values())
    return 0.5 * sum(abs(a[k] / na - b[k] / nb) for k in set(a) | set(b))


@_timed(9, "site-wise vs particle-wise law", 120.0)
def criterion_9(samples: int = 100_000, seed: int = 0):
    """Final configurations on ``V_1`` from ``(1, 1, 1)`` agree in law."""
    kernel = JumpKernel.from_support([((1,), 0.5), ((-1,), 0.5)], bias=(1,))
    box = Box(1)
    counts = {s: 1 for s in box}
    a = sitewise_finals(samples, kernel, 1.0, box, counts, seed)
    b = labeled_finals(samples, kernel, 1.0, box, counts, seed)
    tv = total_variation(a, b)
    return tv <= 0.02, f"TV={tv:.4f} over {len(set(a) | set(b))} outcomes", {"tv": tv}


# ---------------------------------------------------------------------------
# 10. Determinism
# ---------------------------------------------------------------------------

@_timed(10, "determinism", math.inf)
def criterion_10(workdir):
    """Every CLI command run twice gives byte-identical output."""
    from .cli import determinism_check

    results = determinism_check(workdir)
    bad = [name for name, same in results.items() if not same]
    return not bad, f"{len(results) - len(bad)}/{len(results)} commands byte-identical", {
        "results": results}


ALL = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
       criterion_7, criterion_8, criterion_9)

"""Property suites behind ``arwlab verify``.

Each suite runs fixed-seed checks and returns a :class:`SuiteReport`;
``scale`` multiplies the sample sizes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import acceptance as acc
from .couplings import BLUE, coupled_monotonicity_trial, influence_set, run_two_color
from .lattice import Box, InitialLaw, JumpKernel, sample_counts, stream
from .particlewise import PASSIVE, ParticleRandomness, simulate_labeled
from .sitewise import (IllegalToppling, InstructionTape, Odometer, SiteConfiguration,
                       run_continuous, stabilize, topple)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SuiteReport:
    suite: str
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(Check(name, bool(passed), detail))

    def text(self) -> str:
        lines = [f"suite {self.suite}: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            lines.append(f"  {'ok  ' if c.passed else 'FAIL'} {c.name}: {c.detail}")
        return "\n".join(lines) + "\n"


def _n(base: int, scale: float, least: int = 1) -> int:
    return max(least, int(round(base * scale)))


# ---------------------------------------------------------------------------
# Site-wise helpers
# ---------------------------------------------------------------------------

def random_legal_sequence(config: SiteConfiguration, tape: InstructionTape, rng, steps: int,
                          cap: Odometer | None = None):
    """Topple uniformly chosen unstable sites up to ``steps`` times, in place.

    With ``cap`` a site is only toppled while its odometer is below
    ``cap[site]``.  Returns the odometer.
    """
    odo = Odometer()
    for _ in range(steps):
        choices = [s for s in config.unstable_sites() if cap is None or odo[s] < cap[s]]
        if not choices:
            break
        topple(config, tape, odo, choices[int(rng.integers(len(choices)))])
    return odo


def local_abelian_instance(box, counts, kernel, lam, seed, key, rng) -> tuple[bool, bool]:
    """Two random legal sequences with equal odometers reach the same configuration.

    Returns ``(comparable, agree)``.
    """
    tape = InstructionTape(kernel, lam, seed, key)
    a = SiteConfiguration(box, counts)
    odo_a = random_legal_sequence(a, tape, rng, int(rng.integers(1, 40)))
    b = SiteConfiguration(box, counts)
    odo_b = random_legal_sequence(b, tape, rng, 10**6, cap=odo_a)
    odo_a = Odometer({s: k for s, k in odo_a.items() if k})
    odo_b = Odometer({s: k for s, k in odo_b.items() if k})
    if odo_a != odo_b:
        return False, True
    return True, a == b


def odometer_monotone_instance(box, counts, kernel, lam, seed, key, site) -> bool:
    tape = InstructionTape(kernel, lam, seed, key)
    small = stabilize(SiteConfiguration(box, counts), tape)
    more = dict(counts)
    more[site] = more.get(site, 0) + 1
    big = stabilize(SiteConfiguration(box, more), tape)
    return all(big.odometer[s] >= small.odometer[s] for s in box)


def clock_independent_instance(box, counts, kernel, lam, seed, key) -> bool:
    tape = InstructionTape(kernel, lam, seed, key)
    config = SiteConfiguration(box, counts)
    ref = stabilize(config, tape)
    run = run_continuous(config, tape)
    return run.absorbed and run.config == ref.config and run.odometer == ref.odometer


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def suite_abelian(seed: int = 0, scale: float = 1.0) -> SuiteReport:
    rep = SuiteReport("abelian")
    n = _n(500, scale)
    rng = stream(seed, "verify", "abelian")
    bad_global = bad_local = bad_mono = bad_clock = bad_conserve = 0
    comparable = 0
    for k in range(n):
        box, counts, kernel, lam = acc.random_instance(rng)
        ok, M = acc.strategies_agree(box, counts, kernel, lam, seed, ("g", k))
        bad_global += not ok
        total = sum(counts.values())
        tape = InstructionTape(kernel, lam, seed, ("g", k))
        r = stabilize(SiteConfiguration(box, counts), tape)
        bad_conserve += r.config.total() != total or r.M != r.config.exited_total()
        c, agree = local_abelian_instance(box, counts, kernel, lam, seed, ("l", k), rng)
        comparable += c
        bad_local += not agree
        site = box.sites()[int(rng.integers(box.volume))]
        bad_mono += not odometer_monotone_instance(box, counts, kernel, lam, seed, ("m", k), site)
        if k % 5 == 0:
            bad_clock += not clock_independent_instance(box, counts, kernel, lam, seed, ("c", k))
    rep.add("global abelianness", bad_global == 0, f"{n - bad_global}/{n} instances")
    rep.add("local abelianness", bad_local == 0,
            f"{comparable} comparable pairs, {bad_local} disagreements")
    rep.add("particle conservation", bad_conserve == 0, f"{bad_conserve} violations")
    rep.add("odometer monotone in added particle", bad_mono == 0, f"{bad_mono} violations")
    rep.add("continuous time absorbs to the stabilized state", bad_clock == 0,
            f"{bad_clock} mismatches over {len(range(0, n, 5))}")
    box = Box(2)
    try:
        topple(SiteConfiguration(box), InstructionTape(JumpKernel.nearest_neighbor_1d(1.0), 1.0),
               Odometer(), (0,))
        rep.add("illegal toppling rejected", False, "no error")
    except IllegalToppling:
        rep.add("illegal toppling rejected", True, "IllegalToppling")
    return rep


def suite_coupling(seed: int = 0, scale: float = 1.0) -> SuiteReport:
    rep = SuiteReport("coupling")
    trials = _n(2000, scale, 20)
    m = acc.monotonicity_means(trials, seed)
    means = m.mean(axis=0)
    lows = []
    for a, b in ((0, 1), (1, 2)):
        d = m[:, b] - m[:, a]
        lows.append(float(d.mean() - acc.Z99 * d.std(ddof=1) / math.sqrt(trials)))
    rep.add("ordered means E[U] <= E U' <= E U''", means[0] <= means[1] <= means[2],
            f"{means[0]:.4f} <= {means[1]:.4f} <= {means[2]:.4f} over {trials} trials "
            f"(99% lower bounds of differences {lows[0]:.4f}, {lows[1]:.4f})")
    inst = _n(100, scale, 10)
    bad = acc.pathwise_red_monotonicity(inst, seed)
    rep.add("toppling counts nondecreasing when reds are added", not bad,
            f"{inst - len(bad)}/{inst} instances dominated; violations at {bad[:10]}")

    kernel = acc.MONO_KERNEL
    U = Box(1).sites()
    bad_restricted = 0
    for r in range(_n(200, scale, 10)):
        blue = sample_counts(InitialLaw.poisson(1.0), U, seed, ("restricted", r))
        run = run_two_color(blue, {}, U, kernel, 1.0, seed, ("restricted", r), domain=U)
        tape = InstructionTape(kernel, 1.0, seed, ("restricted", r, BLUE))
        ref = stabilize(SiteConfiguration(U, blue), tape)
        bad_restricted += run.M != ref.M or run.odometer(BLUE) != Odometer(
            {s: k for s, k in ref.odometer.items() if k})
    rep.add("blue-only run equals restricted ARW on U", bad_restricted == 0,
            f"{bad_restricted} mismatches")
    bad_T = 0
    for r in range(_n(100, scale, 10)):
        eta = sample_counts(InitialLaw.constant(1), Box(4).sites(), seed, ("T", r))
        t = coupled_monotonicity_trial(U, Box(2).sites(), Box(4).sites(), eta, kernel, 1.0,
                                       seed, ("T", r))
        run = t.runs[1]
        grid = sorted(run.conversions) + [math.inf]
        counts = [run.exit_count(T) for T in grid]
        bad_T += any(b < a for a, b in zip(counts, counts[1:]))
    rep.add("M_U^T nondecreasing in T", bad_T == 0, f"{bad_T} violations")
    return rep


def suite_branching(seed: int = 0, scale: float = 1.0) -> SuiteReport:
    from .couplings import run_branching_dominator

    rep = SuiteReport("branching")
    runs = _n(10_000, scale, 50)
    kernel = JumpKernel.simple_symmetric(1)
    grid = {}
    for lam in (0.5, 1.0):
        for t in (0.5, 1.0):
            z = acc.branching_sizes(lam, t, runs, seed, kernel)
            grid[lam, t] = z
            mean, se = z.mean(), z.std(ddof=1) / math.sqrt(runs)
            bound = math.exp(2 * (1 + lam) * t)
            rep.add(f"mean |Z_t| at lam={lam}, t={t}", mean + 3 * se <= bound,
                    f"{mean:.4f} ± {se:.4f} vs bound e^(2(1+lam)t) = {bound:.4f}")
    means = {k: v.mean() for k, v in grid.items()}
    mono = (means[0.5, 0.5] <= means[0.5, 1.0] and means[1.0, 0.5] <= means[1.0, 1.0]
            and means[0.5, 0.5] <= means[1.0, 0.5] and means[0.5, 1.0] <= means[1.0, 1.0])
    rep.add("mean size nondecreasing in t and lam", mono,
            ", ".join(f"{k}: {v:.3f}" for k, v in sorted(means.items())))
    trail_ok = True
    for r in range(_n(200, scale, 10)):
        run = run_branching_dominator(1.0, kernel, 1.0, seed, ("trail", r))
        trail_ok &= run.j_sites <= run.i_visited
    rep.add("every J site was visited by an I particle", trail_ok, "")
    zero = run_branching_dominator(1.0, kernel, 0.0, seed, ("zero",))
    rep.add("t = 0 gives {o}", zero.sites == {(0,)}, str(sorted(zero.sites)))
    return rep


def suite_particlewise(seed: int = 0, scale: float = 1.0) -> SuiteReport:
    rep = SuiteReport("particlewise")
    kernel = JumpKernel.simple_symmetric(1)
    law = InitialLaw.bernoulli(0.4)
    box = Box(6)
    n = _n(100, scale, 5)
    bad_shift = bad_count = bad_halt = bad_infl = 0
    for s in range(n):
        eta = sample_counts(law, box, seed, ("pw", s))
        rand = ParticleRandomness(kernel, 0.7, seed, ("pw", s))
        run = simulate_labeled(eta, rand, horizon=3.0)
        u = (5,)
        shifted = simulate_labeled({(x[0] + 5,): c for x, c in eta.items()}, rand.shifted(u),
                                   horizon=3.0)
        moved = [(t, ((x[0] + 5,), i), k, (a[0] + 5,), (b[0] + 5,))
                 for t, (x, i), k, a, b in run.events]
        bad_shift += moved != shifted.events
        total = sum(eta.values())
        for t in sorted({e[0] for e in run.events}):
            cnt = run.counting(t)
            bad_count += sum(1 if v == "rho" else v for v in cnt.values()) != total
        last_sleep = {}
        for t, lab, kind, a, b in run.events:
            if kind == "sleep":
                last_sleep[lab] = a
            elif kind == "wake":
                last_sleep.pop(lab, None)
            elif kind == "jump" and lab in last_sleep:
                bad_halt += 1
        labels = sorted((x, i) for x, c in eta.items() for i in range(1, c + 1))
        if labels:
            lab = labels[int(stream(seed, "pw-label", s).integers(len(labels)))]
            rec = influence_set(eta, lab, 1.5, rand)
            full = simulate_labeled(eta, rand, horizon=1.5)
            cut = simulate_labeled(eta, rand, horizon=1.5, exclude=[lab])
            for z in box:
                if z not in rec.sites:
                    a = [e for e in full.events if e[0] <= 1.5 and (e[3] == z or e[4] == z)]
                    b = [e for e in cut.events if e[0] <= 1.5 and (e[3] == z or e[4] == z)]
                    bad_infl += a != b
    rep.add("translation covariance", bad_shift == 0, f"{bad_shift} of {n} samples differ")
    rep.add("counting projection conserves particles", bad_count == 0, f"{bad_count} violations")
    rep.add("passive particles do not move", bad_halt == 0, f"{bad_halt} violations")
    rep.add("histories outside the influence set agree", bad_infl == 0, f"{bad_infl} violations")

    # two particles sharing a site: no sleep can succeed before the first jump
    first_sleep = 0
    m = _n(10_000, scale, 100)
    for s in range(m):
        rand = ParticleRandomness(kernel, 1.0, seed, ("pair", s))
        run = simulate_labeled({(0,): 2}, rand, horizon=50.0)
        first_sleep += bool(run.events) and run.events[0][2] != "jump"
    rep.add("shared site: first event is a jump", first_sleep == 0,
            f"{m - first_sleep}/{m} runs")

    samples = _n(20_000, scale, 500)
    b3 = Box(1)
    k3 = JumpKernel.from_support([((1,), 0.5), ((-1,), 0.5)], bias=(1,))
    counts = {s: 1 for s in b3}
    a = acc.sitewise_finals(samples, k3, 1.0, b3, counts, seed)
    b = acc.labeled_finals(samples, k3, 1.0, b3, counts, seed)
    tv = acc.total_variation(a, b)
    # three times the typical TV between two empirical laws on K outcomes,
    # about 0.4 sqrt(2K/n)
    K = len(set(a) | set(b))
    tol = max(0.02, 1.2 * math.sqrt(2 * K / samples))
    rep.add("site-wise and particle-wise final laws", tv <= tol,
            f"TV {tv:.4f} over {samples} samples each (tolerance {tol:.3f})")
    passive_alone = True
    for s in range(_n(200, scale, 10)):
        eta = sample_counts(law, box, seed, ("alone", s))
        run = simulate_labeled(eta, ParticleRandomness(kernel, 2.0, seed, ("alone", s)),
                               window=box)
        for p in run.particles.values():
            if p.state == PASSIVE:
                passive_alone &= sum(q.position == p.position for q in run.particles.values()) == 1
    rep.add("a passive particle is alone at its site", passive_alone, "")
    return rep


SUITES = {
    "abelian": suite_abelian,
    "coupling": suite_coupling,
    "branching": suite_branching,
    "particlewise": suite_particlewise,
}

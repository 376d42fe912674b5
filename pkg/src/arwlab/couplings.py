"""Coupling gadgets: the blue/red system and the influence / branching bound.

Blue particles are the ones that started in ``U`` and have not left it
yet; a blue particle that jumps out of ``U`` turns red.  Each color has its
own instruction stacks and clocks at every site, each clock running at
``(1 + lam)`` times the number of active particles of that color, while
the sleep rule and wake-ups are color-blind.
"""
from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .lattice import InitialLaw, JumpKernel, Site, sample_counts, stream
from .particlewise import Label, ParticleRandomness, simulate_labeled
from .sitewise import InstructionTape, Odometer, SiteClocks

BLUE, RED = "B", "R"


class PopulationGuard(RuntimeError):
    """Branching population exceeded the configured cap."""


def _add(a: Site, b: Site) -> Site:
    return tuple(x + y for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# Two-color system
# ---------------------------------------------------------------------------

@dataclass
class TwoColorRun:
    """Trajectory of a blue/red run.

    ``topple_times[(color, x)]`` lists the times of the successive
    topplings of that color at ``x``; ``conversions`` the times at which a
    blue particle left ``U``.
    """

    U: frozenset
    initial_blue: int
    blue: dict[Site, int]
    red: dict[Site, int]
    sleeper: dict[Site, str]
    events: list[tuple[float, str, Site, object]]
    topple_times: dict[tuple[str, Site], list[float]]
    conversions: list[float]
    absorbed: bool

    @property
    def M(self) -> int:
        """Blue particles that visited the complement of ``U``."""
        return len(self.conversions)

    def exit_count(self, T: float) -> int:
        return sum(1 for t in self.conversions if t <= T)

    def odometer(self, color: str) -> Odometer:
        return Odometer({x: len(v) for (c, x), v in self.topple_times.items() if c == color})

    def colorblind(self) -> dict[Site, int | str]:
        out: dict[Site, int | str] = {}
        for x in set(self.blue) | set(self.red):
            n = self.blue.get(x, 0) + self.red.get(x, 0)
            if n:
                out[x] = "rho" if x in self.sleeper else n
        return out


def run_two_color(blue0: Mapping[Site, int], red0: Mapping[Site, int], U: Iterable[Site],
                  kernel: JumpKernel, lam: float, seed: int = 0, key=(),
                  domain: Iterable[Site] | None = None, horizon: float = math.inf,
                  max_events: int = 10**8) -> TwoColorRun:
    """Run the blue/red system up to ``horizon`` or absorption.

    ``domain=None`` lets both colors move on all of Z^d; otherwise only
    sites of ``domain`` topple and particles freeze outside it (so
    ``domain=U`` is the process restricted to ``U``).  Randomness for color
    ``c`` is read from ``(seed, key, c)``.
    """
    U = frozenset(tuple(x) for x in U)
    dom = None if domain is None else frozenset(tuple(x) for x in domain)
    key = tuple(key) if isinstance(key, (tuple, list)) else (key,)
    tapes = {c: InstructionTape(kernel, lam, seed, (*key, c)) for c in (BLUE, RED)}
    clocks = {c: SiteClocks(1.0 + lam, seed, (*key, c)) for c in (BLUE, RED)}
    K = len(kernel.offsets)
    offs = kernel.offsets

    pop = {BLUE: {}, RED: {}}
    for x, n in blue0.items():
        x = tuple(x)
        if n and x not in U:
            raise ValueError("blue particles must start in U")
        if n:
            pop[BLUE][x] = int(n)
    for x, n in red0.items():
        if n:
            pop[RED][tuple(x)] = pop[RED].get(tuple(x), 0) + int(n)
    sleeper: dict[Site, str] = {}
    initial_blue = sum(pop[BLUE].values())

    h: dict[tuple[str, Site], int] = {}
    local: dict[tuple[str, Site], float] = {}
    tref: dict[tuple[str, Site], float] = {}
    speed: dict[tuple[str, Site], int] = {}
    version: dict[tuple[str, Site], int] = {}
    times: dict[tuple[str, Site], list[float]] = {}
    heap: list = []

    def active(c, x):
        if x in sleeper or (dom is not None and x not in dom):
            return 0
        return pop[c].get(x, 0)

    def schedule(c, x):
        s = speed.get((c, x), 0)
        if s:
            k = (c, x)
            t = tref.get(k, 0.0) + (clocks[c].mark(x, h.get(k, 0)) - local.get(k, 0.0)) / s
            heapq.heappush(heap, (t, c, x, version.get(k, 0)))

    def respeed(c, x, now):
        k = (c, x)
        new = active(c, x)
        old = speed.get(k, 0)
        if new != old:
            local[k] = local.get(k, 0.0) + old * (now - tref.get(k, 0.0))
            tref[k] = now
            speed[k] = new
            version[k] = version.get(k, 0) + 1
            schedule(c, x)

    for c in (BLUE, RED):
        for x in sorted(pop[c]):
            respeed(c, x, 0.0)

    events = []
    conversions: list[float] = []
    n_events = 0
    absorbed = True
    while heap:
        t, c, x, ver = heapq.heappop(heap)
        k = (c, x)
        if ver != version.get(k, 0):
            continue
        if t > horizon:
            absorbed = False
            break
        n_events += 1
        if n_events > max_events:
            raise RuntimeError("event cap exceeded")
        j = h.get(k, 0)
        local[k] = clocks[c].mark(x, j)
        tref[k] = t
        h[k] = j + 1
        times.setdefault(k, []).append(t)
        code = tapes[c].code(x, j)
        touched = [x]
        if code == K:
            if pop[BLUE].get(x, 0) + pop[RED].get(x, 0) == 1:
                sleeper[x] = c
            events.append((t, c, x, "sleep"))
        else:
            y = _add(x, offs[code])
            pop[c][x] -= 1
            c2 = c
            if c == BLUE and y not in U:
                c2 = RED
                conversions.append(t)
            pop[c2][y] = pop[c2].get(y, 0) + 1
            sleeper.pop(y, None)
            events.append((t, c, x, offs[code]))
            touched.append(y)
        version[k] = version.get(k, 0) + 1
        speed[k] = active(c, x)
        schedule(c, x)
        for site in touched:
            for col in (BLUE, RED):
                if (col, site) != k:
                    respeed(col, site, t)

    clean = {c: {x: n for x, n in pop[c].items() if n} for c in (BLUE, RED)}
    return TwoColorRun(U, initial_blue, clean[BLUE], clean[RED], dict(sleeper), events,
                       times, conversions, absorbed)


def dominated(small: TwoColorRun, big: TwoColorRun) -> bool:
    """Pathwise ``h_small(t) <= h_big(t)`` for both colors, every site and time."""
    for k, ts in small.topple_times.items():
        tb = big.topple_times.get(k, [])
        if len(tb) < len(ts):
            return False
        if any(b > s for s, b in zip(ts, tb)):
            return False
    return True


@dataclass
class MonotonicityTrial:
    """Exit counts of ``U`` under ``P_[U]``, ``P_U'`` and ``P_U''`` on shared randomness."""

    M_restricted: int
    M_mid: int
    M_big: int
    runs: tuple[TwoColorRun, TwoColorRun, TwoColorRun]

    @property
    def counts(self) -> tuple[int, int, int]:
        return self.M_restricted, self.M_mid, self.M_big


def coupled_monotonicity_trial(U: Iterable[Site], U_mid: Iterable[Site], U_big: Iterable[Site],
                               eta0: Mapping[Site, int], kernel: JumpKernel, lam: float,
                               seed: int = 0, key=(), horizon: float = math.inf) -> MonotonicityTrial:
    """Three coupled runs sharing tapes and clocks.

    Blue particles are ``eta0`` on ``U``; red ones are ``eta0`` on
    ``U_mid - U`` (resp. ``U_big - U``).  The first run is restricted to
    ``U``; the other two move freely on Z^d.
    """
    U, U_mid, U_big = (frozenset(map(tuple, s)) for s in (U, U_mid, U_big))
    if not (U <= U_mid <= U_big):
        raise ValueError("need U ⊂ U' ⊂ U''")
    blue = {x: n for x, n in eta0.items() if tuple(x) in U}
    red_mid = {x: n for x, n in eta0.items() if tuple(x) in U_mid - U}
    red_big = {x: n for x, n in eta0.items() if tuple(x) in U_big - U}
    r0 = run_two_color(blue, {}, U, kernel, lam, seed, key, domain=U, horizon=horizon)
    r1 = run_two_color(blue, red_mid, U, kernel, lam, seed, key, horizon=horizon)
    r2 = run_two_color(blue, red_big, U, kernel, lam, seed, key, horizon=horizon)
    return MonotonicityTrial(r0.M, r1.M, r2.M, (r0, r1, r2))


# ---------------------------------------------------------------------------
# Influence sets
# ---------------------------------------------------------------------------

@dataclass
class InfluenceRecord:
    label: Label
    horizon: float
    sites: frozenset

    def to_csv_rows(self) -> list[list]:
        (x, i) = self.label
        return [[self.horizon, *x, i, *z] for z in sorted(self.sites)]


def influence_set(pi: Mapping[Site, int], label: Label, t: float,
                  rand: ParticleRandomness) -> InfluenceRecord:
    """Sites whose labeled history on ``[0, t]`` changes when ``label`` is removed.

    The particle is dropped and every other particle keeps its own
    trajectory and clock; this is the shift-down relabeling with labels
    mapped back to the particles they follow, so histories are compared
    particle by particle.
    """
    x, i = tuple(label[0]), label[1]
    if i > pi.get(x, 0):
        return InfluenceRecord((x, i), t, frozenset())
    full = simulate_labeled(pi, rand, horizon=t).histories(t)
    cut = simulate_labeled(pi, rand, horizon=t, exclude=[(x, i)]).histories(t)
    empty = ((), ())
    diff = frozenset(z for z in set(full) | set(cut) if full.get(z, empty) != cut.get(z, empty))
    return InfluenceRecord((x, i), t, diff)


# ---------------------------------------------------------------------------
# I/J branching dominator
# ---------------------------------------------------------------------------

@dataclass
class BranchingRun:
    """Occupied set and population of the I/J system at the horizon."""

    horizon: float
    sites: frozenset
    n_I: int
    n_J: int
    snapshots: list[tuple[float, int, int, int]] = field(default_factory=list)
    i_visited: frozenset = frozenset()
    j_sites: frozenset = frozenset()

    @property
    def population(self) -> int:
        return self.n_I + self.n_J

    def snapshot_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = len(next(iter(self.sites)))
        w.writerow(["time"] + [f"x{k}" for k in range(d)])
        for z in sorted(self.sites):
            w.writerow([self.horizon, *z])
        return buf.getvalue()


def run_branching_dominator(lam: float, kernel: JumpKernel, t: float, seed: int = 0, key=(),
                            cap: int = 10**7, record: bool = False) -> BranchingRun:
    """Exact simulation of the I/J system started from one I particle at the origin.

    I particles jump at rate 1, leaving a J behind and adding an I at the
    landing site; every I or J particle spawns an I on its own site at
    rate ``lam``.  J particles never move.
    """
    key = tuple(key) if isinstance(key, (tuple, list)) else (key,)
    rng = stream(seed, *key, "branch")
    origin = (0,) * kernel.dim
    I = [origin]
    J: list[Site] = []
    offs = kernel.offsets
    cum = kernel.cumulative()
    i_visited = {origin}
    now = 0.0
    snaps = [(0.0, 1, 0, 1)] if record else []
    buf_e: list[float] = []
    buf_u: list[float] = []
    while True:
        if not buf_e:
            buf_e = rng.exponential(1.0, 256).tolist()
            buf_u = rng.random(512).tolist()
        nI, nJ = len(I), len(J)
        rate = nI + lam * (nI + nJ)
        now += buf_e.pop() / rate
        if now > t:
            break
        u = buf_u.pop() * rate
        if u < nI:
            idx = min(int(u), nI - 1)
            x = I[idx]
            y = _add(x, offs[int(np.searchsorted(cum, buf_u.pop(), side="right"))])
            I[idx] = y
            I.append(y)
            J.append(x)
            i_visited.add(y)
        else:
            idx = min(int((u - nI) / lam), nI + nJ - 1)
            I.append(I[idx] if idx < nI else J[idx - nI])
        if len(I) + len(J) > cap:
            raise PopulationGuard(f"population above {cap}")
        if record:
            snaps.append((now, len(I), len(J), len(set(I) | set(J))))
    return BranchingRun(t, frozenset(I) | frozenset(J), len(I), len(J), snaps,
                        frozenset(i_visited), frozenset(J))

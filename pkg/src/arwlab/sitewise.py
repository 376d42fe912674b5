"""Site-wise (Diaconis-Fulton) construction of ARW on a finite window.

Randomness lives on sites: each site owns an i.i.d. stack of instructions
(jump by an offset of the kernel, or sleep) and, for the continuous-time
dynamics, a Poisson clock read in local time.  Particles landing outside
the window freeze there (restricted process).

Hot loops work on per-index Python lists; the public API speaks in site
tuples.
"""
from __future__ import annotations

import csv
import heapq
import io
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .lattice import Box, HalfSpace, JumpKernel, Site, stream

DEFAULT_BUDGET = 10**9
STRATEGIES = ("greedy-sweep", "leveling-rolling-finishing", "random", "stack")


class IllegalToppling(ValueError):
    """Attempt to topple a stable or sleeping site."""


class ToppleBudgetExceeded(RuntimeError):
    """The configured toppling cap was hit (infinite-loop guard)."""


class TapeExhausted(IndexError):
    """A fixed (hand-written) tape ran out of instructions."""


# ---------------------------------------------------------------------------
# Configurations
# ---------------------------------------------------------------------------

class SiteConfiguration:
    """Particle counts and sleep flags on a finite window, plus frozen exits.

    ``sleeping[i]`` implies ``counts[i] == 1``.  ``exited`` maps exterior
    sites to the number of particles frozen there.
    """

    def __init__(self, window: Box | Iterable[Site], counts: Mapping[Site, int] | None = None,
                 sleeping: Iterable[Site] = (), exited: Mapping[Site, int] | None = None):
        self.window = window if isinstance(window, Box) else None
        sites = list(window) if isinstance(window, Box) else sorted(set(map(tuple, window)))
        self.sites: tuple[Site, ...] = tuple(sites)
        self.index: dict[Site, int] = {s: i for i, s in enumerate(self.sites)}
        self.counts = [0] * len(self.sites)
        self.sleeping = [False] * len(self.sites)
        self.exited: dict[Site, int] = {}
        for s, c in (counts or {}).items():
            s = tuple(s)
            if c < 0 or c != int(c):
                raise ValueError(f"invalid count {c!r} at {s}")
            if s not in self.index:
                if c:
                    raise ValueError(f"site {s} outside the window")
                continue
            self.counts[self.index[s]] = int(c)
        for s in sleeping:
            i = self.index[tuple(s)]
            if self.counts[i] != 1:
                raise ValueError("a sleeping site must hold exactly one particle")
            self.sleeping[i] = True
        for s, c in (exited or {}).items():
            if tuple(s) in self.index:
                raise ValueError("exited particles must sit outside the window")
            if c:
                self.exited[tuple(s)] = int(c)

    # -- queries -----------------------------------------------------------
    @property
    def dim(self) -> int:
        return len(self.sites[0]) if self.sites else (self.window.dim if self.window else 1)

    def count(self, site: Site) -> int:
        i = self.index.get(tuple(site))
        return self.exited.get(tuple(site), 0) if i is None else self.counts[i]

    def is_sleeping(self, site: Site) -> bool:
        i = self.index.get(tuple(site))
        return i is not None and self.sleeping[i]

    def active(self, site: Site) -> int:
        i = self.index[tuple(site)]
        return 0 if self.sleeping[i] else self.counts[i]

    def interior_total(self) -> int:
        return sum(self.counts)

    def exited_total(self) -> int:
        return sum(self.exited.values())

    def total(self) -> int:
        return self.interior_total() + self.exited_total()

    def unstable_sites(self) -> list[Site]:
        return [s for s, c, z in zip(self.sites, self.counts, self.sleeping) if c and not z]

    def is_stable(self) -> bool:
        return not any(c and not z for c, z in zip(self.counts, self.sleeping))

    def state(self) -> tuple:
        """Hashable canonical form (interior counts, sleep flags, exits)."""
        return (self.sites, tuple(self.counts), tuple(self.sleeping),
                tuple(sorted(self.exited.items())))

    def __eq__(self, other) -> bool:
        return isinstance(other, SiteConfiguration) and self.state() == other.state()

    def __hash__(self):
        return hash(self.state())

    def __repr__(self):
        occ = {s: ("ρ" if z else c) for s, c, z in zip(self.sites, self.counts, self.sleeping) if c}
        return f"SiteConfiguration({occ}, exited={self.exited})"

    def copy(self) -> "SiteConfiguration":
        new = SiteConfiguration.__new__(SiteConfiguration)
        new.window = self.window
        new.sites = self.sites
        new.index = self.index
        new.counts = list(self.counts)
        new.sleeping = list(self.sleeping)
        new.exited = dict(self.exited)
        return new

    def as_dict(self) -> dict[Site, int | str]:
        """Occupied sites, interior and exterior; a sleeper shows as ``'rho'``."""
        out: dict[Site, int | str] = {}
        for s, c, z in zip(self.sites, self.counts, self.sleeping):
            if c:
                out[s] = "rho" if z else c
        out.update(self.exited)
        return out


class Odometer(dict):
    """Per-site toppling counts; missing sites read as zero."""

    def __missing__(self, key):
        return 0


# ---------------------------------------------------------------------------
# Instruction tapes and clocks
# ---------------------------------------------------------------------------

class InstructionTape:
    """Lazy per-site instruction stacks.

    Instruction codes ``0..K-1`` mean "jump by ``kernel.offsets[code]``";
    code ``K`` means sleep.  A jump has probability ``p(y)/(1+lam)`` and a
    sleep ``lam/(1+lam)``.  The stack at ``site`` is a pure function of
    ``(seed, key, site)``, so tapes are regenerable and unaffected by which
    other sites exist.
    """

    CHUNK = 32

    def __init__(self, kernel: JumpKernel, lam: float, seed: int = 0, key=(),
                 fixed: Mapping[Site, list] | None = None):
        if lam <= 0:
            raise ValueError("sleep rate must be positive")
        self.kernel = kernel
        self.lam = float(lam)
        self.seed = seed
        self.key = tuple(key) if isinstance(key, (tuple, list)) else (key,)
        self.sleep_code = len(kernel.offsets)
        probs = np.array(kernel.probs + (self.lam,)) / (1.0 + self.lam)
        self._bounds = np.cumsum(probs)[:-1]
        self._buffers: dict[Site, list[int]] = {}
        self._gens: dict[Site, np.random.Generator] = {}
        self._fixed = fixed is not None
        if fixed is not None:
            for s, instrs in fixed.items():
                self._buffers[tuple(s)] = [self.encode(x) for x in instrs]

    def encode(self, instr) -> int:
        if instr in ("S", "sleep", "rho"):
            return self.sleep_code
        return self.kernel.offsets.index(tuple(instr))

    def decode(self, code: int):
        return "sleep" if code == self.sleep_code else self.kernel.offsets[code]

    def buffer(self, site: Site) -> list[int]:
        buf = self._buffers.get(site)
        if buf is None:
            buf = self._buffers[site] = []
        return buf

    def extend(self, site: Site) -> None:
        if self._fixed:
            raise TapeExhausted(f"fixed tape at {site} exhausted")
        gen = self._gens.get(site)
        if gen is None:
            gen = self._gens[site] = stream(self.seed, *self.key, "tape", site)
        u = gen.random(self.CHUNK)
        self.buffer(site).extend(np.searchsorted(self._bounds, u, side="right").tolist())

    def code(self, site: Site, k: int) -> int:
        buf = self.buffer(site)
        while k >= len(buf):
            self.extend(site)
        return buf[k]

    def instruction(self, site: Site, k: int):
        return self.decode(self.code(tuple(site), k))

    def consumed_prefix(self, site: Site, k: int) -> list[int]:
        return [self.code(tuple(site), j) for j in range(k)]


class SiteClocks:
    """Per-site Poisson marks (in local time) of intensity ``rate``."""

    CHUNK = 16

    def __init__(self, rate: float, seed: int = 0, key=()):
        self.rate = float(rate)
        self.seed = seed
        self.key = tuple(key) if isinstance(key, (tuple, list)) else (key,)
        self._marks: dict[Site, list[float]] = {}
        self._gens: dict[Site, np.random.Generator] = {}

    def mark(self, site: Site, k: int) -> float:
        marks = self._marks.get(site)
        if marks is None:
            marks = self._marks[site] = []
        while k >= len(marks):
            gen = self._gens.get(site)
            if gen is None:
                gen = self._gens[site] = stream(self.seed, *self.key, "clock", site)
            last = marks[-1] if marks else 0.0
            for gap in gen.exponential(1.0 / self.rate, self.CHUNK).tolist():
                last += gap
                marks.append(last)
        return marks[k]


# ---------------------------------------------------------------------------
# Toppling
# ---------------------------------------------------------------------------

def _neighbor_table(config: SiteConfiguration, kernel: JumpKernel):
    nbr, ext = [], []
    for s in config.sites:
        row, erow = [], []
        for off in kernel.offsets:
            t = tuple(a + b for a, b in zip(s, off))
            j = config.index.get(t, -1)
            row.append(j)
            erow.append(None if j >= 0 else t)
        nbr.append(row)
        ext.append(erow)
    return nbr, ext


def topple(config: SiteConfiguration, tape: InstructionTape, odo: Odometer, site: Site):
    """Topple ``site`` once, in place.  Returns the executed instruction.

    Jump: one particle moves, waking a sleeper at the target or freezing
    outside the window.  Sleep: succeeds only for a lone particle,
    otherwise it is discarded.  The odometer advances either way.
    """
    site = tuple(site)
    i = config.index.get(site)
    if i is None or config.counts[i] == 0 or config.sleeping[i]:
        raise IllegalToppling(f"site {site} is stable")
    k = odo[site]
    code = tape.code(site, k)
    odo[site] = k + 1
    if code == tape.sleep_code:
        if config.counts[i] == 1:
            config.sleeping[i] = True
        return "sleep"
    off = tape.kernel.offsets[code]
    target = tuple(a + b for a, b in zip(site, off))
    config.counts[i] -= 1
    j = config.index.get(target)
    if j is None:
        config.exited[target] = config.exited.get(target, 0) + 1
    else:
        config.counts[j] += 1
        config.sleeping[j] = False
    return off


class _Engine:
    """Index-level toppling machine shared by the strategies."""

    def __init__(self, config: SiteConfiguration, tape: InstructionTape, budget: int):
        self.cfg = config
        self.tape = tape
        self.counts = config.counts
        self.sleeping = config.sleeping
        self.exited = config.exited
        self.nbr, self.ext = _neighbor_table(config, tape.kernel)
        self.bufs = [tape.buffer(s) for s in config.sites]
        self.odo = [0] * len(config.sites)
        self.K = tape.sleep_code
        self.budget = budget
        self.topplings = 0
        self.jumps = 0
        self.sleeps = 0
        self.discarded = 0

    def topple(self, i: int) -> int:
        if self.topplings >= self.budget:
            raise ToppleBudgetExceeded(f"more than {self.budget} topplings")
        self.topplings += 1
        k = self.odo[i]
        buf = self.bufs[i]
        if k >= len(buf):
            self.tape.extend(self.cfg.sites[i])
        code = buf[k]
        self.odo[i] = k + 1
        if code == self.K:
            if self.counts[i] == 1:
                self.sleeping[i] = True
                self.sleeps += 1
            else:
                self.discarded += 1
            return code
        self.jumps += 1
        self.counts[i] -= 1
        j = self.nbr[i][code]
        if j >= 0:
            self.counts[j] += 1
            self.sleeping[j] = False
        else:
            t = self.ext[i][code]
            self.exited[t] = self.exited.get(t, 0) + 1
        return code

    def unstable(self) -> list[int]:
        c, z = self.counts, self.sleeping
        return [i for i in range(len(c)) if c[i] and not z[i]]

    def sweep_until_stable(self) -> None:
        while True:
            snap = self.unstable()
            if not snap:
                return
            for i in snap:
                self.topple(i)

    def stack_until_stable(self) -> None:
        c, z = self.counts, self.sleeping
        todo = self.unstable()
        todo.reverse()
        while todo:
            i = todo.pop()
            while c[i] and not z[i]:
                code = self.topple(i)
                if code != self.K:
                    j = self.nbr[i][code]
                    if j >= 0:
                        todo.append(j)

    def random_until_stable(self, rng: np.random.Generator) -> None:
        c, z = self.counts, self.sleeping
        live = set(self.unstable())
        while live:
            order = sorted(live)
            i = order[int(rng.integers(len(order)))]
            code = self.topple(i)
            if code != self.K:
                j = self.nbr[i][code]
                if j >= 0:
                    live.add(j)
            if not c[i] or z[i]:
                live.discard(i)

    def odometer(self) -> Odometer:
        return Odometer(zip(self.cfg.sites, self.odo))


@dataclass
class StabilizationReport:
    """Result of stabilizing a window.

    ``M`` counts particles that left the window; ``N`` counts particles
    left behind during the rolling stage (0 for other strategies).
    """

    config: SiteConfiguration
    odometer: Odometer
    M: int
    N: int
    initial_total: int
    strategy: str
    topplings: int
    jumps: int
    sleeps: int
    discarded: int
    wall_time: float = 0.0
    outcomes: dict[str, int] = field(default_factory=dict)
    sleep_events: list[tuple[int, Site]] = field(default_factory=list)

    def to_json(self) -> dict:
        cfg = self.config
        return {
            "schema": "arwlab.stabilization/1",
            "strategy": self.strategy,
            "M": self.M,
            "N": self.N,
            "initial_total": self.initial_total,
            "volume": len(cfg.sites),
            "topplings": self.topplings,
            "instructions": {"jump": self.jumps, "sleep": self.sleeps, "discarded": self.discarded},
            "outcomes": dict(self.outcomes),
            "final": [[list(s), c, z] for s, c, z in zip(cfg.sites, cfg.counts, cfg.sleeping) if c],
            "exited": [[list(s), c] for s, c in sorted(cfg.exited.items())],
            "metadata": {"wall_time": self.wall_time},
        }

    def grid_csv(self) -> str:
        cfg = self.config
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{k}" for k in range(cfg.dim)] + ["count", "sleeping", "odometer"])
        for s, c, z in zip(cfg.sites, cfg.counts, cfg.sleeping):
            w.writerow(list(s) + [c, int(z), self.odometer[s]])
        return buf.getvalue()


def _report(eng: _Engine, initial_total: int, strategy: str, t0: float, N: int = 0,
            **extra) -> StabilizationReport:
    cfg = eng.cfg
    return StabilizationReport(
        config=cfg, odometer=eng.odometer(),
        M=initial_total - cfg.interior_total(), N=N, initial_total=initial_total,
        strategy=strategy, topplings=eng.topplings, jumps=eng.jumps, sleeps=eng.sleeps,
        discarded=eng.discarded, wall_time=time.perf_counter() - t0, **extra)


def stabilize(config: SiteConfiguration, tape: InstructionTape, strategy: str = "greedy-sweep",
              budget: int = DEFAULT_BUDGET, order_seed: int = 0, v=None) -> StabilizationReport:
    """Stabilize ``config`` inside its window; the input is not modified.

    ``strategy`` picks the legal toppling order: ``greedy-sweep`` (passes
    over the unstable sites in lexicographic order), ``stack`` (depth-first
    worklist), ``random`` (uniform legal choice, seeded by ``order_seed``)
    or ``leveling-rolling-finishing`` (see :func:`stabilize_rolling`).  The
    final configuration and odometer do not depend on the choice.
    """
    if strategy == "leveling-rolling-finishing":
        return stabilize_rolling(config, tape, v=v, budget=budget)
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    t0 = time.perf_counter()
    initial = config.interior_total()
    eng = _Engine(config.copy(), tape, budget)
    if strategy == "greedy-sweep":
        eng.sweep_until_stable()
    elif strategy == "stack":
        eng.stack_until_stable()
    else:
        eng.random_until_stable(stream(order_seed, "strategy"))
    return _report(eng, initial, strategy, t0)


def stabilize_rolling(config: SiteConfiguration, tape: InstructionTape, v=None,
                      budget: int = DEFAULT_BUDGET) -> StabilizationReport:
    """Leveling, then rolling in increasing ``x . v`` order, then finishing.

    Stage 1 topples once every site holding two or more particles, until
    none is left.  Stage 2 visits ``x_1, ..., x_r`` (sorted by ``x . v``,
    ties lexicographic) and follows the particle at ``x_i`` until it exits,
    parks on an empty site of ``A_i = {x_{i+1}, ..., x_r}`` or falls asleep
    (left behind, counted in ``N``).  Stage 3 stabilizes what is left.
    """
    t0 = time.perf_counter()
    hs = HalfSpace(tape.kernel.direction(v))
    initial = config.interior_total()
    eng = _Engine(config.copy(), tape, budget)
    c, z, K, nbr = eng.counts, eng.sleeping, eng.K, eng.nbr
    sites = config.sites
    order = sorted(range(len(sites)), key=lambda i: (hs.level(sites[i]), sites[i]))
    rank = [0] * len(sites)
    for r, i in enumerate(order):
        rank[i] = r

    while True:
        snap = [i for i in range(len(c)) if c[i] >= 2]
        if not snap:
            break
        for i in snap:
            eng.topple(i)

    outcomes = {"exit": 0, "park": 0, "sleep": 0, "empty": 0}
    sleep_events: list[tuple[int, Site]] = []
    N = 0
    for step, start in enumerate(order):
        if not c[start] or z[start]:
            outcomes["empty"] += 1
            continue
        cur = start
        while True:
            code = eng.topple(cur)
            if code == K:
                if z[cur]:
                    N += 1
                    outcomes["sleep"] += 1
                    sleep_events.append((step, sites[cur]))
                    break
                continue
            j = nbr[cur][code]
            if j < 0:
                outcomes["exit"] += 1
                break
            if rank[j] > step and c[j] == 1:
                outcomes["park"] += 1
                break
            cur = j

    eng.sweep_until_stable()
    return _report(eng, initial, "leveling-rolling-finishing", t0, N=N,
                   outcomes=outcomes, sleep_events=sleep_events)


# ---------------------------------------------------------------------------
# Continuous time
# ---------------------------------------------------------------------------

@dataclass
class ContinuousRun:
    events: list[tuple[float, Site, object]]
    config: SiteConfiguration
    odometer: Odometer
    absorbed: bool
    time: float


def run_continuous(config: SiteConfiguration, tape: InstructionTape, clocks: SiteClocks | None = None,
                   horizon: float = math.inf, budget: int = DEFAULT_BUDGET) -> ContinuousRun:
    """Clock-driven evolution up to ``horizon`` or absorption.

    The clock of site ``x`` is read in local time, which runs at speed
    equal to the number of active particles at ``x``; each mark (intensity
    ``1 + lam``) topples ``x``.  Returns the event list ``(time, site,
    instruction)`` and the configuration at the end.
    """
    if clocks is None:
        clocks = SiteClocks(1.0 + tape.lam, tape.seed, tape.key)
    eng = _Engine(config.copy(), tape, budget)
    c, z, K, nbr = eng.counts, eng.sleeping, eng.K, eng.nbr
    sites = config.sites
    n = len(sites)
    local = [0.0] * n
    tref = [0.0] * n
    speed = [0 if z[i] else c[i] for i in range(n)]
    version = [0] * n
    heap: list[tuple[float, int, int]] = []

    def schedule(i):
        if speed[i]:
            t = tref[i] + (clocks.mark(sites[i], eng.odo[i]) - local[i]) / speed[i]
            heapq.heappush(heap, (t, i, version[i]))

    def respeed(i, now):
        new = 0 if z[i] else c[i]
        if new != speed[i]:
            local[i] += speed[i] * (now - tref[i])
            tref[i] = now
            speed[i] = new
            version[i] += 1
            schedule(i)

    for i in range(n):
        schedule(i)
    events = []
    now = 0.0
    while heap:
        t, i, ver = heapq.heappop(heap)
        if ver != version[i]:
            continue
        if t > horizon:
            heapq.heappush(heap, (t, i, ver))
            break
        now = t
        local[i] = clocks.mark(sites[i], eng.odo[i])
        tref[i] = t
        code = eng.topple(i)
        events.append((t, sites[i], tape.decode(code)))
        version[i] += 1
        speed[i] = 0 if z[i] else c[i]
        schedule(i)
        if code != K:
            j = nbr[i][code]
            if j >= 0:
                respeed(j, t)
    absorbed = not any(speed)
    return ContinuousRun(events, eng.cfg, eng.odometer(), absorbed,
                         now if absorbed or math.isinf(horizon) else horizon)

"""Particle-wise (labeled) construction of ARW.

Each particle ``(x, i)`` carries its own putative trajectory (Exp(1)
holding times, kernel jumps) and its own sleep clock (Poisson(lam) marks).
Both are parametrized by the particle's inner time, which only runs while
the particle is active.  A sleep mark puts the particle to sleep if it is
alone; an arrival wakes a passive particle instantly.

Finite initial conditions only; infinite-volume objects are probed through
growing windows (:func:`well_definedness_probe`).
"""
from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .lattice import Box, InitialLaw, JumpKernel, Site, sample_counts, stream, sup_norm

Label = tuple[Site, int]

ACTIVE = "active"
PASSIVE = "passive"


def _add(a: Site, b: Site) -> Site:
    return tuple(x + y for x, y in zip(a, b))


def _sub(a: Site, b: Site) -> Site:
    return tuple(x - y for x, y in zip(a, b))


class _Lazy:
    __slots__ = ("gen", "times", "codes")

    def __init__(self, gen):
        self.gen = gen
        self.times: list[float] = []
        self.codes: list[int] = []


class ParticleRandomness:
    """Lazy putative trajectories and sleep clocks, keyed by particle label.

    Streams for label ``(x, i)`` come from ``(seed, key, 'walk'|'nap', x - shift, i)``,
    so they are shared by every simulation that uses this object (or an
    equal one) regardless of which other particles exist.  ``shift``
    translates the whole family: label ``(x + u, i)`` under ``shift=u``
    reads the streams of ``(x, i)``.
    """

    CHUNK = 8

    def __init__(self, kernel: JumpKernel, lam: float, seed: int = 0, key=(),
                 shift: Site | None = None):
        if lam <= 0:
            raise ValueError("sleep rate must be positive")
        self.kernel = kernel
        self.lam = float(lam)
        self.seed = seed
        self.key = tuple(key) if isinstance(key, (tuple, list)) else (key,)
        self.shift = tuple(shift) if shift is not None else (0,) * kernel.dim
        self._cum = kernel.cumulative()
        self._walks: dict[Label, _Lazy] = {}
        self._naps: dict[Label, _Lazy] = {}

    def shifted(self, u: Site) -> "ParticleRandomness":
        return ParticleRandomness(self.kernel, self.lam, self.seed, self.key,
                                  _add(self.shift, tuple(u)))

    def _walk(self, label: Label) -> _Lazy:
        w = self._walks.get(label)
        if w is None:
            x, i = label
            w = self._walks[label] = _Lazy(stream(self.seed, *self.key, "walk", _sub(x, self.shift), i))
        return w

    def _nap(self, label: Label) -> _Lazy:
        w = self._naps.get(label)
        if w is None:
            x, i = label
            w = self._naps[label] = _Lazy(stream(self.seed, *self.key, "nap", _sub(x, self.shift), i))
        return w

    def jump(self, label: Label, k: int) -> tuple[float, int]:
        """Inner time and offset index of the ``k``-th putative jump."""
        w = self._walk(label)
        while k >= len(w.times):
            last = w.times[-1] if w.times else 0.0
            gaps = w.gen.exponential(1.0, self.CHUNK).tolist()
            codes = np.searchsorted(self._cum, w.gen.random(self.CHUNK), side="right").tolist()
            for g in gaps:
                last += g
                w.times.append(last)
            w.codes.extend(codes)
        return w.times[k], w.codes[k]

    def nap(self, label: Label, k: int) -> float:
        """Inner time of the ``k``-th sleep-clock mark."""
        w = self._nap(label)
        while k >= len(w.times):
            last = w.times[-1] if w.times else 0.0
            for g in w.gen.exponential(1.0 / self.lam, self.CHUNK).tolist():
                last += g
                w.times.append(last)
        return w.times[k]

    def putative_range(self, label: Label, inner_time: float) -> set[Site]:
        """Sites visited by the putative trajectory during inner time ``[0, inner_time]``."""
        pos = label[0]
        out = {pos}
        k = 0
        offs = self.kernel.offsets
        while True:
            t, c = self.jump(label, k)
            if t > inner_time:
                return out
            pos = _add(pos, offs[c])
            out.add(pos)
            k += 1


def labels_of(counts: Mapping[Site, int]) -> list[Label]:
    return sorted((tuple(x), i) for x, n in counts.items() for i in range(1, int(n) + 1))


@dataclass
class LabeledParticle:
    """State of one particle at the end of a run."""

    label: Label
    position: Site
    state: str
    inner_time: float
    frozen: bool = False


@dataclass
class LabeledRun:
    """Event log of a labeled simulation.

    ``events`` holds ``(time, label, kind, src, dst)`` with ``kind`` in
    ``jump``, ``sleep``, ``wake``; failed sleep attempts change nothing and
    are not logged.
    """

    initial: dict[Label, Site]
    events: list[tuple[float, Label, str, Site, Site]]
    particles: dict[Label, LabeledParticle]
    horizon: float
    absorbed: bool
    window: frozenset | None = None

    def history_at(self, z: Site, until: float | None = None) -> tuple:
        """Labeled history at ``z`` on ``[0, until]``: initial occupants then events touching ``z``."""
        z = tuple(z)
        until = self.horizon if until is None else until
        start = tuple(sorted(lab for lab, x in self.initial.items() if x == z))
        evs = tuple(e for e in self.events if e[0] <= until and (e[3] == z or e[4] == z))
        return start, evs

    def histories(self, until: float | None = None) -> dict[Site, tuple]:
        until = self.horizon if until is None else until
        starts: dict[Site, list] = {}
        for lab, x in self.initial.items():
            starts.setdefault(x, []).append(lab)
        evs: dict[Site, list] = {}
        for e in self.events:
            if e[0] > until:
                break
            evs.setdefault(e[3], []).append(e)
            if e[4] != e[3]:
                evs.setdefault(e[4], []).append(e)
        sites = set(starts) | set(evs)
        return {z: (tuple(sorted(starts.get(z, ()))), tuple(evs.get(z, ()))) for z in sites}

    def occupancy_at(self, t: float) -> dict[Site, frozenset]:
        """Sets of ``(label, state)`` present at each site at time ``t``."""
        pos = dict(self.initial)
        state = {lab: ACTIVE for lab in pos}
        for time_, lab, kind, src, dst in self.events:
            if time_ > t:
                break
            if kind == "jump":
                pos[lab] = dst
            elif kind == "sleep":
                state[lab] = PASSIVE
            else:
                state[lab] = ACTIVE
        out: dict[Site, set] = {}
        for lab, x in pos.items():
            out.setdefault(x, set()).add((lab, state[lab]))
        return {x: frozenset(v) for x, v in out.items()}

    def counting(self, t: float) -> dict[Site, int | str]:
        """Site-wise projection: particle counts, a lone sleeper shows as ``'rho'``."""
        out: dict[Site, int | str] = {}
        for x, occ in self.occupancy_at(t).items():
            if len(occ) == 1 and next(iter(occ))[1] == PASSIVE:
                out[x] = "rho"
            else:
                out[x] = len(occ)
        return out

    def final_configuration(self, window: Box | Iterable[Site]):
        """Counting projection at the end of a restricted run as a SiteConfiguration."""
        from .sitewise import SiteConfiguration

        win = window if isinstance(window, Box) else list(window)
        inside = set(win)
        counts: dict[Site, int] = {}
        exited: dict[Site, int] = {}
        sleeping = []
        for p in self.particles.values():
            if p.position in inside:
                counts[p.position] = counts.get(p.position, 0) + 1
                if p.state == PASSIVE:
                    sleeping.append(p.position)
            else:
                exited[p.position] = exited.get(p.position, 0) + 1
        return SiteConfiguration(win, counts, sleeping, exited)

    def event_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = len(next(iter(self.initial.values()))) if self.initial else 1
        w.writerow(["time"] + [f"label_x{k}" for k in range(d)] + ["label_i", "event"]
                   + [f"site{k}" for k in range(d)])
        for t, (x, i), kind, src, dst in self.events:
            w.writerow([repr(t)] + list(x) + [i, kind] + list(dst))
        return buf.getvalue()

    def max_distance(self, label: Label) -> int:
        """Largest sup-norm distance from its start reached by ``label``."""
        x0 = self.initial[label]
        best = 0
        for _, lab, kind, _, dst in self.events:
            if lab == label and kind == "jump":
                best = max(best, sup_norm(_sub(dst, x0)))
        return best


def simulate_labeled(eta0: Mapping[Site, int], rand: ParticleRandomness, horizon: float = math.inf,
                     window: Box | Iterable[Site] | None = None, exclude: Iterable[Label] = (),
                     max_events: int = 10**8) -> LabeledRun:
    """Event-driven labeled ARW from the finite configuration ``eta0``.

    With ``window`` set, particles that land outside it freeze there
    (restricted process).  ``exclude`` removes particles while keeping
    every other particle's randomness untouched.  Equal event times are
    broken by label order.
    """
    excl = set(exclude)
    labels = [lab for lab in labels_of(eta0) if lab not in excl]
    win = None if window is None else frozenset(window)
    offs = rand.kernel.offsets
    n = len(labels)
    pos = [lab[0] for lab in labels]
    active = [True] * n
    frozen = [False] * n
    tau = [0.0] * n          # inner time at last anchor
    t_anchor = [0.0] * n     # real time at last anchor
    jk = [0] * n
    sk = [0] * n
    version = [0] * n
    occ: dict[Site, set[int]] = {}
    for p, x in enumerate(pos):
        occ.setdefault(x, set()).add(p)
    passive_at: dict[Site, int] = {}
    heap: list = []

    def schedule(p):
        lab = labels[p]
        tj, _ = rand.jump(lab, jk[p])
        ts = rand.nap(lab, sk[p])
        nxt = tj if tj < ts else ts
        heapq.heappush(heap, (t_anchor[p] + (nxt - tau[p]), p, version[p]))

    if win is not None:
        for p, x in enumerate(pos):
            if x not in win:
                frozen[p] = True
    for p in range(n):
        if not frozen[p]:
            schedule(p)

    events: list = []
    count = 0
    absorbed = True
    while heap:
        t, p, ver = heapq.heappop(heap)
        if ver != version[p]:
            continue
        if t > horizon:
            absorbed = False
            break
        count += 1
        if count > max_events:
            raise RuntimeError("event cap exceeded")
        lab = labels[p]
        tj, code = rand.jump(lab, jk[p])
        ts = rand.nap(lab, sk[p])
        x = pos[p]
        if tj < ts:
            jk[p] += 1
            tau[p] = tj
            t_anchor[p] = t
            y = _add(x, offs[code])
            occ[x].discard(p)
            pos[p] = y
            occ.setdefault(y, set()).add(p)
            events.append((t, lab, "jump", x, y))
            if win is not None and y not in win:
                frozen[p] = True
                continue
            q = passive_at.pop(y, None)
            if q is not None:
                active[q] = True
                t_anchor[q] = t
                version[q] += 1
                events.append((t, labels[q], "wake", y, y))
                schedule(q)
            schedule(p)
        else:
            sk[p] += 1
            tau[p] = ts
            t_anchor[p] = t
            if len(occ[x]) == 1:
                active[p] = False
                version[p] += 1
                passive_at[x] = p
                events.append((t, lab, "sleep", x, x))
            else:
                schedule(p)

    particles = {}
    for p, lab in enumerate(labels):
        if active[p] and not frozen[p] and not absorbed:
            inner = tau[p] + (horizon - t_anchor[p])
        else:
            inner = tau[p]
        particles[lab] = LabeledParticle(lab, pos[p], ACTIVE if active[p] else PASSIVE, inner, frozen[p])
    return LabeledRun({lab: lab[0] for lab in labels}, events, particles,
                      horizon, absorbed, win)


# ---------------------------------------------------------------------------
# Finite windows and well-definedness
# ---------------------------------------------------------------------------

def restrict(eta0: Mapping[Site, int], W: Iterable[Site]) -> dict[Site, int]:
    """``eta0 * 1_W``."""
    return {x: eta0.get(x, 0) for x in W if eta0.get(x, 0)}


def finite_volume_window(eta0: Mapping[Site, int], W: Iterable[Site], z: Site, T: float,
                         rand: ParticleRandomness) -> tuple:
    """Labeled history at ``z`` on ``[0, T]`` started from ``eta0 * 1_W`` (unrestricted motion)."""
    run = simulate_labeled(restrict(eta0, W), rand, horizon=T)
    return run.history_at(z, T)


@dataclass
class ProbeResult:
    """Outcome of :func:`well_definedness_probe`.

    ``n_star`` is ``None`` when the last two windows disagree.
    """

    n_star: int | None
    history: tuple
    max_n: int
    changes: list[int] = field(default_factory=list)

    @property
    def stabilized(self) -> bool:
        return self.n_star is not None


def _relevant(labels_by_site: dict[Site, list[Label]], ranges: dict[Label, set[Site]], z: Site) -> frozenset:
    """Particles connected to ``z`` through overlapping putative ranges."""
    seen: set[Label] = set()
    frontier_sites = [z]
    visited_sites = {z}
    while frontier_sites:
        s = frontier_sites.pop()
        for lab in labels_by_site.get(s, ()):
            if lab in seen:
                continue
            seen.add(lab)
            for s2 in ranges[lab]:
                if s2 not in visited_sites:
                    visited_sites.add(s2)
                    frontier_sites.append(s2)
    return frozenset(seen)


def well_definedness_probe(eta0: Mapping[Site, int] | Callable[[Site], int], sequence: Sequence[Site],
                           z: Site, T: float, max_n: int, rand: ParticleRandomness,
                           brute_force: bool = False) -> ProbeResult:
    """Is the history at ``z`` on ``[0, T]`` eventually constant along ``W_n = {x_1..x_n}``?

    Returns the least ``n* <= max_n`` such that the histories for all
    ``n`` in ``[n*, max_n]`` coincide, or ``n_star=None`` if the last two
    differ.

    Positions up to real time ``T`` lie on the putative range for inner
    time ``[0, T]``, and particles interact only when co-located, so the
    history at ``z`` only depends on the particles linked to ``z`` by
    chains of overlapping ranges.  Windows whose linked set is unchanged
    share the history and are not re-simulated (``brute_force=True``
    re-simulates every window instead).
    """
    z = tuple(z)
    seq = [tuple(s) for s in sequence[:max_n]]
    if len(seq) < max_n:
        raise ValueError("sequence shorter than max_n")
    count = eta0 if callable(eta0) else (lambda x: eta0.get(x, 0))
    counts = {x: count(x) for x in seq}

    hist: list[tuple] = []
    if brute_force:
        for n in range(1, max_n + 1):
            hist.append(finite_volume_window(counts, seq[:n], z, T, rand))
    else:
        ranges: dict[Label, set[Site]] = {}
        by_site: dict[Site, list[Label]] = {}
        prev_key = None
        prev_hist = None
        for n in range(1, max_n + 1):
            x = seq[n - 1]
            for i in range(1, counts[x] + 1):
                lab = (x, i)
                ranges[lab] = rand.putative_range(lab, T)
                for s in ranges[lab]:
                    by_site.setdefault(s, []).append(lab)
            key = _relevant(by_site, ranges, z)
            if key != prev_key:
                sites = {x0 for x0, _ in key}
                excl = [(x0, i) for x0 in sites for i in range(1, counts[x0] + 1)
                        if (x0, i) not in key]
                run = simulate_labeled({x0: counts[x0] for x0 in sites}, rand, horizon=T, exclude=excl)
                prev_hist = run.history_at(z, T)
                prev_key = key
            hist.append(prev_hist)

    final = hist[-1]
    changes = [n for n in range(2, max_n + 1) if hist[n - 1] != hist[n - 2]]
    if max_n >= 2 and hist[-2] != final:
        return ProbeResult(None, final, max_n, changes)
    n_star = max_n
    while n_star > 1 and hist[n_star - 2] == final:
        n_star -= 1
    return ProbeResult(n_star, final, max_n, changes)


# ---------------------------------------------------------------------------
# Reach probability
# ---------------------------------------------------------------------------

@dataclass
class ReachEstimate:
    """Monte Carlo estimate that particle ``(o, 1)`` reaches distance ``L``."""

    L: int
    radius: int
    samples: int
    reached: int
    absorbed_first: int
    estimate: float
    stderr: float
    ci_low: float
    ci_high: float


def _wilson(k: int, n: int, z: float = 2.5758293035489004) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    c = (p + z * z / (2 * n)) / den
    h = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, c - h), min(1.0, c + h)


def particle_reach_probability(kernel: JumpKernel, lam: float, law: InitialLaw, L: int,
                               samples: int, radius: int | None = None, seed: int = 0,
                               key=(), K: int | None = None) -> ReachEstimate:
    """Chance that ``(o, 1)`` reaches sup-norm distance ``L`` before the window ``V_n`` absorbs.

    The window radius defaults to ``4 L``; particles freeze outside it.
    The origin is conditioned to hold at least one particle (rejection on
    its own stream); a law with no mass on positive counts puts exactly one
    particle there.  ``K`` caps every initial count (tail truncation).
    """
    if L < 0:
        raise ValueError("L must be non-negative")
    radius = 4 * L if radius is None else radius
    if radius < L:
        raise ValueError("window radius must be at least L")
    box = Box(radius, kernel.dim)
    origin = (0,) * kernel.dim
    tagged = (origin, 1)
    reached = 0
    for s in range(samples):
        if L == 0:
            reached += 1
            continue
        eta0 = sample_counts(law, box, seed, (*key, s))
        if eta0[origin] == 0:
            if law.prob_positive() == 0:
                eta0[origin] = 1
            else:
                g = stream(seed, *key, s, "origin")
                while eta0[origin] == 0:
                    eta0[origin] = law.draw(g)
        if K is not None:
            eta0 = {x: min(n, max(K, 1) if x == origin else K) for x, n in eta0.items()}
        rand = ParticleRandomness(kernel, lam, seed, (*key, s))
        run = simulate_labeled(eta0, rand, window=box)
        if run.max_distance(tagged) >= L:
            reached += 1
    p = reached / samples if samples else 0.0
    se = math.sqrt(p * (1 - p) / samples) if samples else 0.0
    lo, hi = _wilson(reached, samples)
    return ReachEstimate(L, radius, samples, reached, samples - reached, p, se, lo, hi)

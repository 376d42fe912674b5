"""Lattice geometry, jump kernels, initial laws and keyed random streams.

Everything here is shared by the site-wise and particle-wise engines.
Sites are tuples of ints of length ``dim``.
"""
from __future__ import annotations

import itertools
import math
import warnings
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.optimize import brentq

Site = tuple[int, ...]

PROB_TOL = 1e-12


class DriftWarning(UserWarning):
    """Projected drift along the bias direction is not positive."""


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def _key_word(part) -> list[int]:
    if isinstance(part, str):
        return [zlib.crc32(part.encode())]
    if isinstance(part, (tuple, list)):
        out = [len(part)]
        for p in part:
            out.extend(_key_word(p))
        return out
    n = int(part)
    # zigzag so negative coordinates map to distinct non-negative words
    return [2 * n if n >= 0 else -2 * n - 1]


def lineage(*parts) -> tuple[int, ...]:
    """Flatten a hierarchical key (strings, ints, site tuples) to spawn words."""
    out: list[int] = []
    for p in parts:
        out.extend(_key_word(p))
    return tuple(out)


def stream(seed: int, *key) -> np.random.Generator:
    """Generator for ``(seed, key)``.

    Same arguments always give the same stream; different keys give
    streams that are independent for all practical purposes (numpy
    ``SeedSequence`` spawn keys).
    """
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=lineage(*key))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# Kernels and half-spaces
# ---------------------------------------------------------------------------

def _as_fraction(x) -> Fraction:
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def integer_direction(v: Sequence) -> tuple[int, ...]:
    """Primitive integer vector pointing along rational ``v``."""
    fr = [_as_fraction(c) for c in v]
    if all(c == 0 for c in fr):
        raise ValueError("bias direction must be nonzero")
    den = math.lcm(*[c.denominator for c in fr])
    ints = [int(c * den) for c in fr]
    g = math.gcd(*ints)
    return tuple(i // g for i in ints)


@dataclass(frozen=True)
class HalfSpace:
    """``{x : x . normal <= 0}`` with an integer normal."""

    normal: tuple[int, ...]

    def __init__(self, normal: Sequence):
        object.__setattr__(self, "normal", integer_direction(normal))

    def level(self, x: Sequence[int]) -> int:
        return sum(a * b for a, b in zip(x, self.normal))

    def __contains__(self, x) -> bool:
        return self.level(x) <= 0


@dataclass(frozen=True)
class JumpKernel:
    """Finite-support jump distribution on Z^d with an optional bias direction."""

    dim: int
    offsets: tuple[Site, ...]
    probs: tuple[float, ...]
    bias: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if len(self.offsets) != len(self.probs) or not self.offsets:
            raise ValueError("support must be a non-empty list of (offset, prob)")
        if len(set(self.offsets)) != len(self.offsets):
            raise ValueError("support offsets must be distinct")
        for off, p in zip(self.offsets, self.probs):
            if len(off) != self.dim:
                raise ValueError(f"offset {off} has wrong dimension")
            if not (0.0 < p <= 1.0):
                raise ValueError(f"probability {p} outside (0, 1]")
        if abs(math.fsum(self.probs) - 1.0) > PROB_TOL:
            raise ValueError("probabilities must sum to 1")
        origin = (0,) * self.dim
        if origin in self.offsets and self.probs[self.offsets.index(origin)] == 1.0:
            raise ValueError("degenerate kernel: p(o) = 1")
        if self.bias is not None:
            if len(self.bias) != self.dim:
                raise ValueError("bias has wrong dimension")
            object.__setattr__(self, "bias", integer_direction(self.bias))

    @classmethod
    def from_support(cls, support: Iterable, bias: Sequence | None = None) -> "JumpKernel":
        pairs = [(tuple(int(c) for c in off), float(p)) for off, p in support]
        if not pairs:
            raise ValueError("empty support")
        dim = len(pairs[0][0])
        return cls(dim, tuple(o for o, _ in pairs), tuple(p for _, p in pairs),
                   None if bias is None else tuple(bias))

    @classmethod
    def nearest_neighbor_1d(cls, p_right: float) -> "JumpKernel":
        """``p(+1) = p_right``, ``p(-1) = 1 - p_right``, bias ``+1``."""
        if p_right >= 1.0:
            return cls(1, ((1,),), (1.0,), (1,))
        if p_right <= 0.0:
            return cls(1, ((-1,),), (1.0,), (-1,))
        return cls(1, ((1,), (-1,)), (p_right, 1.0 - p_right), (1,) if p_right >= 0.5 else (-1,))

    @classmethod
    def simple_symmetric(cls, dim: int = 1) -> "JumpKernel":
        offs = []
        for k in range(dim):
            for s in (1, -1):
                e = [0] * dim
                e[k] = s
                offs.append(tuple(e))
        return cls(dim, tuple(offs), tuple([1.0 / len(offs)] * len(offs)), None)

    # -- json ------------------------------------------------------------
    def to_json(self) -> dict:
        out = {"dim": self.dim,
               "support": [[list(o), p] for o, p in zip(self.offsets, self.probs)]}
        if self.bias is not None:
            out["bias"] = list(self.bias)
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "JumpKernel":
        k = cls.from_support(doc["support"], doc.get("bias"))
        if k.dim != int(doc.get("dim", k.dim)):
            raise ValueError("dim does not match support")
        return k

    # -- derived quantities ------------------------------------------------
    def mean_step(self) -> tuple[float, ...]:
        return tuple(math.fsum(p * o[k] for o, p in zip(self.offsets, self.probs))
                     for k in range(self.dim))

    def direction(self, v: Sequence | None = None) -> tuple[int, ...]:
        if v is not None:
            return integer_direction(v)
        if self.bias is None:
            raise ValueError("kernel has no bias direction; pass v explicitly")
        return self.bias

    def projected(self, v: Sequence | None = None) -> dict[int, float]:
        """Law of ``step . v`` for the integer-normalized direction ``v``."""
        hs = HalfSpace(self.direction(v))
        out: dict[int, float] = {}
        for o, p in zip(self.offsets, self.probs):
            lv = hs.level(o)
            out[lv] = out.get(lv, 0.0) + p
        return dict(sorted(out.items()))

    def projected_drift(self, v: Sequence | None = None) -> float:
        return math.fsum(s * p for s, p in self.projected(v).items())

    def cumulative(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c


def lundberg_exponent(steps: dict[int, float]) -> float:
    """Positive root of ``E[exp(-theta S)] = 1`` for the projected step ``S``.

    Returns ``inf`` when ``S`` never goes down.  Requires positive drift.
    """
    if all(s >= 0 for s in steps):
        return math.inf
    drift = math.fsum(s * p for s, p in steps.items())
    if drift <= 0:
        return 0.0

    def phi(theta):
        return math.fsum(p * math.exp(-theta * s) for s, p in steps.items()) - 1.0

    hi = 1.0
    while phi(hi) <= 0:
        hi *= 2.0
    return brentq(phi, 1e-12, hi, xtol=1e-14)


def escape_level(kernel: JumpKernel, v: Sequence | None = None, eps: float = 1e-6) -> int | None:
    """Level above which the chance of ever re-entering ``{x . v <= 0}`` is < ``eps``.

    Uses the Lundberg bound ``P_s(hit <= 0) <= exp(-theta s)``.  ``None``
    when the projected drift is not positive (no such level).
    """
    steps = kernel.projected(v)
    theta = lundberg_exponent(steps)
    if theta == 0.0:
        return None
    if math.isinf(theta):
        return 0
    return int(math.ceil(math.log(1.0 / eps) / theta))


# ---------------------------------------------------------------------------
# Boxes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Sup-norm ball ``{-radius..radius}^dim``."""

    radius: int
    dim: int = 1

    def __post_init__(self):
        if self.radius < 0 or self.dim < 1:
            raise ValueError("need radius >= 0 and dim >= 1")

    @property
    def volume(self) -> int:
        return (2 * self.radius + 1) ** self.dim

    def __len__(self) -> int:
        return self.volume

    def __contains__(self, x) -> bool:
        return len(x) == self.dim and all(-self.radius <= c <= self.radius for c in x)

    def __iter__(self) -> Iterator[Site]:
        r = range(-self.radius, self.radius + 1)
        return itertools.product(r, repeat=self.dim)

    def sites(self) -> list[Site]:
        return list(self)

    def shrink(self, by: int) -> "Box":
        return Box(max(self.radius - by, 0), self.dim)


def sup_norm(x: Sequence[int]) -> int:
    return max((abs(c) for c in x), default=0)


def spiral_order(dim: int, count: int, center: Site | None = None, flip: bool = False) -> list[Site]:
    """First ``count`` sites of an exhaustion of Z^d by growing sup-norm shells.

    Within a shell sites are lexicographic (reversed when ``flip``), so two
    calls with different ``flip`` give two distinct exhaustion orders.
    """
    center = center or (0,) * dim
    out: list[Site] = []
    r = 0
    while len(out) < count:
        shell = [s for s in Box(r, dim) if sup_norm(s) == r]
        shell.sort(reverse=flip)
        out.extend(tuple(c + o for c, o in zip(s, center)) for s in shell)
        r += 1
    return out[:count]


# ---------------------------------------------------------------------------
# Initial laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitialLaw:
    """i.i.d. per-site particle-count law.

    ``kind`` is one of ``constant``, ``bernoulli``, ``poisson``, ``empirical``.
    For ``empirical`` the site count is drawn uniformly from ``values``.
    """

    kind: str
    mean: float = 0.0
    values: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.kind == "constant":
            if self.mean < 0 or self.mean != int(self.mean):
                raise ValueError("constant law needs a non-negative integer")
        elif self.kind == "bernoulli":
            if not 0.0 <= self.mean <= 1.0:
                raise ValueError("bernoulli mean must lie in [0, 1]")
        elif self.kind == "poisson":
            if not (0.0 <= self.mean < math.inf):
                raise ValueError("poisson mean must be finite and non-negative")
        elif self.kind == "empirical":
            vals = tuple(self.values)
            if not vals:
                raise ValueError("empirical law needs values")
            for v in vals:
                if isinstance(v, bool) or v != int(v) or v < 0:
                    raise ValueError(f"empirical entry {v!r} is not a non-negative integer")
            object.__setattr__(self, "values", tuple(int(v) for v in vals))
            object.__setattr__(self, "mean", sum(vals) / len(vals))
        else:
            raise ValueError(f"unknown initial law {self.kind!r}")

    @classmethod
    def constant(cls, k: int) -> "InitialLaw":
        return cls("constant", k)

    @classmethod
    def bernoulli(cls, mu: float) -> "InitialLaw":
        return cls("bernoulli", mu)

    @classmethod
    def poisson(cls, mu: float) -> "InitialLaw":
        return cls("poisson", mu)

    @classmethod
    def empirical(cls, values: Sequence[int]) -> "InitialLaw":
        return cls("empirical", 0.0, tuple(values))

    def draw(self, rng: np.random.Generator) -> int:
        if self.kind == "constant":
            return int(self.mean)
        if self.kind == "bernoulli":
            return int(rng.random() < self.mean)
        if self.kind == "poisson":
            return int(rng.poisson(self.mean))
        return self.values[int(rng.integers(len(self.values)))]

    def prob_positive(self) -> float:
        if self.kind == "constant":
            return float(self.mean > 0)
        if self.kind == "bernoulli":
            return self.mean
        if self.kind == "poisson":
            return -math.expm1(-self.mean)
        return sum(v > 0 for v in self.values) / len(self.values)

    def to_json(self) -> dict:
        out = {"kind": self.kind, "mean": self.mean}
        if self.kind == "empirical":
            out["values"] = list(self.values)
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "InitialLaw":
        if doc["kind"] == "empirical":
            return cls.empirical(doc["values"])
        return cls(doc["kind"], doc.get("mean", 0.0))


def sample_counts(law: InitialLaw, sites: Iterable[Site], seed: int, key=()) -> dict[Site, int]:
    """Per-site counts; each site draws from its own ``(seed, key, 'init', site)`` stream."""
    out = {}
    for s in sites:
        if law.kind == "constant":
            out[s] = int(law.mean)
        else:
            out[s] = law.draw(stream(seed, *key, "init", s))
    return out


def sample_initial(law: InitialLaw, box: Box, seed: int, key=()):
    """Sample an all-active :class:`~arwlab.sitewise.SiteConfiguration` on ``box``."""
    from .sitewise import SiteConfiguration

    return SiteConfiguration(box, sample_counts(law, box, seed, key))


# ---------------------------------------------------------------------------
# Half-space occupation
# ---------------------------------------------------------------------------

class _Truncated:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "TRUNCATED"

    def __bool__(self):
        return False


TRUNCATED = _Truncated()


def _check_drift(kernel: JumpKernel, v) -> None:
    if kernel.projected_drift(v) <= 0:
        warnings.warn("projected drift along v is not positive; occupation may be infinite",
                      DriftWarning, stacklevel=3)


def half_space_occupation(kernel: JumpKernel, hs: HalfSpace, start: Site, max_steps: int,
                          rng: np.random.Generator):
    """Number of steps ``k <= max_steps`` at which a discrete walk sits in ``hs``.

    The walk is followed until it passes the escape level (re-entry chance
    below 1e-6); if ``max_steps`` comes first, :data:`TRUNCATED` is returned.
    """
    _check_drift(kernel, hs.normal)
    cutoff = escape_level(kernel, hs.normal)
    steps = kernel.projected(hs.normal)
    levels = np.array(list(steps), dtype=np.int64)
    cum = np.cumsum(list(steps.values()))
    cum[-1] = 1.0
    s = hs.level(start)
    ell = 0
    k = 0
    chunk = 64
    while True:
        if s <= 0:
            ell += 1
        elif cutoff is not None and s > cutoff:
            return ell
        if k >= max_steps:
            return TRUNCATED
        if k % chunk == 0:
            draws = levels[np.searchsorted(cum, rng.random(chunk), side="right")].tolist()
        s += draws[k % chunk]
        k += 1


def sample_occupations(kernel: JumpKernel, v, samples: int, max_steps: int,
                       rng: np.random.Generator, start_level: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`half_space_occupation` on the projected walk.

    Returns ``(ell, truncated)``; for truncated walks ``ell`` holds the
    count observed up to ``max_steps``.
    """
    direction = kernel.direction(v)
    cutoff = escape_level(kernel, direction)
    steps = kernel.projected(direction)
    levels = np.array(list(steps), dtype=np.int64)
    cum = np.cumsum(list(steps.values()))
    cum[-1] = 1.0
    pos = np.full(samples, start_level, dtype=np.int64)
    ell = np.zeros(samples, dtype=np.int64)
    live = np.arange(samples)
    for k in range(max_steps + 1):
        p = pos[live]
        ell[live] += p <= 0
        if cutoff is not None:
            keep = p <= cutoff
            live = live[keep]
        if live.size == 0 or k == max_steps:
            break
        pos[live] += levels[np.searchsorted(cum, rng.random(live.size), side="right")]
    truncated = np.zeros(samples, dtype=bool)
    truncated[live] = True
    return ell, truncated

"""Estimators for ``F_v(lambda)``, exit densities and the density criterion.

``F_v(lambda) = E[(1 + lambda)^(-ell)]`` where ``ell`` is the number of
steps a discrete-time walk started at the origin spends in the half-space
``{x . v <= 0}``.  It is the chance that a lone particle leaves the
half-space for good without ever falling asleep.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .experiment import ExperimentSpec
from .lattice import (Box, DriftWarning, JumpKernel, sample_initial, sample_occupations,
                      stream)
from .sitewise import InstructionTape, stabilize, stabilize_rolling


class NotNearestNeighbor(ValueError):
    """The projected walk has steps outside ``{-1, 0, +1}``."""


# ---------------------------------------------------------------------------
# F_v(lambda)
# ---------------------------------------------------------------------------

@dataclass
class FEstimate:
    """Estimate of ``F_v(lambda)``.

    ``lower`` and ``upper`` bracket the value: for Monte Carlo they come
    from treating truncated walks as never leaving (``ell = inf``) or as
    leaving right away (``ell`` as observed); for the linear solve they
    bound the effect of the finite state space.  ``residual`` is
    ``upper - lower``.
    """

    estimate: float
    stderr: float
    samples: int
    truncated: int
    method: str
    lam: float
    lower: float
    upper: float
    residual: float = 0.0
    warning: str | None = None

    def __post_init__(self):
        if not (0.0 <= self.lower <= self.estimate <= self.upper <= 1.0):
            raise ValueError("inconsistent F bracket")

    def to_json(self) -> dict:
        doc = {"schema": "arwlab.fv/1"}
        doc.update(asdict(self))
        return doc


def F_from_occupations(ell: np.ndarray, truncated: np.ndarray, lam: float,
                       warning: str | None = None) -> FEstimate:
    """Monte Carlo :class:`FEstimate` from sampled occupation counts.

    Sharing ``ell`` across several ``lam`` makes the estimates pathwise
    monotone in ``lam``.  Means are taken over the histogram of ``ell``, so
    a deterministic ``ell`` gives the exact value with zero error.
    """
    n = int(ell.size)
    if n == 0:
        raise ValueError("need at least one sample")
    table = 1.0 / (1.0 + lam) ** np.arange(int(ell.max()) + 1, dtype=float)
    hist = np.bincount(ell)
    hist_trunc = np.bincount(ell[truncated], minlength=hist.size)
    freq = hist / n
    upper = float(np.sum(freq * table))
    lower = float(np.sum((hist - hist_trunc) / n * table))
    if n > 1:
        var = float(np.sum(hist * (table - upper) ** 2)) / (n - 1)
        stderr = math.sqrt(var / n)
    else:
        stderr = math.inf
    lower, upper = min(lower, upper), max(lower, upper)
    return FEstimate(estimate=0.5 * (lower + upper), stderr=stderr, samples=n,
                     truncated=int(truncated.sum()), method="monte-carlo", lam=lam,
                     lower=lower, upper=upper, residual=upper - lower, warning=warning)


def estimate_F(kernel: JumpKernel, lam: float, v=None, samples: int = 100_000,
               max_steps: int = 100_000, seed: int = 0, key=()) -> FEstimate:
    """Monte Carlo mean of ``(1 + lam)^(-ell)`` over ``samples`` walks.

    Walks still near the half-space after ``max_steps`` steps are counted
    as truncated and widen the ``[lower, upper]`` bracket; the point
    estimate is its midpoint.  Emits :class:`DriftWarning` (and records it)
    when the projected drift is not positive.
    """
    ell, truncated, warning = sample_F_occupations(kernel, v, samples, max_steps, seed, key)
    return F_from_occupations(ell, truncated, lam, warning)


def sample_F_occupations(kernel: JumpKernel, v, samples: int, max_steps: int,
                         seed: int = 0, key=()):
    """Occupation samples ``(ell, truncated, warning)`` for :func:`F_from_occupations`."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DriftWarning)
        if kernel.projected_drift(v) <= 0:
            warnings.warn("projected drift along v is not positive; F may be 0", DriftWarning)
        rng = stream(seed, *key, "occupation")
        ell, truncated = sample_occupations(kernel, v, samples, max_steps, rng)
    warning = None
    for w in caught:
        if issubclass(w.category, DriftWarning):
            warning = str(w.message)
        warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    return ell, truncated, warning


def _nearest_neighbor_projection(kernel: JumpKernel, v) -> tuple[float, float, float]:
    steps = kernel.projected(v)
    if any(s not in (-1, 0, 1) for s in steps):
        raise NotNearestNeighbor(
            f"projected steps {sorted(steps)} are not within {{-1, 0, +1}}")
    return steps.get(-1, 0.0), steps.get(0, 0.0), steps.get(1, 0.0)


def _solve_chain(q: float, r: float, p: float, lam: float, depth: int,
                 left: float, right: float) -> float:
    # g(s) = w(s) (q g(s-1) + r g(s) + p g(s+1)) on s = -depth..depth,
    # w(s) = 1/(1+lam) for s <= 0 else 1, with g(-depth-1) = left and
    # g(depth+1) = right.
    size = 2 * depth + 1
    s = np.arange(-depth, depth + 1)
    w = np.where(s <= 0, 1.0 / (1.0 + lam), 1.0)
    ab = np.zeros((3, size))
    ab[0, 1:] = -w[:-1] * p
    ab[1] = 1.0 - w * r
    ab[2, :-1] = -w[1:] * q
    rhs = np.zeros(size)
    rhs[0] += w[0] * q * left
    rhs[-1] += w[-1] * p * right
    g = solve_banded((1, 1), ab, rhs)
    return float(g[depth])


def estimate_F_exact_1d(kernel: JumpKernel, lam: float, depth: int | None = None, v=None,
                        tol: float = 1e-8, max_depth: int = 1 << 16) -> FEstimate:
    """``F_v(lambda)`` by a linear solve on the projected birth-death chain.

    The chain lives on levels ``-depth..depth``.  Two solves bracket the
    truncation: above the top level the walk escapes with probability at
    least ``1 - (q/p)^(depth+1)`` and at most 1; below the bottom level it
    has at least ``depth + 2`` steps left in the half-space.  With
    ``depth=None`` the depth doubles until the bracket is below ``tol``.

    Raises
    ------
    NotNearestNeighbor
        If the projection on ``v`` has steps outside ``{-1, 0, +1}``.
    """
    q, r, p = _nearest_neighbor_projection(kernel, v)
    if p <= q:
        # zero or negative drift: the projected walk returns (or never
        # leaves) almost surely, so ell is infinite
        return FEstimate(estimate=0.0, stderr=0.0, samples=0, truncated=0,
                         method="absorbing-chain", lam=lam, lower=0.0, upper=0.0,
                         warning="projected drift along v is not positive; F = 0")
    if q == 0.0 and r == 0.0:
        x = 1.0 / (1.0 + lam)
        return FEstimate(estimate=x, stderr=0.0, samples=0, truncated=0,
                         method="absorbing-chain", lam=lam, lower=x, upper=x)
    rho = q / p
    d = depth if depth is not None else 16
    while True:
        low_right = 1.0 - rho ** (d + 1)
        high_left = (1.0 + lam) ** -(d + 2)
        lo = _solve_chain(q, r, p, lam, d, 0.0, low_right)
        hi = _solve_chain(q, r, p, lam, d, high_left, 1.0)
        lo, hi = max(0.0, min(lo, hi)), min(1.0, max(lo, hi))
        if depth is not None or hi - lo < tol or d >= max_depth:
            break
        d *= 2
    mid = 0.5 * (lo + hi)
    return FEstimate(estimate=mid, stderr=0.0, samples=0, truncated=0,
                     method="absorbing-chain", lam=lam, lower=lo, upper=hi, residual=hi - lo)


@dataclass
class DensityCriterion:
    """Non-fixation criterion ``mu > 1 - F_v(lambda)`` and its margin."""

    mu: float
    lam: float
    v: tuple
    F: FEstimate

    @property
    def margin(self) -> float:
        return self.mu - 1.0 + self.F.estimate

    @property
    def margin_bounds(self) -> tuple[float, float]:
        return self.mu - 1.0 + self.F.lower, self.mu - 1.0 + self.F.upper

    @property
    def verdict(self) -> str:
        lo, hi = self.margin_bounds
        if lo > 0:
            return "satisfied"
        if hi <= 0:
            return "not satisfied"
        return "undecided"

    def to_json(self) -> dict:
        return {"schema": "arwlab.criterion/1", "mu": self.mu, "lambda": self.lam,
                "v": list(self.v), "F": self.F.to_json(), "margin": self.margin,
                "margin_bounds": list(self.margin_bounds), "verdict": self.verdict}


def density_criterion(kernel: JumpKernel, lam: float, mu: float, v=None, **kw) -> DensityCriterion:
    """Evaluate the criterion with the exact solver when it applies."""
    try:
        F = estimate_F_exact_1d(kernel, lam, v=v)
    except NotNearestNeighbor:
        F = estimate_F(kernel, lam, v=v, **kw)
    return DensityCriterion(mu=mu, lam=lam, v=kernel.direction(v), F=F)


# ---------------------------------------------------------------------------
# Exit densities
# ---------------------------------------------------------------------------

@dataclass
class CurvePoint:
    n: int
    volume: int
    mean: float
    stderr: float
    replicas: int
    values: list[float] = field(default_factory=list, repr=False)

    def ci(self, z: float = 2.5758293035489004) -> tuple[float, float]:
        return self.mean - z * self.stderr, self.mean + z * self.stderr


@dataclass
class ExitDensityCurve:
    """``M_n / |V_n|`` statistics over i.i.d. replicas, one point per radius."""

    points: list[CurvePoint]
    strategy: str
    spec: ExperimentSpec

    CSV_COLUMNS = ("n", "volume", "mean", "stderr", "replicas", "strategy", "seed")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for pt in self.points:
            w.writerow([pt.n, pt.volume, repr(pt.mean), repr(pt.stderr), pt.replicas,
                        self.strategy, self.spec.seed])
        return buf.getvalue()

    def bounded_away_from_zero(self, floor: float) -> bool:
        """Every point's lower 99% bound exceeds ``floor``."""
        return all(pt.ci()[0] > floor for pt in self.points)


def _summarize(n: int, volume: int, values: list[float]) -> CurvePoint:
    a = np.asarray(values, dtype=float)
    k = a.size
    mean = float(a.mean()) if k else math.nan
    se = float(a.std(ddof=1) / math.sqrt(k)) if k > 1 else math.nan
    return CurvePoint(n=n, volume=volume, mean=mean, stderr=se, replicas=k, values=list(values))


def _initial(spec: ExperimentSpec, box: Box, key):
    config = sample_initial(spec.law, box, spec.seed, key)
    if spec.K is not None:
        config.counts[:] = [min(c, spec.K) for c in config.counts]
    return config


def sweep_replica(spec: ExperimentSpec, n: int, replica: int) -> tuple[int, int, int]:
    """Stabilize one fresh replica on ``V_n``; returns ``(M, N, initial_total)``."""
    box = Box(n, spec.dim)
    key = ("sweep", n, replica)
    config = _initial(spec, box, key)
    tape = InstructionTape(spec.kernel, spec.lam, seed=spec.seed, key=key)
    rep = stabilize(config, tape, strategy=spec.strategy, budget=spec.budget,
                    order_seed=spec.seed, v=spec.v)
    return rep.M, rep.N, rep.initial_total


def _replica_job(args):
    doc, n, replica = args
    return sweep_replica(ExperimentSpec.from_json(doc), n, replica)


def map_replicas(fn: Callable, jobs: Sequence, threads: int = 1) -> list:
    """Run ``fn`` over ``jobs`` in order; a process pool when ``threads > 1``."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * threads))))


def exit_density_sweep(spec: ExperimentSpec, radii: Sequence[int] | None = None,
                       replicas: int | None = None, threads: int = 1,
                       checkpoint_dir: str | os.PathLike | None = None,
                       progress: bool = False) -> ExitDensityCurve:
    """``M_n / |V_n|`` for each radius, stabilizing under ``P_[V_n]``.

    Replica ``r`` at radius ``n`` uses the stream key ``("sweep", n, r)``,
    so results do not depend on ``threads`` or on resuming.  With
    ``checkpoint_dir`` each finished radius is stored as
    ``radius-<n>.json`` and reused when the spec fingerprint matches.
    """
    radii = list(spec.radii if radii is None else radii)
    replicas = spec.replicas if replicas is None else replicas
    doc = spec.to_json()
    fp = spec.fingerprint()
    points = []
    for n in radii:
        volume = (2 * n + 1) ** spec.dim
        ck = Path(checkpoint_dir) / f"radius-{n}.json" if checkpoint_dir is not None else None
        values = None
        if ck is not None and ck.exists():
            saved = json.loads(ck.read_text())
            if saved.get("fingerprint") == fp and saved.get("replicas") == replicas:
                values = saved["values"]
        if values is None:
            out = map_replicas(_replica_job, [(doc, n, r) for r in range(replicas)], threads)
            values = [M / volume for M, _, _ in out]
            if ck is not None:
                ck.parent.mkdir(parents=True, exist_ok=True)
                ck.write_text(json.dumps({"fingerprint": fp, "n": n, "replicas": replicas,
                                          "values": values}))
        pt = _summarize(n, volume, values)
        points.append(pt)
        if progress:
            print(f"n={n} mean={pt.mean:.6f} stderr={pt.stderr:.6f}", file=sys.stderr)
    return ExitDensityCurve(points=points, strategy=spec.strategy, spec=spec)


@dataclass
class RollingBoundReport:
    """Rolling-strategy statistics on ``V_n`` against ``1 - F_v(lambda)``.

    ``sleep_frequency`` is the fraction of rolled particles that fell
    asleep (were left behind) during the rolling stage.
    """

    n: int
    replicas: int
    mean_M: float
    stderr_M: float
    mean_N: float
    inequality_holds: int
    sleep_frequency: float
    sleep_frequency_stderr: float
    one_minus_F: float
    F: FEstimate

    @property
    def inequality_always(self) -> bool:
        return self.inequality_holds == self.replicas

    @property
    def frequency_within_bound(self) -> bool:
        return self.sleep_frequency <= self.one_minus_F + 3 * self.sleep_frequency_stderr

    def to_json(self) -> dict:
        doc = {"schema": "arwlab.rolling/1"}
        doc.update({k: v for k, v in asdict(self).items() if k != "F"})
        doc["F"] = self.F.to_json()
        doc["inequality_always"] = self.inequality_always
        doc["frequency_within_bound"] = self.frequency_within_bound
        return doc


def rolling_replica(spec: ExperimentSpec, n: int, replica: int) -> tuple[int, int, int, int]:
    """One rolling stabilization on ``V_n``: ``(M, N, initial_total, rolled)``."""
    box = Box(n, spec.dim)
    key = ("rolling", n, replica)
    config = _initial(spec, box, key)
    tape = InstructionTape(spec.kernel, spec.lam, seed=spec.seed, key=key)
    rep = stabilize_rolling(config, tape, v=spec.v, budget=spec.budget)
    o = rep.outcomes
    return rep.M, rep.N, rep.initial_total, o["exit"] + o["park"] + o["sleep"]


def _rolling_job(args):
    doc, n, replica = args
    return rolling_replica(ExperimentSpec.from_json(doc), n, replica)


def rolling_lower_bound_report(spec: ExperimentSpec, n: int, replicas: int | None = None,
                               threads: int = 1) -> RollingBoundReport:
    """Check ``M_n >= sum eta_0 - N_n`` per replica and compare sleep frequency to ``1 - F``."""
    replicas = spec.replicas if replicas is None else replicas
    volume = (2 * n + 1) ** spec.dim
    doc = spec.to_json()
    out = map_replicas(_rolling_job, [(doc, n, r) for r in range(replicas)], threads)
    M = np.array([o[0] for o in out], dtype=float)
    N = np.array([o[1] for o in out], dtype=float)
    holds = sum(int(m >= tot - nn) for m, nn, tot, _ in out)
    rolled = np.array([o[3] for o in out], dtype=float)
    total_rolled = rolled.sum()
    freq = float(N.sum() / total_rolled) if total_rolled else 0.0
    # ratio estimator standard error over i.i.d. replicas
    if total_rolled and replicas > 1:
        resid = N - freq * rolled
        se = float(math.sqrt(resid.var(ddof=1) * replicas) / total_rolled)
    else:
        se = math.nan
    try:
        F = estimate_F_exact_1d(spec.kernel, spec.lam, v=spec.v)
    except NotNearestNeighbor:
        F = estimate_F(spec.kernel, spec.lam, v=spec.v, samples=spec.samples,
                       max_steps=spec.max_steps, seed=spec.seed)
    dens = M / volume
    return RollingBoundReport(
        n=n, replicas=replicas, mean_M=float(dens.mean()),
        stderr_M=float(dens.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else math.nan,
        mean_N=float(N.mean() / volume), inequality_holds=holds, sleep_frequency=freq,
        sleep_frequency_stderr=se, one_minus_F=1.0 - F.estimate, F=F)

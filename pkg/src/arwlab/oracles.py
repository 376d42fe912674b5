"""Reference values computed independently of the simulators.

Each oracle uses a different method from the code it checks (dense
linear algebra on an absorbing chain, enumeration, closed forms, tables).
:func:`generate` collects them into the JSON fixture file the test suite
reads; ``arwlab oracle`` writes it.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy import stats

FIXTURE_SCHEMA = "arwlab.oracles/1"
DEFAULT_PATH = Path(__file__).resolve().parents[2] / "tests" / "fixtures" / "oracles.json"


def occupation_distribution(p_right: float, m: int = 60, tail: float = 1e-13,
                            kmax: int = 10_000) -> tuple[np.ndarray, float]:
    """Law of ``ell`` for the nearest-neighbor walk on ``{-m..m}`` started at 0.

    The walk steps +1 w.p. ``p_right`` and -1 otherwise, escapes for good
    when it steps above ``m`` and is held at ``-m``.  With ``Q_+`` the
    transitions out of levels ``> 0`` and ``Q_-`` those out of levels
    ``<= 0``, ``f_k = P(ell = k)`` satisfies ``f_0 = (I - Q_+)^{-1} e`` and
    ``f_k = A f_{k-1}`` with ``A = (I - Q_+)^{-1} Q_-``.

    Returns ``(probs, missing)`` where ``probs[k] = P_0(ell = k)`` and
    ``missing`` is the mass not accounted for.
    """
    q = 1.0 - p_right
    size = 2 * m + 1
    levels = np.arange(-m, m + 1)
    Q = np.zeros((size, size))
    esc = np.zeros(size)
    for i, x in enumerate(levels):
        if x < m:
            Q[i, i + 1] += p_right
        else:
            esc[i] += p_right
        Q[i, max(i - 1, 0)] += q
    plus = levels > 0
    Qp = Q * plus[:, None]
    Qm = Q * (~plus)[:, None]
    inv = np.linalg.inv(np.eye(size) - Qp)
    A = inv @ Qm
    f = inv @ (esc * plus)
    origin = m
    probs = [f[origin]]
    total = probs[0]
    for _ in range(kmax):
        f = A @ f
        probs.append(f[origin])
        total += probs[-1]
        if 1.0 - total < tail and probs[-1] < tail:
            break
    probs = np.array(probs)
    return probs, float(max(0.0, 1.0 - probs.sum()))


def F_series(p_right: float, lam: float, m: int = 60) -> tuple[float, float]:
    """``E[(1+lam)^(-ell)]`` summed from :func:`occupation_distribution`."""
    probs, missing = occupation_distribution(p_right, m)
    s = 1.0 / (1.0 + lam)
    return float(np.sum(probs * s ** np.arange(probs.size))), missing


def F_closed_form_nn(p_right: float, lam: float) -> float:
    """Closed form for the nearest-neighbor walk without holding.

    Every visit to the half-space starts at level 0.  From level 0 the walk
    spends a number of steps in ``{x <= 0}`` before returning above; with
    ``g = E_0[s^(steps until first reaching +1)]`` the first-passage
    generating function ``g = s (p + q g^2)`` gives
    ``g = (1 - sqrt(1 - 4 p q s^2)) / (2 q s)``.  From level 1 the walk
    returns to 0 with probability ``q/p``, so
    ``F = g (1 - q/p) / (1 - (q/p) g)``.
    """
    p, q = p_right, 1.0 - p_right
    s = 1.0 / (1.0 + lam)
    if q == 0:
        return s
    g = (1.0 - math.sqrt(1.0 - 4.0 * p * q * s * s)) / (2.0 * q * s)
    rho = q / p
    return g * (1.0 - rho) / (1.0 - rho * g)


def ks_critical(n: int, alpha: float = 0.01) -> float:
    """Critical value of the one-sample KS statistic at level ``alpha``."""
    return float(stats.kstwo.ppf(1.0 - alpha, n))


def poisson_mean_band(mu: float, sites: int, z: float = 3.0) -> dict:
    sigma = math.sqrt(mu / sites)
    return {"mean": mu, "sigma": sigma, "lo": mu - z * sigma, "hi": mu + z * sigma}


def generate() -> dict:
    """All fixture values, keyed by name."""
    F = {}
    for lam in (0.1, 0.2, 0.5):
        val, missing = F_series(0.75, lam)
        F[str(lam)] = {"series": val, "closed_form": F_closed_form_nn(0.75, lam),
                       "missing_mass": missing}
    probs, missing = occupation_distribution(0.75)
    return {
        "schema": FIXTURE_SCHEMA,
        "initial_poisson_band": dict(poisson_mean_band(0.5, 17), radius=8, seed=42),
        "occupation_law_p075": {"m": 60, "probs": probs.tolist(), "missing_mass": missing},
        "F_p075": F,
        # one particle on V_0 with p(+1)=1: M = 1 iff the first instruction jumps
        "single_site_exit_mean": {str(lam): 1.0 / (1.0 + lam) for lam in (0.1, 0.5, 1.0, 4.0)},
        # hand trace on V_1 with eta_0 = (0, 3, 0), p(+1)=1.  All-jump tape:
        # every particle crosses site 1 and leaves, so the odometer is 3 at
        # sites 0 and 1.  Tape J,S,J,S at site 1: the 3 arrivals leave one by
        # one, the first Sleep is discarded (two present), the second succeeds
        # on the last particle.
        "hand_trace_030": {
            "all_jump": {"M": 3, "final": {"-1": 0, "0": 0, "1": 0}, "odometer": {"-1": 0, "0": 3, "1": 3}},
            "sleep_at_1": {"tape_1": ["J", "S", "J", "S"], "M": 2,
                           "final": {"-1": 0, "0": 0, "1": "S"}, "odometer": {"-1": 0, "0": 3, "1": 4}},
        },
        "ks_critical_1e4": ks_critical(10_000),
        # both particles share a site until the first jump, so every sleep
        # attempt before it is discarded
        "shared_site_first_event_jump_fraction": 1.0,
        "reach_lone_particle": {f"{lam},{L}": (1.0 / (1.0 + lam)) ** L
                                for lam in (0.5, 1.0) for L in (1, 2, 3, 5)},
    }


def write(path: str | Path = DEFAULT_PATH) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(generate(), indent=1, sort_keys=True) + "\n")
    return path


def load(path: str | Path = DEFAULT_PATH) -> dict:
    return json.loads(Path(path).read_text())

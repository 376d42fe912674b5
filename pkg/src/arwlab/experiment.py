"""Reproducible experiment descriptions.

An :class:`ExperimentSpec` fixes everything a run depends on: kernel,
sleep rate, initial law, radii, strategy, seeds and guards.  It serializes
to a JSON document carrying a ``schema`` field.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any

from .lattice import InitialLaw, JumpKernel
from .sitewise import DEFAULT_BUDGET, STRATEGIES

SCHEMA = "arwlab.experiment/1"
L_RULES = ("log", "sqrt", "zero")


class SpecError(ValueError):
    """Invalid experiment description."""


@dataclass(frozen=True)
class ExperimentSpec:
    """Complete description of a Monte Carlo run.

    Attributes
    ----------
    kernel : JumpKernel
        Jump distribution; its ``bias`` is used when ``v`` is omitted.
    lam : float
        Sleep rate.
    law : InitialLaw
        i.i.d. law of the initial counts.
    radii : tuple of int
        Box radii ``n`` for sweeps (``V_n = {-n..n}^d``).
    strategy : str
        Toppling strategy for stabilization.
    v : tuple or None
        Bias direction; rational components.
    horizon : float
        Time horizon for continuous-time experiments.
    L_rule : str
        How the shrink ``L_n`` of the inner box is derived from ``n``.
    K : int or None
        Cap on initial counts (tail truncation); ``None`` keeps them.
    samples, replicas : int
        Walk samples for F and stabilization replicas per radius.
    seed : int
        Root seed; every stream is derived from it.
    outputs : dict
        Output paths by kind.
    budget, population_cap, max_steps : int
        Guards: toppling budget, population cap, walk step cap.
    """

    kernel: JumpKernel
    lam: float
    law: InitialLaw = field(default_factory=lambda: InitialLaw.constant(1))
    radii: tuple[int, ...] = (8,)
    strategy: str = "greedy-sweep"
    v: tuple | None = None
    horizon: float = 1.0
    L_rule: str = "log"
    K: int | None = None
    samples: int = 10_000
    replicas: int = 100
    seed: int = 0
    outputs: dict = field(default_factory=dict)
    budget: int = DEFAULT_BUDGET
    population_cap: int = 10**7
    max_steps: int = 100_000

    def __post_init__(self):
        object.__setattr__(self, "radii", tuple(int(n) for n in self.radii))
        if self.v is not None:
            object.__setattr__(self, "v", tuple(self.v))
        self.validate()

    def validate(self) -> None:
        if not (isinstance(self.lam, (int, float)) and math.isfinite(self.lam) and self.lam >= 0):
            raise SpecError(f"lambda must be a finite nonnegative number, got {self.lam!r}")
        if self.strategy not in STRATEGIES:
            raise SpecError(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        if any(n < 0 for n in self.radii):
            raise SpecError("radii must be nonnegative")
        if self.L_rule not in L_RULES:
            raise SpecError(f"unknown L rule {self.L_rule!r}")
        if self.v is not None:
            if len(self.v) != self.kernel.dim or not any(self.v):
                raise SpecError("v must be a nonzero vector of the kernel dimension")
        if self.K is not None and self.K < 0:
            raise SpecError("K must be nonnegative")
        for name in ("samples", "replicas", "budget", "population_cap", "max_steps"):
            if getattr(self, name) < 0:
                raise SpecError(f"{name} must be nonnegative")
        if not self.horizon > 0:
            raise SpecError("horizon must be positive")

    @property
    def dim(self) -> int:
        return self.kernel.dim

    @property
    def direction(self):
        return self.kernel.direction(self.v)

    def L(self, n: int) -> int:
        """Shrink ``L_n`` of the inner box ``V_{n - L_n}``."""
        if n <= 1 or self.L_rule == "zero":
            return 0
        if self.L_rule == "log":
            return int(math.floor(math.log(n)))
        return int(math.isqrt(n))

    def with_overrides(self, **kw) -> "ExperimentSpec":
        kw = {k: v for k, v in kw.items() if v is not None}
        try:
            return replace(self, **kw)
        except (TypeError, ValueError) as exc:
            raise SpecError(str(exc)) from exc

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA,
            "kernel": self.kernel.to_json(),
            "lambda": self.lam,
            "law": self.law.to_json(),
            "radii": list(self.radii),
            "strategy": self.strategy,
            "v": None if self.v is None else [_num(c) for c in self.v],
            "horizon": self.horizon,
            "L_rule": self.L_rule,
            "K": self.K,
            "samples": self.samples,
            "replicas": self.replicas,
            "seed": self.seed,
            "outputs": dict(self.outputs),
            "guards": {"budget": self.budget, "population_cap": self.population_cap,
                       "max_steps": self.max_steps},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"

    def fingerprint(self) -> str:
        """Short hash of the fields that affect numeric output."""
        doc = self.to_json()
        doc.pop("outputs")
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "ExperimentSpec":
        if not isinstance(doc, dict):
            raise SpecError("spec must be a JSON object")
        schema = doc.get("schema", SCHEMA)
        if schema != SCHEMA:
            raise SpecError(f"unsupported schema {schema!r}")
        try:
            kernel = JumpKernel.from_json(doc["kernel"])
            law = InitialLaw.from_json(doc.get("law", {"kind": "constant", "mean": 1}))
            guards = doc.get("guards", {})
            return cls(
                kernel=kernel,
                lam=doc["lambda"],
                law=law,
                radii=tuple(doc.get("radii", (8,))),
                strategy=doc.get("strategy", "greedy-sweep"),
                v=None if doc.get("v") is None else tuple(doc["v"]),
                horizon=doc.get("horizon", 1.0),
                L_rule=doc.get("L_rule", "log"),
                K=doc.get("K"),
                samples=doc.get("samples", 10_000),
                replicas=doc.get("replicas", 100),
                seed=doc.get("seed", 0),
                outputs=dict(doc.get("outputs", {})),
                budget=guards.get("budget", DEFAULT_BUDGET),
                population_cap=guards.get("population_cap", 10**7),
                max_steps=guards.get("max_steps", 100_000),
            )
        except SpecError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"invalid spec: {exc}") from exc

    @classmethod
    def loads(cls, text: str) -> "ExperimentSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"spec is not valid JSON: {exc}") from exc
        return cls.from_json(doc)


def _num(x):
    return int(x) if float(x).is_integer() else float(x)

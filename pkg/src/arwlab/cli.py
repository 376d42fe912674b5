"""Command-line driver.

Subcommands::

    arwlab stabilize   stabilize one sampled box; CSV grid + JSON report
    arwlab sweep       exit-density curve M_n/|V_n| over radii (CSV)
    arwlab fv          F_v(lambda) by Monte Carlo and by linear solve (JSON)
    arwlab verify S    property suite S in {abelian, coupling, branching, particlewise}
    arwlab oracle      regenerate the test oracle fixtures
    arwlab spec        print the resolved experiment spec (JSON)

Exit codes: 0 pass, 1 suite failure, 2 invalid spec, 3 guard tripped.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

from .couplings import PopulationGuard
from .estimators import (NotNearestNeighbor, density_criterion, estimate_F, estimate_F_exact_1d,
                         exit_density_sweep, rolling_lower_bound_report)
from .experiment import ExperimentSpec, SpecError
from .lattice import Box, DriftWarning, InitialLaw, JumpKernel, sample_initial
from .sitewise import InstructionTape, ToppleBudgetExceeded, stabilize

EXIT_OK, EXIT_FAIL, EXIT_SPEC, EXIT_GUARD = 0, 1, 2, 3

STABILIZE_HELP = """\
CSV columns (one row per window site): x0..x{d-1}, count, sleeping, odometer.
The JSON report (--report) holds M, N, instruction totals, the final
configuration and exited particles; wall time is under "metadata"."""

SWEEP_HELP = """\
CSV columns: n, volume, mean, stderr, replicas, strategy, seed
(mean and stderr of M_n/|V_n| over replicas)."""


def _kernel_arg(text: str) -> JumpKernel:
    path = Path(text)
    doc = json.loads(path.read_text()) if path.exists() else json.loads(text)
    return JumpKernel.from_json(doc)


def _add_spec_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment spec (flags override the --spec file)")
    g.add_argument("--spec", help="experiment spec JSON file")
    g.add_argument("--kernel", help="kernel JSON (inline or file), e.g. "
                   '\'{"dim":1,"support":[[[1],0.75],[[-1],0.25]],"bias":[1]}\'')
    g.add_argument("--p-right", type=float, help="shorthand: 1d nearest-neighbor kernel with p(+1)")
    g.add_argument("--lambda", dest="lam", type=float, help="sleep rate")
    g.add_argument("--mu", type=float, help="mean of the initial law")
    g.add_argument("--law", choices=("constant", "bernoulli", "poisson"), help="initial law kind")
    g.add_argument("--radius", type=int, nargs="+", help="box radii")
    g.add_argument("--strategy", help="toppling strategy")
    g.add_argument("--samples", type=int, help="walk samples for F")
    g.add_argument("--replicas", type=int, help="replicas per radius")
    g.add_argument("--seed", type=int, help="root seed")
    g.add_argument("--v", type=float, nargs="+", help="bias direction")
    g.add_argument("--K", type=int, help="cap on initial counts")
    g.add_argument("--max-steps", type=int, help="walk step cap")
    g.add_argument("--budget", type=int, help="toppling budget per stabilization")


def resolve_spec(args) -> ExperimentSpec:
    """Spec file (or defaults) with command-line overrides applied."""
    if args.spec:
        try:
            text = Path(args.spec).read_text()
        except OSError as exc:
            raise SpecError(f"cannot read spec: {exc}") from exc
        spec = ExperimentSpec.loads(text)
    else:
        spec = None
    try:
        if args.kernel:
            kernel = _kernel_arg(args.kernel)
        elif args.p_right is not None:
            kernel = JumpKernel.nearest_neighbor_1d(args.p_right)
        else:
            kernel = spec.kernel if spec else JumpKernel.nearest_neighbor_1d(0.75)
    except (ValueError, KeyError, TypeError) as exc:
        raise SpecError(f"invalid kernel: {exc}") from exc
    if spec is None:
        spec = ExperimentSpec(kernel=kernel, lam=args.lam if args.lam is not None else 1.0)
    law = spec.law
    if args.mu is not None or args.law is not None:
        kind = args.law or law.kind
        mu = args.mu if args.mu is not None else law.mean
        try:
            law = {"constant": lambda m: InitialLaw.constant(int(m)) if float(m).is_integer()
                   else _bad_constant(m),
                   "bernoulli": InitialLaw.bernoulli, "poisson": InitialLaw.poisson}[kind](mu)
        except KeyError:
            raise SpecError(f"law {kind!r} needs a spec file")
        except ValueError as exc:
            raise SpecError(str(exc)) from exc
    return spec.with_overrides(
        kernel=kernel, lam=args.lam, law=law, radii=args.radius, strategy=args.strategy,
        samples=args.samples, replicas=args.replicas, seed=args.seed,
        v=tuple(args.v) if args.v else None, K=args.K, max_steps=args.max_steps,
        budget=args.budget)


def _bad_constant(m):
    raise SpecError(f"constant law needs an integer mean, got {m}")


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_stabilize(args) -> int:
    spec = resolve_spec(args)
    n = spec.radii[0]
    box = Box(n, spec.dim)
    key = ("stabilize", n)
    config = sample_initial(spec.law, box, spec.seed, key)
    if spec.K is not None:
        config.counts[:] = [min(c, spec.K) for c in config.counts]
    tape = InstructionTape(spec.kernel, spec.lam, spec.seed, key)
    rep = stabilize(config, tape, spec.strategy, budget=spec.budget, order_seed=spec.seed,
                    v=spec.v)
    _emit(rep.grid_csv(), args.out)
    if args.report:
        doc = rep.to_json()
        doc["spec"] = spec.to_json()
        _emit(_dump(doc), args.report)
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = resolve_spec(args)
    curve = exit_density_sweep(spec, threads=args.threads, checkpoint_dir=args.checkpoint,
                               progress=not args.quiet)
    _emit(curve.to_csv(), args.out)
    if args.rolling_report:
        reps = [rolling_lower_bound_report(spec, n, threads=args.threads).to_json()
                for n in spec.radii]
        _emit(_dump({"schema": "arwlab.rolling-reports/1", "reports": reps}), args.rolling_report)
    return EXIT_OK


def cmd_fv(args) -> int:
    spec = resolve_spec(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DriftWarning)
        mc = estimate_F(spec.kernel, spec.lam, v=spec.v, samples=spec.samples,
                        max_steps=spec.max_steps, seed=spec.seed)
    try:
        exact = estimate_F_exact_1d(spec.kernel, spec.lam, v=spec.v).to_json()
    except NotNearestNeighbor as exc:
        exact = {"error": str(exc)}
    msgs = sorted({str(w.message) for w in caught if issubclass(w.category, DriftWarning)})
    doc = {"schema": "arwlab.fv-report/1", "lambda": spec.lam,
           "v": list(spec.direction), "estimate": mc.estimate,
           "monte_carlo": mc.to_json(), "absorbing_chain": exact,
           "warnings": [{"category": "DriftWarning", "message": m} for m in msgs]}
    doc["criterion"] = density_criterion(spec.kernel, spec.lam, spec.law.mean, v=spec.v,
                                         samples=spec.samples, max_steps=spec.max_steps,
                                         seed=spec.seed).to_json()
    _emit(_dump(doc), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify

    report = verify.SUITES[args.suite](seed=args.seed if args.seed is not None else 0,
                                       scale=args.scale)
    text = report.text()
    _emit(text, args.out)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_oracle(args) -> int:
    from . import oracles

    path = oracles.write(args.out) if args.out else oracles.write()
    print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def cmd_spec(args) -> int:
    _emit(resolve_spec(args).dumps(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arwlab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="replica worker processes (default: machine parallelism)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stabilize", help="stabilize one sampled box", epilog=STABILIZE_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_spec_flags(p)
    p.add_argument("--out", help="CSV grid path (default stdout)")
    p.add_argument("--report", help="JSON report path")
    p.set_defaults(func=cmd_stabilize)

    p = sub.add_parser("sweep", help="exit-density curve", epilog=SWEEP_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_spec_flags(p)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--checkpoint", help="directory for per-radius checkpoints")
    p.add_argument("--rolling-report", help="also write rolling-strategy bound reports (JSON)")
    p.add_argument("--quiet", action="store_true", help="no progress on stderr")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fv", help="estimate F_v(lambda)")
    _add_spec_flags(p)
    p.add_argument("--out", help="JSON path (default stdout)")
    p.set_defaults(func=cmd_fv)

    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("suite", choices=("abelian", "coupling", "branching", "particlewise"))
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", type=float, default=1.0, help="multiply sample sizes")
    p.add_argument("--out", help="report path (default stdout)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("oracle", help="write oracle fixtures")
    p.add_argument("--out", help="fixture path (default tests/fixtures/oracles.json)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("spec", help="print the resolved spec")
    _add_spec_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spec)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecError as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except (ToppleBudgetExceeded, PopulationGuard) as exc:
        print(f"guard tripped: {exc}", file=sys.stderr)
        return EXIT_GUARD


def determinism_check(workdir) -> dict[str, bool]:
    """Run each command twice into ``workdir`` and compare output bytes."""
    workdir = Path(workdir)
    common = ["--p-right", "0.75", "--lambda", "0.5", "--seed", "11"]
    runs = {
        "stabilize": ["stabilize", *common, "--radius", "6", "--mu", "1.5", "--law", "poisson",
                      "--out", "{dir}/grid.csv", "--report", "{dir}/report.json"],
        "sweep": ["sweep", *common, "--radius", "2", "4", "--replicas", "8", "--quiet",
                  "--mu", "0.5", "--law", "poisson", "--out", "{dir}/curve.csv"],
        "fv": ["fv", *common, "--samples", "2000", "--out", "{dir}/fv.json"],
        "verify-abelian": ["verify", "abelian", "--scale", "0.05", "--out", "{dir}/abelian.txt"],
        "verify-coupling": ["verify", "coupling", "--scale", "0.02", "--out", "{dir}/coupling.txt"],
        "verify-branching": ["verify", "branching", "--scale", "0.02", "--out", "{dir}/branching.txt"],
        "verify-particlewise": ["verify", "particlewise", "--scale", "0.02",
                                "--out", "{dir}/particlewise.txt"],
        "oracle": ["oracle", "--out", "{dir}/oracles.json"],
        "spec": ["spec", *common, "--out", "{dir}/spec.json"],
    }
    out = {}
    for name, argv in runs.items():
        blobs = []
        for rep in ("a", "b"):
            d = workdir / name / rep
            d.mkdir(parents=True, exist_ok=True)
            main(["--threads", "1"] + [a.format(dir=d) for a in argv])
            blobs.append({f.name: _strip_metadata(f) for f in sorted(d.iterdir())})
        out[name] = bool(blobs[0]) and blobs[0] == blobs[1]
    return out


def _strip_metadata(path: Path) -> bytes:
    data = path.read_bytes()
    if path.suffix == ".json":
        doc = json.loads(data)
        if isinstance(doc, dict):
            doc.pop("metadata", None)
        return json.dumps(doc, sort_keys=True).encode()
    return data


if __name__ == "__main__":
    sys.exit(main())

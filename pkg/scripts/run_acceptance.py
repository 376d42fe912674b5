"""Run acceptance criteria 1-10 and print one pass/fail line each.

    python scripts/run_acceptance.py               # all criteria
    python scripts/run_acceptance.py 3 6 --json out/acceptance.json

Exits 1 if any selected criterion fails.
"""
import argparse
import json
import sys
import tempfile
from pathlib import Path

from arwlab import acceptance as acc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("criteria", type=int, nargs="*", default=list(range(1, 11)))
    parser.add_argument("--threads", type=int, default=1,
                        help="worker processes for criteria 4 and 5")
    parser.add_argument("--json", help="write results to this path")
    args = parser.parse_args(argv)

    results = []
    for k in args.criteria:
        if k == 10:
            with tempfile.TemporaryDirectory() as d:
                res = acc.criterion_10(d)
        elif k in (4, 5):
            res = acc.ALL[k - 1](threads=args.threads)
        else:
            res = acc.ALL[k - 1]()
        print(res.line(), flush=True)
        results.append(res)

    if args.json:
        Path(args.json).parent.mkdir(parents=True, exist_ok=True)
        doc = [{"criterion": r.number, "name": r.name, "passed": r.passed and r.in_time,
                "detail": r.detail, "runtime": r.runtime} for r in results]
        Path(args.json).write_text(json.dumps(doc, indent=2) + "\n")
    return 0 if all(r.passed and r.in_time for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())

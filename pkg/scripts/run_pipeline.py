"""Generate, profile and tune both built-in examples and compare the selections.

    python3 scripts/run_pipeline.py --out runs --runs 1000
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

from invm_lyap.cli import main
from invm_lyap.tuning import TuningReport

REFERENCE = {1: 3.0, 2: 2.0}


def run_example(example: int, out: Path, runs: int, iters: int) -> TuningReport:
    data, prof = out / f"example{example}" / "data", out / f"example{example}" / "profiles"
    for argv in (
        ["generate", "--example", str(example), "--case", "1,2", "--runs", str(runs), "--iters", str(iters),
         "--out", str(data)],
        ["profile", str(data), "--out", str(prof)],
        ["tune", str(prof), "--out", str(prof / "tuning_report.json")],
    ):
        code = main(argv)
        if code != 0:
            raise SystemExit(code)
    return TuningReport.read_json(prof / "tuning_report.json")


def main_(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs")
    ap.add_argument("--runs", type=int, default=1000)
    ap.add_argument("--iters", type=int, default=50)
    ap.add_argument("--examples", default="1,2")
    args = ap.parse_args(argv)
    for ex in (int(e) for e in args.examples.split(",")):
        t0 = time.perf_counter()
        rep = run_example(ex, Path(args.out), args.runs, args.iters)
        flag = " (flagged)" if rep.flagged else ""
        print(
            f"example {ex}: selected alpha {rep.selected_alpha:g}{flag}, "
            f"reference {REFERENCE[ex]:g}, {time.perf_counter() - t0:.1f} s\n"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main_())

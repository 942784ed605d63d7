#!/usr/bin/env python3
"""Reproduce the convergence studies end to end.

Runs the full protocol (reference stepsize 2^-13, coarse stepsizes
2^-6..2^-11, 1000 paths, theta in {0.5, 0.75, 1.0}) for both built-in
examples plus the constant-matrix case, writes the report CSVs into
results/, and prints the fitted orders.  Expect a few minutes of runtime.

Render figures afterwards with the frontend:

    node frontend/dist/cli.js render --in results/example51_convergence.csv \
        --out results/example51.svg
"""

import pathlib
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from sdae_theta.experiment import ConvergenceConfig, run_convergence, write_report_csv


def main() -> int:
    out_dir = pathlib.Path(__file__).resolve().parent.parent / "results"
    out_dir.mkdir(exist_ok=True)
    runs = [
        ConvergenceConfig(problem_label="example51", seed=1),
        ConvergenceConfig(problem_label="example52", seed=1),
        ConvergenceConfig(
            problem_label="remark31",
            thetas=(1.0,),
            coarse_levels=(6, 7, 8, 9, 10),
            n_paths=500,
            seed=1,
        ),
    ]
    for cfg in runs:
        t0 = time.time()
        report = run_convergence(cfg)
        path = out_dir / f"{cfg.problem_label}_convergence.csv"
        write_report_csv(report, str(path))
        print(f"== {cfg.problem_label} ({time.time() - t0:.0f}s) -> {path}")
        for s in report.series:
            print(f"   theta={s.theta:g}: fitted order {s.slope:.4f}")
        for note in report.notes:
            print(f"   note: {note}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

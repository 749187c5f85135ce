#!/usr/bin/env python3
"""Attention-threshold ablation: feature-stage mean IoU per tau over a suite.

Mid-range thresholds should sit on a plateau while extreme values degrade.

Usage: python scripts/ablation_tau.py [N_SCENES]
"""

import sys
from collections import defaultdict

from edloc.evaluate import run_suite
from edloc.pipeline import LocalizeConfig
from edloc.synth import SIGNAL_STREAMS, suite_params

TAUS = (0.1, 0.3, 0.5, 0.7, 0.9)
TASKS = ("addition", "removal", "replacement")


def main() -> int:
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 30
    cfg = LocalizeConfig()
    params = [suite_params(task, seed) for task in TASKS for seed in range(n)]
    rows = run_suite(params, cfg, taus=TAUS)

    sums: dict = defaultdict(lambda: [0.0, 0])
    for r in rows:
        if r.stage == "feature" and r.stream in SIGNAL_STREAMS[r.task]:
            acc = sums[r.tau]
            acc[0] += r.iou
            acc[1] += 1

    print(f"feature-stage mean IoU per tau ({n} scenes per task, signal streams)")
    for tau in TAUS:
        total, count = sums[tau]
        mean = total / count
        print(f"  tau={tau:<4} iou={mean:.4f}  {'#' * int(round(mean * 40))}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

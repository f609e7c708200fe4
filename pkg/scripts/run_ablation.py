"""Eight-row component ablation on the toy task, with paired tests against vanilla KD.

    python scripts/run_ablation.py --rho 0.4 --seeds 20 --out results/ablation_rho0.4.json
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from dnr.toy import (
    DNR,
    DNR_WITH_TDD,
    TABLE3_VARIANTS,
    VANILLA_KD,
    SyntheticTaskSpec,
    TeacherSpec,
    TrainConfig,
    paired_greater,
    run_ablation,
)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rho", type=float, default=0.4)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    t0 = time.perf_counter()
    table = run_ablation(SyntheticTaskSpec(), TeacherSpec(corruption_rate=args.rho), TrainConfig(),
                         TABLE3_VARIANTS, range(args.seeds), args.workers)
    elapsed = time.perf_counter() - t0

    print(f"rho={args.rho}  seeds={args.seeds}  ({elapsed:.1f}s)")
    kd = table.row(VANILLA_KD).novel_accuracy
    for r in table.rows:
        vs_kd = paired_greater(r.novel_accuracy, kd)
        print(f"  {r.variant:22s} {r.mean:.4f} +- {r.stderr:.4f}   vs kd: diff {vs_kd.mean_difference:+.4f}"
              f"  p={vs_kd.p_value:.3g}  failed={r.failures}")
    tdd = paired_greater(table.row(DNR_WITH_TDD).novel_accuracy, table.row(DNR).novel_accuracy)
    print(f"  adding TDD to D&R: diff {tdd.mean_difference:+.4f}  p(improves)={tdd.p_value:.3g}")

    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        record = {"rho": args.rho, "rows": [{"variant": r.variant, "mean": r.mean, "stderr": r.stderr,
                                             "novel_accuracy": list(r.novel_accuracy)} for r in table.rows]}
        args.out.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()

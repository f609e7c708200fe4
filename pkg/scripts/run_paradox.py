"""No KD vs vanilla KD vs D&R as the teacher's target errors grow.

    python scripts/run_paradox.py --rhos 0 0.2 0.4 0.6 0.8 --seeds 20
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from dnr.toy import SyntheticTaskSpec, TeacherSpec, TrainConfig, paired_greater, run_paradox


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rhos", type=float, nargs="+", default=[0.0, 0.2, 0.4, 0.6, 0.8])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    tables = run_paradox(SyntheticTaskSpec(), TeacherSpec(), TrainConfig(), args.rhos, range(args.seeds),
                         args.workers)
    print(f"{'rho':>5}  {'none':>14}  {'kd':>14}  {'dnr':>14}  p(dnr>kd)  p(kd>none)")
    out = []
    for rho, t in zip(args.rhos, tables):
        none, kd, dnr = (t.row(n) for n in ("none", "kd", "dnr"))
        p1 = paired_greater(dnr.novel_accuracy, kd.novel_accuracy).p_value
        p2 = paired_greater(kd.novel_accuracy, none.novel_accuracy).p_value
        cells = "  ".join(f"{r.mean:.4f}+-{r.stderr:.4f}" for r in (none, kd, dnr))
        print(f"{rho:5.2f}  {cells}  {p1:9.3g}  {p2:10.3g}")
        out.append({"rho": rho, **{r.variant: list(r.novel_accuracy) for r in (none, kd, dnr)}})
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()

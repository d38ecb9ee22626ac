"""Run the shipped experiment configs and print per-cell means.

    python3 scripts/run_experiments.py                  # desk scale, all configs
    python3 scripts/run_experiments.py --scale full     # 100 trials, d = 100 rows
    python3 scripts/run_experiments.py --only model3    # configs whose name contains 'model3'

CSV files land in --out-dir (default results/).  SILS_THREADS caps the worker count.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from silslab import experiments

HERE = Path(__file__).resolve().parent
COLS = {"recovery": ("recovered_any", "recovered_truth"),
        "comparison": ("nonzeros", "tpr", "pred_err", "succ_rate")}


def _table(cfg, rows) -> str:
    cols = COLS[cfg.kind]
    lines = ["  " + " ".join(f"{h:>9}" for h in ("n", "d", "sigma", "rho", "c", "method") + cols)]
    for n, d, s, r, c in cfg.cells():
        cell = dict(n=n, d=d, sigma=s)
        for m in cfg.method:
            sub = [x for x in rows if float(x["rho"]) == r]
            vals = [experiments.summarize(sub, m, k, cell) for k in cols]
            lines.append("  " + " ".join(f"{v:>9}" for v in (n, d, s, r, f"{c:g}", m))
                         + " " + " ".join(f"{v:>9.3f}" for v in vals))
    return "\n".join(lines)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", choices=("desk", "full"), default="desk")
    ap.add_argument("--only", default="", help="substring filter on config names")
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--trials", type=int, default=None, help="override the trial count")
    ap.add_argument("--workers", type=int, default=None)
    a = ap.parse_args(argv)

    paths = sorted((HERE / "configs" / a.scale).glob("*.cfg"))
    paths = [p for p in paths if a.only in p.stem]
    if not paths:
        print(f"no configs match {a.only!r}", file=sys.stderr)
        return 1
    os.makedirs(a.out_dir, exist_ok=True)
    for p in paths:
        cfg = experiments.read_config(p)
        out = os.path.join(a.out_dir, Path(cfg.output).name)
        cfg = replace(cfg, output=out)
        if a.trials:
            cfg = replace(cfg, trials=a.trials)
        t0 = time.perf_counter()
        run = experiments.run_comparison if cfg.kind == "comparison" else experiments.run_recovery_curve
        text = run(cfg, workers=a.workers)
        print(f"{p.stem}: {cfg.trials} trials/cell -> {out} ({time.perf_counter() - t0:.1f} s)")
        print(_table(cfg, experiments.read_csv(text)))
    return 0


if __name__ == "__main__":
    sys.exit(main())

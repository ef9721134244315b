"""Train the desk-scale models (3 seeds, recurrent and feed-forward) and write sweep CSVs.

Checkpoints land in the cache used by tests/test_acceptance.py, so running
this first makes the acceptance suite a pure evaluation pass.

    python scripts/run_desk_experiments.py --tasks prefix maze --out runs/desk
"""

from __future__ import annotations

import argparse
import logging
import time
from pathlib import Path

from extrapnet.cli import aggregate, render_table
from extrapnet.evaluation import EvalReport, Trial, model_id_for, sweep
from extrapnet.experiments import (DESK_SEEDS, default_cache_dir, desk_config, profile_datasets, sweep_budgets,
                                   train_cached)


def progress(rec):
    if rec.epoch % 10 == 0:
        print(f"  epoch {rec.epoch:4d} loss {rec.loss:.5f} acc {rec.train_acc:.4f} lr {rec.lr:.2e} "
              f"({rec.seconds:.1f}s)", flush=True)


def run_task(task, seeds, variants, cache, out: Path):
    data = profile_datasets(desk_config(task, seeds[0]))
    hard_name = next(k for k in data if k.startswith("test_"))
    hard_reports = []
    for variant in variants:
        trials = []
        for seed in seeds:
            cfg = desk_config(task, seed, variant)
            t0 = time.time()
            print(f"{task} {variant} seed {seed}", flush=True)
            net, summary = train_cached(cfg, data["train"], cache, progress=progress)
            print(f"  done in {time.time() - t0:.0f}s: {summary}", flush=True)
            trials.append(Trial(net, seed, cfg.normalize_input))
        k = trials[0].net.spec.iterations
        mid = model_id_for(trials[0].net)
        held = sweep(trials, data["heldout"], [k], mid, "heldout")
        budgets = sweep_budgets(k) if variant == "recurrent" else [k]
        hard = sweep(trials, data[hard_name], budgets, mid, hard_name)
        held.to_csv(out / f"{mid}-heldout.csv")
        hard.to_csv(out / f"{mid}-{hard_name}.csv")
        hard_reports.append(hard)
        for r in held.per_seed():
            print(f"  {mid} seed {r['seed']} held-out acc {100 * r['accuracy']:.2f}%")
        for r in hard.per_seed():
            print(f"  {mid} seed {r['seed']} {hard_name} m={r['m']:2d} acc {100 * r['accuracy']:6.2f}% "
                  f"best-conf {100 * r['best_confidence_accuracy']:6.2f}%")
    rows = [r for rep in hard_reports for r in rep.rows]
    table, _ = aggregate(rows)
    text = render_table(table, task)
    (out / f"{task}-report.md").write_text(text)
    print(text, flush=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--tasks", nargs="+", default=["prefix", "maze"], choices=["prefix", "maze"])
    ap.add_argument("--seeds", nargs="+", type=int, default=list(DESK_SEEDS))
    ap.add_argument("--variants", nargs="+", default=["recurrent", "feedforward"],
                    choices=["recurrent", "feedforward"])
    ap.add_argument("--cache", default=None, help="checkpoint cache (default: $EXTRAPNET_CACHE or runs/cache)")
    ap.add_argument("--out", default="runs/desk")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache = Path(args.cache) if args.cache else default_cache_dir()
    for task in args.tasks:
        run_task(task, args.seeds, args.variants, cache, out)


if __name__ == "__main__":
    main()

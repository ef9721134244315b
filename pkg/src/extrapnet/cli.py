"""Command-line entry point: generate, train, eval, visualize, report."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, get_profile, load_config, profiles, save_config
from .datagen import DatasetFormatError, gen_maze_dataset, gen_prefix_dataset, load_dataset, load_lichess_csv
from .evaluation import EvalReport, Trial, model_id_for, standard_error, sweep
from .experiments import profile_datasets
from .heatmaps import emit_heatmaps
from .nets import forward_iterations
from .training import CheckpointError, TrainingDiverged, load_checkpoint, save_checkpoint, train

log = logging.getLogger("extrapnet")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
OUT_ROOT_ENV = "EXTRAPNET_OUT"

_argv: list[str] = []  # arguments of the running command, recorded in manifests

HELP = f"""\
NAME
    extrapnet - train recurrent residual nets on easy instances, test them on hard ones

SYNOPSIS
    extrapnet generate  --profile NAME --out DIR [--seed S]
    extrapnet generate  --task prefix --n N --count C --seed S --out FILE [--exclude FILE]
    extrapnet generate  --task maze --n CELLS --count C --seed S --out FILE [--canvas PX]
    extrapnet generate  --task chess --csv LICHESS.csv --out DIR [--rating-split R] [--limit L]
    extrapnet train     (--config FILE | --profile NAME) --data FILE --out DIR [KEY=VALUE ...]
    extrapnet eval      --checkpoints CKPT... --data FILE --m SPEC --out FILE.csv [--test-set NAME]
    extrapnet visualize --checkpoint CKPT --data FILE --index I --m M --out DIR
    extrapnet report    CSV... [--out FILE.md]

DESCRIPTION
    Every command writes manifest.json (resolved parameters, seeds, input
    hashes, tool version) into its output location before computing.
    Relative output paths are placed under ${OUT_ROOT_ENV} when it is set.

    Config files hold one `key = value` per line with dotted keys for nested
    fields (net.width = 32). Overrides on the command line use the same keys.
    Profiles: {", ".join(sorted(profiles()))}.

    --m accepts a single value (10), an inclusive range (6:20) or a list (6,8,10).

EXIT STATUS
    0 success, 2 configuration error, 3 data error, 4 training divergence.

VERSION
    {__version__}
"""


def _out_path(p) -> Path:
    p = Path(p)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, params: dict, inputs=(), single_file: bool = False) -> Path:
    """Record what is about to be computed. Directories get manifest.json, files <name>.manifest.json."""
    path = out.with_name(out.name + ".manifest.json") if single_file else out / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool": "extrapnet",
        "tool_version": __version__,
        "command": command,
        "argv": _argv,
        "params": params,
        "inputs": {str(p): file_sha256(p) for p in inputs},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def parse_m_spec(spec: str) -> list[int]:
    try:
        if ":" in spec:
            a, b = spec.split(":", 1)
            ms = list(range(int(a), int(b) + 1))
        else:
            ms = [int(v) for v in spec.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --m value {spec!r}") from exc
    if not ms or min(ms) < 1:
        raise ConfigError("iteration budgets must be >= 1")
    return ms


# --- generate ----------------------------------------------------------------

def _generate_profile(args):
    cfg = get_profile(args.profile)
    seed = cfg.data.seed if args.seed is None else args.seed
    out = _out_path(args.out)
    write_manifest(out, "generate", {"profile": args.profile, "data": cfg.to_dict()["data"], "seed": seed})
    if cfg.task == "chess":
        raise ConfigError("chess data comes from a Lichess CSV: use --task chess --csv FILE")
    for name, ds in profile_datasets(cfg, seed).items():
        print(f"{name}: {ds.save(out / f'{name}.xtrp')}")


def cmd_generate(args):
    if args.profile:
        return _generate_profile(args)
    if args.task is None:
        raise ConfigError("generate needs --profile or --task")
    out = _out_path(args.out)
    params = {k: v for k, v in vars(args).items() if k != "func"}
    if args.task == "chess":
        if not args.csv:
            raise ConfigError("--task chess needs --csv")
        write_manifest(out, "generate", params, [args.csv])
        easy, hard, stats = load_lichess_csv(args.csv, args.rating_split, args.limit)
        print(f"rows {stats.rows}, easy {stats.easy}, hard {stats.hard}, skipped {stats.n_skipped} "
              f"({100 * stats.skip_rate:.2f}%) {dict(stats.skipped)}")
        print("easy:", easy.save(out / "easy.xtrp"))
        print("hard:", hard.save(out / "hard.xtrp"))
        return
    if args.n is None or args.count is None:
        raise ConfigError("--n and --count are required")
    write_manifest(out, "generate", params, [args.exclude] if args.exclude else [], single_file=True)
    if args.task == "prefix":
        exclude = load_dataset(args.exclude) if args.exclude else None
        ds = gen_prefix_dataset(args.n, args.count, args.seed, exclude=exclude)
    else:
        ds = gen_maze_dataset(args.n, args.count, args.seed, args.canvas or None)
    print(ds.save(out))


# --- train -------------------------------------------------------------------

def _resolve_config(args) -> ExperimentConfig:
    if bool(args.config) == bool(args.profile):
        raise ConfigError("give exactly one of --config or --profile")
    cfg = load_config(args.config) if args.config else get_profile(args.profile)
    return cfg.with_overrides(args.overrides)


def cmd_train(args):
    cfg = _resolve_config(args)
    out = _out_path(args.out)
    write_manifest(out, "train", {"config": cfg.to_dict(), "config_hash": cfg.config_hash(),
                                  "seed": cfg.seed}, [args.data])
    save_config(cfg, out / "config.txt")
    data = load_dataset(args.data)
    runlog_path = out / "runlog.csv"

    def progress(rec):
        log.info("epoch %d loss %.5f acc %.4f lr %.3g (%.1fs)", rec.epoch, rec.loss, rec.train_acc, rec.lr,
                 rec.seconds)

    net, runlog = train(cfg, data, checkpoint_dir=out, progress=progress)
    runlog.to_csv(runlog_path)
    if runlog.retained:
        save_checkpoint(net, cfg, runlog, out / "model.ckpt")
        print(f"saved {out / 'model.ckpt'} (train accuracy {runlog.final_train_acc:.4f})")
    else:
        print(f"model discarded: train accuracy {runlog.final_train_acc:.4f} < 1.0 "
              f"(require_perfect_train is set)")


# --- eval / visualize ----------------------------------------------------------

def cmd_eval(args):
    ms = parse_m_spec(args.m)
    out = _out_path(args.out)
    write_manifest(out, "eval", {"m": ms, "test_set": args.test_set, "checkpoints": args.checkpoints},
                   [args.data, *args.checkpoints], single_file=True)
    data = load_dataset(args.data)
    groups: dict[str, list[Trial]] = {}
    for path in args.checkpoints:
        net, cfg, _ = load_checkpoint(path)
        if cfg.task != data.task:
            raise DatasetFormatError(f"{path} is a {cfg.task} model but the data is {data.task}")
        groups.setdefault(model_id_for(net), []).append(Trial(net, cfg.seed, cfg.normalize_input))
    report = EvalReport()
    test_set = args.test_set or Path(args.data).stem
    for model_id, trials in sorted(groups.items()):
        spec = trials[0].net.spec
        budget = ms if spec.variant == "recurrent" else [spec.iterations]
        part = sweep(trials, data, budget, model_id, test_set, workers=args.workers)
        report.rows += part.rows
        report.best_iteration_hist.update({f"{model_id}/{k}": v for k, v in part.best_iteration_hist.items()})
    report.to_csv(out)
    for r in report.summary():
        print(f"{r['model_id']:>28} m={r['m']:>3} acc={100 * r['accuracy']:6.2f}% "
              f"best-conf={100 * r['best_confidence_accuracy']:6.2f}%")


def cmd_visualize(args):
    out = _out_path(args.out)
    write_manifest(out, "visualize", {"index": args.index, "m": args.m}, [args.checkpoint, args.data])
    net, cfg, _ = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    if not 0 <= args.index < len(data):
        raise DatasetFormatError(f"index {args.index} out of range for {len(data)} samples")
    x = data.inputs[args.index].astype(net.dtype)
    trace = forward_iterations(net, x - 0.5 if cfg.normalize_input else x, args.m)
    paths = emit_heatmaps(trace, data.inputs[args.index], data.targets[args.index], out, cfg.task)
    print(f"wrote {len(paths)} panels to {out}")


# --- report --------------------------------------------------------------------

_MODEL_ID = re.compile(r"^(?P<task>[a-z]+)-(?P<variant>recurrent|feedforward)-d(?P<depth>\d+)$")


def aggregate(rows, column: str = "accuracy"):
    """Mean +/- stderr across seeds at m matching each model's effective depth.

    Returns ({test_set: {(variant, depth): (mean, stderr, n_seeds)}}, task).
    """
    tasks = set()
    cells: dict[str, dict[tuple[str, int], list[float]]] = {}
    for r in rows:
        if r["seed"] == "all":
            continue
        mt = _MODEL_ID.match(r["model_id"])
        if not mt:
            raise DatasetFormatError(f"model_id {r['model_id']!r} is not task-variant-dDEPTH")
        tasks.add(mt["task"])
        depth = int(mt["depth"])
        if r["m"] != (depth - 4) // 4:
            continue
        cells.setdefault(r["test_set"], {}).setdefault((mt["variant"], depth), []).append(r[column])
    if len(tasks) > 1:
        raise DatasetFormatError(f"cannot aggregate reports from different tasks: {sorted(tasks)}")
    table = {ts: {key: (float(np.mean(v)), standard_error(v), len(v)) for key, v in d.items()}
             for ts, d in cells.items()}
    return table, tasks.pop() if tasks else None


def render_table(table, task, column: str = "accuracy") -> str:
    lines = []
    for test_set, cells in sorted(table.items()):
        depths = sorted({d for _, d in cells})
        lines.append(f"### {task} / {test_set} ({column}, % mean +/- stderr over seeds)")
        lines.append("")
        lines.append("| | " + " | ".join(str(d) for d in depths) + " |")
        lines.append("|---|" + "---|" * len(depths))
        for variant, label in (("recurrent", "Recurrent"), ("feedforward", "Feed-forward")):
            if not any(v == variant for v, _ in cells):
                continue
            vals = []
            for d in depths:
                c = cells.get((variant, d))
                vals.append("" if c is None else f"{100 * c[0]:.2f} +/- {100 * c[1]:.2f}")
            lines.append(f"| {label} | " + " | ".join(vals) + " |")
        lines.append("")
    return "\n".join(lines)


def cmd_report(args):
    rows = []
    for path in args.csvs:
        try:
            rows += EvalReport.from_csv(path).rows
        except (KeyError, ValueError) as exc:
            raise DatasetFormatError(str(exc)) from exc
    table, task = aggregate(rows, args.column)
    text = render_table(table, task, args.column)
    if args.out:
        out = _out_path(args.out)
        write_manifest(out, "report", {"column": args.column}, args.csvs, single_file=True)
        out.write_text(text)
    print(text)


# --- main ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="extrapnet", description=HELP,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate or import datasets")
    g.add_argument("--profile")
    g.add_argument("--task", choices=("prefix", "maze", "chess"))
    g.add_argument("--n", type=int, help="bits (prefix) or cells per side (maze)")
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--canvas", type=int, default=32, help="maze canvas in pixels; 0 = no padding")
    g.add_argument("--exclude", help="dataset whose strings must not be drawn (prefix)")
    g.add_argument("--csv", help="Lichess puzzle CSV (chess)")
    g.add_argument("--rating-split", type=int, default=1385)
    g.add_argument("--limit", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--config")
    t.add_argument("--profile")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--workers", type=int, default=1, help="accepted for symmetry; training is single-threaded")
    t.add_argument("overrides", nargs="*", metavar="KEY=VALUE")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="iteration sweep on a test set")
    e.add_argument("--checkpoints", nargs="+", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--m", required=True)
    e.add_argument("--test-set")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("visualize", help="per-iteration heatmaps for one sample")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--index", type=int, default=0)
    v.add_argument("--m", type=int, required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_visualize)

    r = sub.add_parser("report", help="aggregate eval CSVs into a depth table")
    r.add_argument("csvs", nargs="+")
    r.add_argument("--column", default="accuracy", choices=("accuracy", "best_confidence_accuracy"))
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    global _argv
    _argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(_argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    t0 = time.time()
    try:
        if getattr(args, "seed", None) is None and args.command == "generate" and not args.profile:
            args.seed = 0
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetFormatError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"training diverged: {exc} (checkpoint: {exc.checkpoint})", file=sys.stderr)
        return EXIT_DIVERGED
    log.info("done in %.1fs", time.time() - t0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

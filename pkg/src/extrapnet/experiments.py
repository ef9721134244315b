"""Profile datasets and cached training runs shared by the CLI, scripts and acceptance suite."""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig, get_profile
from .datagen import Dataset, gen_maze_dataset, gen_prefix_dataset
from .nets import Net
from .training import load_checkpoint, save_checkpoint, train

log = logging.getLogger(__name__)

CACHE_ENV = "EXTRAPNET_CACHE"
DESK_PROFILES = {"prefix": "prefix-small", "maze": "maze-small"}
DESK_SEEDS = (0, 1, 2)


def default_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, "runs/cache"))


def profile_datasets(config: ExperimentConfig, seed: int | None = None) -> dict[str, Dataset]:
    """Train split, same-size held-out split and one test split per harder size.

    Split i uses data seed ``seed + i`` so every split is reproducible on its own.
    """
    d = config.data
    seed = d.seed if seed is None else seed
    out = {}
    if config.task == "prefix":
        out["train"] = gen_prefix_dataset(d.train_size, d.train_count, seed)
        out["heldout"] = gen_prefix_dataset(d.train_size, d.test_count, seed + 1, exclude=out["train"])
        for i, n in enumerate(d.test_sizes):
            out[f"test_{n}"] = gen_prefix_dataset(n, d.test_count, seed + 2 + i)
    elif config.task == "maze":
        canvas = d.canvas or None
        out["train"] = gen_maze_dataset(d.train_size, d.train_count, seed, canvas)
        out["heldout"] = gen_maze_dataset(d.train_size, d.test_count, seed + 1, canvas)
        for i, n in enumerate(d.test_sizes):
            out[f"test_{n}"] = gen_maze_dataset(n, d.test_count, seed + 2 + i, canvas)
    else:
        raise ValueError("chess splits come from a Lichess CSV, not from a generator")
    return out


def as_feedforward(config: ExperimentConfig) -> ExperimentConfig:
    """Same config with independent blocks instead of one shared block (equal effective depth)."""
    return replace(config, net=replace(config.net, variant="feedforward"))


def desk_config(task: str, seed: int, variant: str = "recurrent") -> ExperimentConfig:
    """Desk-scale profile for `task` with a training seed; all seeds share one data seed."""
    cfg = get_profile(DESK_PROFILES[task]).with_overrides([f"seed={seed}"])
    return as_feedforward(cfg) if variant == "feedforward" else cfg


def sweep_budgets(k: int) -> list[int]:
    """Test-time iteration counts for a recurrent sweep: 1 .. 3k."""
    return list(range(1, 3 * k + 1))


def run_key(config: ExperimentConfig, dataset: Dataset) -> str:
    h = hashlib.sha256(config.config_hash().encode())
    h.update(hashlib.sha256(dataset.to_bytes()).digest())
    return h.hexdigest()[:16]


def train_cached(config: ExperimentConfig, dataset: Dataset, cache_dir=None, progress=None) -> tuple[Net, dict]:
    """Train once per (config, dataset) pair; later calls load the checkpoint.

    Returns the network and the run summary stored in the checkpoint header.
    """
    cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    s = config.net
    path = cache / f"{config.task}-{s.variant}-w{s.width}-k{s.iterations}-s{config.seed}-{run_key(config, dataset)}.ckpt"
    if path.exists():
        net, _, header = load_checkpoint(path, expected=config)
        return net, header["runlog"]
    log.info("training %s", path.name)
    net, runlog = train(config, dataset, progress=progress)
    save_checkpoint(net, config, runlog, path)
    runlog.to_csv(path.with_suffix(".runlog.csv"))
    return net, runlog.summary()

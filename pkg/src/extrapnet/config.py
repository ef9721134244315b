"""Experiment configuration, named profiles and the key-value config format.

The on-disk format is one ``key = value`` pair per line. Nested fields use
dotted keys (``net.width = 32``); values are JSON literals, bare words are
read as strings, and ``#`` starts a comment. The first key is always
``format_version``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .nets import NetSpec

FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    """What to generate for a profile: a training size and harder test sizes.

    Sizes are bit-string lengths (prefix), cells per side (maze) or ignored
    for chess, where the split comes from puzzle ratings.
    """

    train_size: int = 32
    test_sizes: tuple[int, ...] = (40, 44)
    train_count: int = 10_000
    test_count: int = 10_000
    canvas: int = 0  # maze padding extent; 0 renders at the maze's own size
    rating_split: int = 1385
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    net: NetSpec
    optimizer: str = "adam"
    lr: float = 0.001
    warmup_epochs: int = 10
    warmup_start_factor: float = 0.01
    lr_milestones: tuple[int, ...] = (100, 200, 300)
    lr_decay: float = 0.5
    weight_decay: float = 2e-4
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip: float = 1.0  # 0 disables clipping
    clip_mode: str = "global"
    batch_size: int = 150
    epochs: int = 500
    seed: int = 0
    normalize_input: bool = True
    loss_mode: str = "final"
    dtype: str = "float64"
    checkpoint_every: int = 0
    require_perfect_train: bool = True
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.task != self.net.task:
            raise ConfigError(f"config task {self.task!r} does not match net task {self.net.task!r}")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.clip_mode not in ("global", "elementwise"):
            raise ConfigError(f"unknown clip_mode {self.clip_mode!r}")
        if self.loss_mode not in ("final", "mean_iterations"):
            raise ConfigError(f"unknown loss_mode {self.loss_mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        object.__setattr__(self, "lr_milestones", tuple(int(m) for m in self.lr_milestones))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["net"] = self.net.to_dict()
        d["lr_milestones"] = list(self.lr_milestones)
        d["data"]["test_sizes"] = list(self.data.test_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            d["net"] = NetSpec.from_dict(d["net"])
            data = dict(d.get("data", {}))
            if "test_sizes" in data:
                data["test_sizes"] = tuple(data["test_sizes"])
            d["data"] = DataConfig(**data)
            if "lr_milestones" in d:
                d["lr_milestones"] = tuple(d["lr_milestones"])
            return cls(**d)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, overrides) -> ExperimentConfig:
        return apply_overrides(self, overrides)


# --- profiles ---------------------------------------------------------------

def _paper_profiles() -> dict[str, ExperimentConfig]:
    prefix = ExperimentConfig(
        task="prefix", net=NetSpec("prefix", width=120, iterations=10),
        optimizer="adam", lr=0.001, warmup_epochs=10, lr_milestones=(100, 200, 300), lr_decay=0.5,
        weight_decay=2e-4, clip=1.0, batch_size=150, epochs=500, normalize_input=True,
        require_perfect_train=True,
        data=DataConfig(train_size=32, test_sizes=(40, 44), train_count=10_000, test_count=10_000))
    maze = ExperimentConfig(
        task="maze", net=NetSpec("maze", width=128, iterations=20),
        optimizer="sgd_momentum", lr=0.001, warmup_epochs=5, lr_milestones=(175,), lr_decay=0.1,
        weight_decay=2e-4, momentum=0.9, clip=0.0, batch_size=50, epochs=200, normalize_input=False,
        require_perfect_train=False,
        data=DataConfig(train_size=9, test_sizes=(13,), train_count=50_000, test_count=10_000, canvas=32))
    chess = ExperimentConfig(
        task="chess", net=NetSpec("chess", width=512, iterations=20),
        optimizer="sgd_momentum", lr=0.1, warmup_epochs=3, lr_milestones=(100, 110), lr_decay=0.1,
        weight_decay=2e-4, momentum=0.9, clip=0.0, batch_size=300, epochs=140, normalize_input=False,
        require_perfect_train=False,
        data=DataConfig(train_count=600_000, test_count=100_000, rating_split=1385))
    return {"prefix": prefix, "maze": maze, "chess": chess}


def _desk_profiles(paper) -> dict[str, ExperimentConfig]:
    prefix_small = replace(
        paper["prefix"], net=NetSpec("prefix", width=32, iterations=6), epochs=150, warmup_epochs=5,
        lr_milestones=(60, 100, 130), dtype="float32",
        data=DataConfig(train_size=16, test_sizes=(24,), train_count=10_000, test_count=2_000))
    maze_small = replace(
        paper["maze"], net=NetSpec("maze", width=32, iterations=6), optimizer="adam", lr=0.001,
        epochs=40, warmup_epochs=3, lr_milestones=(30,), lr_decay=0.1, clip=1.0, dtype="float32",
        data=DataConfig(train_size=5, test_sizes=(7,), train_count=4_000, test_count=1_000, canvas=0))
    chess_smoke = replace(
        paper["chess"], net=NetSpec("chess", width=64, iterations=4), epochs=2, dtype="float32",
        data=DataConfig(train_count=5_000, test_count=1_000, rating_split=1385))
    return {"prefix-small": prefix_small, "maze-small": maze_small, "chess-smoke": chess_smoke}


def profiles() -> dict[str, ExperimentConfig]:
    paper = _paper_profiles()
    return {**paper, **_desk_profiles(paper)}


def get_profile(name: str) -> ExperimentConfig:
    table = profiles()
    if name not in table:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(table)}")
    return table[name]


# --- key-value text format --------------------------------------------------

def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(d: dict, key: str, value):
    parts = key.split(".")
    cur = d
    for p in parts[:-1]:
        if p not in cur or not isinstance(cur[p], dict):
            raise ConfigError(f"unknown config section in {key!r}")
        cur = cur[p]
    if parts[-1] not in cur:
        raise ConfigError(f"unknown config key {key!r}")
    cur[parts[-1]] = value


def dumps(config: ExperimentConfig) -> str:
    lines = [f"format_version = {FORMAT_VERSION}"]
    for k, v in _flatten(config.to_dict()).items():
        lines.append(f"{k} = {json.dumps(v)}")
    return "\n".join(lines) + "\n"


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse the key-value format.

    Keys absent from the text keep the values of `base`, or of the named
    profile given by a ``profile`` key, or of the task's paper profile.
    """
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        k, v = line.split("=", 1)
        pairs[k.strip()] = _parse_value(v)
    version = pairs.pop("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported config format_version {version}")
    profile = pairs.pop("profile", None)
    if base is None:
        if profile is not None:
            base = get_profile(profile)
        elif "task" in pairs:
            base = get_profile(pairs["task"]) if pairs["task"] in profiles() else None
        if base is None:
            raise ConfigError("config needs a 'task' or 'profile' key")
    d = base.to_dict()
    if "task" in pairs and pairs["task"] != d["task"]:
        d["net"]["task"] = pairs["task"]
    for k, v in pairs.items():
        _set_dotted(d, k, v)
    return ExperimentConfig.from_dict(d)


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps(config))


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)


def apply_overrides(config: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply ``key=value`` strings (dotted keys allowed) on top of `config`."""
    d = config.to_dict()
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        _set_dotted(d, k.strip(), _parse_value(v))
    return ExperimentConfig.from_dict(d)

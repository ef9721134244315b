"""Optimizers, learning-rate schedule, training loop and checkpoints."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .evaluation import dataset_accuracy, exact_match_batch
from .nets import Net, NetSpec, build
from .tensor import NonFiniteError, Tensor, add, backward, mul, per_position_cross_entropy

log = logging.getLogger(__name__)

CKPT_MAGIC = b"XTRPCKPT"
CKPT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, checkpoint=None):
        super().__init__(msg)
        self.checkpoint = checkpoint


class CheckpointError(ValueError):
    pass


# --- optimizer steps ---------------------------------------------------------

def _check_shapes(params, grads):
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"param shape {p.shape} != grad shape {g.shape}")


def adam_step(params, grads, state: dict, lr: float, weight_decay: float = 0.0,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """In-place Adam update with decoupled weight decay (p -= lr * wd * p).

    `state` starts as ``{}``; moment buffers and the step count live in it.
    """
    _check_shapes(params, grads)
    if "m" not in state:
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
        state["t"] = 0
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        p -= lr * weight_decay * p + lr * update
    return params, state


def sgd_momentum_step(params, grads, velocity, lr: float, momentum: float = 0.9,
                      weight_decay: float = 2e-4):
    """In-place heavy-ball SGD with L2 decay folded into the gradient."""
    _check_shapes(params, grads)
    if velocity is None or not len(velocity):
        velocity = [np.zeros_like(p) for p in params]
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v
    return params, velocity


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads))


def clip_gradients(grads, max_norm: float = 1.0, mode: str = "global"):
    """Rescale so the global L2 norm is at most `max_norm` (or clamp elementwise)."""
    if mode == "elementwise":
        return [np.clip(g, -max_norm, max_norm) for g in grads]
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return list(grads)
    scale = max_norm / norm
    return [g * scale for g in grads]


def lr_at(epoch: int, config: ExperimentConfig) -> float:
    """Geometric warm-up from lr * warmup_start_factor, then step decays at milestones."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    w = config.warmup_epochs
    if epoch < w:
        return config.lr * config.warmup_start_factor ** ((w - epoch) / w)
    drops = sum(1 for m in config.lr_milestones if epoch >= m)
    return config.lr * config.lr_decay**drops


# --- run log ----------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    lr: float
    seconds: float


@dataclass
class RunLog:
    records: list[EpochRecord] = field(default_factory=list)
    final_train_acc: float | None = None
    retained: bool = True
    checkpoints: list[str] = field(default_factory=list)
    cpu_seconds: float = 0.0

    def append(self, rec: EpochRecord):
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epoch index must increase")
        self.records.append(rec)

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "train_acc", "lr", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, f"{r.loss:.8f}", f"{r.train_acc:.6f}", f"{r.lr:.8g}", f"{r.seconds:.3f}"])

    @classmethod
    def from_csv(cls, path) -> RunLog:
        out = cls()
        with Path(path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                out.append(EpochRecord(int(row["epoch"]), float(row["loss"]), float(row["train_acc"]),
                                       float(row["lr"]), float(row["seconds"])))
        return out

    def summary(self) -> dict:
        return {"epochs": len(self.records), "final_train_acc": self.final_train_acc,
                "retained": self.retained, "final_loss": self.records[-1].loss if self.records else None,
                "cpu_seconds": self.cpu_seconds}


# --- training ---------------------------------------------------------------

def _loss(net: Net, x: Tensor, targets: np.ndarray, mode: str):
    if mode == "final":
        logits = net.iterate(x, net.spec.iterations)
        return per_position_cross_entropy(logits, targets), logits
    outs = net.iterate(x, net.spec.iterations, keep_all=True)
    total = per_position_cross_entropy(outs[0], targets)
    for o in outs[1:]:
        total = add(total, per_position_cross_entropy(o, targets))
    scale = Tensor(np.asarray(1.0 / len(outs), dtype=total.dtype))
    return mul(total, scale), outs[-1]


def prepare_inputs(inputs: np.ndarray, config: ExperimentConfig) -> np.ndarray:
    x = inputs.astype(config.dtype)
    return x - 0.5 if config.normalize_input else x


def train(config: ExperimentConfig, dataset, net: Net | None = None, checkpoint_dir=None,
          progress=None) -> tuple[Net, RunLog]:
    """Mini-batch training on the final-iteration output.

    `progress`, when given, is called with each EpochRecord.
    """
    if dataset.task != config.task:
        raise ValueError(f"dataset task {dataset.task!r} != config task {config.task!r}")
    net = build(config.net, config.seed) if net is None else net
    net.astype(np.dtype(config.dtype))
    if dataset.inputs.shape[1] != config.net.input_channels:
        raise ValueError(f"dataset has {dataset.inputs.shape[1]} channels, net expects {config.net.input_channels}")
    x_all = prepare_inputs(dataset.inputs, config)
    y_all = dataset.targets
    params = net.parameters()
    opt_state: dict = {}
    velocity = None
    rng = np.random.default_rng([config.seed, 1])
    runlog = RunLog()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    cpu0 = time.process_time()

    for epoch in range(config.epochs):
        t0 = time.time()
        lr = lr_at(epoch, config)
        order = rng.permutation(len(dataset))
        loss_sum, correct, seen = 0.0, 0, 0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            net.zero_grad()
            try:
                # overflow is caught explicitly as NonFiniteError below
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, logits = _loss(net, Tensor(x_all[idx]), y_all[idx], config.loss_mode)
                    backward(loss)
                grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
                if not all(np.isfinite(g).all() for g in grads):
                    raise NonFiniteError("non-finite gradient")
            except NonFiniteError as exc:
                path = None
                if ckpt_dir is not None:
                    path = ckpt_dir / f"diverged_epoch{epoch}.ckpt"
                    save_checkpoint(net, config, runlog, path)
                raise TrainingDiverged(f"training diverged at epoch {epoch}: {exc}", path) from exc
            if config.clip > 0:
                grads = clip_gradients(grads, config.clip, config.clip_mode)
            arrays = [p.data for p in params]
            if config.optimizer == "adam":
                adam_step(arrays, grads, opt_state, lr, config.weight_decay,
                          config.adam_beta1, config.adam_beta2, config.adam_eps)
            else:
                _, velocity = sgd_momentum_step(arrays, grads, velocity, lr, config.momentum,
                                                config.weight_decay)
            loss_sum += loss.item() * len(idx)
            correct += int(exact_match_batch(logits.data, y_all[idx], config.task).sum())
            seen += len(idx)
        rec = EpochRecord(epoch, loss_sum / max(seen, 1), correct / max(seen, 1), lr, time.time() - t0)
        runlog.append(rec)
        if not math.isfinite(rec.loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        if progress is not None:
            progress(rec)
        log.debug("epoch %d loss %.5f acc %.4f lr %.2e", epoch, rec.loss, rec.train_acc, lr)
        if ckpt_dir is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            path = ckpt_dir / f"epoch{epoch + 1:04d}.ckpt"
            save_checkpoint(net, config, runlog, path)
            runlog.checkpoints.append(str(path))

    net.zero_grad()
    runlog.cpu_seconds = time.process_time() - cpu0
    runlog.final_train_acc = dataset_accuracy(net, dataset, normalize=config.normalize_input)
    runlog.retained = runlog.final_train_acc == 1.0 or not config.require_perfect_train
    return net, runlog


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(net: Net, config: ExperimentConfig, runlog: RunLog | None, path) -> str:
    """Binary container: magic, version, header length, JSON header, raw parameter blobs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names, blobs, layout = [], [], []
    for name, w in net.named_parameters():
        arr = np.ascontiguousarray(w.data)
        names.append(name)
        blobs.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
        layout.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str.replace(">", "<")})
    payload = b"".join(blobs)
    header = {
        "version": CKPT_VERSION,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "net_spec": net.spec.to_dict(),
        "params": layout,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "runlog": runlog.summary() if runlog is not None else None,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    path.write_bytes(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(hbytes)) + hbytes + payload)
    return str(path)


def load_checkpoint(path, expected: ExperimentConfig | None = None) -> tuple[Net, ExperimentConfig, dict]:
    """Restore a network bit-exactly; refuse tampered files or a different config."""
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(buf[16:16 + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    payload = buf[16 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: parameter payload hash mismatch")
    config = ExperimentConfig.from_dict(header["config"])
    if config.config_hash() != header["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch")
    if expected is not None and expected.config_hash() != header["config_hash"]:
        raise CheckpointError(f"{path}: checkpoint was trained with a different config")
    spec = NetSpec.from_dict(header["net_spec"])
    net = build(spec, 0)
    state, off = {}, 0
    for item in header["params"]:
        dt = np.dtype(item["dtype"])
        n = int(np.prod(item["shape"])) * dt.itemsize
        state[item["name"]] = np.frombuffer(payload, dt, offset=off, count=n // dt.itemsize).reshape(item["shape"])
        off += n
    if off != len(payload):
        raise CheckpointError(f"{path}: payload length mismatch")
    net.astype(np.dtype(header["params"][0]["dtype"]).newbyteorder("="))
    net.load_state_dict(state)
    return net, config, header

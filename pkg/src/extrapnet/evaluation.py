"""Iteration sweeps, confidence-based output selection and exact-match scoring."""

from __future__ import annotations

import csv
import math
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nets import IterationTrace, Net, forward_iterations

CSV_COLUMNS = ("model_id", "seed", "test_set", "m", "n_samples", "accuracy", "stderr",
               "best_confidence_accuracy", "wall_seconds")


def class1_prob(logits) -> np.ndarray:
    """Softmax probability of class 1; the class axis is axis 1 of batched logits."""
    z = np.asarray(logits, dtype=np.float64)
    d = z[:, 1] - z[:, 0]
    # logistic of the logit gap, split by sign to avoid overflow
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(a.shape[0], -1)


def confidence_batch(logits, task: str) -> np.ndarray:
    p1 = _flat(class1_prob(logits))
    if task == "chess":
        top2 = np.sort(p1, axis=1)[:, -2:]
        return top2.mean(axis=1)
    return np.maximum(p1, 1.0 - p1).mean(axis=1)


def predict_batch(logits, task: str) -> np.ndarray:
    """Binary prediction per position, shaped like the targets."""
    z = np.asarray(logits)
    if task == "chess":
        p1 = _flat(class1_prob(z))
        top = np.argsort(-p1, axis=1, kind="stable")[:, :2]
        pred = np.zeros_like(p1, dtype=np.uint8)
        np.put_along_axis(pred, top, 1, axis=1)
        return pred.reshape((z.shape[0],) + z.shape[2:])
    # two-class argmax; a tie resolves to class 0
    return (z[:, 1] > z[:, 0]).astype(np.uint8)


def exact_match_batch(logits, targets, task: str) -> np.ndarray:
    pred = predict_batch(logits, task)
    t = np.asarray(targets)
    if pred.shape != t.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {t.shape}")
    return (_flat(pred) == _flat(t)).all(axis=1)


def confidence(logits, task: str) -> float:
    """Mean per-position max-softmax confidence (chess: mean of the two best squares)."""
    return float(confidence_batch(np.asarray(logits)[None], task)[0])


def exact_match(logits, target, task: str) -> bool:
    return bool(exact_match_batch(np.asarray(logits)[None], np.asarray(target)[None], task)[0])


def select_best_iteration(trace: IterationTrace, task: str) -> tuple[int, np.ndarray]:
    """1-based index of the most confident iteration (earliest on ties) and its logits."""
    if not len(trace):
        raise ValueError("empty trace")
    if not trace.confidences:
        trace.confidences = [confidence(z, task) for z in trace.logits]
    best = int(np.argmax(trace.confidences))
    return best + 1, trace.logits[best]


@dataclass
class Trial:
    """One trained model to evaluate, identified by its training seed."""

    net: Net
    seed: int
    normalize_input: bool = False


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    best_iteration_hist: dict = field(default_factory=dict)
    runtime: float = 0.0

    def per_seed(self) -> list[dict]:
        return [r for r in self.rows if r["seed"] != "all"]

    def summary(self) -> list[dict]:
        return [r for r in self.rows if r["seed"] == "all"]

    def accuracy_curve(self, seed) -> dict[int, float]:
        return {r["m"]: r["accuracy"] for r in self.rows if str(r["seed"]) == str(seed)}

    def best_confidence_curve(self, seed) -> dict[int, float]:
        return {r["m"]: r["best_confidence_accuracy"] for r in self.rows if str(r["seed"]) == str(seed)}

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(r[k]) for k in CSV_COLUMNS})

    @classmethod
    def from_csv(cls, path) -> EvalReport:
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
                raise ValueError(f"{path}: columns {reader.fieldnames} do not match the report schema")
            rows = [_parse_row(r) for r in reader]
        return cls(rows)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def _parse_row(r: dict) -> dict:
    out = dict(r)
    out["m"] = int(r["m"])
    out["n_samples"] = int(r["n_samples"])
    for k in ("accuracy", "stderr", "best_confidence_accuracy", "wall_seconds"):
        out[k] = float(r[k]) if r[k] != "" else None
    return out


def standard_error(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return 0.0
    return float(v.std(ddof=1) / math.sqrt(v.size))


def _prepare(inputs: np.ndarray, normalize: bool, dtype) -> np.ndarray:
    x = inputs.astype(dtype)
    return x - 0.5 if normalize else x


def _trace_batch(net: Net, x: np.ndarray, m: int) -> np.ndarray:
    return np.stack(forward_iterations(net, x, m).logits)


def evaluate_trial(trial: Trial, inputs, targets, m_values, task: str, batch_size: int = 200,
                   workers: int = 1):
    """Per-m exact-match counts for one model.

    Returns (ms, fixed_correct, selected_correct, best_iter_counter) where
    ms is the sorted budget list and both count arrays follow it. Selection at budget m picks
    the most confident of iterations 1..m for every sample.
    """
    net = trial.net
    ms = sorted(set(int(m) for m in m_values))
    if ms[0] < 1:
        raise ValueError("m must be >= 1")
    recurrent = net.spec.variant == "recurrent"
    if not recurrent and ms != [len(net.blocks)]:
        raise ValueError(f"feed-forward net can only be evaluated at m={len(net.blocks)}")
    m_max = ms[-1]
    chunks = [(s, min(s + batch_size, len(inputs))) for s in range(0, len(inputs), batch_size)]

    def run(chunk):
        s, e = chunk
        x = _prepare(inputs[s:e], trial.normalize_input, net.dtype)
        stack = _trace_batch(net, x, m_max)  # (M, B, 2, *P)
        t = targets[s:e]
        fixed = np.array([exact_match_batch(stack[m - 1], t, task).sum() for m in ms])
        conf = np.stack([confidence_batch(z, task) for z in stack])  # (M, B)
        sel = []
        for m in ms:
            best = np.argmax(conf[:m], axis=0)
            chosen = stack[best, np.arange(stack.shape[1])]
            sel.append(exact_match_batch(chosen, t, task).sum())
        hist = Counter((np.argmax(conf, axis=0) + 1).tolist())
        return fixed, np.array(sel), hist

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    fixed = sum(r[0] for r in results)
    sel = sum(r[1] for r in results)
    hist = sum((r[2] for r in results), Counter())
    return ms, fixed, sel, hist


def sweep(trials, dataset, m_values, model_id: str, test_set: str, batch_size: int = 200,
          workers: int = 1) -> EvalReport:
    """Accuracy at every iteration budget for each trial plus a mean +/- stderr summary row."""
    if isinstance(trials, Trial):
        trials = [trials]
    if not trials:
        raise ValueError("need at least one trial")
    t0 = time.time()
    report = EvalReport()
    n = len(dataset)
    per_m: dict[int, list[tuple[float, float]]] = {}
    for trial in trials:
        ts = time.time()
        ms, fixed, sel, hist = evaluate_trial(trial, dataset.inputs, dataset.targets, m_values,
                                              dataset.task, batch_size, workers)
        wall = time.time() - ts
        report.best_iteration_hist[trial.seed] = dict(sorted(hist.items()))
        for m, f, s in zip(ms, fixed, sel):
            acc, bacc = f / n, s / n
            per_m.setdefault(m, []).append((acc, bacc))
            report.rows.append(dict(model_id=model_id, seed=str(trial.seed), test_set=test_set, m=m,
                                    n_samples=n, accuracy=acc, stderr=None,
                                    best_confidence_accuracy=bacc, wall_seconds=wall))
    for m, vals in sorted(per_m.items()):
        accs = [a for a, _ in vals]
        baccs = [b for _, b in vals]
        report.rows.append(dict(model_id=model_id, seed="all", test_set=test_set, m=m, n_samples=n,
                                accuracy=float(np.mean(accs)), stderr=standard_error(accs),
                                best_confidence_accuracy=float(np.mean(baccs)),
                                wall_seconds=time.time() - t0))
    report.runtime = time.time() - t0
    return report


def dataset_accuracy(net: Net, dataset, m: int | None = None, normalize: bool = False,
                     batch_size: int = 200) -> float:
    """Exact-match accuracy at a single iteration budget (default: the train-time k)."""
    m = net.spec.iterations if m is None else m
    _, fixed, _, _ = evaluate_trial(Trial(net, 0, normalize), dataset.inputs, dataset.targets, [m],
                                    dataset.task, batch_size)
    return float(fixed[0] / len(dataset))


def model_id_for(net: Net) -> str:
    s = net.spec
    return f"{s.task}-{s.variant}-d{s.effective_depth}"

"""Per-iteration confidence heatmaps as binary PGM/PPM rasters.

Panels are written to one directory as ``panel_00_input``, one
``panel_XX_iterYY`` per iteration and a final ``panel_XX_target``. Pixel
values are floor(255 * p + 0.5) where p is the class-1 probability (the
confidence that a position is a 1 / on the path / part of the move).
Prefix traces also get ``composite.pgm``: an n x (m + 2) image with the
input in the left column, iterations in order, and the target on the right.

PGM header: ``P5\\n<width> <height>\\n255\\n``; PPM uses ``P6``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .evaluation import class1_prob
from .nets import IterationTrace


def quantize(p) -> np.ndarray:
    return np.floor(255.0 * np.asarray(p, dtype=np.float64) + 0.5).astype(np.uint8)


def write_pgm(path, img: np.ndarray):
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got {img.shape}")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def write_ppm(path, img: np.ndarray):
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM needs an (H, W, 3) array, got {img.shape}")
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (2-D result) or PPM ((H, W, 3) result) written by this module."""
    buf = Path(path).read_bytes()
    magic, dims, maxval, rest = buf.split(b"\n", 3)
    w, h = map(int, dims.split())
    if int(maxval) != 255:
        raise ValueError("only 8-bit rasters are supported")
    if magic == b"P5":
        return np.frombuffer(rest, np.uint8, w * h).reshape(h, w)
    if magic == b"P6":
        return np.frombuffer(rest, np.uint8, w * h * 3).reshape(h, w, 3)
    raise ValueError(f"unsupported raster type {magic!r}")


def _input_panel(x: np.ndarray, task: str):
    if task == "prefix":
        return quantize(np.clip(x[0], 0, 1))[:, None], "pgm"
    if task == "maze":
        return quantize(np.clip(np.moveaxis(x, 0, -1), 0, 1)), "ppm"
    # chess: white pieces bright, black pieces dark, empty squares mid-grey
    img = np.full((8, 8), 128, dtype=np.uint8)
    img[x[:6].sum(axis=0) > 0] = 255
    img[x[6:].sum(axis=0) > 0] = 0
    return img, "pgm"


def _as_panel(p: np.ndarray, task: str) -> np.ndarray:
    img = quantize(p)
    return img[:, None] if task == "prefix" else img


def emit_heatmaps(trace: IterationTrace, x, target, out_dir, task: str) -> list[Path]:
    """Write m + 2 panels (input, each iteration, target) and return their paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create heatmap directory {out_dir}: {exc}") from exc
    x = np.asarray(x)
    target = np.asarray(target)
    m = len(trace)
    paths = []
    img, kind = _input_panel(x, task)
    p = out_dir / f"panel_00_input.{kind}"
    (write_pgm if kind == "pgm" else write_ppm)(p, img)
    paths.append(p)
    probs = [class1_prob(np.asarray(z)[None])[0] for z in trace.logits]
    for i, pr in enumerate(probs, 1):
        p = out_dir / f"panel_{i:02d}_iter{i:02d}.pgm"
        write_pgm(p, _as_panel(pr, task))
        paths.append(p)
    p = out_dir / f"panel_{m + 1:02d}_target.pgm"
    write_pgm(p, _as_panel(target.astype(np.float64), task))
    paths.append(p)
    if task == "prefix":
        cols = [quantize(np.clip(x[0], 0, 1))] + [quantize(pr) for pr in probs] + [quantize(target)]
        write_pgm(out_dir / "composite.pgm", np.stack(cols, axis=1))
    return paths

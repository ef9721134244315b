"""Prefix sums modulo two over random bit strings."""

from __future__ import annotations

import numpy as np

from .dataset import Dataset


def prefix_target(bits) -> np.ndarray:
    """Running XOR along the last axis: out[i] = sum(bits[:i + 1]) mod 2."""
    b = np.asarray(bits)
    if b.size and not np.isin(b, (0, 1)).all():
        raise ValueError("bits must be 0 or 1")
    return (np.cumsum(b, axis=-1) % 2).astype(np.uint8)


def _random_bitstrings(n: int, count: int, rng: np.random.Generator, exclude=frozenset()) -> np.ndarray:
    total = 2**n
    if count + len(exclude) > total:
        raise ValueError(f"cannot draw {count} distinct {n}-bit strings (only {total - len(exclude)} available)")
    if total <= 4 * (count + len(exclude)):
        # dense regime: shuffle the whole space
        order = rng.permutation(total)
        picked = [int(v) for v in order if int(v) not in exclude][:count]
    else:
        seen = set()
        picked = []
        while len(picked) < count:
            v = int.from_bytes(rng.bytes((n + 7) // 8), "big") & (total - 1)
            if v in seen or v in exclude:
                continue
            seen.add(v)
            picked.append(v)
    shifts = np.arange(n - 1, -1, -1)
    if n <= 63:
        vals = np.array(picked, dtype=np.int64)
        return ((vals[:, None] >> shifts) & 1).astype(np.uint8)
    return np.array([[(v >> int(s)) & 1 for s in shifts] for v in picked], dtype=np.uint8)


def bits_to_int(bits) -> int:
    """Big-endian integer value of a bit row."""
    return int("".join(str(int(b)) for b in bits), 2)


def gen_prefix_dataset(n: int, count: int, seed: int, exclude: Dataset | None = None) -> Dataset:
    """`count` distinct uniform n-bit strings (MSB first) with running-XOR labels.

    Strings already present in `exclude` are never drawn, which gives a
    held-out split of the same length.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if count < 1:
        raise ValueError("count must be >= 1")
    banned = frozenset()
    if exclude is not None:
        banned = frozenset(bits_to_int(row[0]) for row in exclude.inputs.astype(np.uint8))
    rng = np.random.default_rng([seed, n])
    bits = _random_bitstrings(n, count, rng, banned)
    return Dataset(
        task="prefix",
        inputs=bits[:, None, :].astype(np.float32),
        targets=prefix_target(bits),
        difficulty=np.full(count, n, dtype=np.int32),
        params={"task": "prefix", "n": n, "count": count, "seed": seed, "excluded": len(banned)},
    )

"""Write a Lichess-schema puzzle CSV built from random python-chess playouts.

The real puzzle dump is not reachable from the build sandbox; this file has
the same columns and move conventions (the first move in ``Moves`` is the
opponent's setup move, the second is the first move of the solution), so the
loader and codec can be exercised on >= 10k rows.

    python scripts/make_lichess_sample.py --rows 12000 --out tests/data/lichess_sample.csv
"""

from __future__ import annotations

import argparse
import csv
import random

import chess

COLUMNS = ["PuzzleId", "FEN", "Moves", "Rating", "RatingDeviation", "Popularity", "NbPlays", "Themes",
           "GameUrl", "OpeningTags"]


def random_row(rng: random.Random, idx: int):
    board = chess.Board()
    for _ in range(rng.randint(8, 70)):
        moves = list(board.legal_moves)
        if not moves:
            return None
        board.push(rng.choice(moves))
    if board.is_game_over():
        return None
    fen = board.fen()
    line = []
    for _ in range(rng.choice((2, 2, 4, 4, 6))):
        moves = list(board.legal_moves)
        if not moves:
            break
        mv = rng.choice(moves)
        line.append(mv.uci())
        board.push(mv)
    if len(line) < 2:
        return None
    rating = min(3000, max(400, int(rng.gauss(1500, 450))))
    return {
        "PuzzleId": f"{idx:05x}",
        "FEN": fen,
        "Moves": " ".join(line),
        "Rating": rating,
        "RatingDeviation": rng.randint(70, 110),
        "Popularity": rng.randint(50, 100),
        "NbPlays": rng.randint(10, 5000),
        "Themes": "synthetic",
        "GameUrl": "",
        "OpeningTags": "",
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--rows", type=int, default=12_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        w.writeheader()
        n = 0
        while n < args.rows:
            row = random_row(rng, n)
            if row is not None:
                w.writerow(row)
                n += 1


if __name__ == "__main__":
    main()

"""FEN / UCI codec for chess puzzles and the Lichess CSV loader.

Planes are (12, 8, 8): channels 0-5 white P N B R Q K, 6-11 black
p n b r q k. Row 0 is rank 8, column 0 is file a, so the board reads
the way a FEN placement field is written.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset

log = logging.getLogger(__name__)

PIECES = "PNBRQKpnbrqk"
FILES = "abcdefgh"
RATING_SPLIT = 1385
REQUIRED_COLUMNS = ("FEN", "Moves", "Rating")


class FenError(ValueError):
    pass


class MoveError(ValueError):
    pass


class PromotionMove(MoveError):
    """Promotion moves are not representable by an origin/destination mask."""


@dataclass
class ChessPosition:
    planes: np.ndarray  # (12, 8, 8) uint8
    side_to_move: str  # "w" or "b"
    castling: str = "-"
    en_passant: str = "-"


def _parse_placement(placement: str) -> list[list[str]]:
    ranks = placement.split("/")
    if len(ranks) != 8:
        raise FenError(f"placement has {len(ranks)} ranks, expected 8")
    board = []
    for i, rank in enumerate(ranks):
        row = []
        for j, ch in enumerate(rank):
            if ch.isdigit():
                if ch in "09":
                    raise FenError(f"rank {8 - i} (char {j}): bad empty-square count {ch!r}")
                row.extend("." * int(ch))
            elif ch in PIECES:
                row.append(ch)
            else:
                raise FenError(f"rank {8 - i} (char {j}): unknown piece letter {ch!r}")
        if len(row) != 8:
            raise FenError(f"rank {8 - i} describes {len(row)} squares, expected 8")
        board.append(row)
    return board


def board_to_planes(board) -> np.ndarray:
    planes = np.zeros((12, 8, 8), dtype=np.uint8)
    for r in range(8):
        for c in range(8):
            p = board[r][c]
            if p != ".":
                planes[PIECES.index(p), r, c] = 1
    return planes


def planes_to_board(planes) -> list[list[str]]:
    planes = np.asarray(planes)
    if planes.shape != (12, 8, 8):
        raise ValueError(f"planes must be (12, 8, 8), got {planes.shape}")
    if (planes.sum(axis=0) > 1).any():
        raise ValueError("more than one piece on a square")
    board = [["."] * 8 for _ in range(8)]
    for ch, r, c in zip(*np.nonzero(planes)):
        board[r][c] = PIECES[ch]
    return board


def parse_fen(fen: str) -> ChessPosition:
    """Parse a FEN string; only the placement field is mandatory."""
    fields = fen.strip().split()
    if not fields:
        raise FenError("empty FEN")
    board = _parse_placement(fields[0])
    side = fields[1] if len(fields) > 1 else "w"
    if side not in ("w", "b"):
        raise FenError(f"side to move must be 'w' or 'b', got {side!r}")
    castling = fields[2] if len(fields) > 2 else "-"
    ep = fields[3] if len(fields) > 3 else "-"
    return ChessPosition(board_to_planes(board), side, castling, ep)


def planes_to_fen_placement(planes) -> str:
    rows = []
    for row in planes_to_board(planes):
        out, empty = "", 0
        for p in row:
            if p == ".":
                empty += 1
                continue
            if empty:
                out += str(empty)
                empty = 0
            out += p
        rows.append(out + (str(empty) if empty else ""))
    return "/".join(rows)


def square_index(name: str) -> tuple[int, int]:
    """Algebraic square -> (row, col) with row 0 = rank 8."""
    if len(name) != 2 or name[0] not in FILES or name[1] not in "12345678":
        raise MoveError(f"bad square name {name!r}")
    return 8 - int(name[1]), FILES.index(name[0])


def _split_uci(uci: str):
    uci = uci.strip()
    if len(uci) not in (4, 5):
        raise MoveError(f"bad UCI move {uci!r}")
    src, dst = square_index(uci[:2]), square_index(uci[2:4])
    promo = uci[4] if len(uci) == 5 else None
    if promo is not None and promo not in "qrbn":
        raise MoveError(f"bad promotion piece in {uci!r}")
    if src == dst:
        raise MoveError(f"origin equals destination in {uci!r}")
    return src, dst, promo


def encode_move(uci: str) -> np.ndarray:
    """8x8 mask with ones at the origin and destination squares."""
    src, dst, promo = _split_uci(uci)
    if promo is not None:
        raise PromotionMove(f"promotion {uci!r} cannot be encoded as a square pair")
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[src] = 1
    mask[dst] = 1
    return mask


def apply_uci(board: list[list[str]], uci: str) -> list[list[str]]:
    """Move a piece on a character board; handles castling, en passant and promotion.

    No legality check beyond requiring a piece on the origin square.
    """
    (r0, c0), (r1, c1), promo = _split_uci(uci)
    board = [row[:] for row in board]
    piece = board[r0][c0]
    if piece == ".":
        raise MoveError(f"no piece on origin square of {uci!r}")
    if piece in "Kk" and r0 == r1 and abs(c1 - c0) == 2:
        rook_from, rook_to = (7, 5) if c1 > c0 else (0, 3)
        board[r0][rook_to] = board[r0][rook_from]
        board[r0][rook_from] = "."
    if piece in "Pp" and c0 != c1 and board[r1][c1] == ".":
        board[r0][c1] = "."
    board[r0][c0] = "."
    if promo:
        piece = promo.upper() if piece.isupper() else promo
    board[r1][c1] = piece
    return board


@dataclass
class ChessPuzzle:
    planes: np.ndarray
    target: np.ndarray
    rating: int
    side_to_move: str


def puzzle_from_row(fen: str, moves: str, rating) -> ChessPuzzle:
    """Lichess rows list the opponent's setup move first; the solution is the second move."""
    pos = parse_fen(fen)
    tokens = moves.split()
    if len(tokens) < 2:
        raise MoveError(f"need a setup move and a solution move, got {moves!r}")
    board = apply_uci(planes_to_board(pos.planes), tokens[0])
    target = encode_move(tokens[1])
    side = "b" if pos.side_to_move == "w" else "w"
    return ChessPuzzle(board_to_planes(board), target, int(rating), side)


@dataclass
class LoadStats:
    rows: int = 0
    easy: int = 0
    hard: int = 0
    skipped: Counter = None

    @property
    def n_skipped(self) -> int:
        return sum(self.skipped.values())

    @property
    def skip_rate(self) -> float:
        return self.n_skipped / self.rows if self.rows else 0.0


def load_lichess_csv(path, rating_split: int = RATING_SPLIT, limit: int | None = None):
    """Read a Lichess puzzle export and split by rating.

    Ratings <= `rating_split` go to the easy split, the rest to the hard
    split. Returns (easy, hard, stats); skipped rows are counted by reason.
    """
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {path}: {exc}") from exc
    stats = LoadStats(skipped=Counter())
    buckets = {"easy": [], "hard": []}
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in REQUIRED_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for row in reader:
            if limit is not None and stats.rows >= limit:
                break
            stats.rows += 1
            try:
                puzzle = puzzle_from_row(row["FEN"], row["Moves"], row["Rating"])
            except PromotionMove:
                stats.skipped["promotion"] += 1
                continue
            except (FenError, MoveError, ValueError) as exc:
                stats.skipped[type(exc).__name__] += 1
                log.info("skipping row %d: %s", stats.rows, exc)
                continue
            buckets["easy" if puzzle.rating <= rating_split else "hard"].append(puzzle)
    stats.easy, stats.hard = len(buckets["easy"]), len(buckets["hard"])
    if stats.n_skipped:
        log.info("skipped %d of %d rows: %s", stats.n_skipped, stats.rows, dict(stats.skipped))

    def _pack(items, name):
        inputs = np.zeros((len(items), 12, 8, 8), dtype=np.float32)
        targets = np.zeros((len(items), 8, 8), dtype=np.uint8)
        for i, p in enumerate(items):
            inputs[i], targets[i] = p.planes, p.target
        ratings = np.array([p.rating for p in items], dtype=np.int32)
        return Dataset("chess", inputs, targets, ratings,
                       {"task": "chess", "source": str(path), "split": name, "rating_split": rating_split})

    return _pack(buckets["easy"], "easy"), _pack(buckets["hard"], "hard"), stats

from .chess import (ChessPosition, ChessPuzzle, FenError, MoveError, PromotionMove, apply_uci, encode_move,
                    load_lichess_csv, parse_fen, planes_to_fen_placement, puzzle_from_row)
from .dataset import Dataset, DatasetFormatError, load_dataset
from .maze import Maze, gen_maze, gen_maze_dataset, render_maze, solve_maze_bfs
from .prefix import gen_prefix_dataset, prefix_target

__all__ = [
    "ChessPosition", "ChessPuzzle", "Dataset", "DatasetFormatError", "FenError", "Maze", "MoveError",
    "PromotionMove", "apply_uci", "encode_move", "gen_maze", "gen_maze_dataset", "gen_prefix_dataset",
    "load_dataset", "load_lichess_csv", "parse_fen", "planes_to_fen_placement", "prefix_target",
    "puzzle_from_row", "render_maze", "solve_maze_bfs",
]

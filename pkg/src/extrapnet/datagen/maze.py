"""Perfect mazes from randomized depth-first search, labelled by BFS."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset

CANVAS = 32

_DIRS = ((0, 1), (1, 0), (0, -1), (-1, 0))


@dataclass(frozen=True)
class Maze:
    """Square grid of cells.

    open_right[r, c] means no wall between (r, c) and (r, c + 1);
    open_down[r, c] means no wall between (r, c) and (r + 1, c).
    """

    n: int
    open_right: np.ndarray
    open_down: np.ndarray
    start: tuple[int, int]
    goal: tuple[int, int]

    def is_open(self, a, b) -> bool:
        (r0, c0), (r1, c1) = sorted((tuple(a), tuple(b)))
        if r0 == r1 and c1 == c0 + 1:
            return bool(self.open_right[r0, c0])
        if c0 == c1 and r1 == r0 + 1:
            return bool(self.open_down[r0, c0])
        return False

    def neighbors(self, cell):
        r, c = cell
        for dr, dc in _DIRS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < self.n and 0 <= nc < self.n and self.is_open(cell, (nr, nc)):
                yield nr, nc

    @property
    def n_passages(self) -> int:
        return int(self.open_right.sum() + self.open_down.sum())

    def key(self) -> bytes:
        """Byte identity used for duplicate detection."""
        return self.open_right.tobytes() + self.open_down.tobytes() + bytes(self.start + self.goal)


def gen_maze(n_cells: int, seed) -> Maze:
    """Randomized DFS from a random cell; start and goal are distinct uniform cells."""
    if n_cells < 2:
        raise ValueError(f"maze needs at least 2x2 cells, got {n_cells}")
    rng = np.random.default_rng(seed)
    n = n_cells
    right = np.zeros((n, n - 1), dtype=bool)
    down = np.zeros((n - 1, n), dtype=bool)
    visited = np.zeros((n, n), dtype=bool)
    first = divmod(int(rng.integers(n * n)), n)
    visited[first] = True
    stack = [first]
    while stack:
        r, c = stack[-1]
        options = [(r + dr, c + dc) for dr, dc in _DIRS
                   if 0 <= r + dr < n and 0 <= c + dc < n and not visited[r + dr, c + dc]]
        if not options:
            stack.pop()
            continue
        nr, nc = options[int(rng.integers(len(options)))]
        if nr == r:
            right[r, min(c, nc)] = True
        else:
            down[min(r, nr), c] = True
        visited[nr, nc] = True
        stack.append((nr, nc))
    a, b = rng.choice(n * n, size=2, replace=False)
    return Maze(n, right, down, divmod(int(a), n), divmod(int(b), n))


def solve_maze_bfs(maze: Maze) -> list[tuple[int, int]]:
    """Shortest start-to-goal cell path, endpoints included."""
    parent = {maze.start: None}
    queue = deque([maze.start])
    while queue:
        cell = queue.popleft()
        if cell == maze.goal:
            break
        for nxt in maze.neighbors(cell):
            if nxt not in parent:
                parent[nxt] = cell
                queue.append(nxt)
    if maze.goal not in parent:
        raise RuntimeError("goal unreachable: maze is not connected")
    path = []
    cell = maze.goal
    while cell is not None:
        path.append(cell)
        cell = parent[cell]
    return path[::-1]


def render_maze(maze: Maze, canvas: int | None = CANVAS) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize to a (3, S, S) RGB image and an (S, S) path mask.

    Cell (r, c) sits at pixel (2r + 1, 2c + 1); the pixel between two cells
    is white when they are connected. Walls and the padding beyond the
    (2n + 1)-pixel maze are black. `canvas=None` renders without padding.
    """
    size = 2 * maze.n + 1
    canvas = size if canvas is None else canvas
    if size > canvas:
        raise ValueError(f"{maze.n}x{maze.n} maze needs {size} pixels, canvas is {canvas}")
    img = np.zeros((3, canvas, canvas), dtype=np.float32)
    img[:, 1:size:2, 1:size:2] = 1.0
    rr, cc = np.nonzero(maze.open_right)
    img[:, 2 * rr + 1, 2 * cc + 2] = 1.0
    rr, cc = np.nonzero(maze.open_down)
    img[:, 2 * rr + 2, 2 * cc + 1] = 1.0
    sr, sc = maze.start
    gr, gc = maze.goal
    img[:, 2 * sr + 1, 2 * sc + 1] = (1.0, 0.0, 0.0)
    img[:, 2 * gr + 1, 2 * gc + 1] = (0.0, 1.0, 0.0)

    mask = np.zeros((canvas, canvas), dtype=np.uint8)
    path = solve_maze_bfs(maze)
    for (r0, c0), (r1, c1) in zip(path, path[1:]):
        mask[r0 + r1 + 1, c0 + c1 + 1] = 1
    for r, c in path:
        mask[2 * r + 1, 2 * c + 1] = 1
    return img, mask


def maze_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, index])


def gen_maze_dataset(n_cells: int, count: int, seed: int, canvas: int | None = CANVAS) -> Dataset:
    if count < 1:
        raise ValueError("count must be >= 1")
    size = 2 * n_cells + 1 if canvas is None else canvas
    inputs = np.zeros((count, 3, size, size), dtype=np.float32)
    targets = np.zeros((count, size, size), dtype=np.uint8)
    for i in range(count):
        inputs[i], targets[i] = render_maze(gen_maze(n_cells, maze_seed(seed, i)), canvas)
    return Dataset("maze", inputs, targets, np.full(count, n_cells, dtype=np.int32),
                   {"task": "maze", "n": n_cells, "count": count, "seed": seed, "canvas": canvas})

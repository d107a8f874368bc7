"""Exact solvers used as oracles.

* Sokoban: breadth-first search over (player, boxes) configurations.
* FrozenLake: BFS for deterministic ice, value iteration for slippery ice.
* Sudoku: backtracking completion.
"""

from __future__ import annotations

import random
from collections import deque
from functools import lru_cache
from typing import Optional

from .envs import (
    DIRECTIONS,
    Direction,
    EnvKind,
    EpisodeState,
    LakeBoard,
    SokobanBoard,
    SudokuBoard,
    SudokuMove,
    _PERPENDICULAR,
    _add,
    _inside,
    lake_move,
    sokoban_move,
    sudoku_consistent,
)
from .errors import BudgetExceeded

DEFAULT_NODE_BUDGET = 1_000_000
BELLMAN_TOL = 1e-10


def _walk_back(parents: dict, node) -> list:
    plan = []
    while parents[node] is not None:
        node, action = parents[node]
        plan.append(action)
    plan.reverse()
    return plan


def solve_sokoban(board: SokobanBoard, node_budget: int = DEFAULT_NODE_BUDGET,
                  max_depth: Optional[int] = None) -> Optional[list[Direction]]:
    """Shortest move sequence that puts every box on a target.

    Returns ``None`` when no solution exists (within ``max_depth`` if given).
    Raises :class:`BudgetExceeded` after expanding ``node_budget`` nodes.
    """
    start = (board.player, board.boxes)
    if board.boxes == board.targets:
        return []
    parents = {start: None}
    depth = {start: 0}
    queue = deque([start])
    expanded = 0
    while queue:
        node = queue.popleft()
        expanded += 1
        if expanded > node_budget:
            raise BudgetExceeded(f"Sokoban BFS exceeded {node_budget} nodes")
        if max_depth is not None and depth[node] >= max_depth:
            continue
        cur = SokobanBoard(board.size, board.walls, node[0], node[1], board.targets)
        for d in DIRECTIONS:
            nxt = sokoban_move(cur, d)
            key = (nxt.player, nxt.boxes)
            if key in parents:
                continue
            parents[key] = (node, d)
            depth[key] = depth[node] + 1
            if nxt.boxes == board.targets:
                return _walk_back(parents, key)
            queue.append(key)
    return None


def solve_lake_bfs(board: LakeBoard, node_budget: int = DEFAULT_NODE_BUDGET) -> Optional[list[Direction]]:
    """Shortest hole-free path under deterministic moves."""
    if board.player == board.goal:
        return []
    parents = {board.player: None}
    queue = deque([board.player])
    expanded = 0
    while queue:
        p = queue.popleft()
        expanded += 1
        if expanded > node_budget:
            raise BudgetExceeded(f"FrozenLake BFS exceeded {node_budget} nodes")
        for d in DIRECTIONS:
            q = _add(p, d.delta)
            if not _inside(q, board.size) or q in board.holes or q in parents:
                continue
            parents[q] = (p, d)
            if q == board.goal:
                return _walk_back(parents, q)
            queue.append(q)
    return None


def _lake_outcomes(board: LakeBoard, pos, d: Direction, probs):
    first, second = _PERPENDICULAR[d]
    here = LakeBoard(board.size, board.holes, board.goal, pos)
    return [
        (p, lake_move(here, taken).player)
        for p, taken in zip(probs, (d, first, second))
        if p > 0
    ]


def lake_values(board: LakeBoard, probs=(1 / 3, 1 / 3, 1 / 3), tol: float = BELLMAN_TOL,
                max_iter: int = 100_000) -> tuple[dict, float]:
    """Success probability of every cell under the optimal slippery policy.

    Returns ``(values, residual)`` where ``residual`` is the final Bellman
    residual (sup norm). Values do not depend on the player's cell, so
    results are cached per layout.
    """
    values, residual = _lake_values(board.size, board.holes, board.goal, tuple(probs), tol, max_iter)
    return dict(values), residual


@lru_cache(maxsize=256)
def _lake_values(size, holes, goal, probs, tol, max_iter):
    board = LakeBoard(size, holes, goal, goal)
    n = board.size
    cells = [(r, c) for r in range(n) for c in range(n)]
    values = {p: 0.0 for p in cells}
    values[board.goal] = 1.0
    live = [p for p in cells if p != board.goal and p not in board.holes]
    kernel = {p: [_lake_outcomes(board, p, d, probs) for d in DIRECTIONS] for p in live}
    residual = 0.0
    for _ in range(max_iter):
        residual = 0.0
        for p in live:
            best = max(sum(prob * values[q] for prob, q in outs) for outs in kernel[p])
            residual = max(residual, abs(best - values[p]))
            values[p] = best
        if residual < tol:
            break
    return values, residual


def _goal_distances(board: LakeBoard) -> dict:
    dist = {board.goal: 0}
    queue = deque([board.goal])
    while queue:
        p = queue.popleft()
        for d in DIRECTIONS:
            q = _add(p, d.delta)
            if _inside(q, board.size) and q not in dist and q not in board.holes:
                dist[q] = dist[p] + 1
                queue.append(q)
    return dist


def lake_greedy_action(board: LakeBoard, values: dict, probs, pos=None) -> Direction:
    """Value-maximizing action; ties go to the move that closes the BFS distance."""
    pos = board.player if pos is None else pos
    dist = _goal_distances(board)
    far = board.size * board.size + 1

    def score(d):
        q = sum(prob * values[t] for prob, t in _lake_outcomes(board, pos, d, probs))
        step_to = lake_move(LakeBoard(board.size, board.holes, board.goal, pos), d).player
        return (round(q, 12), -dist.get(step_to, far))

    return max(DIRECTIONS, key=score)


def solve_lake_slippery(board: LakeBoard, horizon: int, probs=(1 / 3, 1 / 3, 1 / 3)) -> list[Direction]:
    """Greedy actions along the intended path, at most ``horizon`` long."""
    values, _ = lake_values(board, probs)
    plan = []
    pos = board.player
    while len(plan) < horizon and pos != board.goal and pos not in board.holes:
        d = lake_greedy_action(board, values, probs, pos)
        plan.append(d)
        pos = lake_move(LakeBoard(board.size, board.holes, board.goal, pos), d).player
    return plan


def complete_sudoku(cells, rng: Optional[random.Random] = None) -> Optional[tuple]:
    """Backtracking completion of a partial grid, or ``None`` if impossible.

    With ``rng`` the candidate order is shuffled, which turns this into a
    random complete-grid generator when ``cells`` is empty.
    """
    grid = [list(row) for row in cells]
    n = len(grid)
    if not sudoku_consistent(grid):
        return None
    empties = [(r, c) for r in range(n) for c in range(n) if grid[r][c] == 0]

    def ok(r, c, v):
        if v in grid[r] or any(grid[i][c] == v for i in range(n)):
            return False
        br, bc = r - r % 2, c - c % 2
        return all(grid[br + i][bc + j] != v for i in range(2) for j in range(2))

    def fill(i):
        if i == len(empties):
            return True
        r, c = empties[i]
        values = list(range(1, n + 1))
        if rng is not None:
            rng.shuffle(values)
        for v in values:
            if ok(r, c, v):
                grid[r][c] = v
                if fill(i + 1):
                    return True
                grid[r][c] = 0
        return False

    if not fill(0):
        return None
    return tuple(tuple(row) for row in grid)


def solve_sudoku(board: SudokuBoard) -> Optional[list[SudokuMove]]:
    """Fills for every empty cell, row-major, from a backtracking completion."""
    solution = complete_sudoku(board.cells)
    if solution is None:
        return None
    return [SudokuMove(r, c, solution[r - 1][c - 1]) for r, c in board.empties()]


def solve(state: EpisodeState, node_budget: int = DEFAULT_NODE_BUDGET,
          horizon: Optional[int] = None) -> Optional[list]:
    """Dispatch to the kind-specific solver. ``[]`` if already solved."""
    board = state.board
    kind = state.kind
    if kind is EnvKind.SOKOBAN:
        return solve_sokoban(board, node_budget)
    if kind is EnvKind.FROZENLAKE:
        if state.config.slippery:
            h = horizon if horizon is not None else state.config.max_turns
            return solve_lake_slippery(board, h, state.config.slip_probs)
        return solve_lake_bfs(board, node_budget)
    return solve_sudoku(board)

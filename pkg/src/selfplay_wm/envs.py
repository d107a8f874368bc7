"""Grid-world environments: Sokoban, FrozenLake and 4x4 Sudoku.

States are immutable; :func:`step` returns a new :class:`EpisodeState`.
All randomness is carried inside the state as an integer ``rng_state`` so a
step is a pure function of its inputs, even in slippery mode.

Coordinates are ``(row, col)`` zero-indexed from the top-left corner for
Sokoban and FrozenLake. Sudoku moves use 1-indexed rows and columns.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple, Optional, Sequence, Union

from .errors import BudgetExceeded, ConfigError, GenerationExhausted, SteppedTerminal

Pos = tuple[int, int]

GENERATION_ATTEMPTS = 1000


class EnvKind(str, Enum):
    SOKOBAN = "sokoban"
    FROZENLAKE = "frozenlake"
    SUDOKU = "sudoku"

    @classmethod
    def parse(cls, value) -> "EnvKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown environment kind {value!r}") from None


class Direction(str, Enum):
    UP = "Up"
    DOWN = "Down"
    LEFT = "Left"
    RIGHT = "Right"

    @property
    def delta(self) -> Pos:
        return _DELTAS[self]

    def __str__(self) -> str:
        return self.value


_DELTAS = {
    Direction.UP: (-1, 0),
    Direction.DOWN: (1, 0),
    Direction.LEFT: (0, -1),
    Direction.RIGHT: (0, 1),
}
DIRECTIONS = (Direction.UP, Direction.DOWN, Direction.LEFT, Direction.RIGHT)
_PERPENDICULAR = {
    Direction.UP: (Direction.LEFT, Direction.RIGHT),
    Direction.DOWN: (Direction.LEFT, Direction.RIGHT),
    Direction.LEFT: (Direction.UP, Direction.DOWN),
    Direction.RIGHT: (Direction.UP, Direction.DOWN),
}


class SudokuMove(NamedTuple):
    """A fill ``value`` at 1-indexed ``(row, col)``."""

    row: int
    col: int
    value: int

    def __str__(self) -> str:
        return f"{self.row},{self.col},{self.value}"


Action = Union[Direction, SudokuMove]


def action_space(kind: EnvKind, size: int = 4) -> list:
    if kind is EnvKind.SUDOKU:
        return [
            SudokuMove(r, c, v)
            for r in range(1, size + 1)
            for c in range(1, size + 1)
            for v in range(1, size + 1)
        ]
    return list(DIRECTIONS)


@dataclass(frozen=True)
class RewardScheme:
    step_penalty: float = -0.1
    success_bonus: float = 10.0
    progress_bonus: float = 1.0

    def to_dict(self) -> dict:
        return {
            "step_penalty": self.step_penalty,
            "success_bonus": self.success_bonus,
            "progress_bonus": self.progress_bonus,
        }


_DEFAULT_SIZE = {EnvKind.SOKOBAN: 6, EnvKind.FROZENLAKE: 4, EnvKind.SUDOKU: 4}
_DEFAULT_TURNS = {EnvKind.SOKOBAN: 10, EnvKind.FROZENLAKE: 10, EnvKind.SUDOKU: 5}


@dataclass(frozen=True)
class EnvConfig:
    """Environment parameters.

    Fields irrelevant to ``kind`` are ignored. ``grid_size`` and
    ``max_turns`` default per kind when left as ``None``.

    Sokoban generation pulls boxes backwards from a solved layout for
    ``reverse_steps`` moves; ``max_solution_length`` additionally rejects
    instances whose shortest solution is longer than that.
    """

    kind: EnvKind = EnvKind.SOKOBAN
    grid_size: Optional[int] = None
    num_boxes: int = 1
    hole_density: float = 0.2
    slippery: bool = True
    slip_probs: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    num_empty_cells: int = 6
    max_turns: Optional[int] = None
    rewards: RewardScheme = field(default_factory=RewardScheme)
    reverse_steps: int = 30
    max_solution_length: Optional[int] = None

    def __post_init__(self):
        kind = EnvKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.grid_size is None:
            object.__setattr__(self, "grid_size", _DEFAULT_SIZE[kind])
        if self.max_turns is None:
            object.__setattr__(self, "max_turns", _DEFAULT_TURNS[kind])
        if isinstance(self.rewards, dict):
            object.__setattr__(self, "rewards", RewardScheme(**self.rewards))
        object.__setattr__(self, "slip_probs", tuple(float(p) for p in self.slip_probs))
        self.validate()

    def validate(self) -> None:
        n = self.grid_size
        if self.max_turns < 1:
            raise ConfigError("max_turns must be >= 1")
        if self.kind is EnvKind.SUDOKU:
            if n != 4:
                raise ConfigError("Sudoku grid_size must be 4")
            if not 0 <= self.num_empty_cells <= 16:
                raise ConfigError("num_empty_cells must lie in [0, 16]")
            return
        if n < 4:
            raise ConfigError("grid_size must be >= 4")
        if self.kind is EnvKind.SOKOBAN:
            interior = (n - 2) ** 2
            if self.num_boxes < 1 or 2 * self.num_boxes + 1 > interior:
                raise ConfigError(f"{self.num_boxes} boxes do not fit a {n}x{n} room")
            if self.reverse_steps < 1:
                raise ConfigError("reverse_steps must be >= 1")
        else:
            if not 0.0 <= self.hole_density <= 1.0:
                raise ConfigError("hole_density must lie in [0, 1]")
            if len(self.slip_probs) != 3 or abs(sum(self.slip_probs) - 1.0) > 1e-9:
                raise ConfigError("slip_probs must be three probabilities summing to 1")
            if min(self.slip_probs) < 0:
                raise ConfigError("slip_probs must be nonnegative")

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "grid_size": self.grid_size, "max_turns": self.max_turns,
             "rewards": self.rewards.to_dict()}
        if self.kind is EnvKind.SOKOBAN:
            d.update(num_boxes=self.num_boxes, reverse_steps=self.reverse_steps,
                     max_solution_length=self.max_solution_length)
        elif self.kind is EnvKind.FROZENLAKE:
            d.update(hole_density=self.hole_density, slippery=self.slippery,
                     slip_probs=list(self.slip_probs))
        else:
            d.update(num_empty_cells=self.num_empty_cells)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        if "slip_probs" in d:
            d["slip_probs"] = tuple(d["slip_probs"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown env config keys: {sorted(unknown)}")
        return cls(**d)


# -- payloads -----------------------------------------------------------------


@dataclass(frozen=True)
class SokobanBoard:
    size: int
    walls: frozenset
    player: Pos
    boxes: frozenset
    targets: frozenset


@dataclass(frozen=True)
class LakeBoard:
    size: int
    holes: frozenset
    goal: Pos
    player: Pos


@dataclass(frozen=True)
class SudokuBoard:
    cells: tuple  # 4 rows of 4 ints, 0 = empty
    solution: Optional[tuple] = field(default=None, compare=False)

    @property
    def size(self) -> int:
        return len(self.cells)

    def empties(self) -> list[Pos]:
        """Empty cells as 1-indexed (row, col), row-major."""
        return [
            (r + 1, c + 1)
            for r, row in enumerate(self.cells)
            for c, v in enumerate(row)
            if v == 0
        ]


Board = Union[SokobanBoard, LakeBoard, SudokuBoard]


@dataclass(frozen=True)
class EpisodeState:
    config: EnvConfig
    board: Board
    turn: int = 0
    terminal: bool = False
    success: bool = False
    rng_state: int = 0

    @property
    def kind(self) -> EnvKind:
        return self.config.kind


@dataclass(frozen=True)
class StepResult:
    next_state: EpisodeState
    reward: float
    done: bool
    actions_executed: int
    actions_effective: int
    resolved: tuple = ()  # directions actually taken (FrozenLake slips)


# -- rendering ----------------------------------------------------------------


def render_symbols(state_or_board) -> str:
    """Render the symbol grid. Rows joined by ``\\n``, no trailing newline."""
    board = state_or_board.board if isinstance(state_or_board, EpisodeState) else state_or_board
    if isinstance(board, SokobanBoard):
        return "\n".join(
            "".join(_sokoban_cell(board, (r, c)) for c in range(board.size))
            for r in range(board.size)
        )
    if isinstance(board, LakeBoard):
        return "\n".join(
            "".join(_lake_cell(board, (r, c)) for c in range(board.size))
            for r in range(board.size)
        )
    return "| " + " | ".join(
        " ".join(str(v) if v else "." for v in row) for row in board.cells
    )


def _sokoban_cell(b: SokobanBoard, p: Pos) -> str:
    if p in b.walls:
        return "#"
    on_target = p in b.targets
    if p in b.boxes:
        return "√" if on_target else "X"
    if p == b.player:
        return "S" if on_target else "P"
    return "O" if on_target else "_"


def _lake_cell(b: LakeBoard, p: Pos) -> str:
    if p == b.player:
        if p == b.goal:
            return "√"
        return "X" if p in b.holes else "P"
    if p in b.holes:
        return "O"
    if p == b.goal:
        return "G"
    return "_"


# Alphabet sizes of one grid cell; the random-guess perplexity of a cell.
CELL_ALPHABETS = {
    EnvKind.SOKOBAN: "#_O√XPS",
    EnvKind.FROZENLAKE: "_OGPX√",
    EnvKind.SUDOKU: ".1234",
}


def grid_units(kind: EnvKind, text: str) -> list[str]:
    """Split a rendered grid into its cell symbols, dropping delimiters."""
    if kind is EnvKind.SUDOKU:
        return [tok for tok in text.split() if tok != "|"]
    return [ch for ch in text if ch != "\n"]


def board_from_symbols(kind: EnvKind, text: str) -> Board:
    """Inverse of :func:`render_symbols`."""
    kind = EnvKind.parse(kind)
    if kind is EnvKind.SUDOKU:
        vals = [0 if tok == "." else int(tok) for tok in grid_units(kind, text)]
        if len(vals) != 16:
            raise ValueError(f"expected 16 Sudoku cells, got {len(vals)}")
        return SudokuBoard(tuple(tuple(vals[i * 4:(i + 1) * 4]) for i in range(4)))
    rows = text.split("\n")
    size = len(rows)
    if any(len(row) != size for row in rows):
        raise ValueError("grid is not square")
    cells = {(r, c): ch for r, row in enumerate(rows) for c, ch in enumerate(row)}
    if kind is EnvKind.SOKOBAN:
        walls = frozenset(p for p, ch in cells.items() if ch == "#")
        boxes = frozenset(p for p, ch in cells.items() if ch in "X√")
        targets = frozenset(p for p, ch in cells.items() if ch in "O√S")
        players = [p for p, ch in cells.items() if ch in "PS"]
        if len(players) != 1:
            raise ValueError("Sokoban grid needs exactly one player")
        return SokobanBoard(size, walls, players[0], boxes, targets)
    holes = frozenset(p for p, ch in cells.items() if ch in "OX")
    players = [p for p, ch in cells.items() if ch in "PX√"]
    goals = [p for p, ch in cells.items() if ch in "G√"]
    if len(players) != 1 or len(goals) != 1:
        raise ValueError("FrozenLake grid needs exactly one player and one goal")
    return LakeBoard(size, holes, goals[0], players[0])


def state_from_symbols(config: EnvConfig, text: str, *, rng_state: int = 0) -> EpisodeState:
    """Build an initial state from a rendered grid (used for worked examples)."""
    board = board_from_symbols(config.kind, text)
    if isinstance(board, SudokuBoard):
        from .solvers import complete_sudoku

        board = SudokuBoard(board.cells, complete_sudoku(board.cells))
    success = board_success(board)
    return EpisodeState(config, board, 0, terminal=success or board_dead(board),
                        success=success, rng_state=rng_state)


# -- success / consistency ----------------------------------------------------


def sudoku_consistent(cells) -> bool:
    """No duplicate nonzero value in any row, column or 2x2 box."""
    n = len(cells)
    groups = [list(row) for row in cells]
    groups += [[cells[r][c] for r in range(n)] for c in range(n)]
    groups += [
        [cells[br + r][bc + c] for r in range(2) for c in range(2)]
        for br in range(0, n, 2)
        for bc in range(0, n, 2)
    ]
    for g in groups:
        filled = [v for v in g if v]
        if len(filled) != len(set(filled)):
            return False
    return True


def board_success(board: Board) -> bool:
    if isinstance(board, SokobanBoard):
        return board.boxes == board.targets
    if isinstance(board, LakeBoard):
        return board.player == board.goal
    return all(all(row) for row in board.cells) and sudoku_consistent(board.cells)


def is_success(state: EpisodeState) -> bool:
    return board_success(state.board)


def board_dead(board: Board) -> bool:
    return isinstance(board, LakeBoard) and board.player in board.holes


def state_key(state_or_board) -> str:
    """Canonical key of the kind-specific payload."""
    board = state_or_board.board if isinstance(state_or_board, EpisodeState) else state_or_board
    if isinstance(board, SudokuBoard):
        return "".join(str(v) for row in board.cells for v in row)
    return render_symbols(board)


def key_is_success(kind: EnvKind, key: str) -> bool:
    """Success test on a :func:`state_key` string alone."""
    if kind is EnvKind.SOKOBAN:
        return "X" not in key
    if kind is EnvKind.FROZENLAKE:
        return "√" in key
    return "0" not in key and sudoku_consistent(
        tuple(tuple(int(ch) for ch in key[i * 4:(i + 1) * 4]) for i in range(4)))


# -- dynamics -----------------------------------------------------------------


def _add(p: Pos, d: Pos) -> Pos:
    return (p[0] + d[0], p[1] + d[1])


def _inside(p: Pos, size: int) -> bool:
    return 0 <= p[0] < size and 0 <= p[1] < size


def sokoban_move(board: SokobanBoard, direction: Direction) -> SokobanBoard:
    """One primitive move with push semantics. Returns ``board`` itself if blocked."""
    d = direction.delta
    nxt = _add(board.player, d)
    if nxt in board.walls or not _inside(nxt, board.size):
        return board
    if nxt in board.boxes:
        beyond = _add(nxt, d)
        if beyond in board.walls or beyond in board.boxes or not _inside(beyond, board.size):
            return board
        boxes = (board.boxes - {nxt}) | {beyond}
        return replace(board, player=nxt, boxes=frozenset(boxes))
    return replace(board, player=nxt)


def lake_move(board: LakeBoard, direction: Direction) -> LakeBoard:
    nxt = _add(board.player, direction.delta)
    if not _inside(nxt, board.size):
        return board
    return replace(board, player=nxt)


def sudoku_fill(board: SudokuBoard, move: SudokuMove) -> SudokuBoard:
    """Write ``move`` if the cell is empty and the grid stays consistent."""
    n = board.size
    r, c, v = move.row - 1, move.col - 1, move.value
    if not (0 <= r < n and 0 <= c < n and 1 <= v <= n) or board.cells[r][c]:
        return board
    cells = [list(row) for row in board.cells]
    cells[r][c] = v
    if not sudoku_consistent(cells):
        return board
    return replace(board, cells=tuple(tuple(row) for row in cells))


def resolve_slip(direction: Direction, probs: Sequence[float], u: float) -> Direction:
    """Map a uniform draw ``u`` to intended / first / second perpendicular."""
    first, second = _PERPENDICULAR[direction]
    if u < probs[0]:
        return direction
    if u < probs[0] + probs[1]:
        return first
    return second


def _coerce_action(kind: EnvKind, action) -> Action:
    if kind is EnvKind.SUDOKU:
        if isinstance(action, SudokuMove):
            return action
        return SudokuMove(*action)
    if isinstance(action, Direction):
        return action
    return Direction(str(action).capitalize())


def step(state: EpisodeState, actions: Sequence[Action]) -> StepResult:
    """Apply ``actions`` in order as one agent turn.

    Execution stops at the first terminal board; remaining actions are
    discarded. Reaching ``max_turns`` also ends the episode (unsuccessfully
    unless the board is solved).
    """
    if state.terminal:
        raise SteppedTerminal("step() called on a terminal state")
    cfg = state.config
    rewards = cfg.rewards
    rng = random.Random(state.rng_state)
    board = state.board
    reward = 0.0
    executed = effective = 0
    resolved = []
    dead = False
    for raw in actions:
        action = _coerce_action(cfg.kind, raw)
        executed += 1
        reward += rewards.step_penalty
        if isinstance(board, SokobanBoard):
            new = sokoban_move(board, action)
            delta = len(new.boxes & new.targets) - len(board.boxes & board.targets)
            reward += rewards.progress_bonus * delta
        elif isinstance(board, LakeBoard):
            taken = action
            if cfg.slippery:
                taken = resolve_slip(action, cfg.slip_probs, rng.random())
            resolved.append(taken)
            new = lake_move(board, taken)
        else:
            new = sudoku_fill(board, action)
            if new is not board:
                reward += rewards.progress_bonus
        if new != board:
            effective += 1
        board = new
        if board_success(board):
            reward += rewards.success_bonus
            break
        if board_dead(board):
            dead = True
            break
    success = board_success(board)
    turn = state.turn + 1
    terminal = success or dead or turn >= cfg.max_turns
    nxt = EpisodeState(cfg, board, turn, terminal, success, rng.getrandbits(64))
    return StepResult(nxt, reward, terminal, executed, effective, tuple(resolved))


def reseed(state: EpisodeState, seed: int) -> EpisodeState:
    """Same board, fresh dynamics stream (used for independent rollouts)."""
    return replace(state, rng_state=random.Random(seed).getrandbits(64))


# -- generation ---------------------------------------------------------------


def generate(config: EnvConfig, seed: int) -> EpisodeState:
    """Seeded, solvable initial state. Same ``(config, seed)`` -> same state."""
    rng = random.Random(seed)
    builder = {
        EnvKind.SOKOBAN: _gen_sokoban,
        EnvKind.FROZENLAKE: _gen_lake,
        EnvKind.SUDOKU: _gen_sudoku,
    }[config.kind]
    for _ in range(GENERATION_ATTEMPTS):
        board = builder(config, rng)
        if board is not None:
            success = board_success(board)
            return EpisodeState(config, board, 0, terminal=success, success=success,
                                rng_state=rng.getrandbits(64))
    raise GenerationExhausted(
        f"no valid {config.kind.value} instance after {GENERATION_ATTEMPTS} attempts (seed={seed})"
    )


def _carve_room(n: int, rng: random.Random, min_floor: int) -> set:
    interior = [(r, c) for r in range(1, n - 1) for c in range(1, n - 1)]
    floor = set()
    pos = rng.choice(interior)
    d = rng.choice(DIRECTIONS).delta
    steps = 3 * len(interior)
    for _ in range(steps):
        floor.add(pos)
        if rng.random() < 0.35:
            d = rng.choice(DIRECTIONS).delta
        nxt = _add(pos, d)
        if 1 <= nxt[0] < n - 1 and 1 <= nxt[1] < n - 1:
            pos = nxt
    if len(floor) < min_floor:
        return None
    return floor


def _gen_sokoban(cfg: EnvConfig, rng: random.Random) -> Optional[SokobanBoard]:
    from .solvers import solve_sokoban

    n, k = cfg.grid_size, cfg.num_boxes
    floor = _carve_room(n, rng, max(2 * k + 1, math.ceil(0.4 * (n - 2) ** 2)))
    if floor is None:
        return None
    cells = sorted(floor)
    walls = frozenset((r, c) for r in range(n) for c in range(n)) - floor
    targets = frozenset(rng.sample(cells, k))
    boxes = set(targets)
    player = rng.choice([p for p in cells if p not in boxes])
    # Reverse play: the player walks backwards, sometimes dragging a box.
    for _ in range(cfg.reverse_steps):
        d = rng.choice(DIRECTIONS).delta
        nxt = _add(player, d)
        if nxt not in floor or nxt in boxes:
            continue
        behind = (player[0] - d[0], player[1] - d[1])
        if behind in boxes and rng.random() < 0.8:
            boxes.remove(behind)
            boxes.add(player)
        player = nxt
    board = SokobanBoard(n, walls, player, frozenset(boxes), targets)
    if board_success(board):
        return None
    if cfg.max_solution_length is not None:
        try:
            plan = solve_sokoban(board, node_budget=200_000, max_depth=cfg.max_solution_length)
        except BudgetExceeded:
            plan = None
        if plan is None:
            return None
    return board


def _bfs_reachable(board: LakeBoard) -> bool:
    seen = {board.player}
    queue = deque([board.player])
    while queue:
        p = queue.popleft()
        if p == board.goal:
            return True
        for d in DIRECTIONS:
            q = _add(p, d.delta)
            if _inside(q, board.size) and q not in seen and q not in board.holes:
                seen.add(q)
                queue.append(q)
    return False


def _gen_lake(cfg: EnvConfig, rng: random.Random) -> Optional[LakeBoard]:
    n = cfg.grid_size
    cells = [(r, c) for r in range(n) for c in range(n)]
    player, goal = rng.sample(cells, 2)
    holes = frozenset(
        p for p in cells if p not in (player, goal) and rng.random() < cfg.hole_density
    )
    board = LakeBoard(n, holes, goal, player)
    return board if _bfs_reachable(board) else None


def _gen_sudoku(cfg: EnvConfig, rng: random.Random) -> SudokuBoard:
    from .solvers import complete_sudoku

    solution = complete_sudoku(((0,) * 4,) * 4, rng=rng)
    removed = set(rng.sample(range(16), cfg.num_empty_cells))
    cells = tuple(
        tuple(0 if r * 4 + c in removed else solution[r][c] for c in range(4)) for r in range(4)
    )
    return SudokuBoard(cells, solution)


def outcome_distribution(state: EpisodeState, action) -> list[tuple[float, Board]]:
    """All boards one primitive action can lead to, with probabilities."""
    cfg = state.config
    action = _coerce_action(cfg.kind, action)
    board = state.board
    if isinstance(board, SokobanBoard):
        return [(1.0, sokoban_move(board, action))]
    if isinstance(board, SudokuBoard):
        return [(1.0, sudoku_fill(board, action))]
    if not cfg.slippery:
        return [(1.0, lake_move(board, action))]
    first, second = _PERPENDICULAR[action]
    merged: dict = {}
    for p, d in zip(cfg.slip_probs, (action, first, second)):
        if p > 0:
            nb = lake_move(board, d)
            merged[nb] = merged.get(nb, 0.0) + p
    return [(p, b) for b, p in merged.items()]


def state_to_dict(state: EpisodeState) -> dict:
    d = {"grid": render_symbols(state), "turn": state.turn, "terminal": state.terminal,
         "success": state.success, "rng_state": state.rng_state}
    if isinstance(state.board, SudokuBoard) and state.board.solution is not None:
        d["solution"] = [list(row) for row in state.board.solution]
    return d


def state_from_dict(config: EnvConfig, d: dict) -> EpisodeState:
    board = board_from_symbols(config.kind, d["grid"])
    if isinstance(board, SudokuBoard) and d.get("solution"):
        board = SudokuBoard(board.cells, tuple(tuple(row) for row in d["solution"]))
    return EpisodeState(config, board, d["turn"], d["terminal"], d["success"], d["rng_state"])

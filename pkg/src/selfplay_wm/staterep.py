"""Text state representations: symbol grid, coordinate sentence, and both.

The coordinate sentence names every key entity of the board; the composed
state is the grid followed by that sentence on a new line.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from sklearn.base import BaseEstimator, TransformerMixin

from .envs import EnvKind, EpisodeState, LakeBoard, SokobanBoard, render_symbols

Entity = tuple[str, int, int]


@dataclass(frozen=True)
class CoordinateAbstraction:
    kind: EnvKind
    entities: tuple  # (label, row, col)
    text: str


@dataclass(frozen=True)
class StateText:
    raw: str
    abstraction: CoordinateAbstraction

    @property
    def composed(self) -> str:
        return self.raw + "\n" + self.abstraction.text


def _fmt(r: int, c: int) -> str:
    return f"({r},{c})"


def _join_and(items: list[str]) -> str:
    if not items:
        return "none"
    if len(items) == 1:
        return items[0]
    return ", ".join(items[:-1]) + " and " + items[-1]


def abstraction_text(kind: EnvKind, entities) -> str:
    """Sentence for an entity list; the inverse direction of :func:`abstract_state`."""
    if kind is EnvKind.SOKOBAN:
        players = [e for e in entities if e[0] == "player"]
        boxes = [e for e in entities if e[0] == "box"]
        targets = [e for e in entities if e[0] == "target"]
        parts = [f"Player (P) is at {_fmt(*p[1:])}" for p in players]
        if len(boxes) == 1:
            parts.append(f"box (X) is at {_fmt(*boxes[0][1:])}")
        else:
            parts += [f"box {i} (X) is at {_fmt(*b[1:])}" for i, b in enumerate(boxes, 1)]
        if len(targets) == 1:
            parts.append(f"target (O) is at {_fmt(*targets[0][1:])}")
        else:
            parts += [f"target {i} (O) is at {_fmt(*t[1:])}" for i, t in enumerate(targets, 1)]
        return "; ".join(parts) + "."
    if kind is EnvKind.FROZENLAKE:
        player = [_fmt(*e[1:]) for e in entities if e[0] == "player"]
        holes = [_fmt(*e[1:]) for e in entities if e[0] == "hole"]
        goal = [_fmt(*e[1:]) for e in entities if e[0] == "goal"]
        return (f"Player at {_join_and(player)}; holes at {_join_and(holes)}; "
                f"goal at {_join_and(goal)}.")
    empties = [_fmt(*e[1:]) for e in entities]
    return "Empty positions to be filled are at " + (", ".join(empties) if empties else "none")


def _entities(state: EpisodeState) -> tuple:
    board = state.board
    if isinstance(board, SokobanBoard):
        return (
            (("player",) + board.player,)
            + tuple(("box",) + p for p in sorted(board.boxes))
            + tuple(("target",) + p for p in sorted(board.targets))
        )
    if isinstance(board, LakeBoard):
        return (
            (("player",) + board.player,)
            + tuple(("hole",) + p for p in sorted(board.holes))
            + (("goal",) + board.goal,)
        )
    return tuple(("empty", r, c) for r, c in board.empties())


def abstract_state(state: EpisodeState) -> CoordinateAbstraction:
    entities = _entities(state)
    return CoordinateAbstraction(state.kind, entities, abstraction_text(state.kind, entities))


def compose_state(state: EpisodeState) -> StateText:
    return StateText(render_symbols(state), abstract_state(state))


def randomize_coordinates(abstraction: CoordinateAbstraction, rng_seed: int,
                          grid_size: int) -> CoordinateAbstraction:
    """Replace every coordinate with an i.i.d. uniform draw over the grid.

    Labels and sentence template are kept. Sudoku coordinates are drawn
    1-indexed to stay within the template's convention.
    """
    rng = random.Random(rng_seed)
    lo = 1 if abstraction.kind is EnvKind.SUDOKU else 0
    hi = lo + max(grid_size, 1) - 1
    entities = tuple(
        (label, rng.randint(lo, hi), rng.randint(lo, hi)) for label, _, _ in abstraction.entities
    )
    return CoordinateAbstraction(abstraction.kind, entities,
                                 abstraction_text(abstraction.kind, entities))


def split_composed(composed: str) -> tuple[str, str]:
    """Recover ``(raw, abstraction_text)`` from a composed state."""
    raw, _, sentence = composed.rpartition("\n")
    return raw, sentence


class StateEncoder(TransformerMixin, BaseEstimator):
    """Transformer from episode states to prompt-ready state text.

    Parameters
    ----------
    with_coordinates : bool
        Append the coordinate sentence to the grid.
    randomize : bool
        Corrupt coordinates with i.i.d. uniform draws (ablation).
    random_state : int
        Seed for the corruption; each state uses ``random_state + index``.
    """

    def __init__(self, with_coordinates=True, randomize=False, random_state=0):
        self.with_coordinates = with_coordinates
        self.randomize = randomize
        self.random_state = random_state

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        out = []
        for i, state in enumerate(X):
            if not isinstance(state, EpisodeState):
                raise TypeError(f"expected EpisodeState, got {type(state).__name__}")
            st = compose_state(state)
            if not self.with_coordinates:
                out.append(st.raw)
                continue
            if self.randomize:
                abst = randomize_coordinates(st.abstraction, self.random_state + i,
                                             state.config.grid_size)
                st = StateText(st.raw, abst)
            out.append(st.composed)
        return out

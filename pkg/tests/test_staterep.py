import re

from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SOKOBAN_SENTENCE_GRID
from selfplay_wm.envs import EnvConfig, EnvKind, generate, render_symbols
from selfplay_wm.staterep import (
    CoordinateAbstraction,
    StateEncoder,
    abstract_state,
    compose_state,
    randomize_coordinates,
    split_composed,
)

EXPECTED_SENTENCE = "Player (P) is at (4,3); box (X) is at (3,3); target (O) is at (1,4)."
COORD = re.compile(r"\((\d+),(\d+)\)")


def test_sokoban_sentence(sokoban_sentence_grid):
    st_ = compose_state(sokoban_sentence_grid)
    assert st_.abstraction.text == EXPECTED_SENTENCE
    assert st_.composed == SOKOBAN_SENTENCE_GRID + "\n" + EXPECTED_SENTENCE
    assert compose_state(sokoban_sentence_grid) == st_


def test_lake_sentence(lake_worked):
    assert abstract_state(lake_worked).text == "Player at (3,2); holes at (0,1) and (1,0); goal at (2,0)."


def test_sudoku_sentences(sudoku_worked):
    assert abstract_state(sudoku_worked).text == (
        "Empty positions to be filled are at (1,1), (1,2), (2,3), (3,3), (3,4), (4,1)")
    solved = generate(EnvConfig("sudoku", num_empty_cells=0), 0)
    assert abstract_state(solved).text == "Empty positions to be filled are at none"


def test_multi_box_labels():
    s = generate(EnvConfig("sokoban", num_boxes=2, grid_size=7), 3)
    text = abstract_state(s).text
    assert "box 1 (X)" in text and "box 2 (X)" in text and "target 2 (O)" in text


ALLOWED = {"player": "PS", "box": "X√", "target": "O√S", "hole": "OX", "goal": "G√"}


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["sokoban", "frozenlake"]), st.integers(0, 2**40))
def test_abstraction_faithful(kind, seed):
    s = generate(EnvConfig(kind), seed)
    rows = render_symbols(s).split("\n")
    abst = abstract_state(s)
    for label, r, c in abst.entities:
        assert rows[r][c] in ALLOWED[label]
    assert [tuple(map(int, m)) for m in COORD.findall(abst.text)] == [e[1:] for e in abst.entities]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**40))
def test_sudoku_abstraction_faithful(seed):
    s = generate(EnvConfig("sudoku"), seed)
    cells = render_symbols(s).replace("|", " ").split()
    for _, r, c in abstract_state(s).entities:
        assert cells[(r - 1) * 4 + (c - 1)] == "."


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(list(EnvKind)), st.integers(0, 2**40))
def test_split_is_lossless(kind, seed):
    st_ = compose_state(generate(EnvConfig(kind), seed))
    assert split_composed(st_.composed) == (st_.raw, st_.abstraction.text)


def test_randomize_preserves_template(sokoban_sentence_grid):
    abst = abstract_state(sokoban_sentence_grid)
    a = randomize_coordinates(abst, 5, 6)
    assert a == randomize_coordinates(abst, 5, 6)
    assert [e[0] for e in a.entities] == ["player", "box", "target"]
    assert COORD.sub("()", a.text) == COORD.sub("()", abst.text)
    assert all(0 <= r < 6 and 0 <= c < 6 for _, r, c in a.entities)


def test_randomize_degenerate_grid(sokoban_sentence_grid):
    a = randomize_coordinates(abstract_state(sokoban_sentence_grid), 1, 1)
    assert all(e[1:] == (0, 0) for e in a.entities)
    assert a.text == "Player (P) is at (0,0); box (X) is at (0,0); target (O) is at (0,0)."


def test_randomize_sudoku_stays_one_indexed(sudoku_worked):
    a = randomize_coordinates(abstract_state(sudoku_worked), 2, 4)
    assert all(1 <= r <= 4 and 1 <= c <= 4 for _, r, c in a.entities)


def test_state_encoder_estimator(sokoban_sentence_grid):
    from sklearn.base import clone

    enc = StateEncoder()
    assert enc.fit_transform([sokoban_sentence_grid]) == [SOKOBAN_SENTENCE_GRID + "\n" + EXPECTED_SENTENCE]
    assert StateEncoder(with_coordinates=False).transform([sokoban_sentence_grid]) == [SOKOBAN_SENTENCE_GRID]
    noisy = clone(StateEncoder(randomize=True, random_state=4)).transform([sokoban_sentence_grid])[0]
    assert noisy.startswith(SOKOBAN_SENTENCE_GRID + "\nPlayer (P) is at (")
    assert enc.get_params() == {"with_coordinates": True, "randomize": False, "random_state": 0}
    assert isinstance(abstract_state(sokoban_sentence_grid), CoordinateAbstraction)

import pytest

from selfplay_wm.envs import EnvConfig, state_from_symbols

SOKOBAN_WORKED = "######\n#_####\n#_P###\n#_X#_#\n#__O_#\n######"
SOKOBAN_WORKED_PRED = "######\n#_####\n#__###\n#__#_#\n#PXO_#\n######"
SOKOBAN_SENTENCE_GRID = "######\n#___O#\n#____#\n###X_#\n###P_#\n######"
LAKE_WORKED = "_O__\nO___\nG___\n__P_"
LAKE_WORKED_PRED = "_O__\nO___\n√___\n____"
SUDOKU_WORKED = "| . . 1 4 | 1 4 . 3 | 4 2 . . | . 1 4 2"
SUDOKU_WORKED_PRED = "| 2 3 1 4 | 1 4 2 3 | 4 2 3 1 | . 1 4 2"

SOKOBAN_SAMPLE_OUTPUT = """<think>
<observation>
######
#_####
#_P###
#_X#_#
#__O_#
######
Player (P) is at (2,2); box (X) is at (3,2); target (O) is at (4,3).
</observation>
1 Down - I push box to (4,2).
2 Left - I step to (3,1).
3 Down - I stand left of box, ready to push it Right onto target.
<prediction>
######
#_####
#__###
#__#_#
#PXO_#
######
</prediction>
</think>
<answer> Down || Left || Down </answer>"""

SUDOKU_SAMPLE_OUTPUT = """<think>
<observation>
| . . 1 4 | 1 4 . 3 | 4 2 . . | . 1 4 2
Empty positions to be filled are at (1,1), (1,2), (2,3), (3,3), (3,4), (4,1)
</observation>
<prediction>
| 2 3 1 4 | 1 4 2 3 | 4 2 3 1 | . 1 4 2
Empty positions to be filled are at (4,1)
</prediction>
</think>
<answer> 1,1,2 || 1,2,3 || 2,3,2 || 3,3,3 || 3,4,1 </answer>."""


@pytest.fixture
def sokoban_worked():
    return state_from_symbols(EnvConfig("sokoban"), SOKOBAN_WORKED)


@pytest.fixture
def sokoban_sentence_grid():
    return state_from_symbols(EnvConfig("sokoban"), SOKOBAN_SENTENCE_GRID)


@pytest.fixture
def lake_worked():
    return state_from_symbols(EnvConfig("frozenlake", slippery=False), LAKE_WORKED)


@pytest.fixture
def sudoku_worked():
    return state_from_symbols(EnvConfig("sudoku"), SUDOKU_WORKED)


ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)

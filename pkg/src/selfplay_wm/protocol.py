"""Prompt construction and the tagged agent-output grammar.

An agent turn looks like::

    <think>
    <observation>...</observation>
    free reasoning
    <prediction>...</prediction>
    </think>
    <answer>a1 || a2</answer>

Observation and prediction are optional in base mode. Parsing is tolerant:
the first well-formed structure wins, and anything odd is recorded as an
issue on the :class:`ParsedTurn` rather than raised. Only a missing or
malformed think/answer pair raises :class:`ParseFailure`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

from . import prompts
from .envs import Direction, EnvKind, SudokuMove
from .errors import ParseFailure
from .staterep import StateText


class PromptMode(str, Enum):
    BASE = "base"
    OBSERVATION_THEN_PREDICTION = "observation_then_prediction"

    @classmethod
    def parse(cls, value) -> "PromptMode":
        return value if isinstance(value, cls) else cls(str(value))


_SYSTEM = {
    (EnvKind.SOKOBAN, PromptMode.BASE): prompts.SOKOBAN_BASE,
    (EnvKind.SOKOBAN, PromptMode.OBSERVATION_THEN_PREDICTION): prompts.SOKOBAN_OTP,
    (EnvKind.FROZENLAKE, PromptMode.BASE): prompts.FROZENLAKE_BASE,
    (EnvKind.FROZENLAKE, PromptMode.OBSERVATION_THEN_PREDICTION): prompts.FROZENLAKE_OTP,
    (EnvKind.SUDOKU, PromptMode.BASE): prompts.SUDOKU_BASE,
    (EnvKind.SUDOKU, PromptMode.OBSERVATION_THEN_PREDICTION): prompts.SUDOKU_OTP,
}
_LEGEND = {
    EnvKind.SOKOBAN: prompts.SOKOBAN_LEGEND,
    EnvKind.FROZENLAKE: prompts.FROZENLAKE_LEGEND,
    EnvKind.SUDOKU: prompts.SUDOKU_LEGEND,
}


@dataclass(frozen=True)
class PromptTemplate:
    env_kind: EnvKind
    mode: PromptMode
    system_text: str
    legend_text: str
    turn_header: str = "Turn {turn}:\nState:\n"
    with_coordinates: bool = True

    @classmethod
    def for_env(cls, kind, mode=PromptMode.OBSERVATION_THEN_PREDICTION, grid_size: int = 6,
                with_coordinates: bool = True) -> "PromptTemplate":
        kind = EnvKind.parse(kind)
        mode = PromptMode.parse(mode)
        system = _SYSTEM[(kind, mode)]
        if kind is EnvKind.SOKOBAN and grid_size != 6:
            last = grid_size - 1
            system = system.replace("corner (5, 5)", f"corner ({last}, {last})")
        return cls(kind, mode, system, _LEGEND[kind], with_coordinates=with_coordinates)

    def state_block(self, state: Union[StateText, str]) -> str:
        if isinstance(state, str):
            return state
        return state.composed if self.with_coordinates else state.raw


def _fmt_reward(reward: float) -> str:
    return f"{round(reward, 6):g}"


def build_prompt(template: PromptTemplate, history: Sequence, current) -> str:
    """Render the full context for the next agent turn.

    ``history`` holds ``(state, turn, reward)`` triples where ``state`` is a
    :class:`StateText` (or already-rendered text) and ``turn`` is a
    :class:`ParsedTurn` or the raw output text.
    """
    parts = [template.system_text + "\n" + template.legend_text]
    for i, (state, turn, reward) in enumerate(history, 1):
        output = turn.raw if isinstance(turn, ParsedTurn) else str(turn)
        parts.append(
            template.turn_header.format(turn=i)
            + template.state_block(state)
            + "\nOutput:\n" + output
            + "\nReward: " + _fmt_reward(reward)
        )
    parts.append(template.turn_header.format(turn=len(history) + 1) + template.state_block(current))
    return "\n\n".join(parts)


# -- parsing ------------------------------------------------------------------


@dataclass(frozen=True)
class FormatVerdict:
    valid: bool
    violations: tuple = ()

    @classmethod
    def of(cls, violations) -> "FormatVerdict":
        violations = tuple(dict.fromkeys(violations))
        return cls(not violations, violations)


@dataclass(frozen=True)
class ParsedTurn:
    raw: str
    think_span: tuple  # (start, end) of "<think>...</think>" in raw, tags included
    answer_span: tuple  # same for the answer block
    answer_text: str
    actions: tuple
    observation_text: Optional[str] = None
    prediction_text: Optional[str] = None
    observation_span: Optional[tuple] = None  # content offsets, tags excluded
    prediction_span: Optional[tuple] = None
    free_reasoning: str = ""
    issues: tuple = field(default=())


_DIRECTION_WORDS = {d.value.lower(): d for d in Direction}
_SUDOKU_RE = re.compile(r"^\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*$")
_TAGS = ("think", "answer", "observation", "prediction")


def parse_action(kind: EnvKind, token: str):
    """One answer item to an action, or ``None`` if it does not parse."""
    token = token.strip()
    if kind is EnvKind.SUDOKU:
        m = _SUDOKU_RE.match(token)
        if not m:
            return None
        r, c, v = (int(g) for g in m.groups())
        if not (1 <= r <= 4 and 1 <= c <= 4 and 1 <= v <= 4):
            return None
        return SudokuMove(r, c, v)
    return _DIRECTION_WORDS.get(token.lower())


def normalize_block(text: str) -> str:
    """Strip the block and trailing spaces on every line."""
    return "\n".join(line.rstrip() for line in text.strip().split("\n"))


def _find_block(text: str, tag: str, start: int = 0, end: Optional[int] = None):
    """Offsets ``(open_start, content_start, content_end, close_end)`` or None."""
    end = len(text) if end is None else end
    o = text.find(f"<{tag}>", start, end)
    if o < 0:
        return None
    cs = o + len(tag) + 2
    c = text.find(f"</{tag}>", cs, end)
    if c < 0:
        return None
    return o, cs, c, c + len(tag) + 3


def parse_agent_output(text, kind) -> ParsedTurn:
    """Parse an agent emission. Raises :class:`ParseFailure` without think+answer."""
    kind = EnvKind.parse(kind)
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    text = str(text)
    think = _find_block(text, "think")
    if think is None:
        raise ParseFailure(FormatVerdict.of(["missing_think"]))
    answer = _find_block(text, "answer", think[3])
    if answer is None:
        early = text.find("<answer>") >= 0 and text.find("<answer>") < think[0]
        raise ParseFailure(FormatVerdict.of(["tag_order" if early else "missing_answer"]))

    issues = []
    if text[:think[0]].strip():
        issues.append("leading_junk")
    if text[answer[3]:].strip():
        issues.append("trailing_junk")
    if text[think[3]:answer[0]].strip():
        issues.append("junk_between_tags")
    if any(text.count(f"<{t}>") > 1 for t in _TAGS):
        issues.append("duplicate_tag")

    obs = _find_block(text, "observation", think[1], think[2])
    pred = _find_block(text, "prediction", think[1], think[2])
    if obs is None and "<observation>" in text[think[1]:think[2]]:
        issues.append("malformed_observation")
    if pred is None and "<prediction>" in text[think[1]:think[2]]:
        issues.append("malformed_prediction")
    if obs and pred and pred[0] < obs[3]:
        issues.append("tag_order")
        pred = None

    # Free reasoning: think content minus the observation/prediction blocks.
    cuts = sorted((b[0], b[3]) for b in (obs, pred) if b)
    segments, pos = [], think[1]
    for a, b in cuts:
        segments.append(text[pos:a])
        pos = b
    segments.append(text[pos:think[2]])
    free = "\n".join(s.strip() for s in segments if s.strip())

    answer_text = text[answer[1]:answer[2]].strip()
    actions = []
    if not answer_text:
        issues.append("empty_answer")
    else:
        for item in answer_text.split("||"):
            act = parse_action(kind, item)
            if act is None:
                issues.append("unparseable_action")
            else:
                actions.append(act)

    return ParsedTurn(
        raw=text,
        think_span=(think[0], think[3]),
        answer_span=(answer[0], answer[3]),
        answer_text=answer_text,
        actions=tuple(actions),
        observation_text=normalize_block(text[obs[1]:obs[2]]) if obs else None,
        prediction_text=normalize_block(text[pred[1]:pred[2]]) if pred else None,
        observation_span=(obs[1], obs[2]) if obs else None,
        prediction_span=(pred[1], pred[2]) if pred else None,
        free_reasoning=free,
        issues=tuple(dict.fromkeys(issues)),
    )


_STRICT_ONLY = {"leading_junk", "trailing_junk", "junk_between_tags"}


def validate_format(turn, mode=PromptMode.OBSERVATION_THEN_PREDICTION, strict: bool = False) -> FormatVerdict:
    """Check a parsed turn (or a :class:`ParseFailure`) against ``mode``.

    Base mode needs think + answer with at least one parsed action. The
    observation-then-prediction mode also needs nonempty observation and
    prediction blocks. Text outside the tags only counts when ``strict``.
    """
    if isinstance(turn, ParseFailure):
        return turn.verdict
    mode = PromptMode.parse(mode)
    violations = [i for i in turn.issues if strict or i not in _STRICT_ONLY]
    if not turn.actions and "empty_answer" not in violations:
        violations.append("no_actions")
    if mode is PromptMode.OBSERVATION_THEN_PREDICTION:
        if turn.observation_text is None:
            violations.append("missing_observation")
        elif not turn.observation_text:
            violations.append("empty_observation")
        if turn.prediction_text is None:
            violations.append("missing_prediction")
        elif not turn.prediction_text:
            violations.append("empty_prediction")
    return FormatVerdict.of(violations)


def check_output(text: str, kind, mode=PromptMode.OBSERVATION_THEN_PREDICTION,
                 strict: bool = False) -> FormatVerdict:
    try:
        turn = parse_agent_output(text, kind)
    except ParseFailure as exc:
        return exc.verdict
    return validate_format(turn, mode, strict)


# -- serialization ------------------------------------------------------------


def format_answer(actions) -> str:
    return " || ".join(str(a) for a in actions)


def format_output(actions, reasoning: str = "", observation: Optional[str] = None,
                  prediction: Optional[str] = None) -> str:
    """Canonical agent output text."""
    answer = f"<answer>{format_answer(actions)}</answer>"
    if observation is None and prediction is None:
        return f"<think>{reasoning}</think>{answer}"
    lines = ["<think>"]
    if observation is not None:
        lines += ["<observation>", observation, "</observation>"]
    if reasoning:
        lines.append(reasoning)
    if prediction is not None:
        lines += ["<prediction>", prediction, "</prediction>"]
    lines += ["</think>", answer]
    return "\n".join(lines)


def render_turn(turn: ParsedTurn) -> str:
    return format_output(turn.actions, turn.free_reasoning, turn.observation_text,
                         turn.prediction_text)


def replace_beliefs(turn: ParsedTurn, observation: Optional[str] = None,
                    prediction: Optional[str] = None) -> str:
    """Rewrite the observation/prediction contents of ``turn.raw``.

    Everything outside those two blocks is kept byte-for-byte. A block whose
    normalized content already equals the replacement is left untouched; a
    missing block is inserted (observation right after ``<think>``,
    prediction right before ``</think>``).
    """
    text = turn.raw
    edits = []  # (start, end, replacement), applied right to left
    think_open = turn.think_span[0] + len("<think>")
    think_close = turn.think_span[1] - len("</think>")
    for new, span, at, fmt in (
        (observation, turn.observation_span, think_open, "\n<observation>\n{}\n</observation>\n"),
        (prediction, turn.prediction_span, think_close, "\n<prediction>\n{}\n</prediction>\n"),
    ):
        if new is None:
            continue
        if span is None:
            edits.append((at, at, fmt.format(new)))
        elif normalize_block(text[span[0]:span[1]]) != new:
            edits.append((span[0], span[1], "\n" + new + "\n"))
    for start, end, rep in sorted(edits, reverse=True):
        text = text[:start] + rep + text[end:]
    return text

"""Self-play collection and masked SFT dataset construction.

Flow per episode: collect a trajectory with some policy, replace the
agent's believed states with the true ones, emit one training record per
usable turn with character-level loss spans, then drop records that fail
the format check.

Loss spans are character offsets into ``completion``. They are tokenizer
independent; a trainer maps them onto its own tokens.
"""

from __future__ import annotations

import logging
import random
from collections import Counter, deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .envs import (
    EnvConfig,
    action_space,
    board_dead,
    board_success,
    outcome_distribution,
    EpisodeState,
    StepResult,
    generate,
    reseed,
    state_from_dict,
    state_key,
    state_to_dict,
    step,
)
from .errors import EndpointError, ParseFailure, SourceExhausted
from .policy import PolicySpec, act, make_policy
from .protocol import (
    ParsedTurn,
    PromptMode,
    PromptTemplate,
    build_prompt,
    format_answer,
    parse_agent_output,
    replace_beliefs,
    validate_format,
)
from .staterep import StateText, compose_state
from .utils import derive_seed, dumps, sha256_file, write_json, write_jsonl

log = logging.getLogger(__name__)

MASK_TOKEN = "[MASKED]"
MASK_CONTRACT = (
    "mask_spans are [start, end) character offsets into completion; "
    "loss applies to characters inside a span"
)


class MaskMode(str, Enum):
    WORLD_MODEL = "world_model"
    MASKED_ABLATION = "masked_ablation"
    SELF_BELIEF = "self_belief"

    @classmethod
    def parse(cls, value) -> "MaskMode":
        return value if isinstance(value, cls) else cls(str(value))


@dataclass
class TurnRecord:
    state_before: EpisodeState
    state_text: StateText
    raw_output: str
    parsed: object  # ParsedTurn, or ParseFailure for unusable output
    reward: float = 0.0
    state_after: Optional[EpisodeState] = None
    step_detail: Optional[StepResult] = None
    latency: float = 0.0
    error: Optional[str] = None
    meta: dict = field(default_factory=dict)

    @property
    def usable(self) -> bool:
        return isinstance(self.parsed, ParsedTurn) and self.step_detail is not None


@dataclass
class Trajectory:
    env_config: EnvConfig
    seed: int
    turns: list
    final_success: bool
    truncated: bool
    end_reason: str
    policy: str = ""
    rollout_seed: Optional[int] = None
    rewritten: bool = False

    def to_dict(self) -> dict:
        return {
            "env": self.env_config.to_dict(),
            "seed": self.seed,
            "rollout_seed": self.rollout_seed,
            "policy": self.policy,
            "final_success": self.final_success,
            "truncated": self.truncated,
            "end_reason": self.end_reason,
            "rewritten": self.rewritten,
            "turns": [
                {
                    "state_before": state_to_dict(t.state_before),
                    "state_text": t.state_text.composed,
                    "raw_output": t.raw_output,
                    "actions": [str(a) for a in t.parsed.actions] if isinstance(t.parsed, ParsedTurn) else None,
                    "violations": list(t.parsed.verdict.violations) if isinstance(t.parsed, ParseFailure) else [],
                    "reward": t.reward,
                    "state_after": state_to_dict(t.state_after) if t.state_after else None,
                    "actions_executed": t.step_detail.actions_executed if t.step_detail else 0,
                    "actions_effective": t.step_detail.actions_effective if t.step_detail else 0,
                    "error": t.error,
                    "meta": t.meta,
                }
                for t in self.turns
            ],
        }


def _end_reason(state: EpisodeState) -> str:
    if state.success:
        return "success"
    return "max_turns" if state.turn >= state.config.max_turns else "failure"


def collect_trajectory(config: EnvConfig, seed: int, policy: PolicySpec, template: PromptTemplate,
                       rollout_seed: Optional[int] = None, model=None, client=None) -> Trajectory:
    """Run one episode: prompt -> act -> parse -> step until the episode ends.

    ``seed`` fixes the instance. ``rollout_seed`` (default: ``seed``) drives
    the policy's sampling and the environment's slips. An unusable output
    or an endpoint failure ends the episode; the failed turn is still
    recorded.
    """
    state = generate(config, seed)
    rs = seed if rollout_seed is None else rollout_seed
    if rollout_seed is not None:
        state = reseed(state, rollout_seed)
    agent = make_policy(policy, seed=rs, model=model, client=client)
    kind = config.kind
    turns: list[TurnRecord] = []
    history = []
    end_reason = "success" if state.success else "max_turns"
    while not state.terminal:
        text = compose_state(state)
        prompt = build_prompt(template, history, text) if agent.needs_prompt else None
        try:
            out = act(agent, prompt, state)
        except EndpointError as exc:
            turns.append(TurnRecord(state, text, "", None, error=f"{type(exc).__name__}: {exc}"))
            end_reason = "endpoint_error"
            break
        try:
            parsed = parse_agent_output(out.raw_text, kind)
        except ParseFailure as exc:
            turns.append(TurnRecord(state, text, out.raw_text, exc, latency=out.latency,
                                    error="parse_failure"))
            end_reason = "parse_failure"
            break
        if not parsed.actions:
            turns.append(TurnRecord(state, text, out.raw_text, parsed, latency=out.latency,
                                    error="no_actions"))
            end_reason = "parse_failure"
            break
        res = step(state, parsed.actions)
        meta = {}
        if "usage" in out.provider_metadata:
            meta["usage"] = out.provider_metadata["usage"]
        turns.append(TurnRecord(state, text, out.raw_text, parsed, res.reward, res.next_state, res,
                                out.latency, meta=meta))
        history.append((text, parsed, res.reward))
        state = res.next_state
        end_reason = _end_reason(state)
    return Trajectory(config, seed, turns, state.success,
                      truncated=not state.success and end_reason != "failure",
                      end_reason=end_reason, policy=policy.variant, rollout_seed=rollout_seed)


def rewrite_with_ground_truth(traj: Trajectory, template: Optional[PromptTemplate] = None) -> Trajectory:
    """Replace believed current/next states with the environment's truth.

    Answers and free reasoning are untouched. The agent's own beliefs are
    kept in ``turn.meta`` under ``belief_observation``/``belief_prediction``.
    Unusable turns are copied as-is and flagged with ``meta["skipped"]``.
    """
    template = template or PromptTemplate.for_env(traj.env_config.kind,
                                                  grid_size=traj.env_config.grid_size)
    kind = traj.env_config.kind
    turns = []
    for t in traj.turns:
        if not t.usable:
            turns.append(replace(t, meta={**t.meta, "skipped": True}))
            continue
        truth_obs = template.state_block(t.state_text)
        truth_pred = template.state_block(compose_state(t.state_after))
        new_raw = replace_beliefs(t.parsed, truth_obs, truth_pred)
        meta = {**t.meta, "belief_observation": t.parsed.observation_text,
                "belief_prediction": t.parsed.prediction_text}
        turns.append(replace(t, raw_output=new_raw, parsed=parse_agent_output(new_raw, kind), meta=meta))
    return replace(traj, turns=turns, rewritten=True)


@dataclass
class SftRecord:
    prompt: str
    completion: str
    mask_spans: list
    mode: MaskMode
    metadata: dict

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt,
            "completion": self.completion,
            "mask_spans": [list(s) for s in self.mask_spans],
            "mode": self.mode.value,
            "meta": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SftRecord":
        return cls(d["prompt"], d["completion"], [tuple(s) for s in d["mask_spans"]],
                   MaskMode.parse(d["mode"]), d["meta"])


def _blank_beliefs(turn: ParsedTurn) -> str:
    text = turn.raw
    spans = sorted(s for s in (turn.observation_span, turn.prediction_span) if s)
    for start, end in reversed(spans):
        text = text[:start] + MASK_TOKEN + text[end:]
    return text


def _subtract(span, holes):
    """Split ``span`` around the ``holes`` it contains."""
    out, pos = [], span[0]
    for a, b in sorted(holes):
        if a > pos:
            out.append((pos, a))
        pos = max(pos, b)
    if pos < span[1]:
        out.append((pos, span[1]))
    return out


def mask_spans_for(turn: ParsedTurn, mode: MaskMode) -> list[tuple[int, int]]:
    """Loss spans: the think and answer blocks, tags included.

    In the masked ablation the ``[MASKED]`` placeholders are cut out.
    """
    think, answer = tuple(turn.think_span), tuple(turn.answer_span)
    if mode is MaskMode.MASKED_ABLATION:
        holes = [s for s in (turn.observation_span, turn.prediction_span) if s]
        return _subtract(think, holes) + [answer]
    return [think, answer]


def emit_sft_records(traj: Trajectory, mode, template: Optional[PromptTemplate] = None,
                     policy_name: Optional[str] = None) -> list[SftRecord]:
    """One record per usable turn.

    Pass a rewritten trajectory for ``world_model`` and ``masked_ablation``
    and a raw one for ``self_belief``.
    """
    mode = MaskMode.parse(mode)
    cfg = traj.env_config
    template = template or PromptTemplate.for_env(cfg.kind, grid_size=cfg.grid_size)
    records = []
    history = []
    for i, t in enumerate(traj.turns):
        if not t.usable:
            continue
        prompt = build_prompt(template, history, t.state_text)
        parsed = t.parsed
        if mode is MaskMode.MASKED_ABLATION:
            parsed = parse_agent_output(_blank_beliefs(parsed), cfg.kind)
        records.append(SftRecord(
            prompt=prompt,
            completion=parsed.raw,
            mask_spans=mask_spans_for(parsed, mode),
            mode=mode,
            metadata={
                "env": cfg.to_dict(),
                "seed": traj.seed,
                "turn": i,
                "policy": policy_name or traj.policy,
                "reward_scheme": cfg.rewards.to_dict(),
            },
        ))
        history.append((t.state_text, parsed.raw, t.reward))
    return records


def filter_records(records: Sequence[SftRecord], mode=PromptMode.OBSERVATION_THEN_PREDICTION,
                   strict: bool = False):
    """Split records into ``(kept, rejected)``; rejected items are ``(record, verdict)``."""
    from .protocol import check_output

    kept, rejected = [], []
    for rec in records:
        verdict = check_output(rec.completion, rec.metadata["env"]["kind"], mode, strict)
        if verdict.valid:
            kept.append(rec)
        else:
            rejected.append((rec, verdict))
    return kept, rejected


# -- self-play triples ----------------------------------------------------


def triples_from_trajectory(traj: Trajectory) -> list[tuple[str, str, str]]:
    """``(state, action, next_state)`` from every single-action turn."""
    out = []
    for t in traj.turns:
        if t.usable and t.step_detail.actions_executed == 1 and len(t.parsed.actions) == 1:
            out.append((state_key(t.state_before), str(t.parsed.actions[0]), state_key(t.state_after)))
    return out


def reachable_pairs(state: EpisodeState) -> set[tuple[str, str]]:
    """Every ``(state_key, action)`` the environment allows from ``state``.

    Exhaustive search over boards, ignoring the turn limit; terminal boards
    (solved, or a fall into a hole) are not expanded.
    """
    kind = state.kind
    actions = action_space(kind)
    seen = {state_key(state): state.board}
    queue = deque([state.board])
    pairs = set()
    while queue:
        board = queue.popleft()
        probe = replace(state, board=board, turn=0, terminal=False, success=False)
        key = state_key(board)
        for a in actions:
            pairs.add((key, str(a)))
            for _, nb in outcome_distribution(probe, a):
                nk = state_key(nb)
                if nk not in seen:
                    seen[nk] = nb
                    if not board_success(nb) and not board_dead(nb):
                        queue.append(nb)
    return pairs


def collect_triples(config: EnvConfig, seed: int, episodes: int, rollout_seed: int = 0,
                    required: Optional[set] = None, explore_starts: bool = True) -> tuple[list, int]:
    """Uniform-random self-play on one instance.

    With ``explore_starts`` each episode after the first begins from a
    uniformly drawn, previously visited, non-terminal state. Stops after
    ``episodes`` episodes, or earlier once every pair in ``required`` has
    been seen. Returns ``(triples, episodes_played)``.
    """
    rng = random.Random(rollout_seed)
    root = generate(config, seed)
    actions = action_space(config.kind)
    visited = [root]
    known = {state_key(root)}
    seen: set = set()
    triples: list = []
    played = 0
    while played < episodes:
        start = rng.choice(visited) if explore_starts else root
        state = replace(start, turn=0, rng_state=rng.getrandbits(64))
        played += 1
        while not state.terminal:
            a = rng.choice(actions)
            nxt = step(state, [a]).next_state
            key, nkey = state_key(state), state_key(nxt)
            triples.append((key, str(a), nkey))
            seen.add((key, str(a)))
            if nkey not in known:
                known.add(nkey)
                if not board_success(nxt.board) and not board_dead(nxt.board):
                    visited.append(nxt)
            state = nxt
        if required is not None and required <= seen:
            break
    return triples, played


# -- dataset building -----------------------------------------------------


@dataclass
class DatasetResult:
    records: list
    rejected: list
    manifest: dict
    trajectories: list


def _episode_records(args):
    cfg, seed, spec, mode, template, policy_name = args
    traj = collect_trajectory(cfg, seed, spec, template)
    if mode is MaskMode.SELF_BELIEF:
        source = traj
    else:
        source = rewrite_with_ground_truth(traj, template)
    records = emit_sft_records(source, mode, template, policy_name)
    return traj.to_dict(), records


def _quotas(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def build_dataset(configs: Sequence[EnvConfig], policy: PolicySpec, mode=MaskMode.WORLD_MODEL,
                  target_count: int = 1280, *, seed: int = 0, template_mode=PromptMode.OBSERVATION_THEN_PREDICTION,
                  with_coordinates: bool = True, strict: bool = False, jobs: int = 1,
                  max_episodes: Optional[int] = None, out_dir=None) -> DatasetResult:
    """Collect, rewrite, emit and filter until ``target_count`` records are kept.

    The target is split evenly across ``configs``; each config consumes
    episode seeds in order, and records are concatenated by config index.
    Output is identical for every ``jobs`` value.
    """
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    if not configs:
        raise ValueError("need at least one environment config")
    mode = MaskMode.parse(mode)
    template_mode = PromptMode.parse(template_mode)
    max_episodes = max_episodes or 50 * target_count
    kept_all, rejected_all, traj_log = [], [], []
    reasons: Counter = Counter()
    per_config = []
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for ci, (cfg, quota) in enumerate(zip(configs, _quotas(target_count, len(configs)))):
            template = PromptTemplate.for_env(cfg.kind, template_mode, cfg.grid_size, with_coordinates)
            kept, rejected, seeds = [], [], []
            episode = 0
            batch = max(1, jobs) * 4
            while len(kept) < quota:
                if episode >= max_episodes:
                    raise SourceExhausted(
                        f"config {ci}: {len(kept)}/{quota} records after {episode} episodes")
                ids = range(episode, min(episode + batch, max_episodes))
                args = [(cfg, derive_seed(seed, ci, e), policy, mode, template, policy.variant) for e in ids]
                results = pool.map(_episode_records, args) if pool else map(_episode_records, args)
                for (traj_dict, records), a in zip(results, args):
                    if len(kept) >= quota:
                        break
                    episode += 1
                    seeds.append(a[1])
                    traj_log.append(traj_dict)
                    ok, bad = filter_records(records, template_mode, strict)
                    for rec in records:
                        if len(kept) >= quota:
                            break
                        if any(rec is r for r in ok):
                            kept.append(rec)
                        else:
                            verdict = next(v for r, v in bad if r is rec)
                            rejected.append((rec, verdict))
                            reasons.update(verdict.violations)
            per_config.append({"env": cfg.to_dict(), "episodes": episode, "seeds": seeds,
                               "kept": len(kept), "rejected": len(rejected)})
            kept_all += kept
            rejected_all += rejected
    finally:
        if pool:
            pool.shutdown()

    keys = [(r.prompt.rsplit("State:\n", 1)[-1], _answer_of(r)) for r in kept_all]
    dup_rate = 1 - len(set(keys)) / len(keys)
    manifest = {
        "version": __version__,
        "policy": policy.to_dict(),
        "mode": mode.value,
        "template_mode": template_mode.value,
        "with_coordinates": with_coordinates,
        "strict_format": strict,
        "seed": seed,
        "target_count": target_count,
        "kept": len(kept_all),
        "rejected": len(rejected_all),
        "rejection_reasons": dict(sorted(reasons.items())),
        "duplicate_rate": round(dup_rate, 6),
        "configs": per_config,
        "mask_contract": MASK_CONTRACT,
    }
    result = DatasetResult(kept_all, rejected_all, manifest, traj_log)
    if out_dir is not None:
        write_dataset(result, out_dir)
    return result


def _answer_of(rec: SftRecord) -> str:
    try:
        return format_answer(parse_agent_output(rec.completion, rec.metadata["env"]["kind"]).actions)
    except ParseFailure:
        return ""


def write_dataset(result: DatasetResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "dataset.jsonl", (r.to_dict() for r in result.records))
    write_jsonl(out / "trajectories.jsonl", result.trajectories)
    write_jsonl(out / "rejected.jsonl",
                ({**r.to_dict(), "violations": list(v.violations)} for r, v in result.rejected))
    result.manifest["files"] = {
        name: sha256_file(out / name) for name in ("dataset.jsonl", "rejected.jsonl", "trajectories.jsonl")
    }
    write_json(out / "manifest.json", result.manifest)
    return result.manifest


def load_trajectory(d: dict) -> list[dict]:
    """Turn-by-turn view of a serialized trajectory with states rebuilt."""
    cfg = EnvConfig.from_dict(d["env"])
    rows = []
    for t in d["turns"]:
        rows.append({
            **t,
            "state_before": state_from_dict(cfg, t["state_before"]),
            "state_after": state_from_dict(cfg, t["state_after"]) if t["state_after"] else None,
        })
    return rows


__all__ = [
    "DatasetResult",
    "MaskMode",
    "SftRecord",
    "Trajectory",
    "TurnRecord",
    "build_dataset",
    "collect_trajectory",
    "collect_triples",
    "reachable_pairs",
    "dumps",
    "emit_sft_records",
    "filter_records",
    "mask_spans_for",
    "rewrite_with_ground_truth",
    "triples_from_trajectory",
]

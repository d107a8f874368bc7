"""Pass@k, efficiency statistics and perplexity."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .envs import (
    CELL_ALPHABETS,
    EnvConfig,
    EnvKind,
    EpisodeState,
    action_space,
    board_dead,
    board_success,
    generate,
    grid_units,
    outcome_distribution,
    state_key,
)
from .errors import DomainError, EmptyInput, ProviderError
from .pipeline import Trajectory, collect_trajectory, collect_triples, reachable_pairs
from .policy import PolicySpec
from .protocol import PromptMode, PromptTemplate
from .utils import derive_seed, write_json
from .world_model import TransitionModel

log = logging.getLogger(__name__)


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased estimate of P(at least one of k draws succeeds) from c/n.

    ``1 - C(n-c, k) / C(n, k)``, evaluated as an exact product of ratios.
    """
    for name, v in (("n", n), ("c", c), ("k", k)):
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            raise DomainError(f"{name} must be an integer, got {v!r}")
    if not 0 <= c <= n:
        raise DomainError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n - c < k:
        return 1.0
    miss = Fraction(1)
    for i in range(k):
        miss *= Fraction(n - c - i, n - i)
    return float(1 - miss)


# -- suites ---------------------------------------------------------------


@dataclass
class EvalSuite:
    instances: list  # (EnvConfig, seed)
    n: int = 8
    k_values: tuple = (1, 8)
    policy: PolicySpec = field(default_factory=PolicySpec)
    template_mode: PromptMode = PromptMode.OBSERVATION_THEN_PREDICTION
    with_coordinates: bool = True
    seed: int = 0

    def __post_init__(self):
        self.k_values = tuple(sorted(set(int(k) for k in self.k_values)))
        if self.n < 1:
            raise DomainError("rollouts per instance must be >= 1")
        if not self.k_values or self.k_values[0] < 1 or self.k_values[-1] > self.n:
            raise DomainError(f"k values must lie in [1, {self.n}], got {self.k_values}")
        if not self.instances:
            raise EmptyInput("suite has no instances")


@dataclass
class EvalReport:
    rows: list  # per-instance dicts
    pass_at: dict  # k -> mean estimate
    mean_actions: float
    effectiveness: float
    mean_response_chars: float
    mean_response_tokens: Optional[float] = None
    failed_rollouts: int = 0
    policy: str = ""

    @property
    def pass1(self) -> float:
        return self.pass_at.get(1, float("nan"))

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "pass_at_k": {str(k): v for k, v in self.pass_at.items()},
            "mean_actions_per_episode": self.mean_actions,
            "action_effectiveness": self.effectiveness,
            "mean_response_chars": self.mean_response_chars,
            "mean_response_tokens": self.mean_response_tokens,
            "failed_rollouts": self.failed_rollouts,
            "instances": self.rows,
        }


def _rollout(args):
    cfg, seed, spec, rollout_seed, template, model = args
    try:
        return collect_trajectory(cfg, seed, spec, template, rollout_seed=rollout_seed, model=model)
    except Exception as exc:  # a failed rollout is scored as unsuccessful
        log.warning("rollout %s/%s failed: %s", seed, rollout_seed, exc)
        return exc


def run_eval(suite: EvalSuite, model=None, jobs: int = 1, keep_trajectories: bool = False):
    """Roll out every instance ``n`` times and aggregate.

    Rollout ``r`` of instance ``i`` uses seed ``derive_seed(suite.seed, i, r)``.
    Returns ``(report, trajectories)``; the list is empty unless
    ``keep_trajectories`` is set.
    """
    tasks = []
    for i, (cfg, seed) in enumerate(suite.instances):
        tpl = PromptTemplate.for_env(cfg.kind, suite.template_mode, cfg.grid_size, suite.with_coordinates)
        for r in range(suite.n):
            tasks.append((cfg, seed, suite.policy, derive_seed(suite.seed, i, r), tpl, model))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_rollout, tasks, chunksize=max(1, len(tasks) // (8 * jobs))))
    else:
        results = [_rollout(t) for t in tasks]

    rows, good, failed = [], [], 0
    for i, (cfg, seed) in enumerate(suite.instances):
        chunk = results[i * suite.n:(i + 1) * suite.n]
        c = sum(isinstance(t, Trajectory) and t.final_success for t in chunk)
        bad = [t for t in chunk if not isinstance(t, Trajectory)]
        bad += [t for t in chunk if isinstance(t, Trajectory) and t.end_reason == "endpoint_error"]
        failed += len(bad)
        good += [t for t in chunk if isinstance(t, Trajectory)]
        rows.append({"env": cfg.kind.value, "seed": seed, "n": suite.n, "c": c,
                     "failed": len(bad),
                     **{f"pass@{k}": pass_at_k(suite.n, c, k) for k in suite.k_values}})
    pass_at = {k: float(np.mean([row[f"pass@{k}"] for row in rows])) for k in suite.k_values}
    stats = action_stats(good) if good else ActionStats(0.0, 0.0, 0.0)
    report = EvalReport(rows, pass_at, stats.mean_actions, stats.effectiveness, stats.mean_response_chars,
                        stats.mean_response_tokens, failed, suite.policy.variant)
    return report, (good if keep_trajectories else [])


@dataclass
class ActionStats:
    mean_actions: float
    effectiveness: float
    mean_response_chars: float
    mean_response_tokens: Optional[float] = None


def action_stats(trajectories: Sequence[Trajectory]) -> ActionStats:
    """Efficiency statistics over finished trajectories.

    Effectiveness is the share of executed primitive actions that changed
    the board. Token lengths are reported only when every turn carries
    provider usage.
    """
    if not trajectories:
        raise EmptyInput("no trajectories")
    executed = effective = 0
    lengths, tokens = [], []
    per_episode = []
    for traj in trajectories:
        n_exec = 0
        for t in traj.turns:
            if t.step_detail is not None:
                n_exec += t.step_detail.actions_executed
                effective += t.step_detail.actions_effective
            lengths.append(len(t.raw_output))
            usage = t.meta.get("usage") or {}
            if "completion_tokens" in usage:
                tokens.append(usage["completion_tokens"])
        executed += n_exec
        per_episode.append(n_exec)
    return ActionStats(
        mean_actions=float(np.mean(per_episode)),
        effectiveness=effective / executed if executed else 0.0,
        mean_response_chars=float(np.mean(lengths)) if lengths else 0.0,
        mean_response_tokens=float(np.mean(tokens)) if tokens and len(tokens) == len(lengths) else None,
    )


# -- perplexity -----------------------------------------------------------


class UniformLogProbProvider:
    """Random-guess baseline: every unit has probability ``1/V``."""

    def __init__(self, vocab_size: int):
        if vocab_size < 1:
            raise DomainError("vocab_size must be >= 1")
        self.vocab_size = vocab_size

    def unit_logprobs(self, units: Sequence[str]) -> list:
        lp = -np.log(np.longdouble(self.vocab_size))
        return [lp] * len(units)

    def token_logprobs(self, text: str) -> list:
        return self.unit_logprobs(list(text))


class RemoteLogProbProvider:
    """Scores text through an endpoint's echoed completion log-probs."""

    def __init__(self, client):
        self.client = client

    def unit_logprobs(self, units):
        raise ProviderError("remote providers only score provider tokens")

    def token_logprobs(self, text: str) -> list:
        return self.client.token_logprobs(text)


def uniform_for(kind) -> UniformLogProbProvider:
    return UniformLogProbProvider(len(CELL_ALPHABETS[EnvKind.parse(kind)]))


def perplexity(text: str, provider, unit: str = "symbol", kind=None) -> float:
    """``exp(-mean log p)`` over units of ``text``.

    ``unit="symbol"`` scores grid cells of ``kind`` (or characters when no
    kind is given); ``unit="provider-token"`` scores whatever the provider
    tokenizes. Accumulation is in extended precision.
    """
    if not text:
        raise EmptyInput("text is empty")
    if unit == "symbol":
        units = grid_units(EnvKind.parse(kind), text) if kind is not None else list(text)
        if not units:
            raise EmptyInput("text has no scorable symbols")
        logps = provider.unit_logprobs(units)
    elif unit == "provider-token":
        logps = provider.token_logprobs(text)
    else:
        raise DomainError(f"unknown unit {unit!r}")
    if not len(logps):
        raise ProviderError("provider returned no log-probabilities")
    arr = np.asarray(logps, dtype=np.longdouble)
    if not np.all(np.isfinite(arr)) or np.any(arr > 0):
        raise ProviderError("provider returned invalid log-probabilities")
    return float(np.exp(-arr.mean()))


# -- oracles --------------------------------------------------------------


def random_walk_success_probability(state: EpisodeState) -> float:
    """Exact success probability of the uniform single-action policy.

    Dynamic programming over ``(board, turns left)``; the policy draws one
    action per turn from the full action space.
    """
    kind = state.kind
    actions = action_space(kind)
    p_action = 1.0 / len(actions)
    memo: dict = {}

    def value(board, left):
        if board_success(board):
            return 1.0
        if left == 0 or board_dead(board):
            return 0.0
        key = (state_key(board), left)
        if key in memo:
            return memo[key]
        probe = EpisodeState(state.config, board, 0, False, False, 0)
        total = 0.0
        for a in actions:
            for p, nb in outcome_distribution(probe, a):
                total += p_action * p * value(nb, left - 1)
        memo[key] = total
        return total

    return value(state.board, state.config.max_turns - state.turn)


def pass_at_k_oracle(p: float, k: int) -> float:
    """Pass@k of independent rollouts with per-rollout success ``p``."""
    return 1.0 - (1.0 - p) ** k


# -- world-model lift suite -----------------------------------------------


LIFT_CONFIG = EnvConfig("sokoban", grid_size=6, num_boxes=1, slippery=False, max_turns=10,
                        max_solution_length=10)


@dataclass
class LiftReport:
    planner_pass1: float
    random_pass_at: dict
    oracle_pass_at: dict
    oracle_gap: float
    coverage: float
    table_entries: int
    self_play_episodes: int
    lift: bool

    def to_dict(self) -> dict:
        return {
            "planner_pass@1": self.planner_pass1,
            "random_pass@k": {str(k): v for k, v in self.random_pass_at.items()},
            "dp_oracle_pass@k": {str(k): v for k, v in self.oracle_pass_at.items()},
            "max_abs_gap_vs_oracle": self.oracle_gap,
            "coverage": self.coverage,
            "table_entries": self.table_entries,
            "self_play_episodes": self.self_play_episodes,
            "planner_pass@1_gt_random_pass@8": self.lift,
        }


def fit_self_play_model(instances, seed: int = 0, max_episodes: int = 100_000):
    """Fit one table on random self-play until each instance is fully covered.

    Returns ``(model, coverage, episodes)`` where coverage is the share of
    reachable ``(state, action)`` pairs present in the table.
    """
    model = TransitionModel(kind=instances[0][0].kind.value)
    model.fit([])
    required_total = covered = episodes = 0
    for i, (cfg, inst_seed) in enumerate(instances):
        required = reachable_pairs(generate(cfg, inst_seed))
        triples, played = collect_triples(cfg, inst_seed, max_episodes, derive_seed(seed, i),
                                          required=required)
        model.partial_fit(triples)
        episodes += played
        required_total += len(required)
        covered += sum(pair in model.counts_ for pair in required)
    return model, covered / required_total, episodes


def lift_suite(num_instances: int = 100, n_random: int = 64, k_values=(1, 8), seed: int = 0,
               config: EnvConfig = LIFT_CONFIG, jobs: int = 1) -> LiftReport:
    """Planner over a self-play table versus the uniform random policy."""
    instances = [(config, derive_seed(seed, 0, i)) for i in range(num_instances)]
    model, coverage, episodes = fit_self_play_model(instances, seed)
    planner = EvalSuite(instances, n=1, k_values=(1,),
                        policy=PolicySpec("planner", horizon=config.max_turns), seed=seed)
    planner_report, _ = run_eval(planner, model=model, jobs=jobs)
    rand = EvalSuite(instances, n=n_random, k_values=k_values, policy=PolicySpec("random"), seed=seed)
    rand_report, _ = run_eval(rand, jobs=jobs)
    probs = [random_walk_success_probability(generate(cfg, s)) for cfg, s in instances]
    oracle = {k: float(np.mean([pass_at_k_oracle(p, k) for p in probs])) for k in rand.k_values}
    gap = max(abs(oracle[k] - rand_report.pass_at[k]) for k in rand.k_values)
    top = 8 if 8 in rand_report.pass_at else rand.k_values[-1]
    return LiftReport(planner_report.pass1, rand_report.pass_at, oracle, gap, coverage,
                      model.n_entries_, episodes, planner_report.pass1 > rand_report.pass_at[top])


# -- output ---------------------------------------------------------------


def write_report(report: EvalReport, out_dir) -> dict:
    """Write ``report.json``, ``instances.csv`` and ``pass_at_k.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report.to_dict())
    if report.rows:
        with open(out / "instances.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(report.rows[0]))
            writer.writeheader()
            writer.writerows(report.rows)
    with open(out / "pass_at_k.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "pass_at_k"])
        for k, v in report.pass_at.items():
            writer.writerow([k, repr(v)])
    return report.to_dict()


def ppl_of_lines(lines: Sequence[str], provider, unit: str = "symbol", kind=None) -> dict:
    """Per-text and average perplexity."""
    values = [perplexity(t, provider, unit, kind) for t in lines]
    if not values:
        raise EmptyInput("no texts to score")
    return {"count": len(values), "mean_ppl": float(np.mean(values)), "values": values,
            "log_mean_ppl": float(np.mean([math.log(v) for v in values]))}


__all__ = [
    "ActionStats",
    "EvalReport",
    "EvalSuite",
    "LIFT_CONFIG",
    "LiftReport",
    "RemoteLogProbProvider",
    "UniformLogProbProvider",
    "action_stats",
    "fit_self_play_model",
    "lift_suite",
    "pass_at_k",
    "pass_at_k_oracle",
    "perplexity",
    "ppl_of_lines",
    "random_walk_success_probability",
    "run_eval",
    "uniform_for",
    "write_report",
]

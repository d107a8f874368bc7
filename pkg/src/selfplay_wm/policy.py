"""Action-producing policies.

Every policy returns the full text an agent would emit; the collector parses
it exactly as it would parse a language model's output.
"""

from __future__ import annotations

import random
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

from .envs import EnvKind, EpisodeState, action_space, board_from_symbols, state_key, step
from .errors import ConfigError
from .llm_client import ChatClient
from .prompts import RANDOM_REASONING
from .protocol import format_output, parse_action
from .solvers import DEFAULT_NODE_BUDGET, solve
from .staterep import compose_state

VARIANTS = ("random", "oracle", "remote_lm", "planner")


@dataclass(frozen=True)
class PolicySpec:
    """Which policy to run, and its parameters.

    Decoding defaults (temperature 1.0, top-p 1.0, 400 new tokens) apply to
    the remote language-model variant.
    """

    variant: str = "random"
    seed: int = 0
    horizon: Optional[int] = None
    node_budget: int = DEFAULT_NODE_BUDGET
    base_url: str = "http://localhost:8000/v1"
    model: str = ""
    temperature: float = 1.0
    top_p: float = 1.0
    max_new_tokens: int = 400
    timeout: float = 60.0
    max_retries: int = 3
    max_concurrency: int = 8
    api_key_env: str = "OPENAI_API_KEY"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown policy variant {self.variant!r}; expected one of {VARIANTS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PolicySpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown policy keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class PolicyOutput:
    raw_text: str
    latency: float = 0.0
    provider_metadata: dict = field(default_factory=dict)


class RandomPolicy:
    """Uniform random single action with a fixed reasoning string."""

    observes_state = True
    needs_prompt = False

    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)

    def act(self, prompt, env_view: EpisodeState) -> PolicyOutput:
        t0 = time.perf_counter()
        action = self.rng.choice(action_space(env_view.kind))
        text = format_output([action], RANDOM_REASONING)
        return PolicyOutput(text, time.perf_counter() - t0)


class SolverPolicy:
    """Exact solver wrapped in an observation-then-prediction output.

    On slippery ice only the first planned move is emitted per turn, so the
    agent replans after every slip.
    """

    observes_state = True
    needs_prompt = False

    def __init__(self, node_budget: int = DEFAULT_NODE_BUDGET, horizon: Optional[int] = None):
        self.node_budget = node_budget
        self.horizon = horizon

    def act(self, prompt, env_view: EpisodeState) -> PolicyOutput:
        t0 = time.perf_counter()
        plan = solve(env_view, self.node_budget, self.horizon)
        if env_view.kind is EnvKind.FROZENLAKE and env_view.config.slippery:
            plan = plan[:1]
        if plan:
            reasoning = f"Optimal plan of {len(plan)} move(s)."
        else:
            plan = [action_space(env_view.kind)[0]]
            reasoning = "No solution found."
        after = step(env_view, plan).next_state
        text = format_output(plan, reasoning, compose_state(env_view).composed,
                             compose_state(after).composed)
        return PolicyOutput(text, time.perf_counter() - t0, {"plan_length": len(plan)})


class RemoteLMPolicy:
    """Completion text from an OpenAI-compatible endpoint, verbatim.

    ``act`` takes only the prompt: this policy never sees the environment.
    """

    observes_state = False
    needs_prompt = True

    def __init__(self, client: ChatClient):
        self.client = client

    def act(self, prompt: str) -> PolicyOutput:
        res = self.client.complete(prompt)
        return PolicyOutput(res.text, res.latency, {"usage": res.usage, "id": res.correlation_id})


class PlannerPolicy:
    """Plans over a fitted :class:`~selfplay_wm.world_model.TransitionModel`.

    The environment state is only read to know where the agent stands; all
    lookahead uses the learned table. Falls back to a random move when the
    table yields no plan.
    """

    observes_state = True
    needs_prompt = False

    def __init__(self, model, horizon: int = 10, node_budget: int = DEFAULT_NODE_BUDGET, seed: int = 0):
        self.model = model
        self.horizon = horizon
        self.node_budget = node_budget
        self.rng = random.Random(seed)

    def act(self, prompt, env_view: EpisodeState) -> PolicyOutput:
        t0 = time.perf_counter()
        kind = env_view.kind
        remaining = env_view.config.max_turns - env_view.turn
        key = state_key(env_view)
        plan = self.model.plan(key, horizon=self.horizon, node_budget=self.node_budget)
        observation = compose_state(env_view).composed
        if not plan:
            action = self.rng.choice(action_space(kind))
            text = format_output([action], "No plan in the learned model.", observation,
                                 observation)
            return PolicyOutput(text, time.perf_counter() - t0, {"planned": False})
        actions = [parse_action(kind, a) for a in plan]
        end = self.model.rollout(key, plan)
        prediction = end
        if kind is not EnvKind.SUDOKU:
            prediction = compose_state(replace(env_view, board=board_from_symbols(kind, end))).composed
        text = format_output(actions, f"Model plan of {len(actions)} move(s); {remaining} turn(s) left.",
                             observation, prediction)
        return PolicyOutput(text, time.perf_counter() - t0, {"planned": True})


def make_policy(spec: PolicySpec, seed: Optional[int] = None, model=None, client: Optional[ChatClient] = None):
    """Instantiate the policy described by ``spec``.

    ``seed`` overrides ``spec.seed`` (collectors pass a per-rollout seed).
    """
    seed = spec.seed if seed is None else seed
    if spec.variant == "random":
        return RandomPolicy(seed)
    if spec.variant == "oracle":
        return SolverPolicy(spec.node_budget, spec.horizon)
    if spec.variant == "planner":
        if model is None:
            raise ConfigError("planner policy needs a fitted transition model")
        return PlannerPolicy(model, spec.horizon or 10, spec.node_budget, seed)
    if client is None:
        client = ChatClient(spec.base_url, spec.model, api_key_env=spec.api_key_env,
                            temperature=spec.temperature, top_p=spec.top_p,
                            max_tokens=spec.max_new_tokens, timeout=spec.timeout,
                            max_retries=spec.max_retries, max_concurrency=spec.max_concurrency)
    return RemoteLMPolicy(client)


def act(policy, prompt: Optional[str], env_view: Optional[EpisodeState]) -> PolicyOutput:
    """Call ``policy``, handing over the environment only if it may observe it."""
    if policy.observes_state:
        return policy.act(prompt, env_view)
    return policy.act(prompt)


__all__ = [
    "act",
    "PlannerPolicy",
    "PolicyOutput",
    "PolicySpec",
    "RandomPolicy",
    "RemoteLMPolicy",
    "SolverPolicy",
    "make_policy",
]

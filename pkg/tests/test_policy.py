import inspect
import json
import threading
from collections import Counter

import httpx
import pytest

from selfplay_wm.envs import EnvConfig, generate, render_symbols, step
from selfplay_wm.errors import ConfigError, EndpointError, EndpointTimeout, ProviderError
from selfplay_wm.llm_client import ChatClient
from selfplay_wm.policy import (
    PolicySpec,
    RandomPolicy,
    RemoteLMPolicy,
    SolverPolicy,
    act,
    make_policy,
)
from selfplay_wm.protocol import PromptMode, check_output, parse_agent_output
from selfplay_wm.staterep import compose_state


def test_random_policy_outputs(sokoban_worked):
    pol = RandomPolicy(seed=1)
    texts = Counter(pol.act(None, sokoban_worked).raw_text for _ in range(40000))
    assert set(texts) == {f"<think>I will push the box to the target.</think><answer>{a}</answer>"
                          for a in ("Up", "Down", "Left", "Right")}
    for v in texts.values():
        assert abs(v / 40000 - 0.25) <= 0.02


def test_random_policy_reproducible(sokoban_worked):
    a = [RandomPolicy(7).act(None, sokoban_worked).raw_text for _ in range(1)]
    b = [RandomPolicy(7).act(None, sokoban_worked).raw_text for _ in range(1)]
    assert a == b


def test_solver_policy_output(sokoban_worked):
    out = SolverPolicy().act(None, sokoban_worked)
    assert out.raw_text
    assert check_output(out.raw_text, "sokoban", PromptMode.OBSERVATION_THEN_PREDICTION).valid
    t = parse_agent_output(out.raw_text, "sokoban")
    assert t.observation_text == compose_state(sokoban_worked).composed
    after = step(sokoban_worked, t.actions).next_state
    assert after.success
    assert t.prediction_text == compose_state(after).composed


def test_slippery_oracle_emits_single_action():
    s = generate(EnvConfig("frozenlake", slippery=True), 4)
    t = parse_agent_output(SolverPolicy().act(None, s).raw_text, "frozenlake")
    assert len(t.actions) == 1


def test_spec_defaults_and_validation():
    spec = PolicySpec("remote_lm")
    assert (spec.temperature, spec.top_p, spec.max_new_tokens) == (1.0, 1.0, 400)
    assert spec.max_retries == 3 and spec.max_concurrency == 8
    assert PolicySpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigError):
        PolicySpec("greedy")
    with pytest.raises(ConfigError):
        PolicySpec.from_dict({"variant": "random", "api_key": "x"})
    with pytest.raises(ConfigError):
        make_policy(PolicySpec("planner"))


def test_remote_policy_never_sees_env():
    assert list(inspect.signature(RemoteLMPolicy.act).parameters) == ["self", "prompt"]

    class Fake:
        def complete(self, prompt):
            from selfplay_wm.llm_client import ChatResult
            return ChatResult("<think>a</think><answer>Up</answer>", 0.0, "x", {"completion_tokens": 5})

    pol = RemoteLMPolicy(Fake())
    assert act(pol, "prompt", object()).raw_text.endswith("</answer>")


# -- HTTP client --------------------------------------------------------------


def _chat_handler(seen):
    def handler(request: httpx.Request):
        body = json.loads(request.content)
        seen.append((request.url.path, dict(request.headers), body))
        if request.url.path.endswith("/chat/completions"):
            prompt = body["messages"][0]["content"]
            return httpx.Response(200, json={"choices": [{"message": {"content": f"echo:{prompt}"}}],
                                             "usage": {"completion_tokens": 3}})
        return httpx.Response(200, json={"choices": [{"logprobs": {"token_logprobs": [None, -1.0, -2.0]}}]})
    return handler


def test_chat_contract(monkeypatch):
    monkeypatch.setenv("TEST_KEY", "sekret")
    seen = []
    client = ChatClient("http://lm/v1/", "m1", api_key_env="TEST_KEY",
                        transport=httpx.MockTransport(_chat_handler(seen)))
    res = client.complete("hi")
    path, headers, body = seen[0]
    assert path == "/v1/chat/completions"
    assert headers["authorization"] == "Bearer sekret"
    assert body == {"model": "m1", "messages": [{"role": "user", "content": "hi"}],
                    "temperature": 1.0, "top_p": 1.0, "max_tokens": 400}
    assert res.text == "echo:hi" and res.usage == {"completion_tokens": 3}
    assert client.token_logprobs("abc") == [-1.0, -2.0]


def test_complete_many_matches_by_id():
    seen = []
    client = ChatClient("http://lm/v1", "m", transport=httpx.MockTransport(_chat_handler(seen)),
                        max_concurrency=4)
    prompts = [f"p{i}" for i in range(20)]
    results = client.complete_many(prompts)
    assert [r.text for r in results] == [f"echo:{p}" for p in prompts]
    assert [r.correlation_id for r in results] == [f"req-{i}" for i in range(20)]


def test_retry_then_success():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(503, text="busy")
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    client = ChatClient("http://lm", "m", backoff=0.0, transport=httpx.MockTransport(handler))
    assert client.complete("x").text == "ok"
    assert len(calls) == 3


def test_retries_exhausted_and_non_retryable():
    client = ChatClient("http://lm", "m", backoff=0.0,
                        transport=httpx.MockTransport(lambda r: httpx.Response(500, text="no")))
    with pytest.raises(EndpointError):
        client.complete("x")
    calls = []

    def bad_request(request):
        calls.append(1)
        return httpx.Response(400, text="bad")

    client = ChatClient("http://lm", "m", backoff=0.0, transport=httpx.MockTransport(bad_request))
    with pytest.raises(EndpointError):
        client.complete("x")
    assert len(calls) == 1


def test_timeout_maps_to_endpoint_timeout():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    client = ChatClient("http://lm", "m", backoff=0.0, transport=httpx.MockTransport(handler))
    with pytest.raises(EndpointTimeout):
        client.complete("x")


def test_logprob_failure_is_provider_error():
    client = ChatClient("http://lm", "m", backoff=0.0, max_retries=1,
                        transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"choices": []})))
    with pytest.raises(ProviderError):
        client.token_logprobs("x")


def test_concurrency_bound():
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}
    gate = threading.Event()

    def handler(request):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        gate.wait(0.05)
        with lock:
            state["now"] -= 1
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    client = ChatClient("http://lm", "m", max_concurrency=3, transport=httpx.MockTransport(handler))
    client.complete_many(["x"] * 12)
    assert state["peak"] <= 3


def test_rendering_unchanged_by_solver(sokoban_worked):
    before = render_symbols(sokoban_worked)
    SolverPolicy().act(None, sokoban_worked)
    assert render_symbols(sokoban_worked) == before

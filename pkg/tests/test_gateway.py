import json

import httpx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from chainrag.gateway import (
    NO_THINK_TAG, ChatRequest, ConfigError, LatencyModel, MockGateway, MockMissError,
    OpenAIGateway, PseudoEmbedder, TransportError, apply_think_mode, estimate_tokens,
)


@pytest.mark.parametrize("text,n", [("", 0), ("hello world", 2), ("a, b.", 4), ("x_y", 2), ("  ", 0)])
def test_estimate_tokens(text, n):
    assert estimate_tokens(text) == n


def test_soft_switch():
    assert apply_think_mode("Q?", "no_think") == f"Q? {NO_THINK_TAG}"
    assert apply_think_mode("Q?", "think") == "Q?"
    assert apply_think_mode("Q?", "n/a") == "Q?"


@given(st.text(max_size=40))
def test_soft_switch_idempotent(text):
    once = apply_think_mode(text, "no_think")
    assert apply_think_mode(once, "no_think") == once
    assert once.endswith(NO_THINK_TAG)


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("m", "", "u", max_output_tokens=0)
    with pytest.raises(ValueError):
        ChatRequest("m", "", "u", temperature=-1)
    with pytest.raises(ValueError):
        ChatRequest("m", "", "u", think_mode="maybe")


def test_fingerprint_covers_soft_switch():
    a = ChatRequest("m", "s", "u", think_mode="think")
    b = ChatRequest("m", "s", "u", think_mode="no_think")
    assert a.fingerprint() != b.fingerprint()
    assert a.fingerprint() == ChatRequest("m", "s", "u", think_mode="think").fingerprint()


def test_mock_lookup_order():
    gw = MockGateway(responses={"exact user": "by text"}, responder=lambda r: "by responder" if "r" in r.user else None,
                     default="fallback")
    req = gw.request("", "x")
    gw.register(req.fingerprint(), "by fingerprint")
    assert gw.chat("", "x").text == "by fingerprint"
    assert gw.chat("", "exact user").text == "by text"
    assert gw.chat("", "r").text == "by responder"
    assert gw.chat("", "zzz").text == "fallback"
    assert len(gw.calls) == 4


def test_mock_miss():
    with pytest.raises(MockMissError):
        MockGateway().chat("", "anything")


def test_mock_usage_and_latency_deterministic():
    gw = MockGateway(default="two words", latency=LatencyModel(1.0, 0.0, 0.5))
    r1, r2 = gw.chat("sys", "hello there"), gw.chat("sys", "hello there")
    assert r1 == r2
    assert r1.usage.input_tokens == estimate_tokens("sys\nhello there")
    assert r1.usage.output_tokens == 2
    assert r1.latency_ms == 2.0
    assert not r1.provider_reported


def test_pseudo_embedder():
    emb = PseudoEmbedder(32)
    vecs = emb.embed(["alpha beta", "", "!!!", "alpha beta"])
    for v in vecs:
        assert np.linalg.norm(v) == pytest.approx(1.0)
    assert np.array_equal(vecs[0], vecs[3])
    with pytest.raises(ValueError):
        PseudoEmbedder(1)


def completion(content, usage=True, reasoning=None):
    message = {"role": "assistant", "content": content}
    if reasoning:
        message["reasoning_content"] = reasoning
    body = {"choices": [{"message": message}]}
    if usage:
        body["usage"] = {"prompt_tokens": 11, "completion_tokens": 3}
    return body


def client_for(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_openai_payload_and_usage():
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return httpx.Response(200, json=completion("Paris"))

    gw = OpenAIGateway("http://x/v1", model_id="m", client=client_for(handler))
    resp = gw.chat("sys", "Q?", "no_think")
    assert resp.text == "Paris" and resp.provider_reported
    assert (resp.usage.input_tokens, resp.usage.output_tokens) == (11, 3)
    payload = seen[0]
    assert payload["model"] == "m" and payload["temperature"] == 0.0
    assert payload["messages"] == [{"role": "system", "content": "sys"}, {"role": "user", "content": "Q? /no_think"}]


def test_openai_usage_fallback_and_reasoning_field():
    gw = OpenAIGateway("http://x", client=client_for(
        lambda r: httpx.Response(200, json=completion("yes", usage=False, reasoning="hmm"))))
    resp = gw.chat("", "Q?")
    assert resp.text == "<think>hmm</think>\nyes"
    assert not resp.provider_reported
    assert resp.usage.output_tokens == estimate_tokens(resp.text)


def test_openai_retries_then_succeeds():
    attempts = []

    def handler(request):
        attempts.append(1)
        if len(attempts) == 1:
            raise httpx.ConnectError("boom")
        if len(attempts) == 2:
            return httpx.Response(503)
        return httpx.Response(200, json=completion("ok"))

    gw = OpenAIGateway("http://x", client=client_for(handler), backoff_s=0)
    assert gw.chat("", "q").text == "ok"
    assert len(attempts) == 3


def test_openai_gives_up_after_three_attempts():
    attempts = []

    def handler(request):
        attempts.append(1)
        return httpx.Response(429)

    gw = OpenAIGateway("http://x", client=client_for(handler), backoff_s=0)
    with pytest.raises(TransportError):
        gw.chat("", "q")
    assert len(attempts) == 3


@pytest.mark.parametrize("status", [401, 403])
def test_openai_auth_failure_not_retried(status):
    attempts = []

    def handler(request):
        attempts.append(1)
        return httpx.Response(status)

    with pytest.raises(ConfigError):
        OpenAIGateway("http://x", client=client_for(handler), backoff_s=0).chat("", "q")
    assert len(attempts) == 1


def test_openai_embeddings_sorted_by_index():
    def handler(request):
        return httpx.Response(200, json={"data": [{"index": 1, "embedding": [0, 1]}, {"index": 0, "embedding": [1, 0]}]})

    vecs = OpenAIGateway("http://x", client=client_for(handler)).embed(["a", "b"])
    assert [v.tolist() for v in vecs] == [[1, 0], [0, 1]]

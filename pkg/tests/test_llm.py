import json
import threading

import httpx
import pytest

from finrpt.llm import (
    AuthError,
    BadResponse,
    ChatRequest,
    ChatResponse,
    Gateway,
    HttpBackend,
    MockBackend,
    Price,
    TransportError,
    UnknownModel,
    UsageLedger,
    complete,
    cost_report,
    demo_responder,
    load_price_table,
)


def completion(text="hello there", prompt_tokens=7, completion_tokens=2):
    return {
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


def http_backend(statuses, seen=None):
    """Serve the given status codes in order; 200 carries a completion."""
    queue = list(statuses)

    def handler(request: httpx.Request) -> httpx.Response:
        if seen is not None:
            seen.append(request)
        status = queue.pop(0)
        if status == 200:
            return httpx.Response(200, json=completion())
        return httpx.Response(status, text="nope")

    client = httpx.Client(transport=httpx.MockTransport(handler))
    return HttpBackend("http://llm.local/v1/", "sk-test", client=client)


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("m", ())
    with pytest.raises(ValueError):
        ChatRequest.user("m", "x", temperature=-0.1)
    with pytest.raises(ValueError):
        ChatRequest.user("m", "x", top_p=0)
    with pytest.raises(ValueError):
        ChatRequest("m", ({"role": "robot", "content": "x"},))


def test_payload_defaults():
    payload = ChatRequest.user("gpt-4o", "hi").payload()
    assert payload == {
        "model": "gpt-4o",
        "messages": [{"role": "user", "content": "hi"}],
        "temperature": 0.0,
        "top_p": 1.0,
        "frequency_penalty": 0,
        "presence_penalty": 0,
    }


def test_mock_ok_and_token_rule():
    ledger = UsageLedger()
    response = complete(MockBackend({"a": "OK"}), ChatRequest.user("m", "three word prompt"), agent="a", ledger=ledger)
    assert response == ChatResponse("OK", 3, 1)
    assert ledger.rows()[("a", "m")].calls == 1


def test_mock_sequences_and_default():
    backend = MockBackend({"a": ["one", "two"]}, default="fallback")
    req = ChatRequest.user("m", "p")
    assert [backend.send(req, "a").text for _ in range(3)] == ["one", "two", "two"]
    assert backend.send(req, "zzz").text == "fallback"
    with pytest.raises(BadResponse):
        MockBackend({}).send(req, "a")


def test_mock_deterministic_sequences():
    def run():
        backend = MockBackend(default=demo_responder())
        return [backend.send(ChatRequest.user("m", f"p{i % 3}"), "Prediction").text for i in range(9)]

    assert run() == run()


def test_mock_from_file(tmp_path):
    path = tmp_path / "script.json"
    path.write_text(json.dumps({"replies": {"a": ["x", "y"]}, "default": "d"}))
    backend = MockBackend.from_file(path)
    req = ChatRequest.user("m", "p")
    assert [backend.send(req, t).text for t in ("a", "a", "b")] == ["x", "y", "d"]


def test_http_retries_then_succeeds():
    seen, sleeps = [], []
    ledger = UsageLedger()
    backend = http_backend([503, 429, 200], seen)
    response = complete(backend, ChatRequest.user("gpt-4o", "hi"), agent="Agent", ledger=ledger, sleep=sleeps.append)
    assert response.text == "hello there"
    assert len(seen) == 3
    assert sleeps == [1.0, 2.0]
    row = ledger.rows()[("Agent", "gpt-4o")]
    assert (row.calls, row.attempts, row.prompt_tokens, row.completion_tokens) == (1, 3, 7, 2)


def test_http_request_shape():
    seen = []
    complete(http_backend([200], seen), ChatRequest.user("gpt-4o", "hi"), agent="a")
    req = seen[0]
    assert str(req.url) == "http://llm.local/v1/chat/completions"
    assert req.headers["Authorization"] == "Bearer sk-test"
    assert json.loads(req.content)["messages"] == [{"role": "user", "content": "hi"}]


def test_http_gives_up_after_max_attempts():
    seen = []
    with pytest.raises(TransportError):
        complete(http_backend([500, 500, 500], seen), ChatRequest.user("m", "hi"), agent="a", sleep=lambda s: None)
    assert len(seen) == 3


def test_http_401_is_not_retried():
    seen = []
    with pytest.raises(AuthError):
        complete(http_backend([401, 200], seen), ChatRequest.user("m", "hi"), agent="a", sleep=lambda s: None)
    assert len(seen) == 1


def test_http_bad_payload_and_client_error():
    with pytest.raises(BadResponse):
        complete(http_backend([400]), ChatRequest.user("m", "hi"), agent="a")

    def handler(request):
        return httpx.Response(200, json={"choices": []})

    backend = HttpBackend("http://x", client=httpx.Client(transport=httpx.MockTransport(handler)))
    with pytest.raises(BadResponse):
        complete(backend, ChatRequest.user("m", "hi"), agent="a")


def test_http_connection_error_is_transport():
    def handler(request):
        raise httpx.ConnectError("refused")

    backend = HttpBackend("http://x", client=httpx.Client(transport=httpx.MockTransport(handler)))
    with pytest.raises(TransportError):
        complete(backend, ChatRequest.user("m", "hi", max_attempts=2), agent="a", sleep=lambda s: None)


def test_from_env_requires_key(monkeypatch):
    monkeypatch.delenv("FINRPT_TEST_KEY", raising=False)
    with pytest.raises(AuthError):
        HttpBackend.from_env("http://x", "FINRPT_TEST_KEY")
    monkeypatch.setenv("FINRPT_TEST_KEY", "secret")
    assert HttpBackend.from_env("http://x", "FINRPT_TEST_KEY").api_key == "secret"


def test_retry_never_changes_payload():
    flaky = http_backend([502, 200])
    steady = http_backend([200])
    req = ChatRequest.user("m", "hi")
    assert complete(flaky, req, agent="a", sleep=lambda s: None) == complete(steady, req, agent="a")


def test_cost_report_examples():
    assert cost_report(UsageLedger(), {}).total.cost == 0
    ledger = UsageLedger()
    ledger.record("a", "m", ChatResponse("", 1000, 500))
    report = cost_report(ledger, {"m": Price(0.001, 0.002)})
    assert report.total.cost == pytest.approx(2.0)


def test_cost_report_additive_and_unknown_model():
    ledger = UsageLedger()
    ledger.record("a", "m", ChatResponse("", 10, 5))
    ledger.record("b", "m", ChatResponse("", 20, 1))
    ledger.record("b", "n", ChatResponse("", 3, 3))
    prices = load_price_table({"m": {"prompt": 0.5, "completion": 1}, "n": {"prompt": 2, "completion": 0}})
    report = cost_report(ledger, prices)
    assert report.agents["a"].cost == pytest.approx(10)
    assert report.agents["b"].cost == pytest.approx(11 + 6)
    assert report.total.cost == pytest.approx(sum(r.cost for r in report.agents.values()))
    assert report.total.calls == 3
    with pytest.raises(UnknownModel):
        cost_report(ledger, {"m": Price(0, 0)})
    with pytest.raises(ValueError):
        Price(-1, 0)


def test_ledger_is_thread_safe_and_round_trips():
    ledger = UsageLedger()

    def work():
        for _ in range(500):
            ledger.record("a", "m", ChatResponse("", 2, 1))

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    row = ledger.rows()[("a", "m")]
    assert (row.calls, row.prompt_tokens, row.completion_tokens) == (4000, 8000, 4000)
    again = UsageLedger.from_dict(json.loads(json.dumps(ledger.to_dict())))
    assert again.rows() == ledger.rows()


def test_gateway_uses_defaults_and_override():
    backend = MockBackend({"a": "x"})
    gateway = Gateway(backend, model="m1")
    gateway.ask("p", agent="a")
    gateway.ask("p", agent="a", temperature=0.7)
    temps = [req.temperature for _, req in backend.calls]
    assert temps == [0.0, 0.7]
    assert gateway.ledger.calls("a") == 2

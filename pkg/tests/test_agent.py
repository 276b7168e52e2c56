from __future__ import annotations

import json
from pathlib import Path

import httpx
import pytest
from hypothesis import given

from hwtune.agent import (
    BackendConfig,
    CallRecord,
    CoordinateDescentBackend,
    FailureKind,
    RemoteBackend,
    RetryPolicy,
    ScriptedBackend,
    UnitPrices,
    UsageLedger,
    cost_report,
    mock_agent,
    parse_response,
    propose,
    send,
)
from hwtune.errors import CapacityError, ProposalExhaustedError, TransportError
from hwtune.hardware import load_profile
from hwtune.kerneltune import load_kernel_spec
from hwtune.prompt import PromptBundle, PromptOptions, assemble, render_dynamic, render_static
from hwtune.space import default_config, is_valid, load_preset

from strategies import spaces

GOLDEN = Path(__file__).parent / "golden"
RESNET = load_preset("resnet_appendix_d")

ROUND_REPLY = (
    "Thought: the larger batch helped, so keep it and lower the learning rate a little.\n"
    "Action:\n```json\n"
    '{"learning_rate": 0.004, "batch_size": 170, "weight_decay": 0.0009, '
    '"momentum": 0.9, "num_epochs": 12}\n```'
)
VALID = '{"learning_rate": 0.05, "batch_size": 64, "weight_decay": 0.001, "momentum": 0.9, "num_epochs": 12}'
LR_03 = '{"learning_rate": 0.3, "batch_size": 64, "weight_decay": 0.001, "momentum": 0.9, "num_epochs": 12}'


def bundle(space=RESNET, history=(), rounds_left=10, cap=16000):
    static = render_static(space, load_profile("a6000"), [], PromptOptions(enable_deployment=False))
    return assemble(static, render_dynamic(list(history), rounds_left), cap)


def fixture_bundle(chars: int) -> PromptBundle:
    msgs = [{"role": "system", "content": "s" * 100}, {"role": "user", "content": "u" * (chars - 100)}]
    return PromptBundle(msgs[0]["content"], msgs, chars // 4)


# ------------------------------------------------------------------ transport


def test_scripted_replays_then_repeats():
    b = ScriptedBackend(["a", "b"])
    assert [b.complete([]) for _ in range(4)] == ["a", "b", "b", "b"]
    assert len(b.received) == 4
    with pytest.raises(ValueError):
        ScriptedBackend([])


def test_send_records_usage():
    ledger = UsageLedger()
    reply = send(ScriptedBackend(["x" * 360]), fixture_bundle(600), ledger)
    assert reply.record.input_tokens == 150 and reply.record.output_tokens == 90
    assert ledger.calls == 1


def test_capacity_error_before_call():
    backend = ScriptedBackend(["x"], max_input_tokens=100)
    with pytest.raises(CapacityError):
        send(backend, fixture_bundle(600))
    assert backend.received == []


class FlakyBackend:
    name = "flaky"
    max_input_tokens = 10**6

    def __init__(self, failures):
        self.failures = failures
        self.calls = 0

    def complete(self, messages):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError("boom")
        return "ok"


def test_transport_retries():
    assert send(FlakyBackend(2), fixture_bundle(400), transport_retries=2).text == "ok"
    with pytest.raises(TransportError):
        send(FlakyBackend(3), fixture_bundle(400), transport_retries=2)


def test_ledger_additive_over_ten_calls():
    ledger = UsageLedger()
    records = [CallRecord(10 * i, i, 0.1 * i) for i in range(1, 11)]
    for r in records:
        ledger.record(r)
    assert ledger.calls == 10
    assert ledger.input_tokens == sum(r.input_tokens for r in records)
    assert ledger.output_tokens == sum(r.output_tokens for r in records)


def test_cost_report():
    empty = cost_report(UsageLedger(), 1.0)
    assert (empty.total_tokens, empty.total_cost, empty.mean_latency) == (0, 0.0, 0.0)
    ledger = UsageLedger()
    ledger.record(CallRecord(100_000, 50_000, 2.0))
    ledger.record(CallRecord(0, 0, 2.68))
    rep = cost_report(ledger, UnitPrices.blended(5.0 / 150_000))
    assert rep.total_tokens == 150_000
    assert rep.total_cost == pytest.approx(5.0, abs=0.01)
    assert rep.mean_latency == pytest.approx(2.34)


def test_remote_backend_golden():
    request = json.loads((GOLDEN / "remote_request.json").read_text())
    response = json.loads((GOLDEN / "remote_response.json").read_text())
    seen = {}

    def handler(req: httpx.Request) -> httpx.Response:
        seen["body"] = json.loads(req.content)
        seen["auth"] = req.headers.get("authorization")
        return httpx.Response(200, json=response)

    client = httpx.Client(transport=httpx.MockTransport(handler))
    backend = RemoteBackend(BackendConfig(endpoint="https://example.invalid/v1/chat",
                                          api_key_env="HWTUNE_TEST_KEY"), client)
    text = backend.complete(request["messages"])
    assert seen["body"] == request
    assert text == response["choices"][0]["message"]["content"]
    assert parse_response(text, RESNET).finetune_config == default_config(RESNET)


def test_remote_backend_auth_and_errors(monkeypatch):
    monkeypatch.setenv("HWTUNE_TEST_KEY", "k123")
    status = {"code": 500}

    def handler(req):
        assert req.headers["authorization"] == "Bearer k123"
        return httpx.Response(status["code"], json={"choices": []})

    backend = RemoteBackend(BackendConfig(api_key_env="HWTUNE_TEST_KEY"),
                            httpx.Client(transport=httpx.MockTransport(handler)))
    with pytest.raises(TransportError):
        backend.complete([{"role": "user", "content": "hi"}])
    status["code"] = 200
    with pytest.raises(TransportError):
        backend.complete([{"role": "user", "content": "hi"}])


# -------------------------------------------------------------------- parsing


def test_parse_round_reply():
    resp = parse_response(ROUND_REPLY, RESNET)
    assert resp.parsed
    assert resp.finetune_config.as_dict() == {"learning_rate": 0.004, "batch_size": 170,
                                              "weight_decay": 0.0009, "momentum": 0.9,
                                              "num_epochs": 12}
    assert resp.thought_text.startswith("Thought:")


def test_parse_tolerates_trailing_comma_and_integral_floats():
    resp = parse_response('{"learning_rate": 0.01, "batch_size": 128.0, "weight_decay": 0.0005, '
                          '"momentum": 0.9, "num_epochs": 12,}', RESNET)
    assert resp.parsed and resp.finetune_config["batch_size"] == 128


@pytest.mark.parametrize("text,kind", [
    ("I would try a smaller learning rate.", FailureKind.BAD_FORMAT),
    ('{"learning_rate": 0.01, "batch_size": ', FailureKind.BAD_FORMAT),
    ('{"weather": "sunny"}', FailureKind.OFF_TOPIC),
    (VALID.replace("0.05", "0.5"), FailureKind.CONSTRAINT_VIOLATION),
    (VALID.replace("64", '"big"'), FailureKind.CONSTRAINT_VIOLATION),
    (VALID.replace('"momentum"', '"nesterov"'), FailureKind.CONSTRAINT_VIOLATION),
])
def test_parse_failures(text, kind):
    resp = parse_response(text, RESNET)
    assert not resp.parsed and resp.failure.kind is kind


def test_parse_kernel_reply():
    spec = load_kernel_spec("softmax_appendix_e")
    text = 'Thought: wider blocks.\n{"griddim": [16, 1, 1], "blockdim": [128, 1, 1], "tiling size": 2, "unroll size": 4}'
    resp = parse_response(text, None, "kernel", spec)
    assert resp.parsed and resp.kernel_config.block == (128, 1, 1)
    bad = parse_response('{"griddim": [1, 1, 1], "blockdim": [256, 256, 1]}', None, "kernel", spec)
    assert bad.failure.kind is FailureKind.CONSTRAINT_VIOLATION


@given(spaces(1, 5))
def test_default_round_trip(space):
    text = "Thought: defaults first.\n" + json.dumps(default_config(space).as_dict())
    resp = parse_response(text, space)
    assert resp.parsed and resp.finetune_config == default_config(space)


# -------------------------------------------------------------------- propose


def test_propose_retry_then_valid():
    backend = ScriptedBackend(["no json here", VALID])
    ledger = UsageLedger()
    prop = propose(backend, bundle(), RESNET, ledger=ledger)
    assert prop.attempts == 2 and not prop.repaired and ledger.calls == 2
    retry_msgs = backend.received[1]
    assert retry_msgs[-2] == {"role": "assistant", "content": "no json here"}
    assert "JSON" in retry_msgs[-1]["content"]


def test_propose_three_kinds():
    backend = ScriptedBackend(["no json", VALID.replace("0.05", "0.5"), VALID])
    prop = propose(backend, bundle(), RESNET)
    assert prop.attempts == 3 and [f.kind for f in prop.failures] == [
        FailureKind.BAD_FORMAT, FailureKind.CONSTRAINT_VIOLATION]


def test_propose_clamps_after_exhaustion():
    backend = ScriptedBackend(["no json", '{"learning_rate": 0.3}', LR_03])
    prop = propose(backend, bundle(), RESNET)
    assert prop.repaired and prop.attempts == 3
    assert prop.config["learning_rate"] == 0.2


def test_propose_exhausted():
    with pytest.raises(ProposalExhaustedError) as err:
        propose(ScriptedBackend(["nothing"] * 3), bundle(), RESNET)
    assert [f.kind for f in err.value.failures] == [FailureKind.BAD_FORMAT] * 3


def test_propose_no_clamp_when_disabled():
    with pytest.raises(ProposalExhaustedError):
        propose(ScriptedBackend([LR_03]), bundle(), RESNET, retry_policy=RetryPolicy(clamp_fallback=False))


# ---------------------------------------------------------------------- mocks


def test_coordinate_descent_first_round_defaults():
    reply = CoordinateDescentBackend(seed=3).complete(bundle().messages)
    assert parse_response(reply, RESNET).finetune_config == default_config(RESNET)


def test_coordinate_descent_stays_valid():
    from hwtune.records import TrialRecord

    backend = mock_agent(seed=1)
    hist = []
    for rnd in range(1, 11):
        prop = propose(backend, bundle(history=hist, rounds_left=11 - rnd), RESNET)
        assert prop.attempts == 1 and is_valid(RESNET, prop.config)
        hist.append(TrialRecord(rnd, prop.config, {"accuracy": 0.5 + rnd / 100}))
    assert len({r.config for r in hist}) > 5


def test_mock_agent_factory():
    assert isinstance(mock_agent("scripted", texts=["x"]), ScriptedBackend)
    with pytest.raises(ValueError):
        mock_agent("oracle")

from __future__ import annotations

import json
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import mock_gateway
from promptcal.errors import (
    BackendUnavailable,
    BatchRequestError,
    BudgetExceeded,
    RequestRejected,
    ScriptExhausted,
)
from promptcal.gateway import (
    BackendConfig,
    BudgetDecision,
    BudgetLimits,
    ChatMessage,
    ChatRequest,
    Gateway,
    MockEntry,
    MockScript,
    UsageLedger,
    check_budget,
    cosine,
    embed_text_fallback,
    make_request,
)


def req(role="predictor", content="hello there", model="mock-model", **kwargs):
    return make_request(role, [ChatMessage("user", content)], model_id=model, **kwargs)


class TestMockComplete:
    def test_scripted_response_and_ledger(self):
        gw = mock_gateway([MockEntry("predictor", ["Yes"], match_substring="Review A")])
        response = gw.complete(req(content="Review A please"))
        assert response.content == "Yes"
        assert gw.ledger.total_completion_tokens == 1

    def test_empty_messages_rejected(self):
        gw = mock_gateway([MockEntry("predictor", ["Yes"])])
        bad = ChatRequest(messages=(), model_id="m", role_tag="predictor")
        with pytest.raises(RequestRejected):
            gw.complete(bad)

    def test_sequential_token_accounting(self):
        # 10+5 then 20+7 word counts -> totals (30, 12)
        gw = mock_gateway(
            [
                MockEntry("predictor", ["w1 w2 w3 w4 w5", "r1 r2 r3 r4 r5 r6 r7"]),
            ]
        )
        gw.complete(req(content=" ".join(f"a{i}" for i in range(10))))
        gw.complete(req(content=" ".join(f"b{i}" for i in range(20))))
        assert gw.ledger.total_prompt_tokens == 30
        assert gw.ledger.total_completion_tokens == 12

    def test_strict_miss_raises(self):
        gw = mock_gateway([MockEntry("predictor", ["Yes"])])
        with pytest.raises(ScriptExhausted):
            gw.complete(req(role="analyzer"))

    def test_exhausted_entry_raises_in_strict_mode(self):
        gw = mock_gateway([MockEntry("predictor", ["only one"])])
        gw.complete(req())
        with pytest.raises(ScriptExhausted):
            gw.complete(req())

    def test_cyclic_entry_never_exhausts(self):
        gw = mock_gateway([MockEntry("predictor", ["a", "b"], cyclic=True)])
        got = [gw.complete(req()).content for _ in range(5)]
        assert got == ["a", "b", "a", "b", "a"]

    def test_non_strict_returns_default(self):
        gw = mock_gateway([], strict=False, default_response="fallback")
        assert gw.complete(req()).content == "fallback"

    def test_role_breakdown(self):
        gw = mock_gateway(
            [MockEntry("predictor", ["Yes"]), MockEntry("analyzer", ["weak on negations"])]
        )
        gw.complete(req())
        gw.complete(req(role="analyzer"))
        assert gw.ledger.breakdown["predictor"].requests == 1
        assert gw.ledger.breakdown["analyzer"].requests == 1
        total = sum(u.prompt_tokens + u.completion_tokens for u in gw.ledger.breakdown.values())
        assert total == gw.ledger.total_tokens()

    def test_cost_table(self):
        script = MockScript([MockEntry("predictor", ["one two three four"], cyclic=True)])
        config = BackendConfig(
            kind="mock", mock_script=script, cost_table={"priced": (1.0, 2.0)}
        )
        gw = Gateway(config)
        gw.complete(req(model="priced", content="a b"))  # 2 prompt, 4 completion words
        assert gw.ledger.estimated_cost == pytest.approx(2 / 1000 * 1.0 + 4 / 1000 * 2.0)
        gw.complete(req(model="unknown-model", content="a b"))
        assert gw.ledger.estimated_cost == pytest.approx(2 / 1000 * 1.0 + 4 / 1000 * 2.0)


class TestCompleteMany:
    def test_positional_alignment(self):
        entries = [
            MockEntry("predictor", ["first"], match_substring="q0"),
            MockEntry("predictor", ["second"], match_substring="q1"),
        ]
        gw = mock_gateway(entries)
        out = gw.complete_many([req(content="q0"), req(content="q1")])
        assert [r.content for r in out] == ["first", "second"]

    def test_empty_batch_rejected(self):
        gw = mock_gateway([])
        with pytest.raises(RequestRejected):
            gw.complete_many([])

    def test_failure_carries_index(self):
        entries = [
            MockEntry("predictor", ["a"], match_substring="q0"),
            MockEntry("predictor", ["c"], match_substring="q2"),
        ]
        gw = mock_gateway(entries)
        with pytest.raises(BatchRequestError) as exc_info:
            gw.complete_many([req(content="q0"), req(content="q1"), req(content="q2")])
        assert exc_info.value.index == 1

    def test_parallelism_degrees_identical(self):
        # [DERIVED] run the same batch under parallelism 1 and 8, compare byte-wise.
        def build():
            entries = [
                MockEntry("predictor", [f"answer {i}"], match_substring=f"q{i}")
                for i in range(8)
            ]
            return mock_gateway(entries)

        requests = [req(content=f"q{i}") for i in range(8)]
        gw1, gw8 = build(), build()
        out1 = [r.content for r in gw1.complete_many(list(requests), parallelism=1)]
        out8 = [r.content for r in gw8.complete_many(list(requests), parallelism=8)]
        assert out1 == out8
        assert gw1.ledger.to_json() == gw8.ledger.to_json()

    def test_shared_entry_consumed_in_request_order(self):
        gw = mock_gateway([MockEntry("predictor", ["r0", "r1", "r2", "r3"])])
        out = gw.complete_many([req() for _ in range(4)], parallelism=4)
        assert [r.content for r in out] == ["r0", "r1", "r2", "r3"]


class TestLedger:
    @settings(max_examples=50, deadline=None)
    @given(
        counts=st.lists(
            st.tuples(st.integers(1, 40), st.integers(1, 40)), min_size=1, max_size=20
        )
    )
    def test_additivity_over_random_scripts(self, counts):
        responses = [" ".join(f"w{i}" for i in range(c)) for _, c in counts]
        gw = mock_gateway([MockEntry("predictor", responses)])
        total_prompt = total_completion = 0
        for prompt_words, completion_words in counts:
            content = " ".join(f"p{i}" for i in range(prompt_words))
            response = gw.complete(req(content=content))
            total_prompt += response.prompt_tokens
            total_completion += response.completion_tokens
        assert gw.ledger.total_prompt_tokens == total_prompt
        assert gw.ledger.total_completion_tokens == total_completion
        by_role = gw.ledger.breakdown["predictor"]
        assert (by_role.prompt_tokens, by_role.completion_tokens) == (
            total_prompt,
            total_completion,
        )

    def test_concurrent_updates_are_atomic(self):
        ledger = UsageLedger()

        def add_many():
            for _ in range(500):
                ledger.add("predictor", 1, 2, 0.0)

        threads = [threading.Thread(target=add_many) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert ledger.total_prompt_tokens == 4000
        assert ledger.total_completion_tokens == 8000

    def test_round_trip(self):
        ledger = UsageLedger()
        ledger.add("predictor", 10, 5, 0.01)
        ledger.add("analyzer", 3, 7, 0.0)
        restored = UsageLedger.from_json(ledger.to_json())
        assert restored.to_json() == ledger.to_json()


class TestBudget:
    def test_strictly_exceeded_halts(self):
        ledger = UsageLedger()
        ledger.add("predictor", 0, 1001, 0.0)
        assert check_budget(ledger, BudgetLimits(max_tokens=1000)) is BudgetDecision.HALT

    def test_boundary_inclusive(self):
        ledger = UsageLedger()
        ledger.add("predictor", 0, 1000, 0.0)
        assert check_budget(ledger, BudgetLimits(max_tokens=1000)) is BudgetDecision.CONTINUE

    def test_no_limits_always_continue(self):
        ledger = UsageLedger()
        ledger.add("predictor", 10**9, 10**9, 10**9)
        assert check_budget(ledger, BudgetLimits()) is BudgetDecision.CONTINUE

    def test_cost_limit(self):
        ledger = UsageLedger()
        ledger.add("predictor", 0, 0, 1.5)
        assert check_budget(ledger, BudgetLimits(max_cost=1.0)) is BudgetDecision.HALT

    def test_gateway_guard_blocks_dispatch(self):
        gw = mock_gateway(
            [MockEntry("predictor", ["w1 w2 w3", "w1 w2 w3"], cyclic=True)],
            limits=BudgetLimits(max_tokens=2),
        )
        gw.complete(req())  # 3 completion tokens > 2, next call must not dispatch
        with pytest.raises(BudgetExceeded):
            gw.complete(req())
        assert len(gw.sent_requests) == 1


class TestEmbeddings:
    def test_identical_texts_cosine_one(self):
        gw = mock_gateway([])
        v1, v2 = gw.embed(["same text", "same text"])
        assert cosine(v1, v2) == pytest.approx(1.0)

    def test_disjoint_ngrams_cosine_zero(self):
        v1 = embed_text_fallback("aaaa")
        v2 = embed_text_fallback("zzzz")
        assert cosine(v1, v2) == 0.0

    def test_unit_norm(self):
        for text in ["a", "ab", "abc", "a longer text with words", "aaaa"]:
            vector = embed_text_fallback(text)
            assert abs(np.linalg.norm(vector.array()) - 1.0) <= 1e-6

    @settings(max_examples=50, deadline=None)
    @given(st.text(min_size=1, max_size=80))
    def test_deterministic(self, text):
        assert embed_text_fallback(text).values == embed_text_fallback(text).values

    def test_empty_list_rejected(self):
        gw = mock_gateway([])
        with pytest.raises(RequestRejected):
            gw.embed([])


class TestMockScriptFile:
    def test_load_from_json(self, tmp_path):
        script_file = tmp_path / "script.json"
        script_file.write_text(
            json.dumps(
                [
                    {"role_tag": "predictor", "match_substring": "Review A", "responses": ["Yes"]},
                    {"role_tag": "analyzer", "responses": ["looks weak"], "cyclic": True},
                ]
            )
        )
        script = MockScript.load(script_file)
        gw = Gateway(BackendConfig(kind="mock", mock_script=script))
        assert gw.complete(req(content="Review A")).content == "Yes"
        assert gw.complete(req(role="analyzer")).content == "looks weak"
        assert gw.complete(req(role="analyzer")).content == "looks weak"

    def test_unknown_role_rejected(self, tmp_path):
        script_file = tmp_path / "script.json"
        script_file.write_text(json.dumps([{"role_tag": "wizard", "responses": ["x"]}]))
        with pytest.raises(ValueError):
            MockScript.load(script_file)


class _ScriptedTransport:
    """Scripted (status, payload) sequence standing in for the HTTP layer."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = 0

    def post(self, url, headers, body, timeout):
        self.calls += 1
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def _ok_payload(content="fine", prompt_tokens=7, completion_tokens=3):
    return {
        "choices": [{"message": {"content": content}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


def _remote_gateway(transport, monkeypatch, max_retries=3):
    monkeypatch.setenv("TEST_API_KEY", "secret")
    config = BackendConfig(
        kind="remote",
        endpoint_url="http://backend.test/v1",
        api_key_env="TEST_API_KEY",
        max_retries=max_retries,
        retry_backoff=(0.0,),
    )
    return Gateway(config, transport=transport)


class TestRemoteBackend:
    def test_retry_then_success_counts_once(self, monkeypatch):
        transport = _ScriptedTransport([(500, {}), (500, {}), (200, _ok_payload())])
        gw = _remote_gateway(transport, monkeypatch)
        response = gw.complete(req())
        assert response.content == "fine"
        assert transport.calls == 3
        assert gw.ledger.total_prompt_tokens == 7
        assert gw.ledger.total_completion_tokens == 3
        assert gw.ledger.breakdown["predictor"].requests == 1

    def test_429_retried(self, monkeypatch):
        transport = _ScriptedTransport([(429, {}), (200, _ok_payload())])
        gw = _remote_gateway(transport, monkeypatch)
        assert gw.complete(req()).content == "fine"

    def test_4xx_not_retried(self, monkeypatch):
        transport = _ScriptedTransport([(400, {"error": "bad"})])
        gw = _remote_gateway(transport, monkeypatch)
        with pytest.raises(RequestRejected):
            gw.complete(req())
        assert transport.calls == 1
        assert gw.ledger.total_tokens() == 0

    def test_gives_up_after_retries(self, monkeypatch):
        transport = _ScriptedTransport([(500, {})] * 4)
        gw = _remote_gateway(transport, monkeypatch)
        with pytest.raises(BackendUnavailable):
            gw.complete(req())
        assert transport.calls == 4  # 1 try + 3 retries

    def test_missing_api_key_rejected(self, monkeypatch):
        monkeypatch.delenv("MISSING_KEY", raising=False)
        config = BackendConfig(
            kind="remote", endpoint_url="http://backend.test", api_key_env="MISSING_KEY"
        )
        gw = Gateway(config, transport=_ScriptedTransport([]))
        with pytest.raises(RequestRejected):
            gw.complete(req())

    def test_requests_per_minute_paces_dispatch(self, monkeypatch):
        import time

        monkeypatch.setenv("TEST_API_KEY", "secret")
        config = BackendConfig(
            kind="remote",
            endpoint_url="http://backend.test/v1",
            api_key_env="TEST_API_KEY",
            requests_per_minute=1200,  # 50 ms between dispatches
        )
        transport = _ScriptedTransport([(200, _ok_payload())] * 3)
        gw = Gateway(config, transport=transport)
        started = time.monotonic()
        for _ in range(3):
            gw.complete(req())
        assert time.monotonic() - started >= 0.10

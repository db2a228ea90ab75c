"""Wire-format tests against a live local HTTP server speaking the
OpenAI-compatible chat-completions and embeddings JSON bodies."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from promptcal.gateway import BackendConfig, ChatMessage, Gateway, make_request


class _StubBackend(BaseHTTPRequestHandler):
    seen: list[dict] = []
    fail_first_n = 0

    def log_message(self, *args):
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        body = json.loads(self.rfile.read(length))
        type(self).seen.append(
            {"path": self.path, "auth": self.headers.get("Authorization"), "body": body}
        )
        if type(self).fail_first_n > 0:
            type(self).fail_first_n -= 1
            self.send_response(429)
            self.end_headers()
            return
        if self.path.endswith("/chat/completions"):
            payload = {
                "choices": [{"message": {"content": "Yes"}}],
                "usage": {"prompt_tokens": 12, "completion_tokens": 1},
            }
        elif self.path.endswith("/embeddings"):
            payload = {
                "data": [
                    {"index": i, "embedding": [1.0, 2.0, 2.0]}
                    for i in range(len(body["input"]))
                ]
            }
        else:
            self.send_response(404)
            self.end_headers()
            return
        raw = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)


@pytest.fixture
def stub_backend(monkeypatch):
    _StubBackend.seen = []
    _StubBackend.fail_first_n = 0
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubBackend)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    monkeypatch.setenv("STUB_API_KEY", "stub-secret")
    yield f"http://127.0.0.1:{server.server_address[1]}/v1"
    server.shutdown()
    server.server_close()


def _gateway(url: str) -> Gateway:
    config = BackendConfig(
        kind="remote",
        endpoint_url=url,
        api_key_env="STUB_API_KEY",
        retry_backoff=(0.0,),
        embedding_model="stub-embed",
    )
    return Gateway(config)


def test_chat_completion_wire_format(stub_backend):
    gw = _gateway(stub_backend)
    request = make_request(
        "predictor",
        [ChatMessage("system", "the prompt"), ChatMessage("user", "Review A")],
        model_id="stub-model",
        max_tokens=64,
        seed=7,
    )
    response = gw.complete(request)
    assert response.content == "Yes"
    assert (response.prompt_tokens, response.completion_tokens) == (12, 1)

    [seen] = _StubBackend.seen
    assert seen["path"] == "/v1/chat/completions"
    assert seen["auth"] == "Bearer stub-secret"
    assert seen["body"]["model"] == "stub-model"
    assert seen["body"]["messages"] == [
        {"role": "system", "content": "the prompt"},
        {"role": "user", "content": "Review A"},
    ]
    assert seen["body"]["temperature"] == 0.0  # predictor role default
    assert seen["body"]["max_tokens"] == 64
    assert seen["body"]["seed"] == 7
    assert gw.ledger.total_prompt_tokens == 12


def test_429_retried_against_live_server(stub_backend):
    _StubBackend.fail_first_n = 2
    gw = _gateway(stub_backend)
    response = gw.complete(make_request("predictor", [ChatMessage("user", "x")], "stub-model"))
    assert response.content == "Yes"
    assert len(_StubBackend.seen) == 3
    # retry idempotence: the tokens were counted exactly once
    assert gw.ledger.breakdown["predictor"].requests == 1
    assert gw.ledger.total_completion_tokens == 1


def test_embeddings_wire_format_and_normalization(stub_backend):
    gw = _gateway(stub_backend)
    vectors = gw.embed(["first text", "second text"])
    [seen] = _StubBackend.seen
    assert seen["path"] == "/v1/embeddings"
    assert seen["body"] == {"model": "stub-embed", "input": ["first text", "second text"]}
    assert len(vectors) == 2
    for vector in vectors:
        assert abs(np.linalg.norm(vector.array()) - 1.0) <= 1e-6
    # [1, 2, 2] normalizes to [1/3, 2/3, 2/3]
    assert vectors[0].values == pytest.approx((1 / 3, 2 / 3, 2 / 3))

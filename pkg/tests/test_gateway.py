"""Gateway behavior: digests, cassette record/replay, retries, offline replay."""

from __future__ import annotations

import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from typeforge.errors import CassetteMissError, TransportError
from typeforge.gateway import (
    Cassette,
    ChatTurn,
    Conversation,
    LLMGateway,
    ModelConfig,
    request_digest,
)


def conversation(*contents: str) -> Conversation:
    conv = Conversation((ChatTurn("system", "sys"),))
    for i, content in enumerate(contents):
        conv.append("user" if i % 2 == 0 else "assistant", content)
    return conv


class TestConversation:
    def test_first_turn_must_not_be_assistant(self):
        with pytest.raises(ValueError):
            Conversation((ChatTurn("assistant", "hello"),))

    def test_empty_content_rejected(self):
        with pytest.raises(ValueError):
            ChatTurn("user", "")

    def test_append_only_growth(self):
        conv = conversation("a")
        before = conv.turns
        conv.append("assistant", "b")
        assert conv.turns[: len(before)] == before


class TestModelConfig:
    def test_temperature_defaults_to_zero(self):
        assert ModelConfig().temperature == 0.0

    def test_negative_temperature_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(temperature=-0.1)


class TestRequestDigest:
    def test_same_inputs_same_digest(self):
        cfg = ModelConfig()
        assert request_digest(conversation("hi"), cfg) == request_digest(conversation("hi"), cfg)

    def test_single_character_difference_changes_digest(self):
        cfg = ModelConfig()
        assert request_digest(conversation("hi there"), cfg) != request_digest(
            conversation("hi thera"), cfg
        )

    def test_temperature_changes_digest(self):
        conv = conversation("hi")
        assert request_digest(conv, ModelConfig(temperature=0.0)) != request_digest(
            conv, ModelConfig(temperature=0.5)
        )

    def test_timeout_is_excluded(self):
        conv = conversation("hi")
        assert request_digest(conv, ModelConfig(timeout_s=1)) == request_digest(
            conv, ModelConfig(timeout_s=99)
        )


class _StubHandler(BaseHTTPRequestHandler):
    hits = 0

    def do_POST(self):
        type(self).hits += 1
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        text = f"echo:{body['messages'][-1]['content']}"
        payload = json.dumps({"choices": [{"message": {"content": text}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    _StubHandler.hits = 0
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


@pytest.fixture()
def no_network(monkeypatch):
    """Fail the test if anything opens a socket."""

    def guard(*args, **kwargs):
        raise AssertionError("network access attempted during replay")

    monkeypatch.setattr(socket, "socket", guard)


class TestRecordReplay:
    def test_record_then_replay_round_trip(self, stub_server, tmp_path, monkeypatch):
        cassette_path = tmp_path / "cassette.json"
        recorder = LLMGateway(
            mode="record", cassette_path=cassette_path, api_base=stub_server, api_key="k"
        )
        conv = conversation("what types break this?")
        recorded = recorder.complete(conv)
        assert recorded == "echo:what types break this?"
        assert _StubHandler.hits == 1

        replayer = LLMGateway(mode="replay", cassette_path=cassette_path)
        monkeypatch.setattr(
            socket, "socket", lambda *a, **k: (_ for _ in ()).throw(AssertionError("network"))
        )
        assert replayer.complete(conv) == recorded
        assert _StubHandler.hits == 1  # zero additional network calls

    def test_replay_miss_names_digest(self, tmp_path, no_network):
        cassette = Cassette()
        gateway = LLMGateway(mode="replay", cassette=cassette)
        conv = conversation("never recorded")
        expected = request_digest(conv, gateway.config)
        with pytest.raises(CassetteMissError) as err:
            gateway.complete(conv)
        assert err.value.digest == expected

    def test_replay_hit_is_exact_stored_text(self, no_network):
        cassette = Cassette()
        gateway = LLMGateway(mode="replay", cassette=cassette)
        conv = conversation("q")
        cassette.put(request_digest(conv, gateway.config), "stored answer", "m")
        assert gateway.complete(conv) == "stored answer"

    def test_replay_requires_cassette(self):
        with pytest.raises(ValueError):
            LLMGateway(mode="replay")

    def test_cassette_file_round_trip(self, tmp_path):
        cassette = Cassette(metadata={"model_id": "m"})
        cassette.put("d1", "r1", "m")
        cassette.save(tmp_path / "c.json")
        loaded = Cassette.load(tmp_path / "c.json")
        assert loaded.get("d1") == "r1"
        assert loaded.metadata["model_id"] == "m"


class TestRetries:
    def test_bounded_retries_with_backoff(self):
        sleeps: list[float] = []
        failures = {"count": 0}

        def flaky(payload):
            failures["count"] += 1
            raise TransportError("boom")

        gateway = LLMGateway(mode="live", transport=flaky, sleeper=sleeps.append)
        with pytest.raises(TransportError) as err:
            gateway.complete(conversation("x"))
        assert failures["count"] == 3
        assert err.value.attempts == 3
        assert sleeps == [1.0, 2.0]
        assert gateway.stats.attempts == 3
        assert gateway.stats.retries == 2

    def test_success_after_transient_failure(self):
        calls = {"n": 0}

        def flaky(payload):
            calls["n"] += 1
            if calls["n"] < 2:
                raise TransportError("transient")
            return "ok"

        gateway = LLMGateway(mode="live", transport=flaky, sleeper=lambda s: None)
        assert gateway.complete(conversation("x")) == "ok"
        assert gateway.stats.attempts == 2

    def test_http_error_status_raises_transport_error(self, stub_server, monkeypatch):
        class FailingHandler(_StubHandler):
            def do_POST(self):
                self.send_response(500)
                self.send_header("Content-Length", "0")
                self.end_headers()

        server = ThreadingHTTPServer(("127.0.0.1", 0), FailingHandler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            gateway = LLMGateway(
                mode="live",
                api_base=f"http://127.0.0.1:{server.server_address[1]}",
                sleeper=lambda s: None,
            )
            with pytest.raises(TransportError) as err:
                gateway.complete(conversation("x"))
            assert err.value.status == 500
        finally:
            server.shutdown()

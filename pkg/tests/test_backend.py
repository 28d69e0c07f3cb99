import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, strategies as st

from revconflict.backend import (
    BackendBinding,
    ChatMessage,
    ChatResponse,
    CredentialError,
    DecodingConfig,
    HttpBackend,
    RecordingBackend,
    RetryPolicy,
    ScriptEntry,
    ScriptMiss,
    ScriptedBackend,
    TransportError,
    UsageMeter,
    fingerprint,
    load_script,
    usage_report,
    write_script,
)


def msg(role, content):
    return ChatMessage(role=role, content=content)


def test_chat_message_roles():
    msg("system", "s")
    msg("user", "u")
    msg("assistant", "")
    with pytest.raises(ValueError):
        msg("tool", "x")
    with pytest.raises(ValueError):
        msg("user", "")


def test_decoding_config_validation():
    DecodingConfig()
    with pytest.raises(ValueError):
        DecodingConfig(temperature=-0.1)
    with pytest.raises(ValueError):
        DecodingConfig(top_p=0.0)
    with pytest.raises(ValueError):
        DecodingConfig(max_output_tokens=0)


def test_fingerprint_sensitivity():
    base = [msg("user", "hello")]
    assert fingerprint(base) == fingerprint([msg("user", "hello")])
    assert fingerprint(base) != fingerprint([msg("user", "hello!")])
    assert fingerprint(base) != fingerprint([msg("system", "hello")])
    two = [msg("user", "a"), msg("assistant", "b")]
    swapped = [msg("assistant", "b"), msg("user", "a")]
    assert fingerprint(two) != fingerprint(swapped)


@given(st.lists(st.tuples(st.sampled_from(["system", "user", "assistant"]), st.text(min_size=1)), min_size=1, max_size=4))
def test_fingerprint_is_hex_sha256(parts):
    messages = [msg(role, content) for role, content in parts]
    fp = fingerprint(messages)
    assert len(fp) == 64
    int(fp, 16)


def test_fingerprint_resists_concatenation_ambiguity():
    # same concatenated text, different message boundaries
    a = [msg("user", "ab"), msg("assistant", "c")]
    b = [msg("user", "a"), msg("assistant", "bc")]
    assert fingerprint(a) != fingerprint(b)


def test_script_round_trip(tmp_path):
    entries = [
        ScriptEntry(fingerprint="f" * 64, response='{"x":1}', input_tokens=3, output_tokens=5),
        ScriptEntry(fingerprint="e" * 64, response="plain", input_tokens=1, output_tokens=1, truncated=True),
    ]
    path = tmp_path / "script.jsonl"
    write_script(entries, path)
    assert load_script(path) == entries


def test_scripted_backend_hit_and_miss(tmp_path):
    messages = [msg("user", "what say you")]
    entry = ScriptEntry(
        fingerprint=fingerprint(messages),
        response="scripted reply",
        input_tokens=7,
        output_tokens=2,
    )
    backend = ScriptedBackend([entry])
    binding = BackendBinding(role="judge")
    response = backend.complete(binding, messages)
    assert response == ChatResponse("scripted reply", 7, 2, truncated=False)

    with pytest.raises(ScriptMiss) as err:
        backend.complete(binding, [msg("user", "what say you now")])
    assert entry.fingerprint in str(err.value)  # nearest known fingerprint is named


def test_scripted_backend_last_entry_wins(tmp_path):
    messages = [msg("user", "dup")]
    fp = fingerprint(messages)
    entries = [
        ScriptEntry(fingerprint=fp, response="first", input_tokens=0, output_tokens=0),
        ScriptEntry(fingerprint=fp, response="second", input_tokens=0, output_tokens=0),
    ]
    path = tmp_path / "s.jsonl"
    write_script(entries, path)
    backend = ScriptedBackend.from_file(path)
    assert backend.complete(BackendBinding(role="judge"), messages).text == "second"


class _FakeInner:
    def complete(self, binding, messages):
        return ChatResponse(text=f"echo:{messages[-1].content}", input_tokens=1, output_tokens=2)


def test_recording_then_replay(tmp_path):
    recorder = RecordingBackend(_FakeInner())
    binding = BackendBinding(role="extractor")
    first = recorder.complete(binding, [msg("user", "alpha")])
    second = recorder.complete(binding, [msg("user", "beta")])
    path = tmp_path / "rec.jsonl"
    write_script(recorder.entries, path)

    replay = ScriptedBackend.from_file(path)
    assert replay.complete(binding, [msg("user", "alpha")]).text == first.text
    assert replay.complete(binding, [msg("user", "beta")]).text == second.text


def test_usage_meter_accumulates_by_role():
    meter = UsageMeter()
    meter.add("extractor", ChatResponse("x", 10, 2))
    meter.add("extractor", ChatResponse("y", 5, 1))
    meter.add("judge", ChatResponse("z", 3, 3))
    snapshot = dict(meter.snapshot())
    assert snapshot["extractor"].input_tokens == 15
    assert snapshot["extractor"].calls == 2
    assert snapshot["judge"].output_tokens == 3


# ---- live HTTP path ------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    server_version = "test"
    # class-level knobs reset per fixture
    fail_times = 0
    status_when_failing = 503
    requests_seen = None
    finish_reason = "stop"

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).requests_seen.append(
            {"path": self.path, "body": body, "auth": self.headers.get("Authorization")}
        )
        if type(self).fail_times > 0:
            type(self).fail_times -= 1
            self.send_response(type(self).status_when_failing)
            self.end_headers()
            self.wfile.write(b"backend unavailable")
            return
        reply = {
            "choices": [
                {
                    "message": {"role": "assistant", "content": "live reply"},
                    "finish_reason": type(self).finish_reason,
                }
            ],
            "usage": {"prompt_tokens": 11, "completion_tokens": 4},
        }
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(json.dumps(reply).encode())

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    _Handler.fail_times = 0
    _Handler.status_when_failing = 503
    _Handler.requests_seen = []
    _Handler.finish_reason = "stop"
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1"
    server.shutdown()
    thread.join(timeout=5)


def _binding(base_url, **kwargs):
    defaults = dict(
        role="extractor",
        model="test-model",
        base_url=base_url,
        retry=RetryPolicy(max_attempts=3, backoff_s=0.0),
    )
    defaults.update(kwargs)
    return BackendBinding(**defaults)


def test_http_happy_path(http_server):
    backend = HttpBackend(timeout_s=5)
    response = backend.complete(_binding(http_server), [msg("user", "hi")])
    assert response == ChatResponse("live reply", 11, 4, truncated=False)
    seen = _Handler.requests_seen
    assert len(seen) == 1
    assert seen[0]["path"] == "/v1/chat/completions"
    body = seen[0]["body"]
    assert body["model"] == "test-model"
    assert body["messages"] == [{"role": "user", "content": "hi"}]
    assert body["temperature"] == 0.0
    assert body["seed"] == 42
    assert "top_k" not in body


def test_http_top_k_included_when_set(http_server):
    backend = HttpBackend(timeout_s=5)
    binding = _binding(http_server, decoding=DecodingConfig(top_k=40))
    backend.complete(binding, [msg("user", "hi")])
    assert _Handler.requests_seen[0]["body"]["top_k"] == 40


def test_http_retries_through_5xx(http_server):
    _Handler.fail_times = 2
    backend = HttpBackend(timeout_s=5)
    response = backend.complete(_binding(http_server), [msg("user", "hi")])
    assert response.text == "live reply"
    assert len(_Handler.requests_seen) == 3


def test_http_gives_up_after_max_attempts(http_server):
    _Handler.fail_times = 10
    backend = HttpBackend(timeout_s=5)
    with pytest.raises(TransportError) as err:
        backend.complete(_binding(http_server), [msg("user", "hi")])
    assert "3 attempts" in str(err.value)
    assert len(_Handler.requests_seen) == 3


def test_http_non_retryable_status_fails_fast(http_server):
    _Handler.fail_times = 5
    _Handler.status_when_failing = 400
    backend = HttpBackend(timeout_s=5)
    with pytest.raises(TransportError):
        backend.complete(_binding(http_server), [msg("user", "hi")])
    assert len(_Handler.requests_seen) == 1


def test_http_truncation_flag(http_server):
    _Handler.finish_reason = "length"
    backend = HttpBackend(timeout_s=5)
    response = backend.complete(_binding(http_server), [msg("user", "hi")])
    assert response.truncated


def test_http_missing_credential(http_server, monkeypatch):
    monkeypatch.delenv("REVCONFLICT_TEST_KEY", raising=False)
    backend = HttpBackend(timeout_s=5)
    binding = _binding(http_server, credential_env="REVCONFLICT_TEST_KEY")
    with pytest.raises(CredentialError) as err:
        backend.complete(binding, [msg("user", "hi")])
    assert "REVCONFLICT_TEST_KEY" in str(err.value)
    assert _Handler.requests_seen == []  # refused before any request


def test_http_sends_bearer_token(http_server, monkeypatch):
    monkeypatch.setenv("REVCONFLICT_TEST_KEY", "sk-local-test")
    backend = HttpBackend(timeout_s=5)
    binding = _binding(http_server, credential_env="REVCONFLICT_TEST_KEY")
    backend.complete(binding, [msg("user", "hi")])
    assert _Handler.requests_seen[0]["auth"] == "Bearer sk-local-test"

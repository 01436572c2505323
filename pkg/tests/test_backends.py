import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from culturaleval.judge.backends import (
    CacheError,
    CompletionError,
    Decoding,
    HttpBackend,
    MockBackend,
    ResponseCache,
    TransientError,
    complete,
    request_hash,
    request_key,
)
from culturaleval.judge.calls import ask
from culturaleval.judge.parsers import parse_edit_scores


class Flaky(MockBackend):
    def __init__(self, failures, **kw):
        super().__init__(**kw)
        self.failures = failures

    def generate(self, prompt, attempt=0):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransientError("HTTP 503", 503)
        return "ok"


def test_cache_hit_skips_backend(tmp_path):
    cache = ResponseCache(tmp_path)
    b = MockBackend(default="hello")
    assert complete(b, "p", cache) == "hello"
    assert complete(b, "p", cache) == "hello"
    assert b.calls == 1 and cache.hits == 1 and cache.misses == 1


def test_cache_key_covers_model_decoding_prompt_attempt():
    base = request_hash(request_key("m", Decoding(), "p"))
    assert base != request_hash(request_key("m2", Decoding(), "p"))
    assert base != request_hash(request_key("m", Decoding(temperature=0.7), "p"))
    assert base != request_hash(request_key("m", Decoding(), "p2"))
    assert base != request_hash(request_key("m", Decoding(), "p", attempt=1))


def test_retries_then_success(tmp_path):
    b = Flaky(2)
    assert complete(b, "p", ResponseCache(tmp_path), retries=2, backoff=0) == "ok"
    assert b.calls == 3


def test_retries_exhausted(tmp_path):
    b = Flaky(5)
    with pytest.raises(CompletionError, match="gave up after 3"):
        complete(b, "p", ResponseCache(tmp_path), retries=2, backoff=0)
    assert b.calls == 3


def test_corrupt_cache_entry_is_reported(tmp_path):
    cache = ResponseCache(tmp_path)
    b = MockBackend(default="x")
    complete(b, "p", cache)
    path = cache.path_for(request_hash(request_key("mock", b.decoding, "p")))
    path.write_text("{truncated")
    with pytest.raises(CacheError, match="corrupt"):
        complete(b, "p", cache)
    path.write_text(json.dumps({"request": {"model": "other"}, "response": "x"}))
    with pytest.raises(CacheError, match="does not match"):
        complete(b, "p", cache)


def test_cache_safe_under_concurrency(tmp_path):
    cache = ResponseCache(tmp_path)
    b = MockBackend(responses=lambda p: p.upper())
    results = {}

    def work(i):
        results[i] = complete(b, f"prompt {i % 5}", cache)

    threads = [threading.Thread(target=work, args=(i,)) for i in range(40)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(results[i] == f"PROMPT {i % 5}" for i in range(40))
    assert len(list(tmp_path.rglob("*.json"))) == 5


def test_mock_without_response_errors():
    with pytest.raises(CompletionError):
        MockBackend(responses={"a": "b"}).generate("zzz")


def test_unreachable_endpoint_raises_completion_error():
    b = HttpBackend("http://127.0.0.1:9/complete", "m")
    with pytest.raises(CompletionError, match="transport error"):
        complete(b, "p", None, retries=0)


class _Handler(BaseHTTPRequestHandler):
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        _Handler.seen.append((body, self.headers.get("Authorization")))
        if body.get("prompt") == "boom":
            self.send_response(500)
            self.end_headers()
            return
        if "messages" in body:
            payload = {"choices": [{"message": {"content": "chat:" + body["messages"][0]["content"]}}]}
        else:
            payload = {"text": "simple:" + body["prompt"]}
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    srv = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    _Handler.seen = []
    yield f"http://127.0.0.1:{srv.server_address[1]}/v1"
    srv.shutdown()


def test_http_wire_formats(server, monkeypatch):
    monkeypatch.setenv("CULTURALEVAL_API_KEY", "secret")
    simple = HttpBackend(server, "judge", Decoding(seed=7))
    assert simple.generate("hi") == "simple:hi"
    body, auth = _Handler.seen[-1]
    assert body == {"model": "judge", "prompt": "hi", "temperature": 0.0, "max_tokens": 1024, "seed": 7}
    assert auth == "Bearer secret"
    chat = HttpBackend(server, "judge", wire="openai-chat")
    assert chat.generate("yo", attempt=1) == "chat:yo"
    assert _Handler.seen[-1][0]["seed"] == 1


def test_http_5xx_is_retried(server):
    b = HttpBackend(server, "judge")
    with pytest.raises(CompletionError, match="HTTP 500"):
        complete(b, "boom", None, retries=1, backoff=0)
    assert len(_Handler.seen) == 2


def test_credentials_never_cached(server, tmp_path, monkeypatch):
    monkeypatch.setenv("CULTURALEVAL_API_KEY", "secret")
    cache = ResponseCache(tmp_path)
    complete(HttpBackend(server, "judge"), "hi", cache)
    for f in tmp_path.rglob("*.json"):
        assert "secret" not in f.read_text()


def test_requery_once_then_null(tmp_path):
    b = MockBackend(default="not a dict")
    r = ask(b, "p", parse_edit_scores, ResponseCache(tmp_path))
    assert r.is_null and r.requeried and len(r.raw) == 2
    assert b.calls == 2


def test_requery_recovers():
    answers = iter(["garbage", "{'correctness': 1, 'localisation': 2, 'offensiveness': 0}"])
    b = MockBackend(responses=lambda p: next(answers))
    r = ask(b, "p", parse_edit_scores)
    assert not r.is_null and r.requeried and r.value.localisation == 2

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from chart_tir.clients import (
    CassetteTransport, ChatClient, ChatMessage, HttpTransport, ImagePart, PolicyReply, Role, Sampling,
    ScriptedTransport, TextPart, TransientError, build_request, completion_response, judge_answer, parse_reply,
    parse_yes_no, request_key, require_logprobs,
)
from chart_tir.errors import (
    CapabilityError, CassetteMiss, DeadlineExceeded, EndpointUnavailable, MalformedReply, UnparseableVerdict,
)

from conftest import make_image, scripted

MSG = [ChatMessage.text(Role.USER, "hi")]


def test_basic_completion():
    c = scripted(["hello"])
    assert c.complete(MSG) == PolicyReply("hello", None)
    req = c.transport.requests[0]
    assert req["messages"][0] == {"role": "user", "content": [{"type": "text", "text": "hi"}]}
    assert req["model"] == "stub"


def test_retries_then_succeeds():
    slept = []
    c = ChatClient(ScriptedTransport([TransientError("503"), TransientError("503"), "ok"]),
                   max_retries=3, backoff_s=0.5, sleep=slept.append)
    assert c.complete(MSG).text == "ok"
    assert slept == [0.5, 1.0]


def test_retry_exhaustion():
    c = scripted([TransientError("down")] * 4, max_retries=3)
    with pytest.raises(EndpointUnavailable):
        c.complete(MSG)
    assert len(c.transport.requests) == 4


def test_deadline_exhaustion():
    c = scripted([TransientError("slow", deadline=True)] * 2, max_retries=1)
    with pytest.raises(DeadlineExceeded):
        c.complete(MSG)


def test_non_transient_errors_propagate():
    c = scripted([EndpointUnavailable("401")])
    with pytest.raises(EndpointUnavailable):
        c.complete(MSG)
    assert len(c.transport.requests) == 1


def test_logprobs():
    resp = completion_response("ab", [("a", -0.5), ("b", -1.25)])
    c = scripted([resp])
    reply = c.complete(MSG, Sampling(want_logprobs=True))
    assert require_logprobs(reply) == (("a", -0.5), ("b", -1.25))
    assert c.transport.requests[0]["logprobs"] is True


def test_missing_logprobs_is_capability_error():
    reply = scripted(["x"]).complete(MSG, Sampling(want_logprobs=True))
    with pytest.raises(CapabilityError):
        require_logprobs(reply)


@pytest.mark.parametrize("bad", [{}, {"choices": []}, {"choices": [{"message": {"content": 3}}]}, None])
def test_malformed_replies(bad):
    with pytest.raises(MalformedReply):
        parse_reply(bad)


def test_non_finite_logprob_rejected():
    resp = completion_response("a", [("a", float("nan"))])
    with pytest.raises(MalformedReply):
        parse_reply(resp, want_logprobs=True)


def test_image_parts_encode_as_data_urls():
    msg = ChatMessage(Role.USER, (ImagePart(make_image(4, 4)), TextPart("q")))
    req = build_request("m", [msg], Sampling(seed=7))
    part = req["messages"][0]["content"][0]
    assert part["type"] == "image_url" and part["image_url"]["url"].startswith("data:image/png;base64,")
    assert req["seed"] == 7


def test_request_key_is_canonical():
    assert request_key({"a": 1, "b": [1, 2]}) == request_key({"b": [1, 2], "a": 1})
    assert request_key({"a": 1}) != request_key({"a": 2})


@pytest.mark.parametrize("raw, expected", [
    ("verdict: yes", True), ("Verdict: NO", False), ("Yes.", True), ("no, they differ", False),
    ("**verdict:** yes", True), ("reasoning...\nverdict = yes", True),
])
def test_parse_yes_no(raw, expected):
    assert parse_yes_no(raw) is expected


@pytest.mark.parametrize("raw", ["maybe", "", "I think so"])
def test_judge_garbage(raw):
    with pytest.raises(UnparseableVerdict):
        judge_answer(scripted([raw]), "q", "1", "2")


def test_judge_verdict():
    j = scripted(["verdict: yes"])
    v = judge_answer(j, "How many?", "4", "four")
    assert v.correct and v.raw == "verdict: yes"
    req = j.transport.requests[0]
    assert req["temperature"] == 0.0
    assert "four" in req["messages"][0]["content"][0]["text"]


def test_cassette_record_and_replay(tmp_path):
    path = tmp_path / "c.jsonl"
    inner = ScriptedTransport(["first", "second", "other"])
    rec = ChatClient(CassetteTransport(path, "record", inner))
    assert rec.complete(MSG).text == "first"
    assert rec.complete(MSG).text == "second"
    assert rec.complete([ChatMessage.text("user", "bye")]).text == "other"

    play = ChatClient(CassetteTransport(path))
    # identical requests replay in recorded order
    assert play.complete([ChatMessage.text("user", "bye")]).text == "other"
    assert play.complete(MSG).text == "first"
    assert play.complete(MSG).text == "second"
    with pytest.raises(CassetteMiss):
        play.complete(MSG)
    assert play.identity.startswith("cassette:c.jsonl")


def test_cassette_errors(tmp_path):
    with pytest.raises(EndpointUnavailable):
        CassetteTransport(tmp_path / "missing.jsonl")
    with pytest.raises(ValueError):
        CassetteTransport(tmp_path / "x.jsonl", "record")
    with pytest.raises(ValueError):
        CassetteTransport(tmp_path / "x.jsonl", "rewind")


def test_scripted_callable_and_cycle():
    c = ChatClient(ScriptedTransport(lambda req: req["messages"][0]["content"][0]["text"].upper()))
    assert c.complete(MSG).text == "HI"
    cyc = scripted(["a", "b"], cycle=True)
    assert [cyc.complete(MSG).text for _ in range(5)] == ["a", "b", "a", "b", "a"]
    with pytest.raises(CassetteMiss):
        scripted([]).complete(MSG)


def test_max_inflight_bounds_concurrency():
    active, peak, lock = [0], [0], threading.Lock()
    gate = threading.Event()

    def reply(req):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        gate.wait(0.05)
        with lock:
            active[0] -= 1
        return "x"

    class Slow(ScriptedTransport):
        def send(self, request):
            return completion_response(reply(request))

    c = ChatClient(Slow([]), max_inflight=2)
    threads = [threading.Thread(target=c.complete, args=(MSG,)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] <= 2


class _Handler(BaseHTTPRequestHandler):
    statuses: list = []
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((self.path, self.headers.get("Authorization"), body))
        status = type(self).statuses.pop(0) if type(self).statuses else 200
        payload = json.dumps(completion_response("served")).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *a):
        pass


@pytest.fixture
def http_server():
    _Handler.statuses, _Handler.seen = [], []
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    yield server
    server.shutdown()


def test_http_transport(http_server, monkeypatch):
    monkeypatch.setenv("TEST_KEY", "sekret")
    url = f"http://127.0.0.1:{http_server.server_address[1]}/v1"
    _Handler.statuses = [503]
    c = ChatClient(HttpTransport(url, "TEST_KEY"), model="m", sleep=lambda s: None)
    assert c.complete(MSG).text == "served"
    path, auth, body = _Handler.seen[-1]
    assert path == "/v1/chat/completions" and auth == "Bearer sekret" and body["model"] == "m"
    assert len(_Handler.seen) == 2


def test_http_transport_client_error(http_server):
    url = f"http://127.0.0.1:{http_server.server_address[1]}"
    _Handler.statuses = [401]
    with pytest.raises(EndpointUnavailable):
        ChatClient(HttpTransport(url)).complete(MSG)


def test_http_transport_unreachable():
    c = ChatClient(HttpTransport("http://127.0.0.1:1", timeout_s=1), max_retries=1, sleep=lambda s: None)
    with pytest.raises(EndpointUnavailable):
        c.complete(MSG)

"""Protocol sessions: handshake, request handling, error replies, TCP.

The stream harness drives ``serve_stream`` over in-memory pipes; the TCP
tests run the real threaded server.  The client-facing failure cases (NaN
scores, refused handshakes) are exercised with the actual client the
search engine uses, so both halves of the protocol are tested against
each other.
"""

from __future__ import annotations

import io
import json
import socket
import threading

import pytest

from resim import ProtocolError, ScorerClient, ScorerTarget

from scorer_service import SCORERS, serve_stream
from scorer_service.server import make_tcp_server

HELLO = {"resim_scorer": 1}


def session(*lines: object, scorer: str = "jaccard", registry=None) -> list[dict]:
    """Feed raw or JSON lines through one stream session, return replies."""
    blob = b"".join(
        (line if isinstance(line, str) else json.dumps(line)).encode("utf-8") + b"\n"
        for line in lines
    )
    out = io.BytesIO()
    serve_stream(io.BytesIO(blob), out, scorer, registry)
    return [json.loads(l) for l in out.getvalue().splitlines()]


# ----------------------------------------------------------------------------
# Handshake
# ----------------------------------------------------------------------------


def test_handshake_accepted_with_scorer_name():
    replies = session(HELLO)
    assert replies == [{"ok": True, "name": "jaccard"}]


def test_handshake_wrong_version_is_refused():
    (reply,) = session({"resim_scorer": 2})
    assert reply["ok"] is False
    assert "unsupported protocol version" in reply["error"]


def test_handshake_missing_key_is_refused():
    (reply,) = session({"hello": 1})
    assert reply["ok"] is False


def test_handshake_garbage_is_refused():
    (reply,) = session("not json at all")
    assert reply["ok"] is False
    assert "not valid JSON" in reply["error"]


def test_handshake_non_object_is_refused():
    (reply,) = session([1, 2, 3])
    assert reply["ok"] is False


def test_unknown_scorer_refuses_handshake():
    (reply,) = session(HELLO, scorer="transformer-9000")
    assert reply == {"ok": False,
                     "error": "scorer 'transformer-9000' not available"}


def test_empty_stream_produces_no_reply():
    assert session() == []


# ----------------------------------------------------------------------------
# Scoring sessions
# ----------------------------------------------------------------------------


def test_requests_answered_in_arrival_order_exactly_once():
    n = 200
    requests = [{"id": i, "q": ["a", "b"], "c": ["b", "c"]} for i in range(n)]
    replies = session(HELLO, *requests, {"bye": True})
    assert len(replies) == n + 1
    assert [r["id"] for r in replies[1:]] == list(range(n))
    assert all(r["score"] == 1 / 3 for r in replies[1:])


def test_bye_ends_the_session():
    replies = session(
        HELLO,
        {"id": 0, "q": ["a"], "c": ["a"]},
        {"bye": True},
        {"id": 1, "q": ["a"], "c": ["a"]},  # after bye: never answered
    )
    assert [r.get("id") for r in replies[1:]] == [0]


def test_eof_without_bye_ends_the_session():
    replies = session(HELLO, {"id": 7, "q": ["a"], "c": ["b"]})
    assert replies[1] == {"id": 7, "score": 0.0}


def test_blank_lines_are_ignored():
    replies = session(HELLO, "", {"id": 0, "q": ["a"], "c": ["a"]}, "", {"bye": True})
    assert len(replies) == 2


@pytest.mark.parametrize(
    "bad, echoed_id",
    [
        ("{not json", None),
        ([1, 2], None),
        ({"q": ["a"], "c": ["a"]}, None),                      # no id
        ({"id": "zero", "q": ["a"], "c": ["a"]}, None),        # non-integer id
        ({"id": True, "q": ["a"], "c": ["a"]}, None),          # bool is not an id
        ({"id": 4, "c": ["a"]}, 4),                            # missing q
        ({"id": 5, "q": "tokens", "c": ["a"]}, 5),             # q not a list
        ({"id": 6, "q": ["a", 3], "c": ["a"]}, 6),             # non-string token
    ],
)
def test_malformed_request_gets_error_reply_and_session_continues(bad, echoed_id):
    replies = session(HELLO, bad, {"id": 9, "q": ["a"], "c": ["a"]}, {"bye": True})
    assert len(replies) == 3
    error_reply, good_reply = replies[1], replies[2]
    assert error_reply["id"] == echoed_id
    assert "malformed request" in error_reply["error"]
    assert good_reply == {"id": 9, "score": 1.0}


def test_custom_registry_entry_is_served():
    registry = dict(SCORERS)
    registry["constant"] = lambda q, c: 0.75
    replies = session(HELLO, {"id": 0, "q": [], "c": []}, {"bye": True},
                      scorer="constant", registry=registry)
    assert replies == [{"ok": True, "name": "constant"},
                       {"id": 0, "score": 0.75}]


# ----------------------------------------------------------------------------
# TCP server
# ----------------------------------------------------------------------------


@pytest.fixture()
def tcp_server():
    server = make_tcp_server("127.0.0.1", 0, "jaccard")
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server.server_address
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)


def _raw_session(address, lines):
    with socket.create_connection(address, timeout=5) as sock:
        fh = sock.makefile("rwb")
        for line in lines:
            payload = line if isinstance(line, str) else json.dumps(line)
            fh.write(payload.encode("utf-8") + b"\n")
        fh.flush()
        sock.shutdown(socket.SHUT_WR)
        return [json.loads(l) for l in fh.read().splitlines()]


def test_tcp_session_scores_requests(tcp_server):
    replies = _raw_session(tcp_server, [
        HELLO,
        {"id": 0, "q": ["a", "b", "c"], "c": ["b", "c", "d"]},
        {"bye": True},
    ])
    assert replies == [{"ok": True, "name": "jaccard"}, {"id": 0, "score": 0.5}]


def test_tcp_connections_are_independent(tcp_server):
    # interleave two sessions: each gets its own handshake and answers
    with socket.create_connection(tcp_server, timeout=5) as a, \
            socket.create_connection(tcp_server, timeout=5) as b:
        fa, fb = a.makefile("rwb"), b.makefile("rwb")
        for fh in (fa, fb):
            fh.write((json.dumps(HELLO) + "\n").encode())
            fh.flush()
        assert json.loads(fa.readline())["ok"] is True
        assert json.loads(fb.readline())["ok"] is True
        fa.write(b'{"id": 0, "q": ["x"], "c": ["x"]}\n')
        fa.flush()
        fb.write(b'{"id": 0, "q": ["x"], "c": ["y"]}\n')
        fb.flush()
        assert json.loads(fa.readline()) == {"id": 0, "score": 1.0}
        assert json.loads(fb.readline()) == {"id": 0, "score": 0.0}


def test_malformed_tcp_request_keeps_connection_alive(tcp_server):
    replies = _raw_session(tcp_server, [
        HELLO,
        "garbage line",
        {"id": 1, "q": ["m"], "c": ["m"]},
        {"bye": True},
    ])
    assert replies[1]["error"].startswith("malformed request")
    assert replies[2] == {"id": 1, "score": 1.0}


# ----------------------------------------------------------------------------
# Against the real client
# ----------------------------------------------------------------------------


def _client_for(address, **kwargs) -> ScorerClient:
    host, port = address
    return ScorerClient(ScorerTarget.parse(f"{host}:{port}"), **kwargs)


def test_real_client_scores_through_tcp(tcp_server):
    with _client_for(tcp_server) as client:
        scores = client.score_batch_raw([
            (("a", "b", "c"), ("b", "c", "d")),
            (("mov",), ("mov",)),
            ((), ()),
        ])
    assert scores == [0.5, 1.0, 0.0]
    assert client.service_name == "jaccard"


def test_real_client_sees_nan_score_as_protocol_error():
    registry = dict(SCORERS)
    registry["nan"] = lambda q, c: float("nan")
    server = make_tcp_server("127.0.0.1", 0, "nan", registry)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        with pytest.raises(ProtocolError, match="non-finite score for pair id 0: nan"):
            with _client_for(server.server_address) as client:
                client.score_batch_raw([(("a",), ("b",))])
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)


def test_real_client_sees_refused_handshake_as_protocol_error():
    server = make_tcp_server("127.0.0.1", 0, "transformer-9000")
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        with pytest.raises(ProtocolError, match="not available"):
            with _client_for(server.server_address) as client:
                client.score_batch_raw([(("a",), ("b",))])
    finally:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)

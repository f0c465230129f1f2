"""Wire-protocol server: newline-delimited JSON over TCP or stdio.

Session shape (one per connection / one per stdio process):

1. handshake request ``{"resim_scorer": 1}`` — anything else, an unknown
   protocol version, or an unknown scorer name is refused with
   ``{"ok": false, "error": ...}`` and the session ends;
2. on success the server replies ``{"ok": true, "name": <scorer>}``;
3. scoring requests ``{"id": int, "q": [tokens], "c": [tokens]}`` arrive in
   any number and batch size; each is answered exactly once, in arrival
   order, with ``{"id": id, "score": <finite float>}``;
4. a malformed request line gets ``{"id": <echoed or null>, "error": ...}``
   and the session continues;
5. ``{"bye": true}`` (or EOF) ends the session.

TCP connections are handled one thread each, sequentially within the
connection and independently across connections.
"""

from __future__ import annotations

import json
import socketserver
import sys
from typing import BinaryIO, Mapping

from .scorers import SCORERS, Scorer

HANDSHAKE_KEY = "resim_scorer"
HANDSHAKE_VERSION = 1


def _send(wfile: BinaryIO, obj: object) -> None:
    wfile.write((json.dumps(obj) + "\n").encode("utf-8"))
    wfile.flush()


def _is_token_list(value: object) -> bool:
    return isinstance(value, list) and all(isinstance(t, str) for t in value)


def serve_stream(
    rfile: BinaryIO,
    wfile: BinaryIO,
    scorer_name: str,
    registry: Mapping[str, Scorer] | None = None,
) -> None:
    """Run one protocol session over a pair of binary line streams.

    Returns when the peer says bye, closes the stream, or fails the
    handshake.  Never raises on malformed input — errors go back over the
    wire so one bad client line cannot take the service down.
    """
    registry = SCORERS if registry is None else registry

    line = rfile.readline()
    if not line:
        return
    try:
        hello = json.loads(line)
    except json.JSONDecodeError:
        _send(wfile, {"ok": False, "error": "handshake is not valid JSON"})
        return
    if not isinstance(hello, dict) or HANDSHAKE_KEY not in hello:
        _send(wfile, {"ok": False, "error": f"expected a {HANDSHAKE_KEY} handshake"})
        return
    if hello[HANDSHAKE_KEY] != HANDSHAKE_VERSION:
        _send(
            wfile,
            {
                "ok": False,
                "error": f"unsupported protocol version {hello[HANDSHAKE_KEY]!r} "
                f"(this service speaks {HANDSHAKE_VERSION})",
            },
        )
        return
    scorer = registry.get(scorer_name)
    if scorer is None:
        _send(wfile, {"ok": False, "error": f"scorer {scorer_name!r} not available"})
        return
    _send(wfile, {"ok": True, "name": scorer_name})

    for raw in iter(rfile.readline, b""):
        stripped = raw.strip()
        if not stripped:
            continue
        try:
            req = json.loads(stripped)
        except json.JSONDecodeError:
            _send(wfile, {"id": None, "error": "malformed request: not valid JSON"})
            continue
        if not isinstance(req, dict):
            _send(wfile, {"id": None, "error": "malformed request: not an object"})
            continue
        if req.get("bye") is True:
            return
        rid = req.get("id")
        rid_out = rid if isinstance(rid, int) and not isinstance(rid, bool) else None
        if rid_out is None or not _is_token_list(req.get("q")) or not _is_token_list(req.get("c")):
            _send(
                wfile,
                {
                    "id": rid_out,
                    "error": 'malformed request: want {"id": int, '
                    '"q": [tokens], "c": [tokens]}',
                },
            )
            continue
        _send(wfile, {"id": rid_out, "score": scorer(req["q"], req["c"])})


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:  # one full protocol session per connection
        serve_stream(
            self.rfile,
            self.wfile,
            self.server.scorer_name,  # type: ignore[attr-defined]
            self.server.registry,  # type: ignore[attr-defined]
        )


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def make_tcp_server(
    host: str,
    port: int,
    scorer_name: str,
    registry: Mapping[str, Scorer] | None = None,
) -> socketserver.ThreadingTCPServer:
    """Bound-but-not-yet-serving TCP server; the caller owns its lifecycle.

    Binding with port 0 picks a free port: read it back from
    ``server.server_address``.
    """
    server = _Server((host, port), _Handler)
    server.scorer_name = scorer_name  # type: ignore[attr-defined]
    server.registry = SCORERS if registry is None else registry  # type: ignore[attr-defined]
    return server


def serve_tcp(
    host: str,
    port: int,
    scorer_name: str,
    registry: Mapping[str, Scorer] | None = None,
) -> None:
    """Serve forever on host:port, one thread per connection."""
    with make_tcp_server(host, port, scorer_name, registry) as server:
        bound_host, bound_port = server.server_address[:2]
        print(f"listening on {bound_host}:{bound_port}", file=sys.stderr, flush=True)
        server.serve_forever()


def serve_stdio(
    scorer_name: str,
    registry: Mapping[str, Scorer] | None = None,
) -> None:
    """Serve one session over this process's stdin/stdout."""
    serve_stream(sys.stdin.buffer, sys.stdout.buffer, scorer_name, registry)

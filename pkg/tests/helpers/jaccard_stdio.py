#!/usr/bin/env python3
"""Reference stdio scoring service used by the client tests.

Speaks the newline-delimited JSON protocol on stdin/stdout: a handshake
line {"resim_scorer": 1} is answered with {"ok": true, "name": ...}, then
each request {"id": n, "q": [...], "c": [...]} is answered with
{"id": n, "score": s} until {"bye": true} or EOF.  The score is the
token-set Jaccard overlap of q and c (both empty -> 0.0).

Flags inject specific misbehaviours so the client's error handling can be
exercised from the outside:

  --name NAME         service name reported in the handshake
  --refuse            refuse the handshake with ok=false and exit
  --handshake-garbage reply to the handshake with a non-JSON line
  --reverse N         buffer N requests, then answer them in reverse order
  --duplicate-first   answer this process's first request twice
  --wrong-id          answer the first request with a bogus id
  --error-on K        answer the K-th request (0-based) with an error field
  --nan-on K          answer the K-th request with a NaN score
  --garbage-on K      answer the K-th request with a non-JSON line
  --die-once PATH     log a start line to PATH; if this process was the
                      first to do so, exit before answering any request
                      (a reconnect then succeeds -- probes the retry path)
  --die-always        exit right after the handshake, every time
  --log-starts PATH   append one line to PATH per process start
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def jaccard(q: list[str], c: list[str]) -> float:
    qs, cs = set(q), set(c)
    union = len(qs | cs)
    if union == 0:
        return 0.0
    return len(qs & cs) / union


def emit(line: str) -> None:
    sys.stdout.write(line + "\n")
    sys.stdout.flush()


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--name", default="jaccard-test")
    ap.add_argument("--refuse", action="store_true")
    ap.add_argument("--handshake-garbage", action="store_true")
    ap.add_argument("--reverse", type=int, default=0)
    ap.add_argument("--duplicate-first", action="store_true")
    ap.add_argument("--wrong-id", action="store_true")
    ap.add_argument("--error-on", type=int, default=-1)
    ap.add_argument("--nan-on", type=int, default=-1)
    ap.add_argument("--garbage-on", type=int, default=-1)
    ap.add_argument("--die-once", default="")
    ap.add_argument("--die-always", action="store_true")
    ap.add_argument("--log-starts", default="")
    args = ap.parse_args()

    die_pending = False
    if args.die_once:
        die_pending = not os.path.exists(args.die_once)
        with open(args.die_once, "a", encoding="utf-8") as fh:
            fh.write("start\n")
    if args.log_starts:
        with open(args.log_starts, "a", encoding="utf-8") as fh:
            fh.write("start\n")

    line = sys.stdin.readline()
    if not line:
        return 0
    if args.handshake_garbage:
        emit("*** not json ***")
        return 0
    try:
        hello = json.loads(line)
    except json.JSONDecodeError:
        emit(json.dumps({"ok": False, "error": "bad handshake"}))
        return 1
    if not isinstance(hello, dict) or "resim_scorer" not in hello:
        emit(json.dumps({"ok": False, "error": "bad handshake"}))
        return 1
    if args.refuse:
        emit(json.dumps({"ok": False, "error": f"scorer {args.name!r} not available"}))
        return 0
    emit(json.dumps({"ok": True, "name": args.name}))
    if args.die_always:
        os._exit(1)

    seen = 0
    pending: list[str] = []

    def flush_pending() -> None:
        while pending:
            emit(pending.pop())

    for line in sys.stdin:
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            emit(json.dumps({"id": None, "error": "malformed request"}))
            continue
        if not isinstance(req, dict):
            emit(json.dumps({"id": None, "error": "malformed request"}))
            continue
        if req.get("bye"):
            flush_pending()
            return 0
        if die_pending:
            os._exit(1)
        rid = req.get("id")
        k = seen
        seen += 1
        if k == args.garbage_on:
            emit("%%% garbage %%%")
            continue
        if k == args.error_on:
            emit(json.dumps({"id": rid, "error": "boom"}))
            continue
        if k == args.nan_on:
            emit(json.dumps({"id": rid, "score": float("nan")}))
            continue
        score = jaccard(req.get("q", []), req.get("c", []))
        if k == 0 and args.wrong_id:
            emit(json.dumps({"id": (rid or 0) + 999983, "score": score}))
            continue
        reply = json.dumps({"id": rid, "score": score})
        if args.reverse > 0:
            pending.append(reply)
            if len(pending) >= args.reverse:
                flush_pending()
        else:
            emit(reply)
            if k == 0 and args.duplicate_first:
                emit(reply)
    flush_pending()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Wire-protocol server loop: version 1, one connection, one line per record.

The handshake reply reports either the class count or the reason the model
could not be brought up.  A request the server cannot process gets an error
response with its id echoed and the connection stays alive; only EOF ends
the session.  Responses are written compactly with keys in the documented
order so transcripts compare byte for byte.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
import socket
import sys

from modeladapter.models import ModelLoadError, load_model

PROTO_VERSION = 1

log = logging.getLogger("modeladapter")


def _send(wfile, obj) -> None:
    wfile.write(json.dumps(obj, separators=(",", ":")).encode("ascii") + b"\n")
    wfile.flush()


def _answer(model, msg: dict) -> dict:
    rid = msg.get("id")
    shape, data = msg.get("shape"), msg.get("data")
    if shape is None or data is None:
        return {"id": rid, "error": "request needs id, shape, and data"}
    if not (
        isinstance(shape, list)
        and len(shape) == 3
        and all(isinstance(d, int) and d > 0 for d in shape)
    ):
        return {"id": rid, "error": "shape must be three positive integers"}
    try:
        raw = base64.b64decode(data, validate=True)
    except (binascii.Error, TypeError):
        return {"id": rid, "error": "bad base64"}
    expected = 4 * shape[0] * shape[1] * shape[2]
    if len(raw) != expected:
        return {"id": rid, "error": f"shape {shape} needs {expected} bytes, got {len(raw)}"}
    try:
        label, confidence, scores = model.classify(shape, raw)
    except Exception as err:
        log.warning("model failed on request %s: %s", rid, err)
        return {"id": rid, "error": f"model failure: {err}"}
    return {"id": rid, "label": label, "confidence": confidence, "scores": scores}


def serve(model_spec: str, rfile, wfile) -> None:
    hello = rfile.readline()
    if not hello:
        return
    try:
        version = json.loads(hello).get("rex_proto")
    except (ValueError, AttributeError):
        log.error("unparseable handshake, closing")
        return
    if version != PROTO_VERSION:
        _send(wfile, {"rex_proto": PROTO_VERSION, "error": f"unsupported protocol version {version}"})
        return

    try:
        model = load_model(model_spec)
    except ModelLoadError as err:
        log.error("%s", err)
        _send(wfile, {"rex_proto": PROTO_VERSION, "error": str(err)})
        return
    _send(wfile, {"rex_proto": PROTO_VERSION, "classes": model.n_classes})
    log.info("serving %r with %d classes", model_spec, model.n_classes)

    answered = 0
    for raw in iter(rfile.readline, b""):
        line = raw.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ValueError
        except ValueError:
            log.warning("unparseable request line")
            _send(wfile, {"id": None, "error": "unparseable request line"})
            continue
        if "batch_end" in msg:
            continue
        _send(wfile, _answer(model, msg))
        answered += 1
    log.info("client hung up after %d responses", answered)


def serve_stdio(model_spec: str) -> None:
    serve(model_spec, sys.stdin.buffer, sys.stdout.buffer)


def serve_tcp(model_spec: str, port: int) -> None:
    listener = socket.create_server(("127.0.0.1", port))
    # announce the bound port so callers can use an ephemeral one
    print(f"PORT {listener.getsockname()[1]}", flush=True)
    conn, peer = listener.accept()
    log.info("connection from %s:%d", *peer)
    with conn, conn.makefile("rb") as rfile, conn.makefile("wb") as wfile:
        serve(model_spec, rfile, wfile)

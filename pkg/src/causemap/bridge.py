"""Client side of the external-model wire protocol.

A remote oracle is any process speaking newline-delimited JSON over its
standard streams or a TCP socket:

    client -> {"rex_proto":1}
    server -> {"rex_proto":1,"classes":K}
    client -> {"id":0,"shape":[h,w,c],"data":"<base64 float32 LE, row-major>"}
              ... one line per image ...
              {"batch_end":<last id>}
    server -> {"id":0,"label":L,"confidence":C,"scores":[...]}   (scores optional)

The handle returned by :func:`connect` satisfies the classifier interface
consumed by :class:`causemap.oracle.OracleSession`, so the engine drives a
remote model exactly like a built-in one.  A connection that dies or stalls
mid-batch raises :class:`TransportError`, which the refinement loop treats
like budget exhaustion: record what is known, return a partial result.
"""

from __future__ import annotations

import base64
import json
import os
import select
import shlex
import socket
import subprocess
import threading
import time

import numpy as np

from .core import ConfigError
from .oracle import Classification, OracleError, OracleInterrupted

PROTO_VERSION = 1
DEFAULT_TIMEOUT = 60.0


class TransportError(OracleInterrupted):
    """The remote oracle went away or answered garbage mid-run."""


class HandshakeError(OracleError):
    """The endpoint could not be brought up as a protocol-1 oracle."""


def dump_line(obj: dict) -> bytes:
    # compact separators and insertion-ordered keys: this exact byte form is
    # the conformance surface recorded in the transcript fixture
    return json.dumps(obj, separators=(",", ":")).encode("ascii") + b"\n"


def encode_request(request_id: int, arr: np.ndarray) -> bytes:
    a = np.asarray(arr, dtype="<f4")
    if a.ndim != 3:
        raise ConfigError(f"wire images are (h, w, c); got shape {a.shape}")
    payload = base64.b64encode(np.ascontiguousarray(a).tobytes()).decode("ascii")
    return dump_line({"id": request_id, "shape": list(a.shape), "data": payload})


def _take_line(buf: bytearray) -> bytes | None:
    i = buf.find(b"\n")
    if i < 0:
        return None
    line = bytes(buf[:i])
    del buf[: i + 1]
    return line


class _StdioChannel:
    """Line transport over a child process's standard streams."""

    def __init__(self, argv: list[str]):
        try:
            self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except OSError as e:
            raise HandshakeError(f"cannot spawn oracle {argv!r}: {e}") from e
        self._buf = bytearray()

    def send(self, payload: bytes) -> None:
        try:
            self.proc.stdin.write(payload)
            self.proc.stdin.flush()
        except (OSError, ValueError) as e:
            raise TransportError(f"oracle process not accepting requests: {e}") from e

    def recv_line(self, deadline: float) -> bytes:
        fd = self.proc.stdout.fileno()
        while True:
            line = _take_line(self._buf)
            if line is not None:
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportError("timed out waiting for oracle reply")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise TransportError("timed out waiting for oracle reply")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise TransportError("oracle process closed its output")
            self._buf += chunk

    def close(self) -> None:
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


class _TcpChannel:
    """Line transport over a TCP socket."""

    def __init__(self, host: str, port: int, timeout: float):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as e:
            raise HandshakeError(f"cannot reach oracle at {host}:{port}: {e}") from e
        self._buf = bytearray()

    def send(self, payload: bytes) -> None:
        try:
            self.sock.sendall(payload)
        except OSError as e:
            raise TransportError(f"oracle socket not accepting requests: {e}") from e

    def recv_line(self, deadline: float) -> bytes:
        while True:
            line = _take_line(self._buf)
            if line is not None:
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportError("timed out waiting for oracle reply")
            self.sock.settimeout(remaining)
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                raise TransportError("timed out waiting for oracle reply") from None
            except OSError as e:
                raise TransportError(f"oracle socket failed: {e}") from e
            if not chunk:
                raise TransportError("oracle closed the connection")
            self._buf += chunk

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class RemoteOracle:
    """A live protocol-1 endpoint, usable wherever a classifier is.

    One batch is in flight per handle at a time; the engine holds several
    handles if it wants remote parallelism.
    """

    def __init__(self, channel, n_classes: int, timeout: float):
        self._channel = channel
        self.n_classes = n_classes
        self.timeout = timeout
        self._lock = threading.Lock()
        self._next_id = 0

    def classify(self, batch: np.ndarray) -> list[Classification]:
        n = batch.shape[0]
        if n == 0:
            return []
        with self._lock:
            ids = list(range(self._next_id, self._next_id + n))
            self._next_id += n
            payload = b"".join(encode_request(i, batch[k]) for k, i in enumerate(ids))
            payload += dump_line({"batch_end": ids[-1]})
            self._channel.send(payload)
            deadline = time.monotonic() + self.timeout
            answers: dict[int, Classification] = {}
            while len(answers) < n:
                line = self._channel.recv_line(deadline)
                answers.update(self._parse_response(line, ids, answers))
            return [answers[i] for i in ids]

    def _parse_response(
        self, line: bytes, ids: list[int], seen: dict[int, Classification]
    ) -> dict[int, Classification]:
        try:
            msg = json.loads(line)
            rid = msg["id"]
            if rid not in ids or rid in seen:
                raise ValueError(f"unexpected response id {rid}")
            if "error" in msg:
                raise ValueError(f"oracle error for id {rid}: {msg['error']}")
            scores = msg.get("scores")
            ans = Classification(
                int(msg["label"]),
                float(msg["confidence"]),
                full_scores=None if scores is None else tuple(float(s) for s in scores),
            )
        except (ValueError, KeyError, TypeError) as e:
            raise TransportError(f"malformed oracle response {line!r}: {e}") from e
        return {rid: ans}

    def labels(self, batch: np.ndarray) -> np.ndarray:
        return np.array([c.label for c in self.classify(batch)], dtype=np.int64)

    def close(self) -> None:
        self._channel.close()

    def __enter__(self) -> "RemoteOracle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def connect(endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> RemoteOracle:
    """Bring up a remote oracle from ``cmd:<argv>`` or ``tcp:<host>:<port>``."""
    if endpoint.startswith("cmd:"):
        argv = shlex.split(endpoint[len("cmd:") :])
        if not argv:
            raise ConfigError("cmd: endpoint needs a command line")
        channel = _StdioChannel(argv)
    elif endpoint.startswith("tcp:"):
        host, sep, port = endpoint[len("tcp:") :].rpartition(":")
        if not sep or not host:
            raise ConfigError(f"tcp endpoint must be tcp:host:port, got {endpoint!r}")
        try:
            port_no = int(port)
        except ValueError:
            raise ConfigError(f"bad port in {endpoint!r}") from None
        channel = _TcpChannel(host, port_no, timeout)
    else:
        raise ConfigError(f"unknown oracle endpoint {endpoint!r}; expected cmd:... or tcp:host:port")

    try:
        channel.send(dump_line({"rex_proto": PROTO_VERSION}))
        greeting = json.loads(channel.recv_line(time.monotonic() + timeout))
    except (TransportError, ValueError) as e:
        channel.close()
        raise HandshakeError(f"handshake failed: {e}") from e
    if not isinstance(greeting, dict) or greeting.get("rex_proto") != PROTO_VERSION:
        channel.close()
        raise HandshakeError(
            f"oracle speaks protocol {greeting.get('rex_proto') if isinstance(greeting, dict) else greeting!r}, "
            f"this engine needs {PROTO_VERSION}"
        )
    if "error" in greeting:
        channel.close()
        raise HandshakeError(f"oracle failed to start: {greeting['error']}")
    classes = greeting.get("classes")
    if not isinstance(classes, int) or classes < 1:
        channel.close()
        raise HandshakeError(f"greeting must report a positive class count, got {classes!r}")
    return RemoteOracle(channel, classes, timeout)

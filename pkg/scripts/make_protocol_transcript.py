#!/usr/bin/env python3
"""Regenerate the frozen wire-protocol conformance transcript.

Drives the canonical session through the real client encoder and the
fixture server, then freezes both directions under docs/.  Any server
implementation must reproduce docs/transcript_server.txt byte for byte
when fed docs/transcript_client.txt.
"""

from __future__ import annotations

import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from wire_transcript import canonical_client_bytes  # noqa: E402


def main() -> None:
    client = canonical_client_bytes()
    server = subprocess.run(
        [sys.executable, str(ROOT / "tests" / "proto_fixture.py")],
        input=client,
        stdout=subprocess.PIPE,
        timeout=60,
        check=True,
    ).stdout
    docs = ROOT / "docs"
    docs.mkdir(exist_ok=True)
    (docs / "transcript_client.txt").write_bytes(client)
    (docs / "transcript_server.txt").write_bytes(server)
    print(f"froze {len(client)} client bytes, {len(server)} server bytes")


if __name__ == "__main__":
    main()

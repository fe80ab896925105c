"""Run manifests: what a command read, wrote, and under which settings."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

from . import __version__


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    def __init__(self, command: str, settings: dict | None = None):
        self.command = command
        self.settings = settings or {}
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self._started = time.monotonic()

    def add_input(self, path: str | Path) -> None:
        self.inputs[str(path)] = file_digest(path)

    def add_output(self, path: str | Path) -> None:
        self.outputs[str(path)] = file_digest(path)

    def write(self, path: str | Path) -> None:
        doc = {
            "command": self.command,
            "version": __version__,
            "settings": self.settings,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "duration_seconds": round(time.monotonic() - self._started, 3),
        }
        with Path(path).open("w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

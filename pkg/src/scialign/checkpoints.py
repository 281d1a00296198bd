"""Single-file checkpoint container shared by all trainable models.

Format: a numpy ``.npz`` archive holding every parameter array as float64
plus a ``__meta__`` entry with UTF-8 JSON (config, vocabulary, step counter,
config hash).  Arrays round-trip bit-identically.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def config_hash(meta: dict) -> str:
    return hashlib.sha256(json.dumps(meta, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(params)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    payload["__meta__"] = np.frombuffer(blob, dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(Path(path)) as archive:
        meta = json.loads(bytes(archive["__meta__"].tobytes()).decode("utf-8"))
        params = {k: archive[k].copy() for k in archive.files if k != "__meta__"}
    return params, meta


class MetricsWriter:
    """Append-only JSONL metrics log with deterministic formatting."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")
        self.rows: list[dict] = []

    def write(self, row: dict) -> None:
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")

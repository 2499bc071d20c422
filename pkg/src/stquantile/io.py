"""Small helpers for writing artifacts atomically and reproducibly."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

__all__ = ["atomic_write", "config_hash", "write_csv", "write_json"]


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_csv(path, header, rows, comment=None) -> None:
    lines = [f"# {comment}"] if comment else []
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else repr(float(v)) if not isinstance(v, int)
                              else str(v) for v in row))
    atomic_write(path, "\n".join(lines) + "\n")


def write_json(path, payload: dict) -> None:
    atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")

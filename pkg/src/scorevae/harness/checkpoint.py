"""Versioned checkpoint container.

Layout::

    SCOREVAE-CHECKPOINT
    version=1
    <key>=<value>        (sorted; values are JSON)
    ...
    END
    <little-endian float32 payload>

The header is plain text so ``head`` on a checkpoint shows its metadata.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"SCOREVAE-CHECKPOINT\n"
VERSION = 1
END = b"END\n"


@dataclass
class Checkpoint:
    kind: str
    params: np.ndarray  # flat float32
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = np.ascontiguousarray(self.params, dtype="<f4").reshape(-1)

    @property
    def n_params(self) -> int:
        return self.params.size


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = {"kind": ckpt.kind, "param_count": ckpt.n_params, **ckpt.meta}
    lines = [MAGIC, f"version={VERSION}\n".encode()]
    for key in sorted(header):
        if "=" in key or "\n" in key:
            raise FormatError(f"invalid header key {key!r}")
        lines.append(f"{key}={json.dumps(header[key], sort_keys=True)}\n".encode())
    lines.append(END)
    return b"".join(lines) + ckpt.params.astype("<f4").tobytes()


def from_bytes(raw: bytes) -> Checkpoint:
    if not raw.startswith(MAGIC):
        raise FormatError("not a checkpoint file (bad magic line)")
    end = raw.find(b"\n" + END)
    if end < 0:
        raise FormatError("checkpoint header is not terminated")
    header_lines = raw[len(MAGIC):end + 1].decode().splitlines()
    payload = raw[end + 1 + len(END):]
    if not header_lines or not header_lines[0].startswith("version="):
        raise FormatError("checkpoint header lacks a version line")
    version = int(header_lines[0].split("=", 1)[1])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, expected {VERSION}")
    header = {}
    for line in header_lines[1:]:
        key, _, value = line.partition("=")
        header[key] = json.loads(value)
    count = header.pop("param_count", None)
    kind = header.pop("kind", None)
    if count is None or kind is None:
        raise FormatError("checkpoint header lacks kind or param_count")
    if len(payload) != 4 * count:
        raise FormatError(f"payload holds {len(payload)} bytes, header declares {count} floats")
    return Checkpoint(kind, np.frombuffer(payload, dtype="<f4").copy(), header)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    return path


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(raw)

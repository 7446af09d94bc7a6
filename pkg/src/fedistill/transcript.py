"""Append-only log of cross-party protocol messages.

Every message a simulated role sends to another role is recorded as
(step, sender, receiver, kind, shapes, digests). Payload contents are never
stored, only sha256 digests, so a transcript can be shipped for auditing
without itself leaking data. Multi-part payloads (such as an eigenvector plus
its eigenvalue) keep one digest per part, which lets an auditor test each part
against the digests of raw feature matrices and columns.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np


def array_digest(arr) -> str:
    """sha256 over an array's shape and float64 bytes."""
    arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    h = hashlib.sha256()
    h.update(repr(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class TranscriptRecord:
    step: int
    sender: str
    receiver: str
    kind: str
    shapes: tuple[tuple[int, ...], ...]
    digests: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "sender": self.sender,
            "receiver": self.receiver,
            "kind": self.kind,
            "shapes": [list(s) for s in self.shapes],
            "digests": list(self.digests),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TranscriptRecord":
        return cls(
            step=int(d["step"]),
            sender=str(d["sender"]),
            receiver=str(d["receiver"]),
            kind=str(d["kind"]),
            shapes=tuple(tuple(int(n) for n in s) for s in d["shapes"]),
            digests=tuple(str(x) for x in d["digests"]),
        )


class Transcript:
    """Ordered, append-only record of every inter-party message."""

    def __init__(self) -> None:
        self._records: list[TranscriptRecord] = []

    def record(self, sender: str, receiver: str, kind: str, payload) -> TranscriptRecord:
        """Append one message. ``payload`` is an array or a sequence of arrays."""
        if isinstance(payload, np.ndarray) or np.isscalar(payload):
            parts = [payload]
        else:
            parts = list(payload)
        arrays = [np.asarray(p, dtype=np.float64) for p in parts]
        rec = TranscriptRecord(
            step=len(self._records),
            sender=sender,
            receiver=receiver,
            kind=kind,
            shapes=tuple(a.shape for a in arrays),
            digests=tuple(array_digest(a) for a in arrays),
        )
        self._records.append(rec)
        return rec

    @property
    def records(self) -> tuple[TranscriptRecord, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def edges(self) -> dict[tuple[str, str], set[str]]:
        """Payload kinds observed on each (sender, receiver) edge."""
        out: dict[tuple[str, str], set[str]] = {}
        for rec in self._records:
            out.setdefault((rec.sender, rec.receiver), set()).add(rec.kind)
        return out

    def digest(self) -> str:
        """sha256 over the canonical serialization of all records."""
        payload = json.dumps([r.to_dict() for r in self._records], sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def to_json(self) -> str:
        doc = {"digest": self.digest(), "records": [r.to_dict() for r in self._records]}
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Transcript":
        doc = json.loads(text)
        t = cls()
        for d in doc["records"]:
            t._records.append(TranscriptRecord.from_dict(d))
        return t

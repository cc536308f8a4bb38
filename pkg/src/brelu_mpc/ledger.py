"""Byte and round accounting per (layer, protocol, phase)."""
from __future__ import annotations

import csv
import io
import json
import threading
from collections import defaultdict
from dataclasses import dataclass

# wire tag for each protocol; the tag is the 1-byte field of the frame header
PROTOCOL_TAGS = {
    "handshake": 0,
    "input": 1,
    "conv2d": 2,
    "linear": 3,
    "drelu": 4,
    "pdrelu": 5,
    "relu": 6,
    "brelu": 7,
    "output": 8,
    "triple": 9,
    "share_convert": 10,
    "msb": 11,
    "private_compare": 12,
    "mult": 13,
    "echo": 14,
}
TAG_NAMES = {v: k for k, v in PROTOCOL_TAGS.items()}
PHASES = ("online", "offline")


@dataclass
class Entry:
    payload_bytes: int = 0
    framed_bytes: int = 0
    messages: int = 0


class CommLedger:
    """Bytes sent, attributed to exactly one (layer, protocol, phase) key.

    Rounds are kept per (layer, protocol). Counters only grow during a run.
    """

    def __init__(self):
        self._entries: dict[tuple[int, str, str], Entry] = defaultdict(Entry)
        self._rounds: dict[tuple[int, str], int] = defaultdict(int)
        self._lock = threading.Lock()

    def record(self, layer: int, protocol: str, phase: str, payload: int, framed: int):
        if protocol not in PROTOCOL_TAGS:
            raise KeyError(f"unknown protocol {protocol!r}")
        if phase not in PHASES:
            raise KeyError(f"unknown phase {phase!r}")
        if payload < 0 or framed < payload:
            raise ValueError("framed bytes must be >= payload bytes >= 0")
        with self._lock:
            e = self._entries[(layer, protocol, phase)]
            e.payload_bytes += payload
            e.framed_bytes += framed
            e.messages += 1

    def add_rounds(self, layer: int, protocol: str, n: int = 1):
        with self._lock:
            self._rounds[(layer, protocol)] += n

    # -- queries

    def keys(self):
        return sorted(self._entries)

    def entry(self, layer: int, protocol: str, phase: str) -> Entry:
        return self._entries.get((layer, protocol, phase), Entry())

    def payload(self, layer=None, protocol=None, phase=None) -> int:
        return sum(e.payload_bytes for k, e in self._entries.items() if _match(k, layer, protocol, phase))

    def framed(self, layer=None, protocol=None, phase=None) -> int:
        return sum(e.framed_bytes for k, e in self._entries.items() if _match(k, layer, protocol, phase))

    def rounds(self, layer=None, protocol=None) -> int:
        return sum(r for (l, p), r in self._rounds.items()
                   if (layer is None or l == layer) and (protocol is None or p == protocol))

    def layers(self) -> list[int]:
        return sorted({k[0] for k in self._entries} | {k[0] for k in self._rounds})

    # -- combination

    @classmethod
    def merge(cls, ledgers) -> "CommLedger":
        """Combine per-party ledgers: bytes add up, rounds are shared so take the max."""
        out = cls()
        for led in ledgers:
            for k, e in led._entries.items():
                t = out._entries[k]
                t.payload_bytes += e.payload_bytes
                t.framed_bytes += e.framed_bytes
                t.messages += e.messages
            for k, r in led._rounds.items():
                out._rounds[k] = max(out._rounds[k], r)
        return out

    def rows(self) -> list[dict]:
        rows = []
        for (layer, protocol, phase) in self.keys():
            e = self._entries[(layer, protocol, phase)]
            rows.append({
                "layer": layer, "protocol": protocol, "phase": phase,
                "payload_bytes": e.payload_bytes, "framed_bytes": e.framed_bytes,
                "messages": e.messages, "rounds": self._rounds.get((layer, protocol), 0),
            })
        # protocols that only ran rounds (no bytes from this party)
        seen = {(r["layer"], r["protocol"]) for r in rows}
        for (layer, protocol), r in sorted(self._rounds.items()):
            if (layer, protocol) not in seen:
                rows.append({"layer": layer, "protocol": protocol, "phase": "online",
                             "payload_bytes": 0, "framed_bytes": 0, "messages": 0, "rounds": r})
        rows.sort(key=lambda r: (r["layer"], r["protocol"], r["phase"]))
        return rows

    def to_json(self) -> str:
        return json.dumps({"version": 1, "rows": self.rows()}, indent=1, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        fields = ["layer", "protocol", "phase", "payload_bytes", "framed_bytes", "messages", "rounds"]
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows())
        return buf.getvalue()

    @classmethod
    def from_json(cls, text: str) -> "CommLedger":
        data = json.loads(text)
        out = cls()
        for r in data["rows"]:
            k = (r["layer"], r["protocol"], r["phase"])
            if r["messages"]:
                e = out._entries[k]
                e.payload_bytes, e.framed_bytes, e.messages = r["payload_bytes"], r["framed_bytes"], r["messages"]
            out._rounds[(r["layer"], r["protocol"])] = max(out._rounds[(r["layer"], r["protocol"])], r["rounds"])
        return out

    def __eq__(self, other):
        return isinstance(other, CommLedger) and self.rows() == other.rows()


def _match(key, layer, protocol, phase) -> bool:
    l, p, ph = key
    return (layer is None or l == layer) and (protocol is None or p == protocol) and (phase is None or ph == phase)

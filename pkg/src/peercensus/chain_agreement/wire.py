"""Canonical byte encoding shared by signed protocol objects."""

from __future__ import annotations

import json


def _enc(x):
    if isinstance(x, (bytes, bytearray)):
        return "0x" + bytes(x).hex()
    if isinstance(x, (tuple, list)):
        return [_enc(i) for i in x]
    if x is None or isinstance(x, (int, str, bool)):
        return x
    raise TypeError(f"cannot canonically encode {type(x).__name__}")


def canonical(*parts) -> bytes:
    return json.dumps([_enc(p) for p in parts], separators=(",", ":")).encode()


def vote_bytes(instance: str, phase: str, epoch, view: int, ts, digest: bytes, extra: bytes = b"") -> bytes:
    return canonical("peercensus", instance, phase, epoch, view, ts, digest, extra)

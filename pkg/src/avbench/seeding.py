"""Deterministic seed derivation, stable across platforms and runs."""

import hashlib


def derive_seed(seed: int, *parts) -> int:
    """Child seed from a parent seed and a label path (e.g. stage, index)."""
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for p in parts:
        h.update(b"/")
        h.update(str(p).encode())
    return int.from_bytes(h.digest()[:8], "big")

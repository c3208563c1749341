"""Small shared helpers."""

from __future__ import annotations

import hashlib


def stable_seed(*parts) -> int:
    """Platform-stable 63-bit seed derived from the given parts.

    The builtin ``hash`` is salted per process, so seeds routed through it
    would break run-to-run reproducibility.
    """
    blob = "\x1f".join(str(p) for p in parts).encode()
    digest = hashlib.blake2b(blob, digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1

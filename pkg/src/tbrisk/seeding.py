"""Named seed derivation: every component draws from its own child stream."""

from __future__ import annotations

import hashlib


def derive_seed(seed: int, *labels) -> int:
    """Deterministic child seed for ``labels`` under ``seed`` (63-bit)."""
    text = "/".join([str(int(seed))] + [str(x) for x in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & ((1 << 63) - 1)

"""Stable seed derivation so every sampled artifact is reproducible.

Seeds are derived from string-able parts via sha256, never from wall-clock
or process state, so corpus generation can be sharded arbitrarily while
producing identical output.
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts: object) -> int:
    """Map a tuple of labels/ints to a stable 63-bit seed."""
    key = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1

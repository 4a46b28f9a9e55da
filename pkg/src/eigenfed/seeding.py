"""Deterministic seed derivation.

Every random draw in the package flows from a master seed through
`derive_seed`, so runs are reproducible across processes and platforms
(Python's builtin `hash` is salted per process and is not used).
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts: int | str | float) -> int:
    """Derive a child seed from an ordered tuple of components.

    Components are rendered to a canonical text form and digested, so
    derive_seed(7, "n", 250, 3) is stable across interpreter sessions.
    Returns a nonnegative int that fits in 63 bits.
    """
    text = "\x1f".join(_canon(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _canon(part: int | str | float) -> str:
    if isinstance(part, bool):
        raise TypeError("bool is not a valid seed component")
    if isinstance(part, int):
        return f"i:{part}"
    if isinstance(part, float):
        return f"f:{part!r}"
    if isinstance(part, str):
        return f"s:{part}"
    raise TypeError(f"cannot derive seed from component of type {type(part)!r}")

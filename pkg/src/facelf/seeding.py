"""Named seed derivation: one root seed, stable per-stage streams."""

import hashlib


def derive_seed(seed: int, *names) -> int:
    key = ":".join([str(int(seed))] + [str(n) for n in names]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little") & 0x7FFFFFFF

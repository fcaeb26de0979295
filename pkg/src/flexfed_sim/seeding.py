"""Named seed derivation.

Every random stream in a run is derived from ``(master_seed, component, *ids)`` so
adding a new component never shifts the randomness of existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


def derive_seed(master: int, component: str, *ids: int) -> int:
    seq = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, _name_key(component), *(int(i) for i in ids)])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def rng_for(master: int, component: str, *ids: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, component, *ids))

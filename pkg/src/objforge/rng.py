"""Deterministic random stream derivation.

All stochastic components draw from numpy Generators seeded through this
module. Two layers of derivation are used:

* ``derive_seed(root, label)`` gives each pipeline stage (tokenizer sampling,
  corruption, each generator objective, training) its own independent seed so
  running stages in a different order cannot change any of them.

* ``group_stream(root, label, index)`` gives each *work item* (one generator
  group, one corruption batch) a counter-based Philox stream. Streams depend
  only on (root, label, index), never on which worker processed the item or
  how many items came before it, so sharded output is reproducible under any
  job count.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, label: str) -> int:
    """Derive a 64-bit sub-seed from a root seed and a stage label."""
    if root < 0:
        raise ValueError("root seed must be non-negative")
    digest = hashlib.sha256(f"{root}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stage_rng(root: int, label: str) -> np.random.Generator:
    """Generator for a whole pipeline stage."""
    return np.random.Generator(np.random.PCG64(derive_seed(root, label)))


def group_stream(root: int, label: str, index: int) -> np.random.Generator:
    """Counter-based stream for work item ``index`` of stage ``label``.

    Philox is keyed by the stage seed and the counter is the item index, so
    any item's stream can be reconstructed in isolation.
    """
    if index < 0:
        raise ValueError("item index must be non-negative")
    key = derive_seed(root, label)
    bitgen = np.random.Philox(key=key, counter=[0, 0, 0, index])
    return np.random.Generator(bitgen)

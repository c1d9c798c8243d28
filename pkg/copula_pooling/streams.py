import hashlib
import logging
from typing import Union

import numpy as np

from metrics import get_metrics_tracker

logger = logging.getLogger("UniformStream")

# --- Constants & Configuration ---
BLOCK_SIZE = 1 << 16   # pairs per Philox jump
OPEN_EPS = 2.0 ** -53  # uniforms are clipped into (0, 1)

SeedLike = Union[int, str]

def derive_seed(*labels: SeedLike) -> int:
    """
    128-bit key from SHA-256 over the joined labels.
    derive_seed(base_seed, cell_id) gives the per-cell stream; extra labels
    ("curve", "validation") split that stream into independent sub-streams.
    """
    text = "\x1f".join(str(label) for label in labels)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "big")

def _block(seed: int, index: int) -> np.ndarray:
    bit_generator = np.random.Philox(key=seed % (1 << 128))
    if index:
        bit_generator = bit_generator.jumped(index)
    return np.random.Generator(bit_generator).random((BLOCK_SIZE, 2))

def uniform_pairs(seed: int, n: int, start: int = 0) -> np.ndarray:
    """
    Draws n uniform pairs with indices start .. start+n-1.

    Pair i lives in block i // BLOCK_SIZE at offset i % BLOCK_SIZE, so the value
    of a pair depends only on (seed, i): any split of the index range across
    calls or worker processes reproduces the same draws.
    """
    if n < 0 or start < 0:
        raise ValueError(f"n and start must be >= 0, got n={n}, start={start}")
    out = np.empty((n, 2))
    filled = 0
    while filled < n:
        index = start + filled
        block, offset = divmod(index, BLOCK_SIZE)
        take = min(BLOCK_SIZE - offset, n - filled)
        out[filled:filled + take] = _block(seed, block)[offset:offset + take]
        filled += take

    get_metrics_tracker().record_draws(n)
    return np.clip(out, OPEN_EPS, 1.0 - OPEN_EPS)

"""Deterministic random streams.

All randomness in the package flows through named Philox substreams derived
from a single integer seed. A stream is addressed by a string namespace plus
integer indices, e.g. stream(seed, "episode", epoch, env). Streams with
different addresses are statistically independent, and recreating a stream
with the same address replays its draws exactly, which is what makes rollouts
and training runs reproducible without storing generator state anywhere.

Namespaces in use across the package:

    "init", layer            parameter initialization
    "episode", epoch, env    all draws for one rollout episode, in order
    "shuffle", iter, epoch   minibatch permutation
    "demos"                  expert demonstration synthesis
    "sft", step              flow-matching pretraining draws
    "eval", episode          held-out evaluation episodes
    "verify", check          verification suite sampling
"""

import hashlib

import numpy as np

# Philox is counter-based: cheap to spawn, no correlation between spawn keys.
_BITGEN = np.random.Philox


def _namespace_key(namespace):
    # Stable 64-bit digest of the namespace string; keeps spawn keys integral.
    digest = hashlib.sha256(namespace.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed, namespace, *indices):
    """Return a fresh Generator for the addressed substream.

    Same (seed, namespace, indices) -> identical draw sequence, always.
    """
    if not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an int, got {type(seed).__name__}")
    for idx in indices:
        if not isinstance(idx, (int, np.integer)):
            raise TypeError(f"stream indices must be ints, got {type(idx).__name__}")
    key = (_namespace_key(namespace),) + tuple(int(i) for i in indices)
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(_BITGEN(seq))

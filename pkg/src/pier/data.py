"""Deterministic token streams and batch sampling.

The built-in corpus is a first-order Markov chain over byte values: each
state has a small set of allowed successors with Dirichlet-distributed
transition probabilities.  The chain has low entropy per token, so the
tiny model can learn it well within a short run, while the transition
structure still gives attention something to do.

Training and validation streams share one transition table but follow
disjoint sample paths, so validation measures generalization to unseen
text from the same source.

All randomness is seeded through ``np.random.default_rng`` with explicit
stream keys derived from the run seed, which makes every batch a pure
function of ``(seed, iteration)`` and independent of scheduling.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ConfigError
from .model import tokenize_bytes

# stream keys: independent RNG substreams hanging off one run seed
_STREAM_TRANSITIONS = 101
_STREAM_TRAIN_PATH = 102
_STREAM_VAL_PATH = 103
_STREAM_BATCH = 104
_STREAM_VAL_BATCH = 105


def _markov_tables(seed: int, vocab: int, branching: int, concentration: float):
    """Per-state successor ids and cumulative transition probabilities."""
    rng = np.random.default_rng([seed, _STREAM_TRANSITIONS])
    successors = np.empty((vocab, branching), dtype=np.int64)
    for state in range(vocab):
        successors[state] = rng.choice(vocab, size=branching, replace=False)
    probs = rng.dirichlet(np.full(branching, concentration), size=vocab)
    return successors, np.cumsum(probs, axis=1)


def _walk(successors, cumprobs, rng, num_tokens: int) -> np.ndarray:
    vocab, branching = successors.shape
    state = int(rng.integers(vocab))
    draws = rng.random(num_tokens)
    out = np.empty(num_tokens, dtype=np.int64)
    for i in range(num_tokens):
        row = cumprobs[state]
        j = int(np.searchsorted(row, draws[i]))
        if j >= branching:  # guard against draws landing on the rounded-up tail
            j = branching - 1
        state = int(successors[state, j])
        out[i] = state
    return out


@lru_cache(maxsize=4)
def synthetic_corpus(
    seed: int,
    num_tokens: int,
    *,
    vocab: int = 256,
    branching: int = 16,
    concentration: float = 0.4,
    split: str = "train",
) -> np.ndarray:
    """Markov-chain token stream; ``split`` selects the sample path.

    Cached and returned read-only: callers share one array.
    """
    if split not in ("train", "val"):
        raise ValueError(f"split must be 'train' or 'val', got {split!r}")
    if num_tokens < 2:
        raise ConfigError(f"corpus_tokens must be at least 2, got {num_tokens}")
    successors, cumprobs = _markov_tables(seed, vocab, branching, concentration)
    path_stream = _STREAM_TRAIN_PATH if split == "train" else _STREAM_VAL_PATH
    tokens = _walk(successors, cumprobs, np.random.default_rng([seed, path_stream]), num_tokens)
    tokens.setflags(write=False)
    return tokens


def load_corpus_file(path: str, vocab: int) -> tuple[np.ndarray, np.ndarray]:
    """Byte file -> (train, val) token streams via a 90/10 contiguous split."""
    with open(path, "rb") as fh:
        tokens = tokenize_bytes(fh.read())
    if tokens.max(initial=0) >= vocab:
        raise ConfigError(
            f"corpus_path contains byte {int(tokens.max())} but vocab_size is {vocab}"
        )
    cut = int(len(tokens) * 0.9)
    if cut < 2 or len(tokens) - cut < 2:
        raise ConfigError(f"corpus_path file too short to split ({len(tokens)} tokens)")
    train, val = tokens[:cut].copy(), tokens[cut:].copy()
    train.setflags(write=False)
    val.setflags(write=False)
    return train, val


def _windows(corpus: np.ndarray, starts: np.ndarray, width: int) -> np.ndarray:
    return corpus[starts[:, None] + np.arange(width)[None, :]]


def sample_global_batch(
    corpus: np.ndarray, seed: int, iteration: int, global_batch: int, seq_len: int
) -> np.ndarray:
    """The full ``(global_batch, seq_len + 1)`` batch for one iteration.

    A pure function of ``(seed, iteration)``; every worker slices its rows
    out of this array, so data placement never depends on execution order.
    """
    width = seq_len + 1
    if len(corpus) < width:
        raise ConfigError(
            f"corpus has {len(corpus)} tokens, need at least seq_len + 1 = {width}"
        )
    rng = np.random.default_rng([seed, _STREAM_BATCH, iteration])
    starts = rng.integers(0, len(corpus) - width + 1, size=global_batch)
    return _windows(corpus, starts, width)


def replica_rows(global_batch: int, num_replicas: int, replica: int) -> slice:
    """Contiguous row range of the global batch owned by one model replica."""
    if global_batch % num_replicas != 0:
        raise ConfigError(
            f"global_batch ({global_batch}) must be divisible by the replica count ({num_replicas})"
        )
    per = global_batch // num_replicas
    return slice(replica * per, (replica + 1) * per)


def val_batches(
    corpus: np.ndarray, seed: int, num_batches: int, batch_size: int, seq_len: int
) -> list[np.ndarray]:
    """Fixed evaluation batches, identical for every call with the same seed."""
    width = seq_len + 1
    if len(corpus) < width:
        raise ConfigError(
            f"validation corpus has {len(corpus)} tokens, need at least {width}"
        )
    batches = []
    for j in range(num_batches):
        rng = np.random.default_rng([seed, _STREAM_VAL_BATCH, j])
        starts = rng.integers(0, len(corpus) - width + 1, size=batch_size)
        batches.append(_windows(corpus, starts, width))
    return batches

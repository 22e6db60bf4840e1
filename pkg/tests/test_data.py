"""Synthetic corpus and batch sampling determinism."""

import numpy as np
import pytest

from pier.data import (
    load_corpus_file,
    replica_rows,
    sample_global_batch,
    synthetic_corpus,
    val_batches,
)
from pier.errors import ConfigError


def test_corpus_deterministic_per_seed_and_split():
    a = synthetic_corpus(0, 4096, vocab=64)
    b = synthetic_corpus(0, 4096, vocab=64)
    assert np.array_equal(a, b)
    c = synthetic_corpus(1, 4096, vocab=64)
    assert not np.array_equal(a, c)
    val = synthetic_corpus(0, 4096, vocab=64, split="val")
    assert not np.array_equal(a, val)


def test_corpus_tokens_in_range():
    corpus = synthetic_corpus(0, 4096, vocab=64)
    assert corpus.shape == (4096,)
    assert corpus.min() >= 0 and corpus.max() < 64


def test_corpus_is_learnable_but_not_trivial():
    # first-order transitions carry structure: conditional entropy well below
    # the uniform bound, but the chain still visits most symbols
    corpus = synthetic_corpus(0, 65536, vocab=256, branching=16, concentration=0.4)
    assert len(np.unique(corpus)) > 200
    counts = np.zeros((256, 256))
    np.add.at(counts, (corpus[:-1], corpus[1:]), 1.0)
    row = counts.sum(axis=1, keepdims=True)
    probs = counts / np.maximum(row, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.nansum(probs * np.where(probs > 0, np.log(probs), 0.0), axis=1)
    cond_entropy = float((ent * row[:, 0]).sum() / row.sum())
    assert 0.5 < cond_entropy < 3.5  # far from both deterministic and uniform (ln 256 ~ 5.55)


def test_global_batch_shape_and_determinism():
    corpus = synthetic_corpus(0, 8192, vocab=64)
    a = sample_global_batch(corpus, 7, 3, 8, 16)
    b = sample_global_batch(corpus, 7, 3, 8, 16)
    assert a.shape == (8, 17)  # inputs plus shifted targets
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_global_batch(corpus, 7, 4, 8, 16))
    assert not np.array_equal(a, sample_global_batch(corpus, 8, 3, 8, 16))


def test_batch_rows_are_corpus_windows():
    corpus = synthetic_corpus(0, 8192, vocab=64)
    batch = sample_global_batch(corpus, 1, 1, 4, 16)
    for row in batch:
        starts = np.flatnonzero(corpus[: -17] == row[0])
        assert any(np.array_equal(corpus[s : s + 17], row) for s in starts)


def test_replica_rows_partition_the_batch():
    slices = [replica_rows(8, 4, r) for r in range(4)]
    covered = []
    for s in slices:
        covered.extend(range(8)[s])
    assert covered == list(range(8))
    with pytest.raises(ConfigError):
        replica_rows(8, 3, 0)  # uneven split


def test_val_batches_fixed_across_calls():
    corpus = synthetic_corpus(0, 8192, vocab=64, split="val")
    a = val_batches(corpus, 5, 2, 4, 16)
    b = val_batches(corpus, 5, 2, 4, 16)
    assert len(a) == 2
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_file_corpus_round_trip(tmp_path):
    payload = bytes(range(256)) * 40
    path = tmp_path / "corpus.bin"
    path.write_bytes(payload)
    train, val = load_corpus_file(str(path), 256)
    assert len(train) + len(val) == len(payload)
    assert len(val) == len(payload) // 10
    joined = np.concatenate([train, val])
    assert np.array_equal(joined, np.frombuffer(payload, dtype=np.uint8).astype(train.dtype))


def test_file_corpus_vocab_bound(tmp_path):
    path = tmp_path / "corpus.bin"
    path.write_bytes(bytes([0, 1, 2, 200]))
    with pytest.raises(ConfigError):
        load_corpus_file(str(path), 64)

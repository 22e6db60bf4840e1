"""Process-group layout and deterministic simulated collectives.

Ranks are laid out so that the tensor-parallel shards of one model replica
are contiguous in global rank order (they would share a node), data-parallel
replicas of a group come next, and groups are outermost:

    rank = (group * dp_per_group + dp) * tp_size + tp

A "replica" here is one full copy of the model, jointly held by ``tp_size``
consecutive ranks.  Gradient averaging runs across the replicas of one
group every iteration; model-delta averaging runs across groups at
synchronization boundaries, one concurrent collective per tensor-parallel
shard.

Collectives are simulated by folding arrays in ascending participant
order, so the result is a deterministic function of the inputs alone and
never of scheduling.  Byte accounting uses the standard ring all-reduce
volume ``2 * payload * (n - 1) / n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Topology:
    """Three-level layout: groups x data-parallel replicas x tensor shards."""

    groups: int = 4
    dp_per_group: int = 1
    tp_size: int = 1

    def __post_init__(self):
        for name in ("groups", "dp_per_group", "tp_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")

    @property
    def replicas_per_group(self) -> int:
        return self.dp_per_group

    @property
    def num_replicas(self) -> int:
        return self.groups * self.dp_per_group

    @property
    def world_size(self) -> int:
        return self.groups * self.dp_per_group * self.tp_size

    def rank(self, group: int, dp: int, tp: int) -> int:
        if not (0 <= group < self.groups and 0 <= dp < self.dp_per_group and 0 <= tp < self.tp_size):
            raise ValueError(f"coordinates ({group}, {dp}, {tp}) outside topology {self}")
        return (group * self.dp_per_group + dp) * self.tp_size + tp

    def coords(self, rank: int) -> tuple[int, int, int]:
        """Inverse of :meth:`rank`."""
        if not 0 <= rank < self.world_size:
            raise ValueError(f"rank {rank} outside world of size {self.world_size}")
        tp = rank % self.tp_size
        replica = rank // self.tp_size
        return replica // self.dp_per_group, replica % self.dp_per_group, tp

    def replica_index(self, group: int, dp: int) -> int:
        """Flat replica id in ascending (group, dp) order."""
        return group * self.dp_per_group + dp

    def replica_ranks(self, group: int, dp: int) -> range:
        """Global ranks of the tensor shards holding one replica (contiguous)."""
        base = self.rank(group, dp, 0)
        return range(base, base + self.tp_size)

    def group_replica_indices(self, group: int) -> list[int]:
        return [self.replica_index(group, d) for d in range(self.dp_per_group)]

    def outer_participant_ranks(self, tp: int) -> list[int]:
        """All ranks holding the given tensor shard, in ascending order.

        Every data-parallel replica of every group takes part in the
        cross-group sync; replicas of one group contribute identical
        deltas, so the mean still equals the per-group mean.
        """
        return [
            self.rank(g, d, tp)
            for g in range(self.groups)
            for d in range(self.dp_per_group)
        ]


def build_topology(groups: int, dp_per_group: int, tp_size: int) -> Topology:
    """Validated topology; raises :class:`ConfigError` on bad counts."""
    return Topology(groups=groups, dp_per_group=dp_per_group, tp_size=tp_size)


# ---------------------------------------------------------------------------
# simulated collectives
# ---------------------------------------------------------------------------

def allreduce_avg(arrays: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of the arrays, folded in the given (ascending participant) order.

    Every participant receives this same result object in a real run, so a
    single shared array stands in for the replicated output.  With one
    participant the result is a bitwise copy of the input.
    """
    if len(arrays) == 0:
        raise ValueError("allreduce_avg needs at least one participant")
    acc = arrays[0].copy()
    for a in arrays[1:]:
        if a.shape != acc.shape or a.dtype != acc.dtype:
            raise ValueError(
                f"collective participants disagree on shape/dtype: {a.shape}/{a.dtype} "
                f"vs {acc.shape}/{acc.dtype}"
            )
        acc += a
    acc /= acc.dtype.type(len(arrays))
    return acc


def inner_gradient_sync(grads: Sequence[np.ndarray]) -> np.ndarray:
    """Average gradients across the replicas of one group (ascending dp order)."""
    return allreduce_avg(grads)


def outer_delta_sync(deltas: Sequence[np.ndarray]) -> np.ndarray:
    """Average model deltas across replicas (ascending rank order)."""
    return allreduce_avg(deltas)


def ring_allreduce_bytes(payload_bytes: float, participants: int) -> float:
    """Per-rank wire volume of a ring all-reduce; zero when nothing to sync."""
    if participants <= 1:
        return 0.0
    return 2.0 * payload_bytes * (participants - 1) / participants


# ---------------------------------------------------------------------------
# tensor-parallel sharding
# ---------------------------------------------------------------------------

def shard_offsets(num_params: int, tp_size: int) -> list[tuple[int, int]]:
    """Contiguous near-equal [start, stop) ranges, one per tensor shard.

    Sizes differ by at most one; earlier shards take the remainder.
    """
    if tp_size < 1:
        raise ConfigError(f"tp_size must be a positive integer, got {tp_size}")
    base, rem = divmod(num_params, tp_size)
    offsets = []
    start = 0
    for i in range(tp_size):
        stop = start + base + (1 if i < rem else 0)
        offsets.append((start, stop))
        start = stop
    return offsets


def shard_views(theta: np.ndarray, tp_size: int) -> list[np.ndarray]:
    """Views of the flat vector corresponding to :func:`shard_offsets`."""
    return [theta[a:b] for a, b in shard_offsets(theta.shape[0], tp_size)]


def concat_shards(shards: Sequence[np.ndarray]) -> np.ndarray:
    """Reassemble a flat vector from its ordered shards (bitwise exact)."""
    return np.concatenate(shards)

"""Rank layout, simulated collectives, and shard bookkeeping."""

import numpy as np
import pytest

from pier.errors import ConfigError
from pier.topology import (
    Topology,
    allreduce_avg,
    build_topology,
    concat_shards,
    inner_gradient_sync,
    outer_delta_sync,
    ring_allreduce_bytes,
    shard_offsets,
    shard_views,
)


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------

def test_rank_mapping_is_a_bijection():
    topo = build_topology(3, 2, 2)
    seen = set()
    for g in range(3):
        for d in range(2):
            for tp in range(2):
                r = topo.rank(g, d, tp)
                assert topo.coords(r) == (g, d, tp)
                seen.add(r)
    assert seen == set(range(topo.world_size))


def test_tensor_shards_of_a_replica_are_contiguous():
    topo = build_topology(2, 3, 4)
    for g in range(2):
        for d in range(3):
            ranks = list(topo.replica_ranks(g, d))
            assert ranks == list(range(ranks[0], ranks[0] + 4))


def test_two_by_two_by_two_layout():
    topo = build_topology(2, 2, 2)
    assert topo.world_size == 8
    assert topo.num_replicas == 4
    assert topo.group_replica_indices(0) == [0, 1]
    assert topo.group_replica_indices(1) == [2, 3]
    # shard-0 sync: one rank per data-parallel replica, across both groups
    assert topo.outer_participant_ranks(0) == [0, 2, 4, 6]
    assert topo.outer_participant_ranks(1) == [1, 3, 5, 7]


def test_singleton_world():
    topo = build_topology(1, 1, 1)
    assert topo.world_size == 1
    assert topo.outer_participant_ranks(0) == [0]


def test_eight_singleton_groups():
    topo = build_topology(8, 1, 1)
    assert topo.world_size == 8
    assert [topo.group_replica_indices(g) for g in range(8)] == [[g] for g in range(8)]


def test_bad_counts_rejected():
    with pytest.raises(ConfigError):
        build_topology(0, 1, 1)
    with pytest.raises(ConfigError):
        Topology(groups=2, dp_per_group=-1)


# ---------------------------------------------------------------------------
# collectives
# ---------------------------------------------------------------------------

def test_allreduce_two_vector_mean():
    out = allreduce_avg([np.array([1.0, 3.0]), np.array([3.0, 5.0])])
    assert np.array_equal(out, [2.0, 4.0])


def test_allreduce_single_participant_is_bitwise_copy():
    x = np.random.default_rng(0).normal(size=50)
    out = allreduce_avg([x])
    assert np.array_equal(out, x)
    assert out is not x  # fresh array, never aliased into a worker


def test_allreduce_identical_inputs_near_identity():
    # left-fold rounding: exact at n=2, within 1 ulp through n=5, 2 ulp at n=8
    x = np.random.default_rng(1).normal(size=200)
    assert np.array_equal(allreduce_avg([x, x]), x)
    ulp = np.spacing(np.abs(x))
    for n in (3, 4, 5):
        assert np.all(np.abs(allreduce_avg([x] * n) - x) <= ulp)
    assert np.all(np.abs(allreduce_avg([x] * 8) - x) <= 2 * ulp)


def test_allreduce_rejects_mismatched_shapes():
    with pytest.raises(Exception):
        allreduce_avg([np.zeros(3), np.zeros(4)])
    with pytest.raises(Exception):
        allreduce_avg([])


def test_inner_sync_two_member_group():
    out = inner_gradient_sync([np.array([2.0]), np.array([4.0])])
    assert np.array_equal(out, [3.0])


def test_outer_sync_examples():
    assert np.array_equal(
        outer_delta_sync([np.array([1.0]), np.array([3.0])]), [2.0]
    )
    d = np.random.default_rng(2).normal(size=10)
    out = outer_delta_sync([d, -d, d, -d])
    assert np.all(out == 0.0)
    single = outer_delta_sync([d])
    assert np.array_equal(single, d)


def test_mean_commutes_with_shared_offset_within_four_ulps():
    # mean over replicas of (theta - snapshot) vs (mean theta) - snapshot;
    # both paths round at the scale of theta, so the tolerance does too
    rng = np.random.default_rng(3)
    snapshot = rng.normal(size=500)
    thetas = [snapshot + 1e-3 * rng.normal(size=500) for _ in range(4)]
    a = allreduce_avg([th - snapshot for th in thetas])
    mean_theta = allreduce_avg(thetas)
    b = mean_theta - snapshot
    tol = 4 * np.spacing(np.maximum(np.abs(mean_theta), np.abs(snapshot)))
    assert np.all(np.abs(a - b) <= tol)


def test_ring_volume_formula():
    assert ring_allreduce_bytes(100.0, 4) == 150.0
    assert ring_allreduce_bytes(100.0, 2) == 100.0
    assert ring_allreduce_bytes(100.0, 1) == 0.0


# ---------------------------------------------------------------------------
# sharding
# ---------------------------------------------------------------------------

def test_shard_offsets_cover_and_balance():
    offs = shard_offsets(10, 3)
    assert offs == [(0, 4), (4, 7), (7, 10)]
    sizes = [b - a for a, b in offs]
    assert max(sizes) - min(sizes) <= 1


def test_shard_round_trip_bitwise():
    x = np.random.default_rng(4).normal(size=1031)
    for tp in (1, 2, 3, 7):
        assert np.array_equal(concat_shards(shard_views(x, tp)), x)


def test_shard_views_alias_the_source():
    x = np.zeros(8)
    views = shard_views(x, 2)
    views[1][0] = 5.0
    assert x[4] == 5.0

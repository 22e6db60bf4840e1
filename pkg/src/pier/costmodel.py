"""Analytical runtime projection and speed metrics for cluster-scale runs.

The projection prices every simulated collective with a ring all-reduce
model: ``latency + 2 * payload * (n - 1) / n / bandwidth``.  Bandwidth is
the intra-node figure when all participants share a node and the
inter-node figure otherwise; with tensor parallelism the payload splits
into ``tp_size`` concurrent shard collectives, so wall time uses one
shard's cost while byte accounting elsewhere sums them.

Compute cost is a constant per iteration: the point of the projection is
the communication trade-off between per-iteration global averaging and
group-local averaging with periodic cross-group boundaries, not a FLOP
model.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ConfigError
from .optim import ScheduleConfig
from .topology import Topology

# bandwidth figures in bytes/second
PRESETS: dict[str, dict] = {
    # four-GPU nodes with a fast intra-node fabric and ordinary fabric between nodes
    "a100-node4": {"intra_node_bw": 900.0e9, "inter_node_bw": 100.0e9, "gpus_per_node": 4},
    # one GPU per node: every collective crosses the node fabric
    "gh200-node1": {"intra_node_bw": 900.0e9, "inter_node_bw": 50.0e9, "gpus_per_node": 1},
}


@dataclass(frozen=True)
class CostModelParams:
    intra_node_bw: float
    inter_node_bw: float
    gpus_per_node: int
    per_collective_latency: float = 1e-5
    per_iter_compute_time: float = 0.1
    model_bytes: float = 3.1e9

    def __post_init__(self):
        for name in (
            "intra_node_bw",
            "inter_node_bw",
            "per_collective_latency",
            "per_iter_compute_time",
            "model_bytes",
        ):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.gpus_per_node < 1:
            raise ConfigError(f"gpus_per_node must be a positive integer, got {self.gpus_per_node}")
        if self.intra_node_bw < self.inter_node_bw:
            raise ConfigError(
                f"intra_node_bw ({self.intra_node_bw}) must be at least inter_node_bw "
                f"({self.inter_node_bw})"
            )


def cost_params(preset: str, **overrides) -> CostModelParams:
    """Build :class:`CostModelParams` from a named preset plus overrides."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    known = set(CostModelParams.__dataclass_fields__)
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(
            f"unknown cost-model field(s) {sorted(unknown)}; choose from {sorted(known)}"
        )
    return replace(CostModelParams(**PRESETS[preset]), **overrides)


@dataclass(frozen=True)
class RuntimeProjection:
    total_time: float
    compute_time: float
    inner_comm_time: float
    outer_comm_time: float
    inner_events: int
    outer_events: int

    @property
    def comm_event_counts(self) -> tuple[int, int]:
        return (self.inner_events, self.outer_events)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _require_positive(**values) -> None:
    for name, v in values.items():
        if v <= 0:
            raise ConfigError(f"{name} must be positive, got {v}")


def speedup(t_baseline: float, t_variant: float) -> float:
    """How many times faster the variant finishes than the baseline."""
    _require_positive(t_baseline=t_baseline, t_variant=t_variant)
    return t_baseline / t_variant


def perf_improvement(t_baseline: float, t_variant: float) -> float:
    """Percent of baseline runtime saved by the variant."""
    _require_positive(t_baseline=t_baseline, t_variant=t_variant)
    return (t_baseline - t_variant) / t_baseline * 100.0


def scaling_efficiency(t_small: float, t_large: float, n_small: int, n_large: int) -> float:
    """Throughput-per-device ratio when scaling from ``n_small`` to ``n_large``.

    1.0 is perfect scaling: doubling devices halves the runtime.
    """
    _require_positive(t_small=t_small, t_large=t_large, n_small=n_small, n_large=n_large)
    return (t_small / t_large) * (n_small / n_large)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def ring_allreduce_time(payload_bytes: float, participants: int, bandwidth: float, latency: float) -> float:
    """Wall time of one ring all-reduce; zero when there is nothing to sync."""
    if participants <= 1:
        return 0.0
    return latency + 2.0 * payload_bytes * (participants - 1) / participants / bandwidth


def _collective_time(params: CostModelParams, ranks, payload_bytes: float) -> float:
    nodes = {r // params.gpus_per_node for r in ranks}
    bw = params.inter_node_bw if len(nodes) > 1 else params.intra_node_bw
    return ring_allreduce_time(payload_bytes, len(ranks), bw, params.per_collective_latency)


def project_runtime(
    params: CostModelParams,
    topo: Topology,
    sched: ScheduleConfig,
    mode: str,
) -> RuntimeProjection:
    """Projected wall time of one full run under the given layout and mode.

    Per-shard collectives run concurrently, so each priced collective uses
    ``model_bytes / tp_size`` as payload and shard 0's participant set; all
    shard sets have identical node spans by construction.
    """
    if mode not in ("pier", "adamw_baseline", "diloco_baseline"):
        raise ConfigError(f"unknown mode {mode!r} for runtime projection")
    total = sched.total_iters
    shard_payload = params.model_bytes / topo.tp_size
    compute = total * params.per_iter_compute_time

    global_ranks = [topo.rank(g, d, 0) for g in range(topo.groups) for d in range(topo.dp_per_group)]
    global_time = _collective_time(params, global_ranks, shard_payload)

    if mode == "adamw_baseline":
        inner_comm = total * global_time
        inner_events = total if topo.num_replicas > 1 else 0
        return RuntimeProjection(
            total_time=compute + inner_comm,
            compute_time=compute,
            inner_comm_time=inner_comm,
            outer_comm_time=0.0,
            inner_events=inner_events,
            outer_events=0,
        )

    lazy = sched.lazy_end
    local_iters = total - lazy
    group_ranks = [topo.rank(0, d, 0) for d in range(topo.dp_per_group)]
    group_time = _collective_time(params, group_ranks, shard_payload)
    outer_ranks = topo.outer_participant_ranks(0)
    outer_events = local_iters // sched.sync_interval
    outer_time = _collective_time(params, outer_ranks, shard_payload)

    inner_comm = lazy * global_time + local_iters * group_time
    outer_comm = outer_events * outer_time
    inner_events = (lazy if topo.num_replicas > 1 else 0) + (
        local_iters if topo.dp_per_group > 1 else 0
    )
    return RuntimeProjection(
        total_time=compute + inner_comm + outer_comm,
        compute_time=compute,
        inner_comm_time=inner_comm,
        outer_comm_time=outer_comm,
        inner_events=inner_events,
        outer_events=outer_events,
    )

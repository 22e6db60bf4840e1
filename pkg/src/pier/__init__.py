"""Desk-scale simulator for two-level distributed optimization.

Inner loop: per-replica AdamW on a tiny byte-level transformer, with
gradient averaging inside each group.  Outer loop: periodic Nesterov
momentum steps on model deltas averaged across groups.  All collectives
are simulated deterministically in-process, so runs are bitwise
reproducible and every claimed equivalence can be checked exactly.
"""

from .config import MODES, RunConfig, load_config
from .costmodel import (
    CostModelParams,
    RuntimeProjection,
    cost_params,
    perf_improvement,
    project_runtime,
    ring_allreduce_time,
    scaling_efficiency,
    speedup,
)
from .driver import (
    RunResult,
    evaluate,
    momentum_warmup_phase,
    run_adamw_baseline,
    run_diloco_baseline,
    run_pier,
    run_training,
)
from .errors import ConfigError, NumericError, ProtocolError
from .model import (
    ModelConfig,
    backward,
    forward_loss,
    grad_check,
    init_params,
    loss_and_grad,
    param_count,
    param_shapes,
    tokenize_bytes,
    unflatten,
)
from .optim import (
    AdamWConfig,
    AdamWState,
    OuterState,
    ScheduleConfig,
    adamw_step,
    clip_global_norm,
    fold_momentum,
    inner_lr,
    momentum_mu,
    outer_lr,
    outer_step,
)
from ._version import __version__
from .topology import (
    Topology,
    allreduce_avg,
    build_topology,
    inner_gradient_sync,
    outer_delta_sync,
    ring_allreduce_bytes,
    shard_offsets,
)

__all__ = [
    "AdamWConfig",
    "AdamWState",
    "ConfigError",
    "CostModelParams",
    "MODES",
    "ModelConfig",
    "NumericError",
    "OuterState",
    "ProtocolError",
    "RunConfig",
    "RunResult",
    "RuntimeProjection",
    "ScheduleConfig",
    "Topology",
    "adamw_step",
    "allreduce_avg",
    "backward",
    "build_topology",
    "clip_global_norm",
    "cost_params",
    "evaluate",
    "fold_momentum",
    "forward_loss",
    "grad_check",
    "init_params",
    "inner_gradient_sync",
    "inner_lr",
    "load_config",
    "loss_and_grad",
    "momentum_mu",
    "momentum_warmup_phase",
    "outer_delta_sync",
    "outer_lr",
    "outer_step",
    "param_count",
    "param_shapes",
    "perf_improvement",
    "project_runtime",
    "ring_allreduce_bytes",
    "ring_allreduce_time",
    "run_adamw_baseline",
    "run_diloco_baseline",
    "run_pier",
    "run_training",
    "scaling_efficiency",
    "shard_offsets",
    "speedup",
    "tokenize_bytes",
    "unflatten",
    "__version__",
]

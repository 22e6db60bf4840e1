"""Inner AdamW, gradient clipping, schedules, and the outer momentum step.

The inner optimizer is decoupled-weight-decay AdamW with bias correction;
decay is applied to the parameters before the adaptive update, scaled by
the current learning rate.  The outer optimizer treats the averaged model
delta accumulated over one synchronization window as a gradient-like
quantity and applies a Nesterov-style momentum step to it.

Everything here is a pure function: inputs are never mutated, and state
travels in and out as values.  Identical inputs give bitwise-identical
outputs, which the equivalence tests rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# Outer learning-rate plateau levels and momentum decay stages.  Stage
# boundaries are fixed fractions of the total run, floored to integers.
OUTER_LR_HIGH = 1.1
OUTER_LR_LATE = 0.9
MU_STAGES = (0.9, 0.99, 0.95, 0.9)
_RAMP_START_FRAC = 0.1
_RAMP_END_FRAC = 0.2
_MU_MID_FRAC = 0.15
_LATE_FRAC = 0.8


@dataclass(frozen=True)
class AdamWConfig:
    """Stepper hyperparameters (the learning rate arrives per step)."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.1
    clip_norm: float = 1.0

    def __post_init__(self):
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {b}")
        if self.eps <= 0.0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.clip_norm <= 0.0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")


@dataclass
class AdamWState:
    """First/second moment estimates plus the completed step count."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def initial(cls, num_params: int, dtype=np.float64) -> "AdamWState":
        return cls(m=np.zeros(num_params, dtype=dtype), v=np.zeros(num_params, dtype=dtype))


def clip_global_norm(grad: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    """Scale ``grad`` so its l2 norm is at most ``max_norm``.

    Returns ``(clipped, original_norm)``; the input is returned unscaled
    (not copied) when already within bounds.
    """
    norm = float(np.sqrt(np.dot(grad, grad)))
    if norm > max_norm:
        return grad * grad.dtype.type(max_norm / norm), norm
    return grad, norm


def adamw_step(
    theta: np.ndarray,
    grad: np.ndarray,
    state: AdamWState,
    lr: float,
    cfg: AdamWConfig,
) -> tuple[np.ndarray, AdamWState]:
    """One AdamW update; returns new parameters and new state.

    Decay first: ``theta *= 1 - lr * weight_decay``; then the bias-corrected
    adaptive step ``theta -= lr * m_hat / (sqrt(v_hat) + eps)``.
    """
    step = state.step + 1
    dt = theta.dtype.type
    new_theta = theta * dt(1.0 - lr * cfg.weight_decay)
    m = cfg.beta1 * state.m + dt(1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + dt(1.0 - cfg.beta2) * (grad * grad)
    m_hat = m / dt(1.0 - cfg.beta1 ** step)
    denom = np.sqrt(v / dt(1.0 - cfg.beta2 ** step))
    denom += dt(cfg.eps)
    new_theta -= dt(lr) * m_hat / denom
    return new_theta, AdamWState(m=m, v=v, step=step)


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScheduleConfig:
    """Run-length bookkeeping: phase split, sync cadence, inner LR shape."""

    total_iters: int = 3000
    lazy_fraction: float = 0.1        # fully synchronous warm phase, as a fraction of the run
    sync_interval: int = 20           # iterations between synchronization boundaries
    inner_warmup_fraction: float = 0.02
    inner_lr_peak: float = 3e-3
    inner_lr_min: float = 3e-4
    decay_iters: int | None = None    # cosine decay horizon; defaults to total_iters

    def __post_init__(self):
        if self.total_iters < 1:
            raise ConfigError(f"total_iters must be positive, got {self.total_iters}")
        if not 0.0 <= self.lazy_fraction < 1.0:
            raise ConfigError(f"lazy_fraction must lie in [0, 1), got {self.lazy_fraction}")
        if self.sync_interval < 1:
            raise ConfigError(f"sync_interval must be a positive integer, got {self.sync_interval}")
        if self.sync_interval >= self.total_iters:
            raise ConfigError(
                f"sync_interval ({self.sync_interval}) must be smaller than total_iters ({self.total_iters})"
            )
        if not 0.0 <= self.inner_warmup_fraction < 1.0:
            raise ConfigError(
                f"inner_warmup_fraction must lie in [0, 1), got {self.inner_warmup_fraction}"
            )
        if self.inner_lr_peak <= 0.0 or self.inner_lr_min < 0.0:
            raise ConfigError(
                f"inner_lr_peak/inner_lr_min must be positive, got {self.inner_lr_peak}/{self.inner_lr_min}"
            )
        if self.inner_lr_min > self.inner_lr_peak:
            raise ConfigError(
                f"inner_lr_min ({self.inner_lr_min}) must not exceed inner_lr_peak ({self.inner_lr_peak})"
            )
        if self.decay_iters is not None and self.decay_iters < 1:
            raise ConfigError(f"decay_iters must be positive, got {self.decay_iters}")

    @property
    def lazy_end(self) -> int:
        """Last iteration of the fully synchronous phase (floored product)."""
        return int(math.floor(self.lazy_fraction * self.total_iters))

    @property
    def warmup_iters(self) -> int:
        return int(math.floor(self.inner_warmup_fraction * self.total_iters))

    @property
    def decay_horizon(self) -> int:
        return self.total_iters if self.decay_iters is None else self.decay_iters


def _boundary(frac: float, total: int) -> int:
    return int(math.floor(frac * total))


def inner_lr(t: int, sched: ScheduleConfig) -> float:
    """Linear warmup to the peak, then cosine decay to the minimum."""
    if t < 0:
        raise ValueError(f"iteration must be non-negative, got {t}")
    w = sched.warmup_iters
    peak, lo = sched.inner_lr_peak, sched.inner_lr_min
    if w > 0 and t <= w:
        return peak * (t / w)
    horizon = sched.decay_horizon
    if t >= horizon:
        return lo
    frac = (t - w) / (horizon - w)
    return lo + 0.5 * (peak - lo) * (1.0 + math.cos(math.pi * frac))


def outer_lr(t: int, sched: ScheduleConfig) -> float:
    """Outer LR: linear 0 -> 1 ramp, high plateau, then a late cool-down.

    Defined only from the end of the ramp-start boundary (one tenth of the
    run) onward; asking for an earlier iteration is a caller bug.
    """
    total = sched.total_iters
    ramp_start = _boundary(_RAMP_START_FRAC, total)
    ramp_end = _boundary(_RAMP_END_FRAC, total)
    late = _boundary(_LATE_FRAC, total)
    if t < ramp_start:
        raise ValueError(
            f"outer_lr is undefined before iteration {ramp_start} (got t={t}); "
            "the synchronous phase has no outer updates"
        )
    if t > total:
        raise ValueError(f"outer_lr is undefined past total_iters={total} (got t={t})")
    if t < ramp_end:
        return (t - ramp_start) / (ramp_end - ramp_start)
    if t < late:
        return OUTER_LR_HIGH
    return OUTER_LR_LATE


def momentum_mu(t: int, total_iters: int) -> float:
    """Outer momentum coefficient: 0.9, then 0.99, 0.95, and back to 0.9.

    Stage boundaries sit at fixed fractions (0.1, 0.15, 0.2) of the run;
    intervals are half-open on the right.
    """
    if t < 0:
        raise ValueError(f"iteration must be non-negative, got {t}")
    if t < _boundary(_RAMP_START_FRAC, total_iters):
        return MU_STAGES[0]
    if t < _boundary(_MU_MID_FRAC, total_iters):
        return MU_STAGES[1]
    if t < _boundary(_RAMP_END_FRAC, total_iters):
        return MU_STAGES[2]
    return MU_STAGES[3]


# ---------------------------------------------------------------------------
# outer (cross-group) momentum step
# ---------------------------------------------------------------------------

@dataclass
class OuterState:
    """Cross-group momentum buffer plus the window-start parameter snapshot.

    ``snapshot`` is managed by the caller: :func:`outer_step` reads it but
    never replaces it, because the driver re-anchors it once per window.
    """

    momentum: np.ndarray
    snapshot: np.ndarray
    mu: float = MU_STAGES[0]

    @classmethod
    def initial(cls, theta: np.ndarray) -> "OuterState":
        return cls(momentum=np.zeros_like(theta), snapshot=theta)


def fold_momentum(momentum: np.ndarray, delta: np.ndarray, mu: float) -> np.ndarray:
    """``mu * momentum + delta`` with a fixed evaluation order."""
    return (momentum.dtype.type(mu) * momentum) + delta


def outer_step(
    state: OuterState,
    delta: np.ndarray,
    lr: float,
    mu: float,
    *,
    anchor: np.ndarray | None = None,
) -> tuple[np.ndarray, OuterState]:
    """Nesterov momentum step on an averaged model delta.

    ``delta`` is the cross-group mean of ``theta_now - snapshot``.  The new
    momentum is ``mu * momentum + delta`` and the applied update is
    ``lr * (mu * new_momentum + delta)``, taken from the snapshot.

    When ``anchor`` (the averaged model the delta was measured against) is
    provided, the result is computed as ``anchor + (update - delta)``,
    which is the same point in exact arithmetic but keeps the degenerate
    settings ``mu == 0, lr == 1`` an exact no-op: the step then lands
    bitwise on the averaged model instead of accumulating one rounding
    error per window.  Returns ``(theta_new, new_state)``.
    """
    dt = delta.dtype.type
    new_momentum = fold_momentum(state.momentum, delta, mu)
    update = dt(lr) * fold_momentum(new_momentum, delta, mu)
    if anchor is None:
        theta_new = state.snapshot + update
    else:
        theta_new = anchor + (update - delta)
    return theta_new, OuterState(momentum=new_momentum, snapshot=state.snapshot, mu=mu)

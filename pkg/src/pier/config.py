"""Run configuration: defaults, key=value parsing, and validation.

A config file is plain ``key = value`` lines (``#`` comments and blank
lines allowed).  The same syntax is accepted by the CLI ``--set``
overrides.  Field types come from :class:`RunConfig`; unknown keys and
untypable values raise :class:`ConfigError` naming the key.

The defaults form the desk preset: a run small enough to finish on one
workstation core while still exercising every part of the protocol.
"""

from __future__ import annotations

import math
import types
import typing
from dataclasses import dataclass, fields

from .errors import ConfigError
from .model import ModelConfig
from .optim import AdamWConfig, ScheduleConfig
from .topology import Topology, build_topology

MODES = ("pier", "adamw_baseline", "diloco_baseline")

# Fixed-coefficient outer settings that define the plain delta-averaging
# baseline: constant outer LR, constant momentum, no warmed-up buffer.
DILOCO_OUTER_LR = 0.7
DILOCO_OUTER_MU = 0.9


@dataclass
class RunConfig:
    """Every knob of one training run, flat for easy overriding."""

    mode: str = "pier"
    seed: int = 0

    # model
    vocab_size: int = 256
    embed_dim: int = 128
    num_layers: int = 2
    num_heads: int = 4
    seq_len: int = 64
    precision: str = "double"

    # run length and cadence
    total_iters: int = 3000
    lazy_fraction: float = 0.1
    sync_interval: int = 20
    inner_warmup_fraction: float = 0.02
    inner_lr_peak: float = 3e-3
    inner_lr_min: float = 3e-4
    decay_iters: int | None = None

    # inner optimizer
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.1
    clip_norm: float = 1.0

    # layout
    groups: int = 4
    dp_per_group: int = 1
    tp_size: int = 1

    # data
    global_batch: int = 64
    corpus_path: str | None = None
    corpus_tokens: int = 262144
    val_tokens: int = 65536
    markov_branching: int = 16
    markov_concentration: float = 0.4
    val_batches: int = 2
    val_batch_size: int = 32

    # outer-loop overrides (None = mode default)
    outer_lr_fixed: float | None = None
    outer_mu_fixed: float | None = None

    # execution
    offload_enabled: bool = False
    workers_mode: str = "seq"

    # ------------------------------------------------------------------
    # derived component configs
    # ------------------------------------------------------------------

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            vocab_size=self.vocab_size,
            embed_dim=self.embed_dim,
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            seq_len=self.seq_len,
            precision=self.precision,
        )

    def schedule_config(self) -> ScheduleConfig:
        return ScheduleConfig(
            total_iters=self.total_iters,
            lazy_fraction=self.lazy_fraction,
            sync_interval=self.sync_interval,
            inner_warmup_fraction=self.inner_warmup_fraction,
            inner_lr_peak=self.inner_lr_peak,
            inner_lr_min=self.inner_lr_min,
            decay_iters=self.decay_iters,
        )

    def adamw_config(self) -> AdamWConfig:
        return AdamWConfig(
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
            clip_norm=self.clip_norm,
        )

    def topology(self) -> Topology:
        return build_topology(self.groups, self.dp_per_group, self.tp_size)

    def effective_outer_lr_fixed(self) -> float | None:
        """Constant outer LR for this mode, or None to use the schedule."""
        if self.outer_lr_fixed is not None:
            return self.outer_lr_fixed
        return DILOCO_OUTER_LR if self.mode == "diloco_baseline" else None

    def effective_outer_mu_fixed(self) -> float | None:
        if self.outer_mu_fixed is not None:
            return self.outer_mu_fixed
        return DILOCO_OUTER_MU if self.mode == "diloco_baseline" else None

    # ------------------------------------------------------------------

    def validate(self) -> "RunConfig":
        """Cross-field checks; returns self so calls can chain."""
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.workers_mode not in ("seq", "par"):
            raise ConfigError(f"workers_mode must be 'seq' or 'par', got {self.workers_mode!r}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        # component constructors perform their own field checks
        self.model_config()
        sched = self.schedule_config()
        self.adamw_config()
        topo = self.topology()
        if sched.lazy_end % self.sync_interval != 0:
            raise ConfigError(
                f"lazy_fraction * total_iters ({sched.lazy_end}) must be a multiple of "
                f"sync_interval ({self.sync_interval}) so the phase switch lands on a boundary"
            )
        if self.global_batch < 1:
            raise ConfigError(f"global_batch must be positive, got {self.global_batch}")
        if self.global_batch % topo.num_replicas != 0:
            raise ConfigError(
                f"global_batch ({self.global_batch}) must be divisible by the replica count "
                f"groups * dp_per_group = {topo.num_replicas}"
            )
        if self.val_batches < 1 or self.val_batch_size < 1:
            raise ConfigError(
                f"val_batches/val_batch_size must be positive, got "
                f"{self.val_batches}/{self.val_batch_size}"
            )
        if self.markov_branching < 1 or self.markov_branching > self.vocab_size:
            raise ConfigError(
                f"markov_branching must lie in [1, vocab_size], got {self.markov_branching}"
            )
        if self.markov_concentration <= 0.0:
            raise ConfigError(
                f"markov_concentration must be positive, got {self.markov_concentration}"
            )
        for name in ("outer_lr_fixed", "outer_mu_fixed"):
            value = getattr(self, name)
            if value is not None and value < 0.0:
                raise ConfigError(f"{name} must be non-negative, got {value}")
        if self.mode != "adamw_baseline" and self.effective_outer_lr_fixed() is None:
            # scheduled outer LR is only defined from one tenth of the run on
            if sched.lazy_end < math.floor(0.1 * self.total_iters):
                raise ConfigError(
                    "lazy_fraction below 0.1 leaves early outer steps outside the outer LR "
                    "schedule domain; raise lazy_fraction or set outer_lr_fixed"
                )
        return self


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _field_types() -> dict[str, type]:
    return typing.get_type_hints(RunConfig)


def _parse_scalar(key: str, raw: str, hint) -> object:
    raw = raw.strip()
    if isinstance(hint, types.UnionType):
        args = typing.get_args(hint)
        if type(None) in args:
            if raw.lower() in ("none", "null", ""):
                return None
            inner = [a for a in args if a is not type(None)][0]
            return _parse_scalar(key, raw, inner)
        raise ConfigError(f"unsupported type for key {key}")
    if hint is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"key {key} expects a boolean, got {raw!r}")
    if hint is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"key {key} expects an integer, got {raw!r}") from None
    if hint is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"key {key} expects a number, got {raw!r}") from None
    if hint is str:
        return raw
    raise ConfigError(f"unsupported type for key {key}")


def parse_assignment(text: str) -> tuple[str, str]:
    """Split one ``key=value`` item; raises on malformed input."""
    if "=" not in text:
        raise ConfigError(f"expected key=value, got {text!r}")
    key, _, value = text.partition("=")
    key = key.strip()
    if not key:
        raise ConfigError(f"expected key=value, got {text!r}")
    return key, value.strip()


def apply_assignments(cfg: RunConfig, items: typing.Iterable[str]) -> RunConfig:
    """Apply ``key=value`` strings to a config in place (returns it)."""
    hints = _field_types()
    valid = {f.name for f in fields(RunConfig)}
    for item in items:
        key, raw = parse_assignment(item)
        if key not in valid:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _parse_scalar(key, raw, hints[key]))
    return cfg


def load_config(
    path: str | None = None,
    overrides: typing.Sequence[str] = (),
    **direct: object,
) -> RunConfig:
    """Defaults -> optional file -> ``--set`` overrides -> keyword args.

    The result is validated; any problem raises :class:`ConfigError`.
    """
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        items = []
        for lineno, line in enumerate(lines, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                items.append("=".join(parse_assignment(stripped)))
            except ConfigError:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {stripped!r}") from None
        apply_assignments(cfg, items)
    apply_assignments(cfg, overrides)
    valid = {f.name for f in fields(RunConfig)}
    for key, value in direct.items():
        if key not in valid:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, value)
    return cfg.validate()


def config_to_dict(cfg: RunConfig) -> dict[str, object]:
    """JSON-ready mapping of every field, in declaration order."""
    return {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}


def config_from_dict(data: dict[str, object]) -> RunConfig:
    """Rebuild a validated config from :func:`config_to_dict` output."""
    valid = {f.name for f in fields(RunConfig)}
    unknown = set(data) - valid
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    cfg = RunConfig(**data)  # type: ignore[arg-type]
    return cfg.validate()

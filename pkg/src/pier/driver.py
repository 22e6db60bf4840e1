"""Training drivers: the two-level grouped protocol and its baselines.

Three modes share one engine:

``adamw_baseline``
    Every model replica averages gradients with every other replica each
    iteration: plain synchronous data-parallel AdamW.

``pier``
    A lazy-start phase (the first ``lazy_fraction`` of the run) trains
    fully synchronously while pre-filling the outer momentum buffer from
    parameter deltas observed every ``sync_interval`` iterations.  After
    the phase ends, gradient averaging shrinks to each group, and at every
    boundary the groups' models are averaged and advanced by a Nesterov
    momentum step on the window delta, under scheduled outer LR and
    momentum coefficients.

``diloco_baseline``
    Same phase structure, but the outer step uses fixed coefficients and
    the momentum buffer starts cold (no warmup accumulation).

Scheduling is simulated in-process.  Workers exist per model replica;
tensor-parallel ranks only affect shard bookkeeping (collective payload
accounting and host offload), never the arithmetic, because every
collective here is elementwise and shard boundaries commute with it.

Two execution modes produce bitwise-identical results: ``seq`` iterates
workers round-robin on the calling thread; ``par`` runs one thread per
replica with barrier phases.  Equality holds because each stage is a pure
function of values fixed at the preceding barrier, and every reduction is
folded in ascending replica order by a single thread.

Parameter and optimizer arrays are treated as immutable values: stages
build new arrays and swap references, so sharing one array across workers
(as the collectives do) is safe.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import data as data_mod
from ._version import __version__ as package_version
from .artifacts import PARAMS_NAME, SUMMARY_NAME, TRAJECTORY_NAME, write_json, write_jsonl, write_params
from .config import RunConfig, config_to_dict
from .errors import NumericError, ProtocolError
from .model import ModelConfig, forward_loss, init_params, loss_and_grad, param_count
from .optim import (
    AdamWState,
    OuterState,
    adamw_step,
    clip_global_norm,
    fold_momentum,
    inner_lr,
    momentum_mu,
    outer_lr,
    outer_step,
)
from .topology import (
    inner_gradient_sync,
    outer_delta_sync,
    ring_allreduce_bytes,
    shard_offsets,
)

_STREAM_INIT = 100
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# result containers
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryRecord:
    iteration: int
    phase: str
    train_loss: float | None
    val_loss: float | None
    inner_lr: float
    outer_lr: float | None
    mu: float | None
    comm_bytes: float

    def to_dict(self) -> dict:
        return {
            "record": "iter",
            "iter": self.iteration,
            "phase": self.phase,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "inner_lr": self.inner_lr,
            "outer_lr": self.outer_lr,
            "mu": self.mu,
            "comm_bytes": self.comm_bytes,
        }


@dataclass
class CommStats:
    inner_bytes: float = 0.0
    outer_bytes: float = 0.0
    inner_events: int = 0
    outer_events: int = 0

    @property
    def total_bytes(self) -> float:
        return self.inner_bytes + self.outer_bytes


class HostStore:
    """Host-side parking space for outer state between boundaries.

    Keys are ``(name, rank)``: each simulated rank moves only its own
    contiguous 1/world_size shard, so one boundary moves each byte exactly
    once.  Stored arrays are copied on the way in and surrendered on the
    way out; reload of a missing key or double-store of a live one is a
    protocol bug.
    """

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self._live: dict[tuple[str, int], np.ndarray] = {}
        self.to_host_bytes = 0.0
        self.from_host_bytes = 0.0
        self.store_events = 0
        self.load_events = 0

    def store(self, key: tuple[str, int], array: np.ndarray) -> None:
        if not self.enabled:
            return
        if key in self._live:
            raise ProtocolError(f"offload key {key} stored twice without a reload")
        self._live[key] = array.copy()
        self.to_host_bytes += array.nbytes
        self.store_events += 1

    def load(self, key: tuple[str, int]) -> np.ndarray:
        if not self.enabled:
            raise ProtocolError("offload disabled: nothing to load")
        if key not in self._live:
            raise ProtocolError(f"offload key {key} loaded before being stored")
        array = self._live.pop(key)
        self.from_host_bytes += array.nbytes
        self.load_events += 1
        return array

    @property
    def resident_bytes(self) -> float:
        return float(sum(a.nbytes for a in self._live.values()))

    def counters(self) -> dict:
        return {
            "enabled": self.enabled,
            "to_host_bytes": self.to_host_bytes,
            "from_host_bytes": self.from_host_bytes,
            "store_events": self.store_events,
            "load_events": self.load_events,
            "resident_bytes": self.resident_bytes,
        }


@dataclass
class RunResult:
    """Everything a finished run exposes to callers and artifact writers."""

    mode: str
    seed: int
    config: dict
    records: list[TrajectoryRecord]
    final_params: np.ndarray
    final_train_loss: float
    final_val_loss: float
    comm: CommStats
    offload: dict
    wall_time_s: float
    warmup_folds: int
    outer_momentum: np.ndarray | None
    final_opt_steps: list[int] = field(default_factory=list)

    def header_dict(self) -> dict:
        return {
            "record": "header",
            "format_version": FORMAT_VERSION,
            "version": package_version,
            "mode": self.mode,
            "seed": self.seed,
            "world_size": self.config["groups"] * self.config["dp_per_group"] * self.config["tp_size"],
            "topology": {
                "groups": self.config["groups"],
                "dp_per_group": self.config["dp_per_group"],
                "tp_size": self.config["tp_size"],
            },
            "config": self.config,
        }

    def trajectory_dicts(self) -> list[dict]:
        return [self.header_dict()] + [r.to_dict() for r in self.records]

    def summary_dict(self) -> dict:
        # wall time stays out of the artifact so reruns are byte-identical
        return {
            "record": "summary",
            "format_version": FORMAT_VERSION,
            "mode": self.mode,
            "seed": self.seed,
            "iters": self.config["total_iters"],
            "param_count": int(self.final_params.shape[0]),
            "final_train_loss": self.final_train_loss,
            "final_val_loss": self.final_val_loss,
            "comm": {
                "inner_bytes": self.comm.inner_bytes,
                "outer_bytes": self.comm.outer_bytes,
                "total_bytes": self.comm.total_bytes,
                "inner_events": self.comm.inner_events,
                "outer_events": self.comm.outer_events,
            },
            "offload": self.offload,
            "warmup_folds": self.warmup_folds,
            "config": self.config,
        }

    def write(self, out_dir) -> None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl(out / TRAJECTORY_NAME, self.trajectory_dicts())
        write_params(out / PARAMS_NAME, self.final_params)
        write_json(out / SUMMARY_NAME, self.summary_dict())


# ---------------------------------------------------------------------------
# the engine
# ---------------------------------------------------------------------------

@dataclass
class _Worker:
    replica: int
    group: int
    dp: int
    params: np.ndarray
    opt: AdamWState
    loss: float = 0.0
    grad: np.ndarray | None = None


class _Engine:
    def __init__(self, cfg: RunConfig, *, batch_source=None, probe=None):
        cfg.validate()
        self.cfg = cfg
        self.mcfg: ModelConfig = cfg.model_config()
        self.sched = cfg.schedule_config()
        self.acfg = cfg.adamw_config()
        self.topo = cfg.topology()
        self.probe = probe
        self.num_params = param_count(self.mcfg)
        self.payload_bytes = float(self.num_params * self.mcfg.dtype.itemsize)

        theta0 = init_params(self.mcfg, np.random.default_rng([cfg.seed, _STREAM_INIT]))
        self.workers: list[_Worker] = []
        for g in range(self.topo.groups):
            for d in range(self.topo.dp_per_group):
                self.workers.append(
                    _Worker(
                        replica=self.topo.replica_index(g, d),
                        group=g,
                        dp=d,
                        params=theta0,
                        opt=AdamWState.initial(self.num_params, self.mcfg.dtype),
                    )
                )

        if cfg.corpus_path is not None:
            self.train_corpus, val_corpus = data_mod.load_corpus_file(cfg.corpus_path, cfg.vocab_size)
        else:
            self.train_corpus = data_mod.synthetic_corpus(
                cfg.seed,
                cfg.corpus_tokens,
                vocab=cfg.vocab_size,
                branching=cfg.markov_branching,
                concentration=cfg.markov_concentration,
            )
            val_corpus = data_mod.synthetic_corpus(
                cfg.seed,
                cfg.val_tokens,
                vocab=cfg.vocab_size,
                branching=cfg.markov_branching,
                concentration=cfg.markov_concentration,
                split="val",
            )
        self.val_batches = data_mod.val_batches(
            val_corpus, cfg.seed, cfg.val_batches, cfg.val_batch_size, cfg.seq_len
        )
        self.batch_source = batch_source

        self.synchronous = cfg.mode == "adamw_baseline"
        self.outer: OuterState | None = None if self.synchronous else OuterState.initial(theta0)
        self.mu_fixed = cfg.effective_outer_mu_fixed()
        self.lr_fixed = cfg.effective_outer_lr_fixed()
        self.warmup_accumulation = cfg.mode == "pier"

        self.host = HostStore(cfg.offload_enabled and not self.synchronous)
        if self.host.enabled:
            self._park_outer_state()

        self.comm = CommStats()
        self.records: list[TrajectoryRecord] = []
        self.warmup_folds = 0
        self._iter_comm = 0.0

    # -- offload ------------------------------------------------------------

    def _park_outer_state(self) -> None:
        offsets = shard_offsets(self.num_params, self.topo.world_size)
        for rank, (a, b) in enumerate(offsets):
            self.host.store(("snapshot", rank), self.outer.snapshot[a:b])
            self.host.store(("momentum", rank), self.outer.momentum[a:b])

    def _fetch_outer_state(self) -> None:
        offsets = shard_offsets(self.num_params, self.topo.world_size)
        snap = [self.host.load(("snapshot", rank)) for rank in range(len(offsets))]
        mom = [self.host.load(("momentum", rank)) for rank in range(len(offsets))]
        self.outer.snapshot = np.concatenate(snap)
        self.outer.momentum = np.concatenate(mom)

    # -- schedule helpers ---------------------------------------------------

    def _mu(self, t: int) -> float:
        if self.mu_fixed is not None:
            return self.mu_fixed
        return momentum_mu(t, self.sched.total_iters)

    def _outer_lr(self, t: int) -> float:
        if self.lr_fixed is not None:
            return self.lr_fixed
        return outer_lr(t, self.sched)

    def _phase(self, t: int) -> str:
        if self.synchronous:
            return "sync"
        if t <= self.sched.lazy_end:
            return "lazy_start"
        return "pier" if self.cfg.mode == "pier" else "diloco"

    # -- stages (shared by both schedulers) ---------------------------------

    def _batch_for(self, t: int, worker: _Worker) -> np.ndarray:
        if self.batch_source is not None:
            return self.batch_source(t, worker.group, worker.dp)
        full = data_mod.sample_global_batch(
            self.train_corpus, self.cfg.seed, t, self.cfg.global_batch, self.cfg.seq_len
        )
        rows = data_mod.replica_rows(self.cfg.global_batch, self.topo.num_replicas, worker.replica)
        return full[rows]

    def _stage_compute(self, worker: _Worker, t: int) -> None:
        batch = self._batch_for(t, worker)
        loss, grad = loss_and_grad(worker.params, self.mcfg, batch)
        if not np.isfinite(loss):
            raise NumericError(
                f"non-finite training loss ({loss}) at iteration {t} on replica {worker.replica}",
                iteration=t,
            )
        worker.loss = loss
        worker.grad = grad

    def _sync_groups(self, t: int) -> list[list[_Worker]]:
        if self.synchronous or t <= self.sched.lazy_end:
            return [self.workers]
        return [
            [self.workers[r] for r in self.topo.group_replica_indices(g)]
            for g in range(self.topo.groups)
        ]

    def _stage_reduce(self, t: int) -> None:
        bytes_this = 0.0
        synced = False
        for members in self._sync_groups(t):
            if len(members) > 1:
                avg = inner_gradient_sync([m.grad for m in members])
                bytes_this += ring_allreduce_bytes(self.payload_bytes, len(members))
                for m in members:
                    m.grad = avg
                synced = True
        if synced:
            self.comm.inner_events += 1
        self.comm.inner_bytes += bytes_this
        self._iter_comm = bytes_this

    def _stage_apply(self, worker: _Worker, t: int) -> None:
        lr = inner_lr(t, self.sched)
        clipped, _ = clip_global_norm(worker.grad, self.acfg.clip_norm)
        worker.params, worker.opt = adamw_step(worker.params, clipped, worker.opt, lr, self.acfg)
        worker.grad = None

    def _mean_train_loss(self) -> float:
        return float(sum(w.loss for w in self.workers) / len(self.workers))

    def _stage_boundary(self, t: int) -> None:
        sched = self.sched
        rec_outer_lr: float | None = None
        rec_mu: float | None = None
        at_boundary = (not self.synchronous) and t % sched.sync_interval == 0
        if at_boundary and t <= sched.lazy_end:
            if self.host.enabled:
                self._fetch_outer_state()
            theta_now = self.workers[0].params
            if self.warmup_accumulation:
                mu = self._mu(t)
                delta = theta_now - self.outer.snapshot
                self.outer.momentum = fold_momentum(self.outer.momentum, delta, mu)
                self.outer.mu = mu
                self.warmup_folds += 1
                rec_mu = mu
            self.outer.snapshot = theta_now
            if self.host.enabled:
                self._park_outer_state()
        elif at_boundary:
            if self.host.enabled:
                self._fetch_outer_state()
            # every replica joins, in ascending rank order; replicas of one
            # group hold identical params so the mean is still per-group
            thetas = [w.params for w in self.workers]
            theta_avg = outer_delta_sync(thetas)
            boundary_bytes = ring_allreduce_bytes(self.payload_bytes, self.topo.num_replicas)
            self.comm.outer_bytes += boundary_bytes
            self._iter_comm += boundary_bytes
            self.comm.outer_events += 1
            delta = theta_avg - self.outer.snapshot
            mu = self._mu(t)
            lr_o = self._outer_lr(t)
            theta_new, self.outer = outer_step(self.outer, delta, lr_o, mu, anchor=theta_avg)
            self.outer.snapshot = theta_new
            for w in self.workers:
                w.params = theta_new
            if self.host.enabled:
                self._park_outer_state()
            rec_outer_lr, rec_mu = lr_o, mu

        val_loss = None
        if t % sched.sync_interval == 0 or t == sched.total_iters:
            val_loss = evaluate(self.workers[0].params, self.mcfg, self.val_batches)
        self.records.append(
            TrajectoryRecord(
                iteration=t,
                phase=self._phase(t),
                train_loss=self._mean_train_loss(),
                val_loss=val_loss,
                inner_lr=inner_lr(t, sched),
                outer_lr=rec_outer_lr,
                mu=rec_mu,
                comm_bytes=self._iter_comm,
            )
        )
        if self.probe is not None:
            self.probe(self, t, "after_boundary")

    # -- schedulers ---------------------------------------------------------

    def _run_sequential(self, stop_after: int) -> None:
        for t in range(1, stop_after + 1):
            for w in self.workers:
                self._stage_compute(w, t)
            self._stage_reduce(t)
            for w in self.workers:
                self._stage_apply(w, t)
            if self.probe is not None:
                self.probe(self, t, "after_inner")
            self._stage_boundary(t)

    def _run_parallel(self, stop_after: int) -> None:
        n = len(self.workers)
        start_b = threading.Barrier(n + 1)
        computed_b = threading.Barrier(n + 1)
        reduced_b = threading.Barrier(n + 1)
        applied_b = threading.Barrier(n + 1)
        failures: list[BaseException] = []
        failure_lock = threading.Lock()

        def worker_loop(worker: _Worker) -> None:
            try:
                for t in range(1, stop_after + 1):
                    start_b.wait()
                    self._stage_compute(worker, t)
                    computed_b.wait()
                    reduced_b.wait()
                    self._stage_apply(worker, t)
                    applied_b.wait()
            except threading.BrokenBarrierError:
                return
            except BaseException as exc:  # surface worker errors in the main thread
                with failure_lock:
                    failures.append(exc)
                for b in (start_b, computed_b, reduced_b, applied_b):
                    b.abort()

        threads = [
            threading.Thread(target=worker_loop, args=(w,), name=f"worker-{w.replica}", daemon=True)
            for w in self.workers
        ]
        for th in threads:
            th.start()
        try:
            for t in range(1, stop_after + 1):
                start_b.wait()
                computed_b.wait()
                self._stage_reduce(t)
                reduced_b.wait()
                applied_b.wait()
                if self.probe is not None:
                    self.probe(self, t, "after_inner")
                self._stage_boundary(t)
        except threading.BrokenBarrierError:
            pass
        except BaseException:
            for b in (start_b, computed_b, reduced_b, applied_b):
                b.abort()
            for th in threads:
                th.join()
            raise
        for th in threads:
            th.join()
        if failures:
            raise failures[0]

    def run(self, stop_after: int | None = None) -> RunResult:
        stop = self.sched.total_iters if stop_after is None else stop_after
        started = time.perf_counter()
        initial_val = evaluate(self.workers[0].params, self.mcfg, self.val_batches)
        self.records.append(
            TrajectoryRecord(
                iteration=0,
                phase=self._phase(0),
                train_loss=None,
                val_loss=initial_val,
                inner_lr=inner_lr(0, self.sched),
                outer_lr=None,
                mu=None,
                comm_bytes=0.0,
            )
        )
        if self.cfg.workers_mode == "par":
            self._run_parallel(stop)
        else:
            self._run_sequential(stop)
        wall = time.perf_counter() - started

        last_train = next(
            (r.train_loss for r in reversed(self.records) if r.train_loss is not None), None
        )
        last_val = next(
            (r.val_loss for r in reversed(self.records) if r.val_loss is not None), None
        )
        return RunResult(
            mode=self.cfg.mode,
            seed=self.cfg.seed,
            config=config_to_dict(self.cfg),
            records=self.records,
            final_params=self.workers[0].params,
            final_train_loss=last_train if last_train is not None else float("nan"),
            final_val_loss=last_val if last_val is not None else float("nan"),
            comm=self.comm,
            offload=self.host.counters(),
            wall_time_s=wall,
            warmup_folds=self.warmup_folds,
            outer_momentum=None if self.outer is None else self.outer.momentum,
            final_opt_steps=[w.opt.step for w in self.workers],
        )


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------

def evaluate(theta: np.ndarray, cfg: ModelConfig, batches) -> float:
    """Mean loss over fixed evaluation batches, folded in list order."""
    if len(batches) == 0:
        raise ValueError("evaluate needs at least one batch")
    losses = [forward_loss(theta, cfg, b) for b in batches]
    return float(sum(losses) / len(losses))


def run_training(cfg: RunConfig, *, batch_source=None, probe=None) -> RunResult:
    """Run ``cfg.mode`` to completion and return the full result."""
    return _Engine(cfg, batch_source=batch_source, probe=probe).run()


def run_pier(cfg: RunConfig, **kwargs) -> RunResult:
    return run_training(replace(cfg, mode="pier"), **kwargs)


def run_adamw_baseline(cfg: RunConfig, **kwargs) -> RunResult:
    return run_training(replace(cfg, mode="adamw_baseline"), **kwargs)


def run_diloco_baseline(cfg: RunConfig, **kwargs) -> RunResult:
    return run_training(replace(cfg, mode="diloco_baseline"), **kwargs)


def momentum_warmup_phase(
    cfg: RunConfig, *, batch_source=None, probe=None
) -> tuple[np.ndarray, np.ndarray, list[AdamWState], list[TrajectoryRecord]]:
    """Run only the lazy-start phase of a grouped mode.

    Returns ``(theta, momentum, optimizer_states, records)`` at the phase
    boundary: the shared parameters, the pre-filled outer momentum buffer,
    the per-replica inner optimizer states, and the trajectory so far.
    """
    engine = _Engine(replace(cfg, mode="pier"), batch_source=batch_source, probe=probe)
    engine.run(stop_after=engine.sched.lazy_end)
    return (
        engine.workers[0].params,
        engine.outer.momentum,
        [w.opt for w in engine.workers],
        engine.records,
    )

"""
Crossing from synchronous to group-local training
=================================================

The protocol starts fully synchronous, harvesting outer momentum from the
parameter path without applying it, then switches to group-local AdamW with
an outer Nesterov step at each synchronization boundary.  This script trains
three small runs from the same seed - plain synchronous AdamW, the
fixed-coefficient grouped baseline, and the full protocol - and watches the
switch: all three share a bitwise-identical synchronous prefix, then split.

One alignment matters: the outer learning rate ramps from zero over the
window starting at a tenth of the horizon, so the synchronous phase is sized
to end exactly where the ramp begins.  The first boundaries after the switch
then use small outer steps while the fixed baseline applies full strength
immediately.  At this toy scale both grouped modes usually cross without
drama; the worst single-window rise is printed so the two transition styles
can be compared measurement against measurement.
"""

from dataclasses import replace

from pier.config import load_config
from pier.driver import run_training

cfg = load_config(
    vocab_size=128,
    embed_dim=32,
    num_layers=1,
    num_heads=2,
    seq_len=32,
    global_batch=16,
    total_iters=400,
    sync_interval=10,
    lazy_fraction=0.1,
    groups=4,
    dp_per_group=1,
    corpus_tokens=32768,
    val_tokens=8192,
    val_batches=2,
    val_batch_size=16,
    seed=3,
)
switch = int(cfg.lazy_fraction * cfg.total_iters)

runs = {}
for mode in ("adamw_baseline", "diloco_baseline", "pier"):
    runs[mode] = run_training(replace(cfg, mode=mode))
    print(f"{mode:<16} final validation loss {runs[mode].final_val_loss:.4f}")

# the synchronous prefix is shared bit for bit across all three modes
prefix = [
    all(
        runs[m].records[i].train_loss == runs["pier"].records[i].train_loss
        for m in runs
    )
    for i in range(1, switch + 1)
]
print()
print(f"training losses identical across modes for t=1..{switch}: {all(prefix)}")

# validation losses around the switch at t=50, one column per mode
print()
print(f"synchronous phase ends at t={switch}; boundaries every "
      f"{cfg.sync_interval} iterations after that")
print(f"{'iter':>5} {'plain':>10} {'fixed outer':>12} {'ramped outer':>13}")
points = [switch + i * cfg.sync_interval for i in range(-1, 5)]
series = {
    m: {r.iteration: r.val_loss for r in runs[m].records if r.val_loss is not None}
    for m in runs
}
for t in points:
    row = [series[m][t] for m in ("adamw_baseline", "diloco_baseline", "pier")]
    print(f"{t:>5} {row[0]:>10.4f} {row[1]:>12.4f} {row[2]:>13.4f}")

# the worst single-window rise right after the switch, per grouped mode
print()
for mode in ("diloco_baseline", "pier"):
    vals = series[mode]
    deltas = [
        vals[switch + i * cfg.sync_interval] - vals[switch + (i - 1) * cfg.sync_interval]
        for i in (1, 2, 3)
    ]
    print(f"{mode:<16} worst post-switch rise over three windows: {max(deltas):+.4f}")

"""
Collapsing the two-level protocol onto plain AdamW
==================================================

With a single group, zero outer momentum, and a unit outer learning rate,
every outer synchronization averages one replica set with itself and applies
an identity update.  The two-level run should therefore be bitwise identical
to plain synchronous AdamW, not merely close.  This script runs both on a
small model and compares trajectories and final parameters exactly.
"""

import numpy as np

from pier.config import load_config
from pier.driver import run_training

# a small model so the whole script runs in seconds
common = dict(
    vocab_size=64,
    embed_dim=16,
    num_layers=1,
    num_heads=2,
    seq_len=16,
    global_batch=8,
    total_iters=40,
    sync_interval=10,
    lazy_fraction=0.0,
    groups=1,
    dp_per_group=1,
    corpus_tokens=8192,
    val_tokens=2048,
    val_batches=1,
    val_batch_size=8,
    seed=7,
)

# the degenerate settings: outer momentum 0, outer learning rate 1
collapsed = run_training(
    load_config(mode="pier", outer_lr_fixed=1.0, outer_mu_fixed=0.0, **common)
)
plain = run_training(load_config(mode="adamw_baseline", **common))

# identical losses at every logged iteration, shown side by side
print(f"{'iter':>5} {'two-level loss':>22} {'plain loss':>22}")
for a, b in zip(collapsed.records, plain.records):
    if a.train_loss is None:
        continue
    marker = "" if a.train_loss == b.train_loss else "  <-- differs"
    print(f"{a.iteration:>5} {a.train_loss:>22.17g} {b.train_loss:>22.17g}{marker}")

# and the parameter vectors agree bit for bit
same = np.array_equal(collapsed.final_params, plain.final_params)
print()
print(f"final parameters bitwise identical: {same}")
assert same

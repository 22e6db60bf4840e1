"""Model forward/backward checks against independent oracles.

The gradient oracle is central finite differences; everything else is
either a closed-form value (uniform logits, degenerate vocab) or a
frozen regression number recorded from a verified build.
"""

import numpy as np
import pytest

from pier.model import (
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

DESK = ModelConfig()
SMALL = ModelConfig(vocab_size=64, embed_dim=32, num_layers=1, num_heads=2, seq_len=16)


def small_batch(rows=4, cfg=SMALL, seed=1):
    rng = np.random.default_rng(seed)
    return rng.integers(0, cfg.vocab_size, size=(rows, cfg.seq_len + 1), dtype=np.int64)


# ---------------------------------------------------------------------------
# shapes and parameter bookkeeping
# ---------------------------------------------------------------------------

def test_param_count_matches_shape_sum():
    for cfg in (DESK, SMALL):
        total = sum(int(np.prod(shape)) for _, shape in param_shapes(cfg))
        assert param_count(cfg) == total


def test_param_count_closed_form():
    # V*D + S*D + L*(8*D^2 + 11*D) + 2*D with a 2x hidden MLP and fused qkv
    v, d, s, layers = DESK.vocab_size, DESK.embed_dim, DESK.seq_len, DESK.num_layers
    assert param_count(DESK) == v * d + s * d + layers * (8 * d * d + 11 * d) + 2 * d
    assert param_count(DESK) == 306176


def test_unflatten_views_share_memory():
    theta = init_params(SMALL, 0)
    views = unflatten(theta, SMALL)
    views["wte"][0, 0] = 123.0
    assert theta[0] == 123.0


def test_init_params_deterministic_and_scaled():
    a = init_params(DESK, 7)
    b = init_params(DESK, 7)
    c = init_params(DESK, 8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    views = unflatten(a, DESK)
    assert np.all(views["h0.ln1_g"] == 1.0)
    assert np.all(views["h0.b_qkv"] == 0.0)
    assert 0.01 < np.std(views["wte"]) < 0.03


def test_config_validation():
    with pytest.raises(Exception):
        ModelConfig(embed_dim=30, num_heads=4)  # head dim must divide
    with pytest.raises(Exception):
        ModelConfig(precision="half")


def test_tokenize_bytes_round_trip():
    tok = tokenize_bytes(b"\x00\x7fab")
    assert tok.tolist() == [0, 127, 97, 98]


# ---------------------------------------------------------------------------
# closed-form loss oracles
# ---------------------------------------------------------------------------

def test_zero_params_give_uniform_loss():
    theta = np.zeros(param_count(SMALL), dtype=np.float64)
    loss = forward_loss(theta, SMALL, small_batch())
    assert loss == np.log(np.float64(SMALL.vocab_size))


def test_single_symbol_vocab_is_perfectly_predictable():
    cfg = ModelConfig(vocab_size=1, embed_dim=8, num_layers=1, num_heads=1, seq_len=8)
    theta = init_params(cfg, 0)
    batch = np.zeros((2, cfg.seq_len + 1), dtype=np.int64)
    loss, grad = loss_and_grad(theta, cfg, batch)
    assert loss == 0.0
    assert np.all(grad == 0.0)


def test_zero_params_vocab2_loss_is_ln2():
    cfg = ModelConfig(vocab_size=2, embed_dim=8, num_layers=1, num_heads=1, seq_len=8)
    theta = np.zeros(param_count(cfg), dtype=np.float64)
    rng = np.random.default_rng(4)
    batch = rng.integers(0, 2, size=(3, cfg.seq_len + 1), dtype=np.int64)
    assert forward_loss(theta, cfg, batch) == np.log(np.float64(2))


def test_gradient_is_linear_over_batch_halves():
    # mean cross-entropy over a concatenated batch is the mean of the
    # per-half losses, so the gradient must be the mean of per-half gradients
    theta = init_params(SMALL, 6)
    full = small_batch(rows=8, seed=11)
    half_a, half_b = full[:4], full[4:]
    grad_full = backward(theta, SMALL, full)
    grad_mean = 0.5 * (backward(theta, SMALL, half_a) + backward(theta, SMALL, half_b))
    assert np.allclose(grad_full, grad_mean, rtol=1e-12, atol=1e-15)


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def test_gradient_matches_finite_differences_small():
    theta = init_params(SMALL, 0)
    err = grad_check(theta, SMALL, small_batch(), epsilon=1e-5, num_coords=48)
    assert err < 1e-4


def test_grad_check_flags_corrupted_gradient():
    # negative control: a deliberately wrong gradient must blow the tolerance
    theta = init_params(SMALL, 0)

    def corrupted(t, c, b):
        return backward(t, c, b) + 1.0

    err = grad_check(
        theta, SMALL, small_batch(), epsilon=1e-5, num_coords=48, gradient_fn=corrupted
    )
    assert err > 1e-1


def test_grad_check_zero_gradient_model():
    # constant-loss construction: analytic and numeric are both exactly zero
    cfg = ModelConfig(vocab_size=1, embed_dim=8, num_layers=1, num_heads=1, seq_len=8)
    theta = init_params(cfg, 0)
    batch = np.zeros((2, cfg.seq_len + 1), dtype=np.int64)
    err = grad_check(theta, cfg, batch, epsilon=1e-5, num_coords=16)
    assert abs(err) <= 1e-10


def test_finite_difference_error_shrinks_with_epsilon():
    # second-order truncation: error should drop by about 100x for 10x smaller h
    theta = init_params(SMALL, 0)
    batch = small_batch(rows=2)
    coarse = grad_check(theta, SMALL, batch, epsilon=1e-3, num_coords=16)
    fine = grad_check(theta, SMALL, batch, epsilon=1e-5, num_coords=16)
    assert fine < coarse


def test_backward_is_loss_and_grad_gradient():
    theta = init_params(SMALL, 2)
    batch = small_batch(seed=3)
    loss, grad = loss_and_grad(theta, SMALL, batch)
    assert np.array_equal(grad, backward(theta, SMALL, batch))
    assert loss == forward_loss(theta, SMALL, batch)


def test_loss_and_grad_deterministic():
    theta = init_params(SMALL, 5)
    batch = small_batch(seed=9)
    l1, g1 = loss_and_grad(theta, SMALL, batch)
    l2, g2 = loss_and_grad(theta, SMALL, batch)
    assert l1 == l2
    assert np.array_equal(g1, g2)


# ---------------------------------------------------------------------------
# frozen regression values (recorded from a finite-difference-verified build)
# ---------------------------------------------------------------------------

def desk_batch():
    rng = np.random.default_rng(1)
    return rng.integers(0, 256, size=(4, DESK.seq_len + 1), dtype=np.int64)


def test_desk_double_regression_values():
    theta = init_params(DESK, 0)
    loss, grad = loss_and_grad(theta, DESK, desk_batch())
    assert loss == pytest.approx(5.567853689333059, rel=1e-12)
    assert float(np.linalg.norm(grad)) == pytest.approx(1.7500248133820802, rel=1e-12)


def test_desk_single_regression_values():
    cfg = ModelConfig(precision="single")
    theta = init_params(cfg, 0)
    assert theta.dtype == np.float32
    loss, grad = loss_and_grad(theta, cfg, desk_batch())
    assert grad.dtype == np.float32
    assert loss == pytest.approx(5.583114147186279, rel=1e-5)
    assert float(np.linalg.norm(grad)) == pytest.approx(1.738550066947937, rel=1e-4)
    # single and double disagree only at single rounding scale
    double_loss = 5.567853689333059
    assert abs(loss - double_loss) / double_loss < 5e-3


def test_batch_shape_is_validated():
    theta = init_params(SMALL, 0)
    too_long = np.zeros((2, SMALL.seq_len + 2), dtype=np.int64)
    with pytest.raises(Exception):
        forward_loss(theta, SMALL, too_long)
    with pytest.raises(Exception):
        forward_loss(theta, SMALL, np.zeros(SMALL.seq_len + 1, dtype=np.int64))


def test_short_sequences_are_accepted():
    # rows shorter than the max context use a sliced position table
    theta = init_params(SMALL, 0)
    short = small_batch()[:, : SMALL.seq_len - 4]
    assert np.isfinite(forward_loss(theta, SMALL, short))

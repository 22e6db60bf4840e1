"""Tiny byte-level causal transformer with exact manual gradients.

Pre-norm residual blocks (layernorm -> multi-head causal attention,
layernorm -> 2x GELU MLP), learned positional embeddings, and an output
head tied to the token embedding table.  All parameters live in one flat
vector so the optimizer and synchronization code can treat the model as a
single array; per-tensor access goes through views produced by
:func:`unflatten`.

A batch is a plain ``(B, L+1)`` int64 array of token ids: positions
``[:, :-1]`` are the inputs and ``[:, 1:]`` the next-token targets.  The
loss is the mean cross-entropy over all ``B * L`` positions, in nats.

Arrays are treated as immutable values throughout: no function in this
module writes to its input arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715

_PRECISION_DTYPES = {"double": np.float64, "single": np.float32}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``mlp_dim`` is fixed at ``2 * embed_dim`` (a lean MLP expansion chosen
    to keep the default preset fast on a single core) and ``head_dim`` at
    ``embed_dim / num_heads``.
    """

    vocab_size: int = 256
    embed_dim: int = 128
    num_layers: int = 2
    num_heads: int = 4
    seq_len: int = 64
    precision: str = "double"

    def __post_init__(self):
        for field in ("vocab_size", "embed_dim", "num_layers", "num_heads", "seq_len"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be a positive integer, got {getattr(self, field)}")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed_dim ({self.embed_dim}) must be divisible by num_heads ({self.num_heads})"
            )
        if self.precision not in _PRECISION_DTYPES:
            raise ConfigError(f"precision must be one of {sorted(_PRECISION_DTYPES)}, got {self.precision!r}")

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(_PRECISION_DTYPES[self.precision])

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def mlp_dim(self) -> int:
        return 2 * self.embed_dim


# ---------------------------------------------------------------------------
# parameter layout
# ---------------------------------------------------------------------------

def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list defining the flat parameter layout."""
    v, d, f, s = cfg.vocab_size, cfg.embed_dim, cfg.mlp_dim, cfg.seq_len
    shapes: list[tuple[str, tuple[int, ...]]] = [("wte", (v, d)), ("wpe", (s, d))]
    for layer in range(cfg.num_layers):
        p = f"h{layer}."
        shapes += [
            (p + "ln1_g", (d,)), (p + "ln1_b", (d,)),
            (p + "w_qkv", (d, 3 * d)), (p + "b_qkv", (3 * d,)),
            (p + "w_attn_out", (d, d)), (p + "b_attn_out", (d,)),
            (p + "ln2_g", (d,)), (p + "ln2_b", (d,)),
            (p + "w_fc", (d, f)), (p + "b_fc", (f,)),
            (p + "w_proj", (f, d)), (p + "b_proj", (d,)),
        ]
    shapes += [("lnf_g", (d,)), ("lnf_b", (d,))]
    return shapes


def param_count(cfg: ModelConfig) -> int:
    """Total number of scalar parameters."""
    return sum(int(np.prod(shape)) for _, shape in param_shapes(cfg))


def unflatten(theta: np.ndarray, cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Views into the flat vector ``theta``, one per named tensor.

    The returned arrays share memory with ``theta``; writing through them
    writes into the flat vector.
    """
    if theta.ndim != 1:
        raise ValueError(f"expected a flat parameter vector, got shape {theta.shape}")
    expected = param_count(cfg)
    if theta.shape[0] != expected:
        raise ValueError(f"parameter vector has {theta.shape[0]} entries, layout needs {expected}")
    views = {}
    offset = 0
    for name, shape in param_shapes(cfg):
        size = int(np.prod(shape))
        views[name] = theta[offset:offset + size].reshape(shape)
        offset += size
    return views


def init_params(cfg: ModelConfig, rng: np.random.Generator | int) -> np.ndarray:
    """Freshly initialized flat parameter vector.

    Weight matrices and embeddings draw from N(0, 0.02^2); layernorm gains
    start at 1 and all biases at 0.  Identical ``rng`` state gives a
    bitwise-identical vector.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    dtype = cfg.dtype
    theta = np.zeros(param_count(cfg), dtype=dtype)
    views = unflatten(theta, cfg)
    for name, view in views.items():
        base = name.rsplit(".", 1)[-1]
        if base.startswith("w") or name in ("wte", "wpe"):
            view[...] = rng.standard_normal(view.shape, dtype=dtype) * dtype.type(0.02)
        elif base.endswith("_g"):
            view[...] = 1.0
        # biases stay zero
    return theta


def tokenize_bytes(data: bytes) -> np.ndarray:
    """Map raw bytes to an int64 token array (byte value == token id)."""
    return np.frombuffer(data, dtype=np.uint8).astype(np.int64)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _causal_bias(length: int, dtype_name: str) -> np.ndarray:
    """(L, L) additive mask: 0 at or below the diagonal, -inf above."""
    bias = np.zeros((length, length), dtype=np.dtype(dtype_name))
    bias[np.triu_indices(length, k=1)] = -np.inf
    bias.setflags(write=False)
    return bias


def _split_batch(batch: np.ndarray, cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] < 2:
        raise ValueError(f"batch must be (B, L+1) token ids, got shape {batch.shape}")
    if batch.shape[1] - 1 > cfg.seq_len:
        raise ValueError(
            f"batch length {batch.shape[1] - 1} exceeds model seq_len {cfg.seq_len}"
        )
    return batch[:, :-1], batch[:, 1:]


def _ln_fwd(x, gain, bias):
    """Layernorm over the last axis; returns output and backward cache."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    var += x.dtype.type(LN_EPS)
    np.sqrt(var, out=var)
    inv = np.divide(1.0, var, out=var)
    xhat = xc
    xhat *= inv
    y = xhat * gain
    y += bias
    return y, (xhat, inv, gain)


def _ln_bwd(dy, cache):
    xhat, inv, gain = cache
    d = xhat.shape[-1]
    dgain = (dy * xhat).reshape(-1, d).sum(axis=0)
    dbias = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = dxhat
    dx -= m1
    m2 *= -1.0
    dx += xhat * m2
    dx *= inv
    return dx, dgain, dbias


def _gelu_fwd(u):
    """tanh-approximation GELU; returns output and backward cache.

    tanh(x) is evaluated as 1 - 2/(exp(2x) + 1): np.exp is several times
    faster than np.tanh here and the absolute error is within one ulp of 1.
    """
    u2 = u * u
    t = u2 * u
    t *= u.dtype.type(_GELU_A)
    t += u
    t *= u.dtype.type(2.0 * _GELU_C)
    np.exp(t, out=t)
    t += 1.0
    np.divide(2.0, t, out=t)
    np.subtract(1.0, t, out=t)
    y = t + 1.0
    y *= u
    y *= 0.5
    return y, (u, u2, t)


def _gelu_bwd(dy, cache):
    u, u2, t = cache
    du_inner = u2 * u.dtype.type(3.0 * _GELU_A)
    du_inner += 1.0
    du_inner *= u.dtype.type(_GELU_C)
    du_inner *= u
    sech2 = t * t
    np.subtract(1.0, sech2, out=sech2)
    du_inner *= sech2
    du_inner += t
    du_inner += 1.0
    du_inner *= 0.5
    du_inner *= dy
    return du_inner


def _forward(theta: np.ndarray, cfg: ModelConfig, tok_in: np.ndarray, keep: bool):
    """Run the network; returns (logits, caches) with caches=None if not kept."""
    p = unflatten(theta, cfg)
    n_batch, length = tok_in.shape
    d, heads, hd = cfg.embed_dim, cfg.num_heads, cfg.head_dim
    scale = 1.0 / math.sqrt(hd)
    bias = _causal_bias(length, cfg.dtype.name)

    x = p["wte"][tok_in] + p["wpe"][:length]
    caches = [] if keep else None
    for layer in range(cfg.num_layers):
        pre = f"h{layer}."
        n1, ln1_cache = _ln_fwd(x, p[pre + "ln1_g"], p[pre + "ln1_b"])
        n1_2d = n1.reshape(-1, d)
        qkv = n1_2d @ p[pre + "w_qkv"]
        qkv += p[pre + "b_qkv"]
        qkv = np.ascontiguousarray(
            qkv.reshape(n_batch, length, 3, heads, hd).transpose(2, 0, 3, 1, 4)
        )
        q, k, v = qkv[0], qkv[1], qkv[2]                       # (B, H, L, hd)
        att = q @ k.transpose(0, 1, 3, 2)                      # (B, H, L, L)
        att *= scale
        att += bias
        att -= att.max(axis=-1, keepdims=True)
        np.exp(att, out=att)
        att /= att.sum(axis=-1, keepdims=True)
        ctx = att @ v                                          # (B, H, L, hd)
        ctx_m = ctx.transpose(0, 2, 1, 3).reshape(n_batch, length, d)
        attn_out = ctx_m.reshape(-1, d) @ p[pre + "w_attn_out"]
        attn_out += p[pre + "b_attn_out"]
        x1 = x + attn_out.reshape(x.shape)
        n2, ln2_cache = _ln_fwd(x1, p[pre + "ln2_g"], p[pre + "ln2_b"])
        n2_2d = n2.reshape(-1, d)
        h_pre = n2_2d @ p[pre + "w_fc"]
        h_pre += p[pre + "b_fc"]
        h, gelu_cache = _gelu_fwd(h_pre)
        mlp_out = h @ p[pre + "w_proj"]
        mlp_out += p[pre + "b_proj"]
        x_next = x1 + mlp_out.reshape(x.shape)
        if keep:
            caches.append((n1_2d, q, k, v, att, ctx_m, ln1_cache, x1, n2_2d, h, gelu_cache, ln2_cache))
        x = x_next
    nf, lnf_cache = _ln_fwd(x, p["lnf_g"], p["lnf_b"])
    logits = nf.reshape(-1, d) @ p["wte"].T                    # (B*L, V)
    if keep:
        return logits, (p, nf.reshape(-1, d), lnf_cache, caches)
    return logits, None


def _loss_from_logits(logits: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy over positions; returns (loss, softmax, lse cache)."""
    n = logits.shape[0]
    smax = logits.max(axis=-1, keepdims=True)
    es = np.exp(logits - smax)
    z = es.sum(axis=-1, keepdims=True)
    lse = smax[:, 0] + np.log(z[:, 0])
    nll = lse - logits[np.arange(n), targets]
    return nll.mean(), es / z


def forward_loss(theta: np.ndarray, cfg: ModelConfig, batch: np.ndarray) -> float:
    """Mean next-token cross-entropy (nats) of ``batch`` under ``theta``."""
    tok_in, tok_out = _split_batch(batch, cfg)
    logits, _ = _forward(theta, cfg, tok_in, keep=False)
    loss, _ = _loss_from_logits(logits, tok_out.reshape(-1))
    return float(loss)


def loss_and_grad(theta: np.ndarray, cfg: ModelConfig, batch: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss plus the exact gradient of the mean loss as a flat vector."""
    tok_in, tok_out = _split_batch(batch, cfg)
    n_batch, length = tok_in.shape
    d, heads, hd = cfg.embed_dim, cfg.num_heads, cfg.head_dim
    scale = 1.0 / math.sqrt(hd)
    n_pos = n_batch * length

    logits, (p, nf_2d, lnf_cache, caches) = _forward(theta, cfg, tok_in, keep=True)
    targets = tok_out.reshape(-1)
    loss, probs = _loss_from_logits(logits, targets)

    grad = np.zeros_like(theta)
    g = unflatten(grad, cfg)

    dlogits = probs
    dlogits[np.arange(n_pos), targets] -= 1.0
    dlogits /= logits.dtype.type(n_pos)

    # tied head: logits = nf @ wte.T
    g["wte"] += dlogits.T @ nf_2d
    dnf = (dlogits @ p["wte"]).reshape(n_batch, length, d)
    dx, dgain, dbias = _ln_bwd(dnf, lnf_cache)
    g["lnf_g"] += dgain
    g["lnf_b"] += dbias

    for layer in reversed(range(cfg.num_layers)):
        pre = f"h{layer}."
        n1_2d, q, k, v, att, ctx_m, ln1_cache, x1, n2_2d, h, gelu_cache, ln2_cache = caches[layer]

        # MLP branch: x_next = x1 + proj(gelu(fc(ln2(x1))))
        dout_2d = dx.reshape(-1, d)
        g[pre + "w_proj"] += h.T @ dout_2d
        g[pre + "b_proj"] += dout_2d.sum(axis=0)
        dh = dout_2d @ p[pre + "w_proj"].T
        dh_pre = _gelu_bwd(dh, gelu_cache)
        g[pre + "w_fc"] += n2_2d.T @ dh_pre
        g[pre + "b_fc"] += dh_pre.sum(axis=0)
        dn2 = (dh_pre @ p[pre + "w_fc"].T).reshape(n_batch, length, d)
        dx1_mlp, dgain, dbias = _ln_bwd(dn2, ln2_cache)
        g[pre + "ln2_g"] += dgain
        g[pre + "ln2_b"] += dbias
        dx1 = dx + dx1_mlp

        # attention branch: x1 = x + attn_out(ln1(x))
        dattn_2d = dx1.reshape(-1, d)
        g[pre + "w_attn_out"] += ctx_m.reshape(-1, d).T @ dattn_2d
        g[pre + "b_attn_out"] += dattn_2d.sum(axis=0)
        dctx_m = (dattn_2d @ p[pre + "w_attn_out"].T).reshape(n_batch, length, heads, hd)
        dctx = np.ascontiguousarray(dctx_m.transpose(0, 2, 1, 3))  # (B, H, L, hd)
        datt = dctx @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ dctx
        row = (datt * att).sum(axis=-1, keepdims=True)
        datt -= row
        datt *= att
        dscores = datt
        dq = dscores @ k
        dq *= scale
        dk = dscores.transpose(0, 1, 3, 2) @ q
        dk *= scale
        dqkv_2d = np.empty((n_batch * length, 3 * d), dtype=theta.dtype)
        dqkv_view = dqkv_2d.reshape(n_batch, length, 3, heads, hd).transpose(2, 0, 3, 1, 4)
        dqkv_view[0] = dq
        dqkv_view[1] = dk
        dqkv_view[2] = dv
        g[pre + "w_qkv"] += n1_2d.T @ dqkv_2d
        g[pre + "b_qkv"] += dqkv_2d.sum(axis=0)
        dn1 = (dqkv_2d @ p[pre + "w_qkv"].T).reshape(n_batch, length, d)
        dx_attn, dgain, dbias = _ln_bwd(dn1, ln1_cache)
        g[pre + "ln1_g"] += dgain
        g[pre + "ln1_b"] += dbias
        dx = dx1 + dx_attn

    np.add.at(g["wte"], tok_in, dx)
    g["wpe"][:length] += dx.sum(axis=0)
    return float(loss), grad


def backward(theta: np.ndarray, cfg: ModelConfig, batch: np.ndarray) -> np.ndarray:
    """Gradient of the mean loss with respect to ``theta`` (flat vector)."""
    return loss_and_grad(theta, cfg, batch)[1]


def grad_check(
    theta: np.ndarray,
    cfg: ModelConfig,
    batch: np.ndarray,
    *,
    epsilon: float = 1e-5,
    num_coords: int = 64,
    rng: np.random.Generator | int | None = None,
    gradient_fn=None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples ``num_coords`` coordinates without replacement, perturbs each by
    +/- ``epsilon``, and compares the finite-difference slope against the
    analytic gradient.  The relative error denominator is
    ``max(|analytic|, |numeric|, 1e-12)``.

    ``gradient_fn`` replaces the analytic gradient; tests use it to inject a
    deliberately wrong gradient and confirm the check flags it.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(0 if rng is None else rng)
    grad = (gradient_fn or backward)(theta, cfg, batch)
    coords = rng.choice(theta.shape[0], size=min(num_coords, theta.shape[0]), replace=False)
    worst = 0.0
    for idx in coords:
        probe = theta.copy()
        probe[idx] = theta[idx] + epsilon
        loss_hi = forward_loss(probe, cfg, batch)
        probe[idx] = theta[idx] - epsilon
        loss_lo = forward_loss(probe, cfg, batch)
        numeric = (loss_hi - loss_lo) / (2.0 * epsilon)
        denom = max(abs(float(grad[idx])), abs(numeric), 1e-12)
        worst = max(worst, abs(float(grad[idx]) - numeric) / denom)
    return worst

"""Hand-written differentiable kernels, Adam, and a finite-difference checker.

Every kernel is a forward/backward pair: ``*_forward`` returns the output
plus an opaque cache, the matching ``*_backward`` consumes exactly that
cache and the upstream gradient. All math runs in float64 with numpy's
fixed reduction order, so results are deterministic given inputs.

Sequence kernels (GRU, self-attention) are batched: ``x`` is N x T x I with
a boolean mask N x T that must be a prefix of trues per row (padding only at
the end). Padded steps never change outputs or parameter gradients.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray

GRU_PARAM_KEYS = ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_n", "u_n", "b_n")
ATTENTION_PARAM_KEYS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


# --------------------------------------------------------------- activations


def sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu_forward(x: Array) -> tuple[Array, Array]:
    return np.maximum(x, 0.0), (x > 0.0)


def relu_backward(cache: Array, d_out: Array) -> Array:
    return d_out * cache


def sigmoid_forward(x: Array) -> tuple[Array, Array]:
    y = sigmoid(x)
    return y, y


def sigmoid_backward(cache: Array, d_out: Array) -> Array:
    return d_out * cache * (1.0 - cache)


def tanh_forward(x: Array) -> tuple[Array, Array]:
    y = np.tanh(x)
    return y, y


def tanh_backward(cache: Array, d_out: Array) -> Array:
    return d_out * (1.0 - cache * cache)


# -------------------------------------------------------------------- linear


def linear_forward(x: Array, w: Array, b: Array) -> tuple[Array, tuple]:
    """y = x @ w + b for x: N x I, w: I x O, b: O."""
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ValueError(f"linear shape mismatch: x{x.shape} w{w.shape} b{b.shape}")
    return x @ w + b, (x, w)


def linear_backward(cache: tuple, d_out: Array) -> tuple[Array, Array, Array]:
    x, w = cache
    return d_out @ w.T, x.T @ d_out, d_out.sum(axis=0)


# -------------------------------------------------------------- 2-d conv/pool


def conv2d_forward(x: Array, kernels: Array, bias: Array) -> tuple[Array, tuple]:
    """Valid cross-correlation, stride 1. x: (N,)C x H x W, kernels: O x C x kh x kw."""
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = kernels.shape
    if c_in != c:
        raise ValueError(f"channel mismatch: input {c}, kernels {c_in}")
    if kh > h or kw > w:
        raise ValueError("kernel larger than input")
    view = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    ho, wo = view.shape[2], view.shape[3]
    cols = view.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    kflat = kernels.reshape(c_out, -1)
    y = (cols @ kflat.T + bias).transpose(0, 2, 1).reshape(n, c_out, ho, wo)
    cache = (cols, kernels, x.shape, squeeze)
    return (y[0] if squeeze else y), cache


def conv2d_backward(cache: tuple, d_out: Array) -> tuple[Array, Array, Array]:
    cols, kernels, x_shape, squeeze = cache
    if squeeze:
        d_out = d_out[None]
    n, c, h, w = x_shape
    c_out, c_in, kh, kw = kernels.shape
    ho, wo = d_out.shape[2], d_out.shape[3]
    dy = d_out.reshape(n, c_out, ho * wo).transpose(0, 2, 1)  # N x P x O
    d_bias = dy.sum(axis=(0, 1))
    d_kernels = np.einsum("npo,npc->oc", dy, cols).reshape(kernels.shape)
    dcols = (dy @ kernels.reshape(c_out, -1)).reshape(n, ho, wo, c_in, kh, kw)
    d_x = np.zeros(x_shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            d_x[:, :, i : i + ho, j : j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return (d_x[0] if squeeze else d_x), d_kernels, d_bias


def maxpool2_forward(x: Array) -> tuple[Array, tuple]:
    """2x2 max pooling, stride 2; odd trailing row/column dropped."""
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ValueError("input smaller than the 2x2 window")
    ho, wo = h // 2, w // 2
    windows = (
        x[:, :, : ho * 2, : wo * 2]
        .reshape(n, c, ho, 2, wo, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, ho, wo, 4)
    )
    idx = windows.argmax(axis=-1)  # first max wins on ties (row-major window order)
    y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    cache = (idx, x.shape, squeeze)
    return (y[0] if squeeze else y), cache


def maxpool2_backward(cache: tuple, d_out: Array) -> Array:
    idx, x_shape, squeeze = cache
    if squeeze:
        d_out = d_out[None]
    n, c, h, w = x_shape
    ho, wo = h // 2, w // 2
    d_windows = np.zeros((n, c, ho, wo, 4), dtype=np.float64)
    np.put_along_axis(d_windows, idx[..., None], d_out[..., None], axis=-1)
    d_x = np.zeros(x_shape, dtype=np.float64)
    d_x[:, :, : ho * 2, : wo * 2] = (
        d_windows.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * 2, wo * 2)
    )
    return d_x[0] if squeeze else d_x


# --------------------------------------------------- fused softmax + log-loss


def softmax_xent_forward(logits: Array, labels: Array) -> tuple[Array, float, tuple]:
    """Max-shifted softmax over classes plus mean negative log-likelihood."""
    labels = np.asarray(labels, dtype=np.intp)
    n, n_classes = logits.shape
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    probs = ex / ex.sum(axis=1, keepdims=True)
    log_z = np.log(ex.sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    return probs, loss, (probs, labels)


def softmax_xent_backward(cache: tuple) -> Array:
    probs, labels = cache
    n = probs.shape[0]
    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    return d_logits / n


# ----------------------------------------------------------------------- GRU


def _check_mask(mask: Array) -> None:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError("mask must be N x T")
    if not mask.any(axis=1).all():
        raise ValueError("all-false mask row")
    if mask.shape[1] > 1 and np.any(mask[:, 1:] > mask[:, :-1]):
        raise ValueError("mask must be a prefix of trues per row")


def _gru_stack(params: dict[str, Array]) -> tuple[Array, Array, Array]:
    wg = np.concatenate([params["w_z"], params["w_r"], params["w_n"]], axis=1)
    ug = np.concatenate([params["u_z"], params["u_r"], params["u_n"]], axis=1)
    bg = np.concatenate([params["b_z"], params["b_r"], params["b_n"]])
    return wg, ug, bg


def gru_cell_forward(x: Array, h_prev: Array, params: dict[str, Array]) -> tuple[Array, tuple]:
    """One gated-recurrent step for a batch: x: N x I, h_prev: N x H.

    z = sig(x Wz + h Uz + bz); r = sig(x Wr + h Ur + br)
    n = tanh(x Wn + r * (h Un) + bn); h = (1 - z) * n + z * h_prev
    """
    hdim = h_prev.shape[1]
    wg, ug, bg = _gru_stack(params)
    gates_x = x @ wg + bg
    gates_h = h_prev @ ug
    z = sigmoid(gates_x[:, :hdim] + gates_h[:, :hdim])
    r = sigmoid(gates_x[:, hdim : 2 * hdim] + gates_h[:, hdim : 2 * hdim])
    uh = gates_h[:, 2 * hdim :]
    n = np.tanh(gates_x[:, 2 * hdim :] + r * uh)
    h = (1.0 - z) * n + z * h_prev
    return h, (x, h_prev, z, r, n, uh)


def gru_cell_backward(
    cache: tuple, params: dict[str, Array], d_h: Array, grads: dict[str, Array]
) -> tuple[Array, Array]:
    """Backward for one step; accumulates into ``grads``; returns (d_x, d_h_prev)."""
    x, h_prev, z, r, n, uh = cache
    hdim = h_prev.shape[1]
    wg, ug, _ = _gru_stack(params)

    dz = d_h * (h_prev - n)
    dn = d_h * (1.0 - z)
    d_h_prev = d_h * z

    da_n = dn * (1.0 - n * n)
    dr = da_n * uh
    duh = da_n * r
    da_z = dz * z * (1.0 - z)
    da_r = dr * r * (1.0 - r)

    da_w = np.concatenate([da_z, da_r, da_n], axis=1)   # x/bias side
    da_u = np.concatenate([da_z, da_r, duh], axis=1)    # recurrent side

    dwg = x.T @ da_w
    dug = h_prev.T @ da_u
    dbg = da_w.sum(axis=0)
    grads["w_z"] += dwg[:, :hdim]
    grads["w_r"] += dwg[:, hdim : 2 * hdim]
    grads["w_n"] += dwg[:, 2 * hdim :]
    grads["u_z"] += dug[:, :hdim]
    grads["u_r"] += dug[:, hdim : 2 * hdim]
    grads["u_n"] += dug[:, 2 * hdim :]
    grads["b_z"] += dbg[:hdim]
    grads["b_r"] += dbg[hdim : 2 * hdim]
    grads["b_n"] += dbg[2 * hdim :]

    d_x = da_w @ wg.T
    d_h_prev = d_h_prev + da_u @ ug.T
    return d_x, d_h_prev


def gru_forward(x: Array, mask: Array, params: dict[str, Array]) -> tuple[Array, tuple]:
    """Run the cell over time; returns the state at each row's last true step."""
    _check_mask(mask)
    n, t, _ = x.shape
    hdim = params["u_z"].shape[0]
    h = np.zeros((n, hdim), dtype=np.float64)
    caches = []
    for step in range(t):
        h_new, cache = gru_cell_forward(x[:, step, :], h, params)
        m = mask[:, step][:, None]
        h = np.where(m, h_new, h)
        caches.append(cache)
    return h, (caches, np.asarray(mask, dtype=bool), x.shape)


def gru_backward(
    cache: tuple, params: dict[str, Array], d_h_final: Array
) -> tuple[Array, dict[str, Array]]:
    caches, mask, x_shape = cache
    grads = {k: np.zeros_like(params[k]) for k in GRU_PARAM_KEYS}
    d_x = np.zeros(x_shape, dtype=np.float64)
    d_h = d_h_final.astype(np.float64, copy=True)
    for step in range(x_shape[1] - 1, -1, -1):
        m = mask[:, step][:, None]
        d_h_cell = np.where(m, d_h, 0.0)
        d_x_t, d_h_prev = gru_cell_backward(caches[step], params, d_h_cell, grads)
        d_x[:, step, :] = d_x_t
        d_h = d_h_prev + np.where(m, 0.0, d_h)
    return d_x, grads


def gru_sequence(x: Array, mask: Array, params: dict[str, Array]) -> Array:
    """Single-sequence convenience: x is T x I, mask T; returns the final state."""
    h, _ = gru_forward(x[None], np.asarray(mask, dtype=bool)[None], params)
    return h[0]


# ------------------------------------------------------------- self-attention


def attention_forward(x: Array, mask: Array, params: dict[str, Array]) -> tuple[Array, tuple]:
    """Scaled dot-product self-attention over the sequence axis.

    Q/K/V/output projections are D x D with D = the channel count; scores are
    scaled by 1/sqrt(D), padded key columns are masked to exactly zero weight,
    and there is no residual connection. x: N x T x D, mask: N x T.

    The T x T score/weight matrices are processed one batch item at a time so
    they stay cache-resident; at T in the hundreds this is the hot path.
    """
    _check_mask(mask)
    mask = np.asarray(mask, dtype=bool)
    n, t, d = x.shape
    scale = 1.0 / np.sqrt(d)
    q = x @ params["wq"] + params["bq"]
    k = x @ params["wk"] + params["bk"]
    v = x @ params["wv"] + params["bv"]
    weights = np.empty((n, t, t), dtype=np.float64)
    mixed = np.empty_like(v)
    for i in range(n):
        s = q[i] @ k[i].T
        s *= scale
        if not mask[i].all():
            s[:, ~mask[i]] = -np.inf
        s -= s.max(axis=1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=1, keepdims=True)
        weights[i] = s
        mixed[i] = s @ v[i]
    out = mixed @ params["wo"] + params["bo"]
    return out, (x, q, k, v, weights, mixed, mask)


def attention_backward(
    cache: tuple, params: dict[str, Array], d_out: Array
) -> tuple[Array, dict[str, Array]]:
    x, q, k, v, weights, mixed, mask = cache
    n, t, d = x.shape
    scale = 1.0 / np.sqrt(d)
    grads = {}
    grads["wo"] = np.einsum("ntd,nte->de", mixed, d_out)
    grads["bo"] = d_out.sum(axis=(0, 1))
    d_mixed = d_out @ params["wo"].T
    d_q = np.empty_like(q)
    d_k = np.empty_like(k)
    d_v = np.empty_like(v)
    for i in range(n):
        w = weights[i]
        d_w = d_mixed[i] @ v[i].T
        d_v[i] = w.T @ d_mixed[i]
        d_s = w * (d_w - (d_w * w).sum(axis=1, keepdims=True))  # masked keys: w = 0 -> d_s = 0
        d_q[i] = (d_s @ k[i]) * scale
        d_k[i] = (d_s.T @ q[i]) * scale
    grads["wq"] = np.einsum("nti,ntj->ij", x, d_q)
    grads["bq"] = d_q.sum(axis=(0, 1))
    grads["wk"] = np.einsum("nti,ntj->ij", x, d_k)
    grads["bk"] = d_k.sum(axis=(0, 1))
    grads["wv"] = np.einsum("nti,ntj->ij", x, d_v)
    grads["bv"] = d_v.sum(axis=(0, 1))
    d_x = d_q @ params["wq"].T + d_k @ params["wk"].T + d_v @ params["wv"].T
    return d_x, grads


def self_attention(x: Array, mask: Array, params: dict[str, Array]) -> Array:
    """Single-sequence convenience: x is T x D, mask T; returns T x D."""
    out, _ = attention_forward(x[None], np.asarray(mask, dtype=bool)[None], params)
    return out[0]


# ---------------------------------------------------------------------- adam


def init_adam_state(params: dict[str, Array]) -> dict:
    return {
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
        "step": 0,
    }


def adam_step(
    params: dict[str, Array],
    grads: dict[str, Array],
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")
    state["step"] += 1
    t = state["step"]
    for key, g in grads.items():
        m = state["m"][key]
        v = state["v"][key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        params[key] -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ------------------------------------------------------- finite differences


def finite_diff_check(
    loss_fn,
    arrays: dict[str, Array],
    analytic: dict[str, Array],
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn`` must recompute the scalar loss from the current contents of
    ``arrays`` (which are perturbed coordinate by coordinate, then restored).
    Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
    """
    worst = 0.0
    for name, arr in arrays.items():
        grad = analytic[name]
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = loss_fn()
            flat[i] = orig - eps
            f_minus = loss_fn()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(gflat[i])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst

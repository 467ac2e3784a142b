"""Finite-difference verification suite for every gradient kernel.

Each check builds a small seeded instance, computes analytic gradients via
the kernel's backward, and compares against central differences. Thresholds:
1e-6 for stateless layers, 1e-5 for the recurrent/attention kernels checked
through time, 1e-4 for the full network at a tiny configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from gaze_vtnet import gradcore, vtnet
from gaze_vtnet.preprocess import Datapoint

STATELESS_TOL = 1e-6
SEQUENCE_TOL = 1e-5
END_TO_END_TOL = 1e-4

TINY_CONFIG = vtnet.VTNetConfig(
    gru_hidden=8,
    cnn_out=4,
    fusion_hidden=8,
    image_h=16,
    image_w=16,
    conv1_filters=2,
    conv1_size=3,
    conv2_filters=4,
    conv2_size=3,
    dropout=0.0,
    epochs=1,
    batch_size=4,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_err: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_err < self.threshold


def _check_linear(rng, corrupt: bool = False):
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 2))
    b = rng.normal(size=2)
    co = rng.normal(size=(4, 2))

    def loss():
        y, _ = gradcore.linear_forward(x, w, b)
        return float((y * co).sum())

    _, cache = gradcore.linear_forward(x, w, b)
    dx, dw, db = gradcore.linear_backward(cache, co)
    if corrupt:
        dw = -dw  # negative control: a sign-flipped backward must be caught
    return gradcore.finite_diff_check(loss, {"x": x, "w": w, "b": b}, {"x": dx, "w": dw, "b": db})


def _check_conv2d(rng):
    x = rng.normal(size=(2, 2, 5, 5))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    co = rng.normal(size=(2, 3, 3, 3))

    def loss():
        y, _ = gradcore.conv2d_forward(x, k, b)
        return float((y * co).sum())

    _, cache = gradcore.conv2d_forward(x, k, b)
    dx, dk, db = gradcore.conv2d_backward(cache, co)
    return gradcore.finite_diff_check(loss, {"x": x, "k": k, "b": b}, {"x": dx, "k": dk, "b": db})


def _check_maxpool2(rng):
    # pairwise-distinct values keep the argmax stable under the probe eps
    x = rng.permutation(np.arange(2 * 3 * 6 * 6, dtype=np.float64)).reshape(2, 3, 6, 6) * 0.1
    co = rng.normal(size=(2, 3, 3, 3))

    def loss():
        y, _ = gradcore.maxpool2_forward(x)
        return float((y * co).sum())

    _, cache = gradcore.maxpool2_forward(x)
    dx = gradcore.maxpool2_backward(cache, co)
    return gradcore.finite_diff_check(loss, {"x": x}, {"x": dx})


def _check_activation(name, fwd, bwd, rng):
    x = rng.normal(size=(3, 5))
    if name == "relu":
        x = x + np.sign(x) * 0.1  # keep probes away from the kink at 0
    co = rng.normal(size=(3, 5))

    def loss():
        y, _ = fwd(x)
        return float((y * co).sum())

    _, cache = fwd(x)
    dx = bwd(cache, co)
    return gradcore.finite_diff_check(loss, {"x": x}, {"x": dx})


def _check_softmax_xent(rng):
    logits = rng.normal(size=(5, 2))
    labels = rng.integers(0, 2, size=5)

    def loss():
        _, value, _ = gradcore.softmax_xent_forward(logits, labels)
        return value

    _, _, cache = gradcore.softmax_xent_forward(logits, labels)
    d_logits = gradcore.softmax_xent_backward(cache)
    return gradcore.finite_diff_check(loss, {"logits": logits}, {"logits": d_logits})


def _gru_params(rng, hdim):
    p = {}
    for gate in ("z", "r", "n"):
        p[f"w_{gate}"] = rng.normal(size=(6, hdim)) * 0.5
        p[f"u_{gate}"] = rng.normal(size=(hdim, hdim)) * 0.5
        p[f"b_{gate}"] = rng.normal(size=hdim) * 0.1
    return p


def _check_gru_cell(rng):
    hdim = 4
    params = _gru_params(rng, hdim)
    x = rng.normal(size=(3, 6))
    h_prev = rng.normal(size=(3, hdim))
    co = rng.normal(size=(3, hdim))

    def loss():
        h, _ = gradcore.gru_cell_forward(x, h_prev, params)
        return float((h * co).sum())

    _, cache = gradcore.gru_cell_forward(x, h_prev, params)
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dx, dh_prev = gradcore.gru_cell_backward(cache, params, co, grads)
    arrays = dict(params, x=x, h_prev=h_prev)
    analytic = dict(grads, x=dx, h_prev=dh_prev)
    return gradcore.finite_diff_check(loss, arrays, analytic)


def _check_gru_sequence(rng):
    hdim = 4
    params = _gru_params(rng, hdim)
    x = rng.normal(size=(2, 6, 6))
    mask = np.ones((2, 6), dtype=bool)
    mask[1, 4:] = False  # two padded steps
    co = rng.normal(size=(2, hdim))

    def loss():
        h, _ = gradcore.gru_forward(x, mask, params)
        return float((h * co).sum())

    _, cache = gradcore.gru_forward(x, mask, params)
    dx, grads = gradcore.gru_backward(cache, params, co)
    return gradcore.finite_diff_check(loss, dict(params, x=x), dict(grads, x=dx))


def _attention_params(rng):
    p = {}
    for gate in ("q", "k", "v", "o"):
        p[f"w{gate}"] = rng.normal(size=(6, 6)) * 0.5
        p[f"b{gate}"] = rng.normal(size=6) * 0.1
    return p


def _check_attention(rng):
    params = _attention_params(rng)
    x = rng.normal(size=(2, 8, 6))
    mask = np.ones((2, 8), dtype=bool)
    mask[1, 5:] = False
    co = rng.normal(size=(2, 8, 6))

    def loss():
        out, _ = gradcore.attention_forward(x, mask, params)
        return float((out * co).sum())

    _, cache = gradcore.attention_forward(x, mask, params)
    dx, grads = gradcore.attention_backward(cache, params, co)
    # The key bias shifts every score in a row equally, so the softmax output
    # is invariant to it and its true gradient is identically zero; finite
    # differences only see rounding noise there. Assert the zero instead.
    if np.abs(grads["bk"]).max() > 1e-9:
        return 1.0
    arrays = {k: v for k, v in dict(params, x=x).items() if k != "bk"}
    analytic = {k: v for k, v in dict(grads, x=dx).items() if k != "bk"}
    return gradcore.finite_diff_check(loss, arrays, analytic)


def tiny_datapoints(rng, config=TINY_CONFIG, n=3, t=12) -> list[Datapoint]:
    dps = []
    for i in range(n):
        seq = rng.normal(size=(t - (i % 2), 6))
        image = rng.random((config.image_h, config.image_w))
        dps.append(
            Datapoint(
                user_id=f"u{i}",
                label="patient" if i % 2 else "control",
                task="reading",
                seq=seq,
                scanpath=image,
                split_index=0,
            )
        )
    return dps


def _check_end_to_end(rng, attention: bool):
    config = replace(TINY_CONFIG, attention_enabled=attention)
    params = vtnet.init_params(config, seed=int(rng.integers(0, 2**31)))
    dps = tiny_datapoints(rng, config)

    def loss():
        value, _ = vtnet.loss_and_grads(params, dps, config, train=False)
        return value

    _, grads = vtnet.loss_and_grads(params, dps, config, train=False)
    arrays, analytic = dict(params), dict(grads)
    if attention:
        # identically-zero key-bias gradient; below finite-difference resolution
        if np.abs(grads["att_bk"]).max() > 1e-9:
            return 1.0
        del arrays["att_bk"], analytic["att_bk"]
    return gradcore.finite_diff_check(loss, arrays, analytic)


def run_suite(seed: int = 0, fault: bool = False) -> list[CheckResult]:
    """Run every check; ``fault`` sign-flips the linear backward (negative-control hook)."""
    rng = np.random.default_rng(seed)
    checks = [
        ("linear", STATELESS_TOL, lambda r: _check_linear(r, corrupt=fault)),
        ("conv2d", STATELESS_TOL, _check_conv2d),
        ("maxpool2", STATELESS_TOL, _check_maxpool2),
        ("relu", STATELESS_TOL, lambda r: _check_activation("relu", gradcore.relu_forward, gradcore.relu_backward, r)),
        ("sigmoid", STATELESS_TOL, lambda r: _check_activation("sigmoid", gradcore.sigmoid_forward, gradcore.sigmoid_backward, r)),
        ("tanh", STATELESS_TOL, lambda r: _check_activation("tanh", gradcore.tanh_forward, gradcore.tanh_backward, r)),
        ("softmax_xent", STATELESS_TOL, _check_softmax_xent),
        ("gru_cell", STATELESS_TOL, _check_gru_cell),
        ("gru_sequence", SEQUENCE_TOL, _check_gru_sequence),
        ("self_attention", SEQUENCE_TOL, _check_attention),
        ("vtnet_tiny", END_TO_END_TOL, lambda r: _check_end_to_end(r, attention=False)),
        ("vtnet_tiny_att", END_TO_END_TOL, lambda r: _check_end_to_end(r, attention=True)),
    ]
    results = []
    for name, tol, fn in checks:
        results.append(CheckResult(name=name, max_err=float(fn(rng)), threshold=tol))
    return results

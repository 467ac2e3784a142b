"""The hybrid sequence/image classifier and its training loop.

A single-layer GRU consumes the raw 6-channel sample sequence (optionally
passed through a self-attention layer first) while a two-layer CNN consumes
the scanpath image; the GRU final state and the CNN feature vector are
concatenated and fed through one hidden layer to a two-way softmax. The
model is trained end-to-end with Adam; everything is deterministic given
(seed, data order).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, replace

import numpy as np

from gaze_vtnet import gradcore
from gaze_vtnet.gazedata import N_CHANNELS
from gaze_vtnet.preprocess import ChannelStats, Datapoint, apply_normalization

LABEL_INDEX = {"control": 0, "patient": 1}
INDEX_LABEL = {v: k for k, v in LABEL_INDEX.items()}

CHECKPOINT_MAGIC = b"VTN1"


class TrainingDiverged(RuntimeError):
    """Raised when the training loss turns non-finite."""


class CheckpointError(ValueError):
    """Raised on a malformed, corrupted or incompatible checkpoint."""


@dataclass(frozen=True)
class VTNetConfig:
    gru_hidden: int = 256
    cnn_out: int = 50
    fusion_hidden: int = 128
    image_h: int = 64
    image_w: int = 64
    conv1_filters: int = 8
    conv1_size: int = 5
    conv2_filters: int = 16
    conv2_size: int = 5
    dropout: float = 0.5
    attention_enabled: bool = False
    max_seq_len: int | None = None
    learning_rate: float = 1e-3
    epochs: int = 60
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        extents = (
            self.gru_hidden, self.cnn_out, self.fusion_hidden,
            self.image_h, self.image_w,
            self.conv1_filters, self.conv1_size, self.conv2_filters, self.conv2_size,
            self.epochs, self.batch_size,
        )
        if any(int(v) < 1 for v in extents):
            raise ValueError("all extents must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if min(self.conv_geometry()[-2:]) < 1:
            raise ValueError("image too small for the conv stack")

    @property
    def fusion_input(self) -> int:
        return self.gru_hidden + self.cnn_out

    def conv_geometry(self) -> tuple[int, int, int, int]:
        """(h, w) after the first conv+pool and after the second conv+pool."""
        h1 = (self.image_h - self.conv1_size + 1) // 2
        w1 = (self.image_w - self.conv1_size + 1) // 2
        h2 = (h1 - self.conv2_size + 1) // 2
        w2 = (w1 - self.conv2_size + 1) // 2
        return h1, w1, h2, w2

    @property
    def cnn_flat(self) -> int:
        _, _, h2, w2 = self.conv_geometry()
        return self.conv2_filters * h2 * w2


def param_specs(config: VTNetConfig) -> list[tuple[str, tuple[int, ...], tuple[int, int] | None]]:
    """Fixed-order (name, shape, glorot fans) list; fans is None for biases."""
    d = N_CHANNELS
    h = config.gru_hidden
    specs: list[tuple[str, tuple[int, ...], tuple[int, int] | None]] = []
    if config.attention_enabled:
        for gate in ("q", "k", "v", "o"):
            specs.append((f"att_w{gate}", (d, d), (d, d)))
            specs.append((f"att_b{gate}", (d,), None))
    for gate in ("z", "r", "n"):
        specs.append((f"gru_w_{gate}", (d, h), (d, h)))
        specs.append((f"gru_u_{gate}", (h, h), (h, h)))
        specs.append((f"gru_b_{gate}", (h,), None))
    c1, c2 = config.conv1_filters, config.conv2_filters
    k1, k2 = config.conv1_size, config.conv2_size
    specs.append(("conv1_k", (c1, 1, k1, k1), (k1 * k1, c1 * k1 * k1)))
    specs.append(("conv1_b", (c1,), None))
    specs.append(("conv2_k", (c2, c1, k2, k2), (c1 * k2 * k2, c2 * k2 * k2)))
    specs.append(("conv2_b", (c2,), None))
    specs.append(("cnn_w", (config.cnn_flat, config.cnn_out), (config.cnn_flat, config.cnn_out)))
    specs.append(("cnn_b", (config.cnn_out,), None))
    specs.append(("fc1_w", (config.fusion_input, config.fusion_hidden),
                  (config.fusion_input, config.fusion_hidden)))
    specs.append(("fc1_b", (config.fusion_hidden,), None))
    specs.append(("out_w", (config.fusion_hidden, 2), (config.fusion_hidden, 2)))
    specs.append(("out_b", (2,), None))
    return specs


def param_shapes(config: VTNetConfig) -> dict[str, tuple[int, ...]]:
    return {name: shape for name, shape, _ in param_specs(config)}


def init_params(config: VTNetConfig, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases; bit-identical for a given seed."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape, fans in param_specs(config):
        if fans is None:
            params[name] = np.zeros(shape, dtype=np.float64)
        else:
            limit = np.sqrt(6.0 / (fans[0] + fans[1]))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return params


def _sub(params: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def batch_arrays(
    datapoints: list[Datapoint], config: VTNetConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pad sequences to the batch maximum; returns (x, mask, images)."""
    if not datapoints:
        raise ValueError("empty batch")
    lengths = [dp.seq.shape[0] for dp in datapoints]
    if config.max_seq_len is not None and max(lengths) > config.max_seq_len:
        raise ValueError(f"sequence longer than max_seq_len={config.max_seq_len}")
    n, t_max = len(datapoints), max(lengths)
    x = np.zeros((n, t_max, N_CHANNELS), dtype=np.float64)
    mask = np.zeros((n, t_max), dtype=bool)
    images = np.empty((n, 1, config.image_h, config.image_w), dtype=np.float64)
    for i, dp in enumerate(datapoints):
        if dp.scanpath.shape != (config.image_h, config.image_w):
            raise ValueError(
                f"scanpath {dp.scanpath.shape} does not match configured "
                f"{(config.image_h, config.image_w)}"
            )
        x[i, : lengths[i]] = dp.seq
        mask[i, : lengths[i]] = True
        images[i, 0] = dp.scanpath
    return x, mask, images


def _forward_core(params, x, mask, images, config, train, rng):
    caches = {}
    if config.attention_enabled:
        x_in, caches["att"] = gradcore.attention_forward(x, mask, _sub(params, "att_"))
    else:
        x_in = x
    h, caches["gru"] = gradcore.gru_forward(x_in, mask, _sub(params, "gru_"))

    c1, caches["conv1"] = gradcore.conv2d_forward(images, params["conv1_k"], params["conv1_b"])
    a1, caches["relu1"] = gradcore.relu_forward(c1)
    p1, caches["pool1"] = gradcore.maxpool2_forward(a1)
    c2, caches["conv2"] = gradcore.conv2d_forward(p1, params["conv2_k"], params["conv2_b"])
    a2, caches["relu2"] = gradcore.relu_forward(c2)
    p2, caches["pool2"] = gradcore.maxpool2_forward(a2)
    flat = p2.reshape(p2.shape[0], -1)
    vpre, caches["cnn"] = gradcore.linear_forward(flat, params["cnn_w"], params["cnn_b"])
    v, caches["relu_cnn"] = gradcore.relu_forward(vpre)
    caches["p2_shape"] = p2.shape

    fused = np.concatenate([h, v], axis=1)
    if train and config.dropout > 0.0:
        keep = rng.random(fused.shape) >= config.dropout
        fused = fused * keep / (1.0 - config.dropout)  # inverted dropout
        caches["dropout"] = keep
    z1, caches["fc1"] = gradcore.linear_forward(fused, params["fc1_w"], params["fc1_b"])
    a3, caches["relu_fc"] = gradcore.relu_forward(z1)
    logits, caches["out"] = gradcore.linear_forward(a3, params["out_w"], params["out_b"])
    return logits, caches


def _backward_core(params, caches, config, d_logits):
    grads = {}
    d_a3, grads["out_w"], grads["out_b"] = gradcore.linear_backward(caches["out"], d_logits)
    d_z1 = gradcore.relu_backward(caches["relu_fc"], d_a3)
    d_fused, grads["fc1_w"], grads["fc1_b"] = gradcore.linear_backward(caches["fc1"], d_z1)
    if "dropout" in caches:
        d_fused = d_fused * caches["dropout"] / (1.0 - config.dropout)
    d_h = d_fused[:, : config.gru_hidden]
    d_v = d_fused[:, config.gru_hidden :]

    d_vpre = gradcore.relu_backward(caches["relu_cnn"], d_v)
    d_flat, grads["cnn_w"], grads["cnn_b"] = gradcore.linear_backward(caches["cnn"], d_vpre)
    d_p2 = d_flat.reshape(caches["p2_shape"])
    d_a2 = gradcore.maxpool2_backward(caches["pool2"], d_p2)
    d_c2 = gradcore.relu_backward(caches["relu2"], d_a2)
    d_p1, grads["conv2_k"], grads["conv2_b"] = gradcore.conv2d_backward(caches["conv2"], d_c2)
    d_a1 = gradcore.maxpool2_backward(caches["pool1"], d_p1)
    d_c1 = gradcore.relu_backward(caches["relu1"], d_a1)
    _, grads["conv1_k"], grads["conv1_b"] = gradcore.conv2d_backward(caches["conv1"], d_c1)

    d_x_in, gru_grads = gradcore.gru_backward(caches["gru"], _sub(params, "gru_"), d_h)
    for k, v in gru_grads.items():
        grads[f"gru_{k}"] = v
    if config.attention_enabled:
        _, att_grads = gradcore.attention_backward(caches["att"], _sub(params, "att_"), d_x_in)
        for k, v in att_grads.items():
            grads[f"att_{k}"] = v
    return grads


def forward(
    params: dict[str, np.ndarray],
    datapoints: list[Datapoint],
    config: VTNetConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Class probabilities for a batch of datapoints; rows sum to 1."""
    if train and config.dropout > 0.0 and rng is None:
        raise ValueError("training forward with dropout needs an rng")
    x, mask, images = batch_arrays(datapoints, config)
    logits, caches = _forward_core(params, x, mask, images, config, train, rng)
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    probs = ex / ex.sum(axis=1, keepdims=True)
    return probs, caches


def loss_and_grads(
    params: dict[str, np.ndarray],
    datapoints: list[Datapoint],
    config: VTNetConfig,
    train: bool = True,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    x, mask, images = batch_arrays(datapoints, config)
    labels = np.array([LABEL_INDEX[dp.label] for dp in datapoints], dtype=np.intp)
    logits, caches = _forward_core(params, x, mask, images, config, train, rng)
    _, loss, sm_cache = gradcore.softmax_xent_forward(logits, labels)
    d_logits = gradcore.softmax_xent_backward(sm_cache)
    return loss, _backward_core(params, caches, config, d_logits)


def train(
    params: dict[str, np.ndarray],
    datapoints: list[Datapoint],
    config: VTNetConfig,
    rng: np.random.Generator,
) -> tuple[dict[str, np.ndarray], list[float]]:
    """Mini-batch Adam training; returns the epoch-best parameters and the loss history."""
    params = {k: v.copy() for k, v in params.items()}
    state = gradcore.init_adam_state(params)
    n = len(datapoints)
    best_loss = np.inf
    best_params = {k: v.copy() for k, v in params.items()}
    history: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = [datapoints[i] for i in order[start : start + config.batch_size]]
            loss, grads = loss_and_grads(params, batch, config, train=True, rng=rng)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}")
            gradcore.adam_step(params, grads, state, lr=config.learning_rate)
            total += loss * len(batch)
        epoch_loss = total / n
        history.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_params = {k: v.copy() for k, v in params.items()}
    return best_params, history


def predict(
    params: dict[str, np.ndarray], datapoint: Datapoint, config: VTNetConfig
) -> tuple[str, float]:
    """(predicted label, patient probability); a 0.5 tie predicts control."""
    probs, _ = forward(params, [datapoint], config, train=False)
    p_patient = float(probs[0, LABEL_INDEX["patient"]])
    return ("patient" if p_patient > 0.5 else "control"), p_patient


def score_batch(
    params: dict[str, np.ndarray], datapoints: list[Datapoint], config: VTNetConfig
) -> np.ndarray:
    probs, _ = forward(params, datapoints, config, train=False)
    return probs[:, LABEL_INDEX["patient"]]


# ------------------------------------------------------------- checkpointing


def save_checkpoint(params: dict[str, np.ndarray], config: VTNetConfig) -> bytes:
    """magic, length-prefixed JSON config, named float32 arrays, trailing CRC-32."""
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    cfg = json.dumps(asdict(config), sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(cfg))
    blob += cfg
    names = sorted(params)
    blob += struct.pack("<I", len(names))
    for name in names:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        blob += struct.pack("<H", len(raw))
        blob += raw
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    return bytes(blob)


def load_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], VTNetConfig]:
    if len(data) < len(CHECKPOINT_MAGIC) + 8:
        raise CheckpointError("checkpoint too short")
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) != stored_crc:
        raise CheckpointError("checksum mismatch (corrupted or truncated)")

    offset = 4
    (cfg_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    try:
        config = VTNetConfig(**json.loads(data[offset : offset + cfg_len].decode("utf-8")))
    except (TypeError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"bad config blob: {exc}") from None
    offset += cfg_len

    (n_arrays,) = struct.unpack_from("<I", data, offset)
    offset += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count
        params[name] = arr.astype(np.float64)
    if offset != len(data) - 4:
        raise CheckpointError("length mismatch after arrays")

    expected = param_shapes(config)
    got = {k: v.shape for k, v in params.items()}
    if got != expected:
        raise CheckpointError(
            f"array names/shapes do not match the stored config: got {sorted(got)}, "
            f"expected {sorted(expected)}"
        )
    return params, config


# ----------------------------------------------------- harness model contract


@dataclass
class FittedVTNet:
    params: dict[str, np.ndarray]
    stats: ChannelStats
    config: VTNetConfig
    loss_history: list[float]


class VTNetSpec:
    """Model-spec adapter: trains on fold-normalized sequences, scores raw datapoints."""

    def __init__(self, config: VTNetConfig, name: str | None = None):
        self.config = config
        self.name = name or ("vtnet-att" if config.attention_enabled else "vtnet")

    def _normalized(self, dps: list[Datapoint], stats: ChannelStats) -> list[Datapoint]:
        return [replace(dp, seq=apply_normalization(dp.seq, stats)) for dp in dps]

    def fit(self, train_dps: list[Datapoint], stats: ChannelStats, seed: int) -> FittedVTNet:
        cfg = replace(self.config, seed=seed)
        params = init_params(cfg, seed)
        trained, history = train(params, self._normalized(train_dps, stats), cfg,
                                 rng=np.random.default_rng(seed))
        return FittedVTNet(params=trained, stats=stats, config=cfg, loss_history=history)

    def score(self, fitted: FittedVTNet, dp: Datapoint) -> float:
        return float(self.score_batch(fitted, [dp])[0])

    def score_batch(self, fitted: FittedVTNet, dps: list[Datapoint]) -> np.ndarray:
        return score_batch(fitted.params, self._normalized(dps, fitted.stats), fitted.config)

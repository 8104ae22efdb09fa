"""Trainable uncertainty network: a small convolutional encoder-decoder that
regresses per-pixel log-uncertainty from (image pair, predicted flow).

The network is trained by minimizing the heteroscedastic Gaussian negative
log-likelihood mean(log sigma + e^2 / (2 sigma^2)) with a first-order
optimizer using bias-corrected running moments. Everything runs in float64
on the CPU; gradients are exact reverse-mode derivatives of the fixed graph.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    FileFormatError,
    NumericError,
    ParameterError,
    TrainingDivergedError,
)
from .flowdata import ErrorField, FlowField, ImagePair, UncertaintyField
from .synthgen import MAX_DISPLACEMENT

# (name, in_channels, out_channels, stride) for each 3x3 conv.
ARCH = (
    ("enc1", 4, 8, 1),
    ("enc2", 8, 16, 2),
    ("enc3", 16, 32, 2),
    ("dec2", 48, 16, 1),  # input: upsampled enc3 (32) + skip enc2 (16)
    ("dec1", 24, 8, 1),  # input: upsampled dec2 (16) + skip enc1 (8)
    ("head", 8, 2, 1),
)

LOG_SIGMA_LIMIT = 6.0
INTENSITY_NORM = 255.0
FLOW_NORM = MAX_DISPLACEMENT  # flow channels scaled by the global displacement bound

MODEL_MAGIC = b"UNN1"
DIVERGENCE_BOUND = 1e6


@dataclass
class UnnModel:
    """Conv weights (out, in, 3, 3) and biases (out,) for each layer in ARCH."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(ARCH) or len(self.biases) != len(ARCH):
            raise ParameterError(f"model must carry {len(ARCH)} conv layers")
        for (name, c_in, c_out, _), w, b in zip(ARCH, self.weights, self.biases):
            if w.shape != (c_out, c_in, 3, 3):
                raise ParameterError(f"layer {name}: weight shape {w.shape} != {(c_out, c_in, 3, 3)}")
            if b.shape != (c_out,):
                raise ParameterError(f"layer {name}: bias shape {b.shape} != {(c_out,)}")

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "UnnModel":
        return UnnModel(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def init_model(seed: int = 0) -> UnnModel:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    weights, biases = [], []
    for _, c_in, c_out, _ in ARCH:
        fan_in = c_in * 9
        fan_out = c_out * 9
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(c_out, c_in, 3, 3)))
        biases.append(np.zeros(c_out))
    return UnnModel(weights=weights, biases=biases)


def zero_model() -> UnnModel:
    return UnnModel(
        weights=[np.zeros((c_out, c_in, 3, 3)) for _, c_in, c_out, _ in ARCH],
        biases=[np.zeros(c_out) for _, _, c_out, _ in ARCH],
    )


# ---------------------------------------------------------------------------
# Layer primitives (single sample, channels-first)
# ---------------------------------------------------------------------------


def _conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    h_out = (h - 1) // stride + 1
    w_out = (wd - 1) // stride + 1
    y = np.broadcast_to(b[:, None, None], (len(b), h_out, w_out)).copy()
    for p in range(3):
        for q in range(3):
            xs = xp[:, p : p + stride * (h_out - 1) + 1 : stride, q : q + stride * (w_out - 1) + 1 : stride]
            y += np.einsum("oc,chw->ohw", w[:, :, p, q], xs)
    return y


def _conv2d_backward(x: np.ndarray, w: np.ndarray, stride: int, gy: np.ndarray):
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    h_out, w_out = gy.shape[1], gy.shape[2]
    for p in range(3):
        for q in range(3):
            sl_y = slice(p, p + stride * (h_out - 1) + 1, stride)
            sl_x = slice(q, q + stride * (w_out - 1) + 1, stride)
            gw[:, :, p, q] = np.einsum("ohw,chw->oc", gy, xp[:, sl_y, sl_x])
            gxp[:, sl_y, sl_x] += np.einsum("oc,ohw->chw", w[:, :, p, q], gy)
    gb = gy.sum(axis=(1, 2))
    return gxp[:, 1:-1, 1:-1], gw, gb


def _upsample2(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=1).repeat(2, axis=2)


def _upsample2_backward(gy: np.ndarray) -> np.ndarray:
    c, h2, w2 = gy.shape
    return gy.reshape(c, h2 // 2, 2, w2 // 2, 2).sum(axis=(2, 4))


def _check_finite(x: np.ndarray, layer: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite activation after layer {layer}")
    return x


# ---------------------------------------------------------------------------
# Network graph
# ---------------------------------------------------------------------------


def forward_raw(model: UnnModel, x: np.ndarray):
    """Log-sigma logits (2, H, W) for a (4, H, W) input plus the backward cache.

    Spatial dims must be divisible by 4.
    """
    if x.ndim != 3 or x.shape[0] != 4:
        raise DimensionError(f"input must have shape (4, H, W), got {x.shape}")
    if x.shape[1] % 4 or x.shape[2] % 4:
        raise DimensionError(f"spatial dims must be divisible by 4, got {x.shape[1:]}")
    w, b = model.weights, model.biases
    cache = {"x": x}

    z1 = _check_finite(_conv2d(x, w[0], b[0], 1), "enc1")
    a1 = np.maximum(z1, 0.0)
    z2 = _check_finite(_conv2d(a1, w[1], b[1], 2), "enc2")
    a2 = np.maximum(z2, 0.0)
    z3 = _check_finite(_conv2d(a2, w[2], b[2], 2), "enc3")
    a3 = np.maximum(z3, 0.0)

    up2 = _upsample2(a3)
    cat2 = np.concatenate([up2, a2], axis=0)
    z4 = _check_finite(_conv2d(cat2, w[3], b[3], 1), "dec2")
    a4 = np.maximum(z4, 0.0)

    up1 = _upsample2(a4)
    cat1 = np.concatenate([up1, a1], axis=0)
    z5 = _check_finite(_conv2d(cat1, w[4], b[4], 1), "dec1")
    a5 = np.maximum(z5, 0.0)

    logits = _check_finite(_conv2d(a5, w[5], b[5], 1), "head")
    cache.update(
        a1=a1, a2=a2, a3=a3, a4=a4, a5=a5, z1=z1, z2=z2, z3=z3, z4=z4, z5=z5, cat1=cat1, cat2=cat2
    )
    return logits, cache


def backward(model: UnnModel, cache: dict, g_logits: np.ndarray):
    """Exact gradients of all weights and biases given d(loss)/d(logits)."""
    w = model.weights
    grads_w = [None] * len(ARCH)
    grads_b = [None] * len(ARCH)

    g_a5, grads_w[5], grads_b[5] = _conv2d_backward(cache["a5"], w[5], 1, g_logits)
    g_z5 = g_a5 * (cache["z5"] > 0.0)
    g_cat1, grads_w[4], grads_b[4] = _conv2d_backward(cache["cat1"], w[4], 1, g_z5)
    c_up1 = cache["a4"].shape[0]
    g_a4 = _upsample2_backward(g_cat1[:c_up1])
    g_a1_skip = g_cat1[c_up1:]

    g_z4 = g_a4 * (cache["z4"] > 0.0)
    g_cat2, grads_w[3], grads_b[3] = _conv2d_backward(cache["cat2"], w[3], 1, g_z4)
    c_up2 = cache["a3"].shape[0]
    g_a3 = _upsample2_backward(g_cat2[:c_up2])
    g_a2_skip = g_cat2[c_up2:]

    g_z3 = g_a3 * (cache["z3"] > 0.0)
    g_a2, grads_w[2], grads_b[2] = _conv2d_backward(cache["a2"], w[2], 2, g_z3)
    g_z2 = (g_a2 + g_a2_skip) * (cache["z2"] > 0.0)
    g_a1, grads_w[1], grads_b[1] = _conv2d_backward(cache["a1"], w[1], 2, g_z2)
    g_z1 = (g_a1 + g_a1_skip) * (cache["z1"] > 0.0)
    _, grads_w[0], grads_b[0] = _conv2d_backward(cache["x"], w[0], 1, g_z1)

    return grads_w, grads_b


def _pad_to_multiple_of_4(x: np.ndarray):
    h, w = x.shape[1], x.shape[2]
    ph = (-h) % 4
    pw = (-w) % 4
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    return x, h, w


def make_input(pair: ImagePair, flow: FlowField) -> np.ndarray:
    """Stack normalized channels: frame A, frame B, u, v."""
    if pair.shape != flow.shape:
        raise DimensionError(f"pair shape {pair.shape} != flow shape {flow.shape}")
    return np.stack(
        [
            pair.frame_a / INTENSITY_NORM,
            pair.frame_b / INTENSITY_NORM,
            flow.u / FLOW_NORM,
            flow.v / FLOW_NORM,
        ]
    )


def forward(model: UnnModel, pair: ImagePair, flow: FlowField) -> UncertaintyField:
    """Predicted sigma fields: exp of the clamped log-sigma logits.

    Inputs with spatial dims not divisible by 4 are reflect-padded and the
    output is cropped back.
    """
    x, h, w = _pad_to_multiple_of_4(make_input(pair, flow))
    logits, _ = forward_raw(model, x)
    log_sigma = np.clip(logits, -LOG_SIGMA_LIMIT, LOG_SIGMA_LIMIT)
    sigma = np.exp(log_sigma)[:, :h, :w]
    return UncertaintyField(sigma_u=sigma[0], sigma_v=sigma[1])


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def nll_loss(sigma: UncertaintyField, err: ErrorField):
    """Heteroscedastic Gaussian NLL, averaged over both components and pixels.

    loss = mean(log sigma + e^2 / (2 sigma^2)). Returns the scalar and the
    per-pixel gradient w.r.t. log sigma, shaped (2, H, W). The gradient is
    (1 - e^2 / sigma^2) / N with N = 2 * pixel count.
    """
    if sigma.shape != err.shape:
        raise DimensionError(f"sigma shape {sigma.shape} != error shape {err.shape}")
    s = np.stack([sigma.sigma_u, sigma.sigma_v])
    e = np.stack([err.e_u, err.e_v])
    n = s.size
    ratio = (e / s) ** 2
    loss = float(np.sum(np.log(s) + 0.5 * ratio) / n)
    grad_log_sigma = (1.0 - ratio) / n
    return loss, grad_log_sigma


def _loss_and_grads(model: UnnModel, x: np.ndarray, e: np.ndarray):
    """NLL of the raw graph on one (input, error) pair plus weight gradients.

    e has shape (2, H, W): per-component error targets.
    """
    logits, cache = forward_raw(model, x)
    log_sigma = np.clip(logits, -LOG_SIGMA_LIMIT, LOG_SIGMA_LIMIT)
    sigma = np.exp(log_sigma)
    n = sigma.size
    ratio = (e / sigma) ** 2
    loss = float(np.sum(log_sigma + 0.5 * ratio) / n)
    g_log_sigma = (1.0 - ratio) / n
    g_logits = g_log_sigma * (np.abs(logits) < LOG_SIGMA_LIMIT)
    grads_w, grads_b = backward(model, cache, g_logits)
    return loss, grads_w, grads_b


def _loss_only(model: UnnModel, x: np.ndarray, e: np.ndarray) -> float:
    logits, _ = forward_raw(model, x)
    log_sigma = np.clip(logits, -LOG_SIGMA_LIMIT, LOG_SIGMA_LIMIT)
    ratio = (e / np.exp(log_sigma)) ** 2
    return float(np.sum(log_sigma + 0.5 * ratio) / log_sigma.size)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the moment-based first-order training loop."""

    learning_rate: float = 1e-3
    steps: int = 500
    batch: int = 4
    seed: int = 0
    crop_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    shuffle_seed: int | None = None  # None derives the data stream from seed

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if self.steps < 0:
            raise ParameterError("steps must be nonnegative")
        if self.batch < 1:
            raise ParameterError("batch must be at least 1")
        if self.crop_size < 8 or self.crop_size % 4:
            raise ParameterError("crop_size must be >= 8 and divisible by 4")


def _prepare_samples(dataset) -> list[tuple[np.ndarray, np.ndarray]]:
    samples = []
    for pair, pred, gt in dataset:
        if not (pair.shape == pred.shape == gt.shape):
            raise DimensionError("sample pair/pred/gt shapes disagree")
        x = make_input(pair, pred)
        e = np.stack([gt.u - pred.u, gt.v - pred.v])
        samples.append((x, e))
    return samples


def train(dataset, cfg: TrainConfig) -> tuple[UnnModel, list[float]]:
    """Train on (ImagePair, predicted FlowField, ground-truth FlowField) triples.

    Each step averages gradients over `batch` random square crops. Returns
    the final model and the per-step loss history. Deterministic given
    cfg.seed; raises TrainingDivergedError when the loss exceeds the
    divergence bound or becomes non-finite.
    """
    if len(dataset) < 1:
        raise ParameterError("training needs at least one sample")
    samples = _prepare_samples(dataset)
    init_seed, data_seed = np.random.SeedSequence(cfg.seed).generate_state(2, dtype=np.uint64)
    model = init_model(int(init_seed))
    if cfg.steps == 0:
        return model, []
    order_seed = int(data_seed) if cfg.shuffle_seed is None else cfg.shuffle_seed
    rng = np.random.Generator(np.random.Philox(key=np.uint64(order_seed)))

    params = model.parameters()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    history: list[float] = []

    for step in range(cfg.steps):
        total_grads = [np.zeros_like(p) for p in params]
        batch_loss = 0.0
        for _ in range(cfg.batch):
            idx = int(rng.integers(len(samples)))
            x, e = samples[idx]
            h, w = x.shape[1], x.shape[2]
            ch = min(cfg.crop_size, h - h % 4)
            cw = min(cfg.crop_size, w - w % 4)
            y0 = int(rng.integers(h - ch + 1))
            x0 = int(rng.integers(w - cw + 1))
            loss, gw, gb = _loss_and_grads(
                model, x[:, y0 : y0 + ch, x0 : x0 + cw], e[:, y0 : y0 + ch, x0 : x0 + cw]
            )
            batch_loss += loss
            flat = []
            for a, b in zip(gw, gb):
                flat.append(a)
                flat.append(b)
            for acc, g in zip(total_grads, flat):
                acc += g
        batch_loss /= cfg.batch
        history.append(batch_loss)
        if not math.isfinite(batch_loss) or batch_loss > DIVERGENCE_BOUND:
            raise TrainingDivergedError(
                f"loss {batch_loss} at step {step} exceeds divergence bound", history=history
            )
        t = step + 1
        bias1 = 1.0 - cfg.beta1**t
        bias2 = 1.0 - cfg.beta2**t
        for i, p in enumerate(params):
            g = total_grads[i] / cfg.batch
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g**2
            p -= cfg.learning_rate * (m[i] / bias1) / (np.sqrt(v[i] / bias2) + cfg.epsilon)
    return model, history


# ---------------------------------------------------------------------------
# Serialization: b"UNN1", int32 entry count, then per entry an int32 ndim,
# int32 dims, and the float32 payload. All little-endian.
# ---------------------------------------------------------------------------


def save_model(model: UnnModel, path) -> None:
    entries = model.parameters()
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<i", len(entries)))
        for arr in entries:
            f.write(struct.pack("<i", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}i", *arr.shape))
            f.write(arr.astype("<f4").tobytes())


def load_model(path) -> UnnModel:
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise FileFormatError(f"bad model magic {data[:4]!r}", offset=0)
    pos = 4
    if len(data) < pos + 4:
        raise FileFormatError("truncated model header", offset=len(data))
    (count,) = struct.unpack_from("<i", data, pos)
    pos += 4
    if count != 2 * len(ARCH):
        raise FileFormatError(f"model carries {count} arrays, expected {2 * len(ARCH)}", offset=4)
    entries = []
    for _ in range(count):
        if len(data) < pos + 4:
            raise FileFormatError("truncated shape header", offset=len(data))
        (ndim,) = struct.unpack_from("<i", data, pos)
        pos += 4
        if not 1 <= ndim <= 4:
            raise FileFormatError(f"implausible array rank {ndim}", offset=pos - 4)
        if len(data) < pos + 4 * ndim:
            raise FileFormatError("truncated shape header", offset=len(data))
        shape = struct.unpack_from(f"<{ndim}i", data, pos)
        pos += 4 * ndim
        if any(s <= 0 for s in shape):
            raise FileFormatError(f"nonpositive dimension in shape {shape}", offset=pos - 4 * ndim)
        n_items = int(np.prod(shape))
        if len(data) < pos + 4 * n_items:
            raise FileFormatError("truncated weight payload", offset=len(data))
        arr = np.frombuffer(data, dtype="<f4", offset=pos, count=n_items).reshape(shape)
        pos += 4 * n_items
        entries.append(arr.astype(np.float64))
    if pos != len(data):
        raise FileFormatError(f"{len(data) - pos} trailing bytes after model payload", offset=pos)
    weights = entries[0::2]
    biases = entries[1::2]
    return UnnModel(weights=weights, biases=biases)

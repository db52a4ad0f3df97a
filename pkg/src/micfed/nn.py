"""Light-weight convolutional autoencoder with hand-written backpropagation.

The architecture is fixed: a 128x128 input is encoded by two valid 5x5
convolutions with 2x2 max-pooling down to 16x29x29, squeezed through a
29-node dense bottleneck applied along the last axis, and decoded by the
mirrored unpool / transposed-convolution chain back to 1x128x128 with a
sigmoid output.  Total parameter count is 5999; after freezing everything
except the bottleneck weight matrix, 841 parameters remain trainable.

Only this one architecture is supported; there is no general autodiff.
All math is float64 and deterministic per seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

INPUT_HW = 128
BOTTLENECK_NODES = 29
TOTAL_PARAMS = 5999
BOTTLENECK_PARAMS = 841

# Per-sample training objective for sgd_epoch: squared error summed over the
# band axis and averaged over frames, i.e. INPUT_HW times the element mean.
STEP_SCALE = float(INPUT_HW)

_PRETRAIN_TRUST = 0.1
_PRETRAIN_RMS_FLOOR = 1e-3

_CKPT_MAGIC = b"MICFEDCKPT1\n"


class StaleCacheError(RuntimeError):
    """A forward cache no longer matches the model's current parameters."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite in epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the fixed encoder/decoder chain."""

    kind: str  # conv2d | maxpool | dense | maxunpool | convtranspose2d
    in_channels: int = 0
    out_channels: int = 0
    kernel: tuple = (0, 0)
    stride: int = 1
    activation: str = "none"  # relu | sigmoid | none
    pool_source: int | None = None  # layer index whose argmax feeds a maxunpool


ARCHITECTURE = (
    LayerSpec("conv2d", 1, 6, (5, 5), 1, "relu"),
    LayerSpec("maxpool", 6, 6, (2, 2), 2),
    LayerSpec("conv2d", 6, 16, (5, 5), 1, "relu"),
    LayerSpec("maxpool", 16, 16, (2, 2), 2),
    LayerSpec("dense", 16, 16, (29, 29), 1, "relu"),
    LayerSpec("maxunpool", 16, 16, (2, 2), 2, pool_source=3),
    LayerSpec("convtranspose2d", 16, 6, (5, 5), 1, "relu"),
    LayerSpec("maxunpool", 6, 6, (2, 2), 2, pool_source=1),
    LayerSpec("convtranspose2d", 6, 1, (5, 5), 1, "sigmoid"),
)

# Expected activation shape after each layer, starting from (1, 128, 128).
SHAPE_CHAIN = (
    (6, 124, 124),
    (6, 62, 62),
    (16, 58, 58),
    (16, 29, 29),
    (16, 29, 29),
    (16, 58, 58),
    (6, 62, 62),
    (6, 124, 124),
    (1, 128, 128),
)


def _param_shapes(spec: LayerSpec):
    """(weight shape, bias shape) for a parametric layer, else None."""
    kh, kw = spec.kernel
    if spec.kind == "conv2d":
        return (spec.out_channels, spec.in_channels, kh, kw), (spec.out_channels,)
    if spec.kind == "convtranspose2d":
        return (spec.in_channels, spec.out_channels, kh, kw), (spec.out_channels,)
    if spec.kind == "dense":
        return (BOTTLENECK_NODES, BOTTLENECK_NODES), (BOTTLENECK_NODES,)
    return None


def _fan_in(spec: LayerSpec) -> int:
    if spec.kind == "dense":
        return BOTTLENECK_NODES
    return spec.in_channels * spec.kernel[0] * spec.kernel[1]


def _infer_shape(spec: LayerSpec, shape):
    c, h, w = shape
    kh, kw = spec.kernel
    if spec.kind == "conv2d":
        return (spec.out_channels, h - kh + 1, w - kw + 1)
    if spec.kind == "convtranspose2d":
        return (spec.out_channels, h + kh - 1, w + kw - 1)
    if spec.kind == "maxpool":
        return (c, h // 2, w // 2)
    if spec.kind == "maxunpool":
        return (c, h * 2, w * 2)
    if spec.kind == "dense":
        return shape
    raise ValueError(f"unknown layer kind {spec.kind!r}")


class Autoencoder:
    """Parameter container for the fixed architecture.

    `weights[i]`/`biases[i]` align with ARCHITECTURE; pooling layers hold
    None.  `trainable_mask` is a flat boolean over the canonical parameter
    order (layer by layer, weights then bias, C-order raveled).
    """

    def __init__(self, seed: int):
        self.layers = ARCHITECTURE
        self.seed = int(seed)
        self.weights = [None] * len(self.layers)
        self.biases = [None] * len(self.layers)
        rng = np.random.default_rng(self.seed)
        for i, spec in enumerate(self.layers):
            shapes = _param_shapes(spec)
            if shapes is None:
                continue
            bound = 1.0 / np.sqrt(_fan_in(spec))
            self.weights[i] = rng.uniform(-bound, bound, shapes[0])
            self.biases[i] = rng.uniform(-bound, bound, shapes[1])
        self.trainable_mask = np.ones(TOTAL_PARAMS, dtype=bool)
        self.frozen = False
        self._version = 0
        shape = (1, INPUT_HW, INPUT_HW)
        for spec, expected in zip(self.layers, SHAPE_CHAIN):
            shape = _infer_shape(spec, shape)
            if shape != expected:
                raise AssertionError(f"shape chain broken: {shape} != {expected}")

    # -- parameter bookkeeping -------------------------------------------

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases) if w is not None)

    @property
    def masked_count(self) -> int:
        return int(self.trainable_mask.sum())

    def _segments(self):
        """(layer index, slot, start, stop) over the canonical flat order."""
        out = []
        pos = 0
        for i, spec in enumerate(self.layers):
            if self.weights[i] is None:
                continue
            for slot, arr in (("w", self.weights[i]), ("b", self.biases[i])):
                out.append((i, slot, pos, pos + arr.size))
                pos += arr.size
        return out

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            if w is not None:
                parts.append(w.ravel())
                parts.append(b.ravel())
        return np.concatenate(parts)

    def load_flat(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != TOTAL_PARAMS:
            raise ValueError(f"expected {TOTAL_PARAMS} parameters, got {flat.size}")
        for i, slot, start, stop in self._segments():
            arr = self.weights[i] if slot == "w" else self.biases[i]
            arr[...] = flat[start:stop].reshape(arr.shape)
        self._version += 1

    def bottleneck_segment(self):
        """(start, stop) of the dense weight block in the flat order."""
        for i, slot, start, stop in self._segments():
            if self.layers[i].kind == "dense" and slot == "w":
                return start, stop
        raise AssertionError("dense layer missing")

    def copy(self) -> "Autoencoder":
        dup = Autoencoder.__new__(Autoencoder)
        dup.layers = self.layers
        dup.seed = self.seed
        dup.weights = [None if w is None else w.copy() for w in self.weights]
        dup.biases = [None if b is None else b.copy() for b in self.biases]
        dup.trainable_mask = self.trainable_mask.copy()
        dup.frozen = self.frozen
        dup._version = 0
        return dup

    def _dense_index(self) -> int:
        return next(i for i, s in enumerate(self.layers) if s.kind == "dense")


def build_autoencoder(seed: int) -> Autoencoder:
    """Fresh model with all 5999 parameters drawn uniform in +-1/sqrt(fan_in)."""
    return Autoencoder(seed)


def freeze_except_bottleneck(model: Autoencoder):
    """Freeze everything except the dense 29x29 weight block (841 parameters)."""
    mask = np.zeros(TOTAL_PARAMS, dtype=bool)
    start, stop = model.bottleneck_segment()
    mask[start:stop] = True
    model.trainable_mask = mask
    model.frozen = True
    return model


# -- kernels ---------------------------------------------------------------


def _scatter_full(p: np.ndarray) -> np.ndarray:
    # p (C, kh, kw, H, W) -> out (C, H+kh-1, W+kw-1) with out[c,u+i,v+j] += p[c,u,v,i,j]
    c, kh, kw, h, w = p.shape
    out = np.zeros((c, h + kh - 1, w + kw - 1))
    for u in range(kh):
        for v in range(kw):
            out[:, u:u + h, v:v + w] += p[:, u, v]
    return out


def _conv2d(x, w, b):
    kh, kw = w.shape[2:]
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))
    out = np.tensordot(win, w, axes=([0, 3, 4], [1, 2, 3]))
    return np.moveaxis(out, 2, 0) + b[:, None, None]


def _conv2d_backward(x, w, g, need_input_grad=True):
    kh, kw = w.shape[2:]
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))
    w_grad = np.tensordot(g, win, axes=([1, 2], [1, 2]))
    b_grad = g.sum(axis=(1, 2))
    x_grad = None
    if need_input_grad:
        x_grad = _scatter_full(np.tensordot(w, g, axes=([0], [0])))
    return x_grad, w_grad, b_grad


def _convt2d(x, w, b):
    # w has shape (C_in, C_out, kh, kw); output is the full convolution.
    return _scatter_full(np.tensordot(np.swapaxes(w, 0, 1), x, axes=([1], [0]))) + b[:, None, None]


def _convt2d_input_grad(g, w):
    kh, kw = w.shape[2:]
    win = sliding_window_view(g, (kh, kw), axis=(1, 2))
    return np.moveaxis(np.tensordot(win, w, axes=([0, 3, 4], [1, 2, 3])), 2, 0)


def _convt2d_backward(x, w, g):
    kh, kw = w.shape[2:]
    win = sliding_window_view(g, (kh, kw), axis=(1, 2))
    w_grad = np.tensordot(x, win, axes=([1, 2], [1, 2]))
    b_grad = g.sum(axis=(1, 2))
    return _convt2d_input_grad(g, w), w_grad, b_grad


def _maxpool2(x):
    c, h, w = x.shape
    r = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    idx = r.argmax(axis=3)  # ties go to the first position, deterministically
    out = np.take_along_axis(r, idx[..., None], axis=3)[..., 0]
    return out, idx


def _scatter_pool(y, idx):
    # place y at the recorded 2x2 argmax positions, zeros elsewhere
    c, h, w = y.shape
    z = np.zeros((c, h, w, 4))
    np.put_along_axis(z, idx[..., None], y[..., None], axis=3)
    return z.reshape(c, h, w, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h * 2, w * 2)


def _gather_pool(g, idx):
    c, h, w = g.shape
    r = g.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    return np.take_along_axis(r, idx[..., None], axis=3)[..., 0]


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return expit(z)
    return z


def _activation_grad(g, out, activation):
    if activation == "relu":
        return g * (out > 0.0)
    if activation == "sigmoid":
        return g * out * (1.0 - out)
    return g


# -- forward / backward ------------------------------------------------------


@dataclass
class ForwardCache:
    """Per-layer activations and pool argmax positions from one forward pass."""

    inputs: list
    outputs: list
    pool_indices: dict
    model: Autoencoder
    version: int


def _segment_values(x) -> np.ndarray:
    values = getattr(x, "values", x)
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (INPUT_HW, INPUT_HW):
        raise ValueError(f"expected {INPUT_HW}x{INPUT_HW} input, got shape {arr.shape}")
    return arr


def forward(model: Autoencoder, x):
    """Run the full chain; returns (128x128 reconstruction, backprop cache)."""
    a = _segment_values(x)[None]
    inputs, outputs = [], []
    pool_indices = {}
    for i, spec in enumerate(model.layers):
        inputs.append(a)
        if spec.kind == "conv2d":
            z = _conv2d(a, model.weights[i], model.biases[i])
        elif spec.kind == "maxpool":
            z, pool_indices[i] = _maxpool2(a)
        elif spec.kind == "dense":
            z = a @ model.weights[i] + model.biases[i]
        elif spec.kind == "maxunpool":
            z = _scatter_pool(a, pool_indices[spec.pool_source])
        else:
            z = _convt2d(a, model.weights[i], model.biases[i])
        a = _activate(z, spec.activation)
        outputs.append(a)
    cache = ForwardCache(inputs, outputs, pool_indices, model, model._version)
    return a[0], cache


def mse_loss(y, y_hat) -> float:
    """Mean squared error between two equal-shape arrays."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    d = y - y_hat
    return float(np.mean(d * d))


def _check_cache(model, cache):
    if cache.model is not model or cache.version != model._version:
        raise StaleCacheError("cache does not match the model's current parameters")


def _backprop(model, cache, y, bottleneck_only):
    """Backprop the reconstruction MSE; returns per-layer (w_grad, b_grad) pairs
    or, in bottleneck_only mode, just the dense weight gradient."""
    y = _segment_values(y)
    recon = cache.outputs[-1]
    g = (2.0 / recon.size) * (recon - y[None])
    w_grads = [None] * len(model.layers)
    b_grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        spec = model.layers[i]
        g = _activation_grad(g, cache.outputs[i], spec.activation)
        if spec.kind == "conv2d":
            g, w_grads[i], b_grads[i] = _conv2d_backward(
                cache.inputs[i], model.weights[i], g, need_input_grad=i > 0)
        elif spec.kind == "maxpool":
            g = _scatter_pool(g, cache.pool_indices[i])
        elif spec.kind == "maxunpool":
            g = _gather_pool(g, cache.pool_indices[spec.pool_source])
        elif spec.kind == "dense":
            x_in = cache.inputs[i]
            w_grads[i] = np.tensordot(x_in, g, axes=([0, 1], [0, 1]))
            if bottleneck_only:
                return w_grads[i]
            b_grads[i] = g.sum(axis=(0, 1))
            g = g @ model.weights[i].T
        else:  # convtranspose2d
            if bottleneck_only:
                g = _convt2d_input_grad(g, model.weights[i])
            else:
                g, w_grads[i], b_grads[i] = _convt2d_backward(
                    cache.inputs[i], model.weights[i], g)
    return w_grads, b_grads


def backward(model: Autoencoder, cache: ForwardCache, y) -> np.ndarray:
    """Gradient of mse_loss(y, forward(model, x)) w.r.t. every parameter.

    Returned flat and in canonical order; frozen entries are computed like
    any other and simply ignored by a masked optimizer.
    """
    _check_cache(model, cache)
    w_grads, b_grads = _backprop(model, cache, y, bottleneck_only=False)
    parts = []
    for w, wg, bg in zip(model.weights, w_grads, b_grads):
        if w is not None:
            parts.append(wg.ravel())
            parts.append(bg.ravel())
    return np.concatenate(parts)


def extract_masked(model: Autoencoder) -> np.ndarray:
    """Copy of the trainable parameters in canonical flat order."""
    return model.flatten()[model.trainable_mask]


def apply_delta(model: Autoencoder, delta):
    """Add a delta to the trainable parameters (length must match the mask)."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.size != model.masked_count:
        raise ValueError(f"delta length {delta.size} != masked count {model.masked_count}")
    flat = model.flatten()
    flat[model.trainable_mask] += delta
    model.load_flat(flat)


def load_masked(model: Autoencoder, values):
    """Overwrite the trainable parameters with the given flat segment."""
    values = np.asarray(values, dtype=np.float64)
    if values.size != model.masked_count:
        raise ValueError(f"segment length {values.size} != masked count {model.masked_count}")
    flat = model.flatten()
    flat[model.trainable_mask] = values
    model.load_flat(flat)


def reinit_trainable(model: Autoencoder, seed: int):
    """Re-draw only the trainable parameters from the init scheme."""
    rng = np.random.default_rng(int(seed))
    mask_pos = 0
    for i, slot, start, stop in model._segments():
        arr = model.weights[i] if slot == "w" else model.biases[i]
        seg_mask = model.trainable_mask[start:stop]
        if seg_mask.any():
            bound = 1.0 / np.sqrt(_fan_in(model.layers[i]))
            draws = rng.uniform(-bound, bound, int(seg_mask.sum()))
            flat = arr.ravel()
            flat[seg_mask] = draws
            arr[...] = flat.reshape(arr.shape)
        mask_pos = stop
    assert mask_pos == TOTAL_PARAMS
    model._version += 1


def _masked_is_bottleneck(model):
    start, stop = model.bottleneck_segment()
    expected = np.zeros(TOTAL_PARAMS, dtype=bool)
    expected[start:stop] = True
    return np.array_equal(model.trainable_mask, expected)


def sgd_epoch(model: Autoencoder, data, lr: float, mask_only: bool = False) -> np.ndarray:
    """One SGD pass over `data` in stored order, batch size 1.

    Each sample's loss is the squared reconstruction error summed over the
    band axis and averaged over frames, so every step applies
    lr * STEP_SCALE times the element-mean gradient that backward computes.
    With mask_only set, only masked parameters move (the frozen segment is
    untouched bitwise).  Returns theta_after - theta_before over the masked
    subset: length 841 on a frozen model, 5999 otherwise.
    """
    data = list(data)
    if not data:
        raise ValueError("empty training data")
    step = lr * STEP_SCALE
    before = extract_masked(model)
    if mask_only and model.frozen and _masked_is_bottleneck(model):
        # fast path: backprop stops at the bottleneck
        di = model._dense_index()
        wd = model.weights[di]
        for x in data:
            _, cache = forward(model, x)
            wd -= step * _backprop(model, cache, x, bottleneck_only=True)
            model._version += 1
    else:
        mask = model.trainable_mask if mask_only else None
        flat = model.flatten()
        for x in data:
            _, cache = forward(model, x)
            grad = backward(model, cache, x)
            if mask is None:
                flat -= step * grad
            else:
                flat[mask] -= step * grad[mask]
            model.load_flat(flat)
    return extract_masked(model) - before


def pretrain(model: Autoencoder, dataset, epochs: int, lr: float) -> list:
    """Full-parameter reconstruction training with layer-normalized steps.

    Raw reconstruction gradients span four orders of magnitude between the
    convolution stages and the bottleneck, so one global step size either
    stalls the deep layers or blows up the output layer.  Each parameter
    tensor therefore steps by lr * trust * rms(p)/rms(g) * g (the usual
    layer-adaptive scaling), with rms(p) floored so near-zero tensors still
    move.  Returns per-epoch mean losses, each sample's loss evaluated
    before its own update.  Raises TrainingDivergedError naming the epoch
    if the loss goes non-finite.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty pretraining dataset")
    trace = []
    for epoch in range(int(epochs)):
        losses = np.empty(len(dataset))
        for k, x in enumerate(dataset):
            recon, cache = forward(model, x)
            losses[k] = mse_loss(_segment_values(x), recon)
            w_grads, b_grads = _backprop(model, cache, x, bottleneck_only=False)
            for i, w in enumerate(model.weights):
                if w is None:
                    continue
                for p, g in ((w, w_grads[i]), (model.biases[i], b_grads[i])):
                    g_rms = float(np.sqrt(np.mean(g * g)))
                    if g_rms > 0.0:
                        p_rms = max(float(np.sqrt(np.mean(p * p))), _PRETRAIN_RMS_FLOOR)
                        p -= (lr * _PRETRAIN_TRUST * p_rms / g_rms) * g
            model._version += 1
        mean_loss = float(losses.mean())
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(epoch + 1)
        trace.append(mean_loss)
    return trace


# -- checkpoint file ---------------------------------------------------------
#
# Layout: magic b"MICFEDCKPT1\n", uint32 little-endian header length, a JSON
# header (sorted keys) with schema_version / seed / frozen / param_count and
# the layer table, then param_count float64 little-endian values in canonical
# parameter order.


def save_checkpoint(model: Autoencoder, path):
    header = {
        "schema_version": 1,
        "seed": model.seed,
        "frozen": bool(model.frozen),
        "param_count": model.param_count,
        "masked_count": model.masked_count,
        "layers": [
            {
                "kind": s.kind,
                "in_channels": s.in_channels,
                "out_channels": s.out_channels,
                "kernel": list(s.kernel),
                "stride": s.stride,
                "activation": s.activation,
                "pool_source": s.pool_source,
            }
            for s in model.layers
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(model.flatten().astype("<f8").tobytes())


def load_checkpoint(path) -> Autoencoder:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if header.get("schema_version") != 1:
            raise ValueError(f"unsupported checkpoint schema: {header.get('schema_version')}")
        raw = fh.read()
    stored = [
        LayerSpec(d["kind"], d["in_channels"], d["out_channels"], tuple(d["kernel"]),
                  d["stride"], d["activation"], d["pool_source"])
        for d in header["layers"]
    ]
    if tuple(stored) != ARCHITECTURE:
        raise ValueError("checkpoint layer table does not match the supported architecture")
    flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    model = Autoencoder(header["seed"])
    model.load_flat(flat)
    if header["frozen"]:
        freeze_except_bottleneck(model)
    return model

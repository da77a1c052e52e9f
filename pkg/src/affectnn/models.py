"""The two network architectures.

* ``CnnModel``: three conv layers (2x2 max pooling after the first two,
  quadrant pooling after the third), a fully-connected hidden layer, and a
  one-unit linear regression head that predicts the valence score. The
  post-activation hidden vector doubles as the frame feature once the model
  is frozen.
* ``RnnModel``: a stack of vanilla Elman layers fed with per-frame CNN
  features over a fixed-length window, with a one-unit linear readout at
  every step.

Both are plain parameter dicts; forward passes return the contexts needed
for exact backprop. Serialization is a single binary file (magic "AFEN1").
"""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops

MODEL_MAGIC = b"AFEN1"


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class CnnSpec:
    input_height: int = 96
    input_width: int = 96
    input_channels: int = 1
    conv_filters: tuple = (64, 128, 256)
    kernel_size: int = 5
    fc_units: int = 300
    dropout_p: float = 0.0
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(self.conv_filters))
        if len(self.conv_filters) != 3:
            raise ValueError(
                f"conv_filters must list exactly 3 filter counts, got "
                f"{len(self.conv_filters)}"
            )
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"activation must be relu or tanh, got {self.activation}")
        self.shape_chain()  # validate geometry at construction time

    def shape_chain(self):
        """Intermediate (C, H, W) shapes after each stage; raises if any
        stage is geometrically impossible."""
        k = self.kernel_size
        c, h, w = self.input_channels, self.input_height, self.input_width
        chain = [("input", (c, h, w))]
        for i, nf in enumerate(self.conv_filters, start=1):
            if h < k or w < k:
                raise ValueError(
                    f"conv{i}: input {h}x{w} smaller than kernel {k}x{k}"
                )
            c, h, w = nf, h - k + 1, w - k + 1
            chain.append((f"conv{i}", (c, h, w)))
            if i < 3:
                if h % 2 or w % 2:
                    raise ValueError(
                        f"pool{i}: extents {h}x{w} must be even before 2x2 pooling"
                    )
                h, w = h // 2, w // 2
                chain.append((f"pool{i}", (c, h, w)))
            else:
                if h < 2 or w < 2:
                    raise ValueError(
                        f"quadrant pool: extents {h}x{w} must be >= 2"
                    )
                h, w = 2, 2
                chain.append(("quadrant", (c, h, w)))
        chain.append(("fc", (self.fc_units,)))
        chain.append(("regress", (1,)))
        return chain

    @property
    def flat_dim(self) -> int:
        return self.conv_filters[-1] * 4


@dataclass(frozen=True)
class RnnSpec:
    input_dim: int = 300
    hidden_sizes: tuple = (100,)
    window: int = 100
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))
        if not self.hidden_sizes:
            raise ValueError("hidden_sizes must be non-empty")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"activation must be relu or tanh, got {self.activation}")


# ---------------------------------------------------------------------------
# models


@dataclass
class CnnModel:
    spec: CnnSpec
    params: dict = field(repr=False)


@dataclass
class RnnModel:
    spec: RnnSpec
    params: dict = field(repr=False)


def _uniform_init(rng, shape, fan_in):
    s = np.sqrt(1.0 / fan_in)
    return rng.uniform(-s, s, size=shape)


def init_cnn(spec: CnnSpec, rng) -> CnnModel:
    k = spec.kernel_size
    params = {}
    c_in = spec.input_channels
    for i, nf in enumerate(spec.conv_filters, start=1):
        params[f"conv{i}_w"] = _uniform_init(rng, (nf, c_in, k, k), c_in * k * k)
        params[f"conv{i}_b"] = np.zeros(nf)
        c_in = nf
    params["fc_w"] = _uniform_init(rng, (spec.fc_units, spec.flat_dim), spec.flat_dim)
    params["fc_b"] = np.zeros(spec.fc_units)
    params["out_w"] = _uniform_init(rng, (1, spec.fc_units), spec.fc_units)
    params["out_b"] = np.zeros(1)
    return CnnModel(spec, params)


def init_rnn(spec: RnnSpec, rng) -> RnnModel:
    params = {}
    d = spec.input_dim
    for i, n in enumerate(spec.hidden_sizes):
        # fan-in counts both the feed-forward and the recurrent inputs
        params[f"l{i}_wx"] = _uniform_init(rng, (n, d), d + n)
        params[f"l{i}_wh"] = _uniform_init(rng, (n, n), d + n)
        params[f"l{i}_b"] = np.zeros(n)
        d = n
    params["out_w"] = _uniform_init(rng, (1, d), d)
    params["out_b"] = np.zeros(1)
    return RnnModel(spec, params)


# ---------------------------------------------------------------------------
# CNN forward/backward


def cnn_forward(model: CnnModel, image, mode="eval", rng=None):
    """Returns (valence scalar, fc feature vector, contexts).

    Pipeline: [conv -> act -> maxpool2] x2 -> conv -> act -> quadrant pool
    -> flatten -> fc -> act -> (dropout in train mode) -> 1-unit regression.
    """
    spec = model.spec
    image = np.asarray(image, dtype=np.float64)
    expect = (spec.input_channels, spec.input_height, spec.input_width)
    if image.shape != expect:
        raise ValueError(
            f"input stage: image shape {image.shape} does not match spec {expect}"
        )
    p = model.params
    ctxs = {}
    h = image
    for i in (1, 2, 3):
        h, ctxs[f"conv{i}"] = ops.conv2d(h, p[f"conv{i}_w"], p[f"conv{i}_b"])
        h, ctxs[f"act{i}"] = ops.activation(h, spec.activation)
        if i < 3:
            h, ctxs[f"pool{i}"] = ops.maxpool2(h)
        else:
            h, ctxs["quadrant"] = ops.quadrant_pool(h)
    ctxs["conv_out_shape"] = h.shape
    flat = h.reshape(-1)
    h, ctxs["fc"] = ops.linear(flat, p["fc_w"], p["fc_b"])
    features, ctxs["fc_act"] = ops.activation(h, spec.activation)
    h = features
    if mode == "train" and spec.dropout_p > 0:
        h, ctxs["dropout"] = ops.dropout(h, spec.dropout_p, "train", rng)
    out, ctxs["out"] = ops.linear(h, p["out_w"], p["out_b"])
    return float(out[0]), features, ctxs


def cnn_backward(model: CnnModel, ctxs, d_valence):
    """Exact analytic gradients for every parameter given d(loss)/d(valence)."""
    if "out" not in ctxs:
        raise ValueError("cnn_backward requires contexts from cnn_forward")
    grads = {}
    g = np.array([d_valence], dtype=np.float64)
    g, grads["out_w"], grads["out_b"] = ops.linear_backward(ctxs["out"], g)
    if "dropout" in ctxs:
        g = ops.dropout_backward(ctxs["dropout"], g)
    g = ops.activation_backward(ctxs["fc_act"], g)
    g, grads["fc_w"], grads["fc_b"] = ops.linear_backward(ctxs["fc"], g)
    g = g.reshape(ctxs["conv_out_shape"])
    for i in (3, 2, 1):
        if i == 3:
            g = ops.quadrant_pool_backward(ctxs["quadrant"], g)
        else:
            g = ops.maxpool2_backward(ctxs[f"pool{i}"], g)
        g = ops.activation_backward(ctxs[f"act{i}"], g)
        g, grads[f"conv{i}_w"], grads[f"conv{i}_b"] = ops.conv2d_backward(
            ctxs[f"conv{i}"], g
        )
    return grads


def extract_features(model: CnnModel, frames) -> np.ndarray:
    """Per-frame fc feature vectors (T, fc_units) from a frozen model.

    Each frame is processed independently in eval mode; the model is never
    mutated.
    """
    out = []
    for i, frame in enumerate(frames):
        try:
            _, feat, _ = cnn_forward(model, frame, mode="eval")
        except ValueError as exc:
            raise ValueError(f"frame {i}: {exc}") from exc
        out.append(feat)
    return np.array(out)


# ---------------------------------------------------------------------------
# RNN forward/backward


@dataclass
class RnnCtx:
    xs: list  # per layer: (T, d_in) inputs
    pre: list  # per layer: (T, n) pre-activations
    hidden: list  # per layer: (T+1, n) hidden states incl. h_0 = 0
    length: int


def _rnn_run(model: RnnModel, xs):
    """Run the stack over a sequence of any length, returning per-step
    outputs and the context for BPTT."""
    spec = model.spec
    p = model.params
    t_len = xs.shape[0]
    layer_xs, layer_pre, layer_h = [], [], []
    cur = xs
    for i, n in enumerate(spec.hidden_sizes):
        wx, wh, b = p[f"l{i}_wx"], p[f"l{i}_wh"], p[f"l{i}_b"]
        pre = np.empty((t_len, n))
        hs = np.zeros((t_len + 1, n))
        for t in range(t_len):
            a = wx @ cur[t] + wh @ hs[t] + b
            pre[t] = a
            hs[t + 1] = np.maximum(a, 0.0) if spec.activation == "relu" else np.tanh(a)
        layer_xs.append(cur)
        layer_pre.append(pre)
        layer_h.append(hs)
        cur = hs[1:]
    outputs = cur @ p["out_w"][0] + p["out_b"][0]
    return outputs, RnnCtx(layer_xs, layer_pre, layer_h, t_len)


def rnn_forward(model: RnnModel, window, mode="train", rng=None):
    """Per-step valence outputs over a full window of CNN features.

    ``window`` must be (W, input_dim) with W == spec.window.
    """
    spec = model.spec
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] != spec.window:
        raise ValueError(
            f"window must have exactly {spec.window} rows, got shape {window.shape}"
        )
    if window.shape[1] != spec.input_dim:
        raise ValueError(
            f"feature dim mismatch: expected {spec.input_dim}, got {window.shape[1]}"
        )
    return _rnn_run(model, window)


def rnn_backward(model: RnnModel, ctx: RnnCtx, d_outputs):
    """Backpropagation through time; gradients are summed over all steps."""
    spec = model.spec
    p = model.params
    d_outputs = np.asarray(d_outputs, dtype=np.float64)
    if d_outputs.shape != (ctx.length,):
        raise ValueError(
            f"d_outputs shape {d_outputs.shape} does not match window "
            f"length {ctx.length}"
        )
    grads = {}
    top = ctx.hidden[-1][1:]
    grads["out_w"] = (d_outputs @ top)[None, :]
    grads["out_b"] = np.array([d_outputs.sum()])
    # external per-step gradient flowing into the top layer's hidden states
    ext = d_outputs[:, None] * p["out_w"][0][None, :]
    for i in range(len(spec.hidden_sizes) - 1, -1, -1):
        wx, wh = p[f"l{i}_wx"], p[f"l{i}_wh"]
        xs, pre, hs = ctx.xs[i], ctx.pre[i], ctx.hidden[i]
        dwx = np.zeros_like(wx)
        dwh = np.zeros_like(wh)
        db = np.zeros(wx.shape[0])
        dx = np.empty((ctx.length, wx.shape[1]))
        carry = np.zeros(wx.shape[0])
        for t in range(ctx.length - 1, -1, -1):
            dh = ext[t] + carry
            if spec.activation == "relu":
                da = dh * (pre[t] > 0)
            else:
                th = np.tanh(pre[t])
                da = dh * (1.0 - th * th)
            dwx += np.outer(da, xs[t])
            dwh += np.outer(da, hs[t])
            db += da
            dx[t] = wx.T @ da
            carry = wh.T @ da
        grads[f"l{i}_wx"] = dwx
        grads[f"l{i}_wh"] = dwh
        grads[f"l{i}_b"] = db
        ext = dx
    return grads


def predict_timeline(model: RnnModel, features) -> np.ndarray:
    """One prediction per frame from sliding windows of length W.

    For t >= W-1 the prediction is the last output of the window ending at
    t; earlier frames use the truncated prefix [0..t], so the output length
    always equals the timeline length.
    """
    features = np.asarray(features, dtype=np.float64)
    t_len = features.shape[0]
    if t_len == 0:
        raise ValueError("cannot predict on an empty timeline")
    if t_len < model.spec.window:
        raise ValueError(
            f"timeline length {t_len} shorter than window {model.spec.window}"
        )
    w = model.spec.window
    preds = np.empty(t_len)
    for t in range(t_len):
        start = max(0, t - w + 1)
        outputs, _ = _rnn_run(model, features[start : t + 1])
        preds[t] = outputs[-1]
    return preds


# ---------------------------------------------------------------------------
# serialization


def save_model(model, path):
    """Single-file binary format: magic, length-prefixed JSON manifest,
    then raw little-endian float64 tensor data in manifest order."""
    if isinstance(model, CnnModel):
        kind = "cnn"
    elif isinstance(model, RnnModel):
        kind = "rnn"
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    names = sorted(model.params)
    manifest = {
        "kind": kind,
        "spec": asdict(model.spec),
        "tensors": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: not a model file (bad magic {magic!r})")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(blob_len).decode("utf-8"))
        params = {}
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8").astype(np.float64)
            params[entry["name"]] = data.reshape(shape)
    if manifest["kind"] == "cnn":
        return CnnModel(CnnSpec(**manifest["spec"]), params)
    if manifest["kind"] == "rnn":
        return RnnModel(RnnSpec(**manifest["spec"]), params)
    raise ValueError(f"{path}: unknown model kind {manifest['kind']!r}")

"""SGD with momentum and weight decay, plus the two training loops.

Update rule per parameter p with gradient g:

    g' = g + weight_decay * p
    v  = momentum * v - learning_rate * g'
    p  = p + v

The learning rate is constant for the whole run (no annealing). Training
is fully deterministic given (seed, config, data): every random draw comes
from a single seeded generator consumed in a fixed serial order.
"""

import csv
import time
from dataclasses import dataclass, replace

import numpy as np

from . import dataio, metrics, models


@dataclass
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


def init_state(params) -> dict:
    """Zero velocity buffers mirroring the parameter shapes."""
    return {name: np.zeros_like(p) for name, p in params.items()}


def sgd_step(params, grads, state, cfg: SgdConfig):
    """One in-place update over all parameters, in sorted name order."""
    for name in sorted(params):
        p = params[name]
        if name not in grads:
            raise ValueError(f"missing gradient for parameter {name}")
        g = grads[name]
        v = state[name]
        if g.shape != p.shape or v.shape != p.shape:
            raise ValueError(
                f"shape mismatch for {name}: param {p.shape}, grad {g.shape}, "
                f"velocity {v.shape}"
            )
        g_eff = g + cfg.weight_decay * p
        v *= cfg.momentum
        v -= cfg.learning_rate * g_eff
        p += v
    return params, state


# ---------------------------------------------------------------------------
# data augmentation


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    gain_range: tuple = (0.9, 1.1)
    offset_range: tuple = (-0.1, 0.1)


def augment(image, rng, cfg: AugmentConfig = AugmentConfig()):
    """Random horizontal flip plus a global gain/offset jitter.

    Offsets are in post-normalization units, so this runs after
    :func:`affectnn.dataio.normalize`.
    """
    image = np.asarray(image, dtype=np.float64)
    if rng.random() < cfg.flip_prob:
        image = image[..., ::-1]
    gain = rng.uniform(*cfg.gain_range)
    offset = rng.uniform(*cfg.offset_range)
    return image * gain + offset


# ---------------------------------------------------------------------------
# training history


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    rmse: float
    cc: float
    ccc: float
    seconds: float


def history_to_csv(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "rmse", "cc", "ccc", "seconds"])
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.loss), repr(rec.rmse),
                             repr(rec.cc), repr(rec.ccc), repr(rec.seconds)])


def _dev_metrics(preds, golds):
    try:
        return (metrics.rmse(preds, golds), metrics.pearson_cc(preds, golds),
                metrics.ccc(preds, golds))
    except ValueError:
        return (metrics.rmse(preds, golds), float("nan"), float("nan"))


def _batches(n, batch_size, perm):
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


# ---------------------------------------------------------------------------
# single-frame CNN training


def train_cnn(samples, spec: models.CnnSpec, cfg: SgdConfig, *,
              use_dropout=False, use_augment=False, dev_samples=None,
              augment_cfg: AugmentConfig = AugmentConfig()):
    """Train the single-frame regression CNN on (image, valence) pairs.

    Dropout (p = 0.5) and augmentation are enabled by the flags only. The
    last partial batch is kept, with its loss mean-reduced over its actual
    size. Non-finite losses abort with the epoch and batch index.
    """
    if not samples:
        raise ValueError("empty training set")
    if use_dropout:
        spec = replace(spec, dropout_p=0.5)
    rng = np.random.default_rng(cfg.seed)
    model = models.init_cnn(spec, rng)
    state = init_state(model.params)
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(len(samples))
        epoch_sq_err = 0.0
        for bi, batch in enumerate(_batches(len(samples), cfg.batch_size, perm)):
            grads = {name: np.zeros_like(p) for name, p in model.params.items()}
            batch_loss = 0.0
            for si in batch:
                image, label = samples[si]
                if use_augment:
                    image = augment(image, rng, augment_cfg)
                pred, _, ctxs = models.cnn_forward(model, image, mode="train",
                                                   rng=rng)
                err = pred - label
                batch_loss += err * err
                sample_grads = models.cnn_backward(model, ctxs, 2.0 * err / len(batch))
                for name, g in sample_grads.items():
                    grads[name] += g
            batch_loss /= len(batch)
            if not np.isfinite(batch_loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {bi}"
                )
            epoch_sq_err += batch_loss * len(batch)
            sgd_step(model.params, grads, state, cfg)
        loss = epoch_sq_err / len(samples)
        if dev_samples:
            preds = np.array([models.cnn_forward(model, img)[0]
                              for img, _ in dev_samples])
            golds = np.array([label for _, label in dev_samples])
            dev = _dev_metrics(preds, golds)
        else:
            dev = (float("nan"),) * 3
        history.append(EpochRecord(epoch, loss, *dev, time.perf_counter() - t0))
    return model, history


# ---------------------------------------------------------------------------
# windowed RNN training


def train_rnn(timelines, spec: models.RnnSpec, cfg: SgdConfig,
              dev_timelines=None):
    """Train the Elman stack on all complete feature windows.

    The loss for one window is the mean over its W per-step outputs of the
    squared error against the gold slice; batches are mean-reduced over
    windows. Weight decay defaults to whatever the config carries; pass 0
    unless there is a reason not to.
    """
    if not timelines:
        raise ValueError("no feature timelines to train on")
    for tl in timelines:
        if len(tl) < spec.window:
            raise ValueError(
                f"sequence {tl.sequence_id}: length {len(tl)} shorter than "
                f"window {spec.window}"
            )
        if tl.features.shape[1] != spec.input_dim:
            raise ValueError(
                f"sequence {tl.sequence_id}: feature dim "
                f"{tl.features.shape[1]} != spec input_dim {spec.input_dim}"
            )
    windows = []
    for tl in timelines:
        windows.extend(dataio.make_windows(tl, spec.window))
    rng = np.random.default_rng(cfg.seed)
    model = models.init_rnn(spec, rng)
    state = init_state(model.params)
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(len(windows))
        epoch_loss = 0.0
        for bi, batch in enumerate(_batches(len(windows), cfg.batch_size, perm)):
            grads = {name: np.zeros_like(p) for name, p in model.params.items()}
            batch_loss = 0.0
            for wi in batch:
                feats, labels, _ = windows[wi]
                outputs, ctx = models.rnn_forward(model, feats)
                diff = outputs - labels
                batch_loss += float(np.mean(diff * diff))
                d_out = 2.0 * diff / (spec.window * len(batch))
                for name, g in models.rnn_backward(model, ctx, d_out).items():
                    grads[name] += g
            batch_loss /= len(batch)
            if not np.isfinite(batch_loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch {bi}")
            epoch_loss += batch_loss * len(batch)
            sgd_step(model.params, grads, state, cfg)
        loss = epoch_loss / len(windows)
        if dev_timelines:
            preds, golds = [], []
            for tl in dev_timelines:
                preds.append(models.predict_timeline(model, tl.features))
                golds.append(tl.labels)
            dev = _dev_metrics(np.concatenate(preds), np.concatenate(golds))
        else:
            dev = (float("nan"),) * 3
        history.append(EpochRecord(epoch, loss, *dev, time.perf_counter() - t0))
    return model, history

"""Synthetic desk-scale dataset generator.

The restricted corpus cannot ship, so acceptance runs on generated data
with a known latent signal: a smoothed, clipped random walk v(t) in
[-1, 1] at 25 fps. Each frame renders a Gaussian blob whose horizontal
position and brightness are deterministic functions of v(t), plus i.i.d.
pixel noise. A single frame therefore suffices to estimate v(t) up to
noise, while temporal pooling across a window strictly reduces that noise,
so a windowed recurrent model has a measurable edge over the single-frame
regressor.

Landmarks are emitted at fixed positions (the blob does not move the
face), and a configurable fraction of frames is marked face_found=0 to
exercise gap filling. Generation is bitwise deterministic per seed.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataio

# landmark positions as fractions of the frame size; the template scales
# the same fractions to out_size
_LANDMARK_FRAC = {
    "eye_l": (0.3125, 0.375),
    "eye_r": (0.6875, 0.375),
    "nose": (0.5, 0.65),
}


@dataclass(frozen=True)
class SynthConfig:
    train_sequences: int = 20
    dev_sequences: int = 4
    length: int = 300
    image_size: int = 32
    out_size: int = 36
    noise_sigma: float = 100.0  # pixel units on the 0..255 scale
    tau_s: float = 0.5  # smoothing time constant of the latent signal
    gap_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.length < 2:
            raise ValueError(f"length must be >= 2, got {self.length}")
        if not 0.0 <= self.gap_fraction < 1.0:
            raise ValueError(
                f"gap_fraction must be in [0, 1), got {self.gap_fraction}"
            )


def latent_valence(length, tau_s, rng) -> np.ndarray:
    """Exponentially smoothed random walk, reflected/clipped into [-1, 1]."""
    dt = 1.0 / dataio.FPS
    alpha = np.exp(-dt / tau_s)
    walk = np.empty(length)
    w = rng.uniform(-0.8, 0.8)
    v = np.empty(length)
    smoothed = w
    for t in range(length):
        w += rng.normal(0.0, 0.08)
        # reflect the walk back into [-1, 1] to keep it roaming the range
        if w > 1.0:
            w = 2.0 - w
        elif w < -1.0:
            w = -2.0 - w
        walk[t] = w
        smoothed = alpha * smoothed + (1.0 - alpha) * w
        v[t] = smoothed
    return np.clip(v, -1.0, 1.0)


def render_frame(v, size, noise_sigma, rng) -> np.ndarray:
    """One frame: background plus a Gaussian blob whose x-position and
    amplitude encode v, plus pixel noise. Values in [0, 255]."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = size * (0.5 + 0.08 * v)
    cy = size * 0.5
    sigma_b = size / 6.4
    amp = 110.0 + 15.0 * v
    img = 20.0 + amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma_b**2))
    if noise_sigma > 0:
        img = img + rng.normal(0.0, noise_sigma, size=img.shape)
    return np.clip(img, 0.0, 255.0)


def gap_indices(length, fraction) -> set:
    """Deterministic evenly spaced face-miss frames: round(fraction*length)
    of them."""
    if fraction <= 0:
        return set()
    step = max(1, round(1.0 / fraction))
    return set(range(step // 2, length, step))


def frame_landmarks(size) -> dict:
    return {n: (fx * size, fy * size) for n, (fx, fy) in _LANDMARK_FRAC.items()}


def template_for(cfg: SynthConfig) -> dataio.LandmarkTemplate:
    points = {n: (fx * cfg.out_size, fy * cfg.out_size)
              for n, (fx, fy) in _LANDMARK_FRAC.items()}
    return dataio.LandmarkTemplate(points, cfg.out_size)


def generate(cfg: SynthConfig, out_dir):
    """Write template.json, frame PGMs, and train/dev manifests.

    Returns (train_manifest_path, dev_manifest_path, template_path).
    """
    out = Path(out_dir)
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    template_path = out / "template.json"
    dataio.save_template(template_for(cfg), template_path)
    landmarks = frame_landmarks(cfg.image_size)
    gaps = gap_indices(cfg.length, cfg.gap_fraction)

    splits = [("train", cfg.train_sequences, out / "manifest_train.csv"),
              ("dev", cfg.dev_sequences, out / "manifest_dev.csv")]
    paths = []
    for split, n_seq, manifest_path in splits:
        with open(manifest_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(dataio.MANIFEST_COLUMNS)
            for s in range(n_seq):
                seq_id = f"{split}{s:03d}"
                rng = np.random.default_rng([cfg.seed, 0 if split == "train" else 1, s])
                v = latent_valence(cfg.length, cfg.tau_s, rng)
                seq_dir = frames_dir / seq_id
                seq_dir.mkdir(exist_ok=True)
                for t in range(cfg.length):
                    img = render_frame(v[t], cfg.image_size, cfg.noise_sigma, rng)
                    img_path = seq_dir / f"f{t:05d}.pgm"
                    dataio.write_pgm(img_path, img)
                    rel_path = img_path.relative_to(out)
                    if t in gaps:
                        lm_cells = [""] * 6
                        face_found = 0
                    else:
                        lm_cells = [repr(c) for n in dataio.LANDMARK_NAMES
                                    for c in landmarks[n]]
                        face_found = 1
                    writer.writerow(
                        [seq_id, t, repr(t / dataio.FPS), str(rel_path),
                         face_found, *lm_cells, repr(float(v[t]))]
                    )
        paths.append(manifest_path)
    return paths[0], paths[1], template_path

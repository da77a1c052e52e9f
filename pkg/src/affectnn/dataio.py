"""Dataset ingestion and preprocessing.

The on-disk contract is a CSV manifest pointing at binary PGM/PPM frames
plus precomputed eye/nose landmarks. Preprocessing aligns each face to a
canonical landmark template with a least-squares similarity transform,
converts to grayscale, and applies per-image mean/contrast normalization.
Frames where the face detector missed (face_found = 0) carry no landmarks;
their values are filled by linear interpolation downstream.
"""

import csv
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MANIFEST_COLUMNS = [
    "sequence_id", "frame_index", "timestamp_s", "image_path", "face_found",
    "eye_l_x", "eye_l_y", "eye_r_x", "eye_r_y", "nose_x", "nose_y", "valence",
]
LANDMARK_NAMES = ("eye_l", "eye_r", "nose")
FPS = 25
FEATURE_MAGIC = b"AFFT1"


# ---------------------------------------------------------------------------
# images (binary PGM "P5" / PPM "P6", maxval 255)


def _read_pnm_header(fh, path):
    def token():
        tok = b""
        while True:
            ch = fh.read(1)
            if not ch:
                raise ValueError(f"{path}: truncated header")
            if ch in b" \t\r\n":
                if tok:
                    return tok
                continue
            if ch == b"#":
                while fh.read(1) not in (b"\n", b""):
                    pass
                continue
            tok += ch

    magic = fh.read(2)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: expected binary PGM/PPM magic, got {magic!r}")
    width = int(token())
    height = int(token())
    maxval = int(token())
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    return magic, width, height


def read_image(path) -> np.ndarray:
    """Read a P5/P6 file as float64: (H, W) grayscale or (3, H, W) RGB."""
    with open(path, "rb") as fh:
        magic, width, height = _read_pnm_header(fh, path)
        channels = 1 if magic == b"P5" else 3
        raw = fh.read(width * height * channels)
        if len(raw) != width * height * channels:
            raise ValueError(f"{path}: truncated pixel data")
    data = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
    if channels == 1:
        return data.reshape(height, width)
    return data.reshape(height, width, 3).transpose(2, 0, 1)


def write_pgm(path, image):
    """Write (H, W) values in [0, 255] as binary PGM."""
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValueError(f"write_pgm expects a 2-d image, got shape {arr.shape}")
    pixels = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        fh.write(pixels.tobytes())


def to_grayscale(image) -> np.ndarray:
    """Luma conversion (0.299 R + 0.587 G + 0.114 B); grayscale passes
    through unchanged."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[0] == 3:
        return 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]
    raise ValueError(f"expected (H,W) or (3,H,W) image, got shape {image.shape}")


# ---------------------------------------------------------------------------
# manifest


@dataclass
class FrameRecord:
    sequence_id: str
    frame_index: int
    timestamp_s: float
    image_path: str  # relative paths are resolved against the manifest dir
    face_found: bool
    landmarks: dict | None  # name -> (x, y); None iff face_found is False
    valence: float


@dataclass
class SequenceDataset:
    sequences: dict = field(repr=False)  # sequence_id -> list[FrameRecord]
    fps: int = FPS

    def __len__(self):
        return sum(len(v) for v in self.sequences.values())

    @property
    def sequence_ids(self):
        return sorted(self.sequences)


def load_manifest(path) -> SequenceDataset:
    """Parse and validate the manifest CSV; images are loaded lazily."""
    base_dir = os.path.dirname(os.path.abspath(path))
    sequences = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty manifest") from None
        if header != MANIFEST_COLUMNS:
            missing = set(MANIFEST_COLUMNS) - set(header)
            raise ValueError(
                f"{path}: bad manifest header, missing columns {sorted(missing)}"
                if missing else f"{path}: bad manifest header {header}"
            )
        count = 0
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(MANIFEST_COLUMNS):
                raise ValueError(f"{path} row {rownum}: expected "
                                 f"{len(MANIFEST_COLUMNS)} fields, got {len(row)}")
            rec = dict(zip(MANIFEST_COLUMNS, row))
            try:
                face_found = bool(int(rec["face_found"]))
                valence = float(rec["valence"])
                frame_index = int(rec["frame_index"])
                timestamp = float(rec["timestamp_s"])
            except ValueError as exc:
                raise ValueError(f"{path} row {rownum}: {exc}") from None
            if not -1.0 <= valence <= 1.0:
                raise ValueError(
                    f"{path} row {rownum}: valence {valence} outside [-1, 1]"
                )
            lm_cells = [rec[f"{n}_{ax}"] for n in LANDMARK_NAMES for ax in "xy"]
            if face_found:
                if any(c.strip() == "" for c in lm_cells):
                    raise ValueError(
                        f"{path} row {rownum}: face_found=1 but landmarks missing"
                    )
                landmarks = {
                    n: (float(rec[f"{n}_x"]), float(rec[f"{n}_y"]))
                    for n in LANDMARK_NAMES
                }
            else:
                if any(c.strip() != "" for c in lm_cells):
                    raise ValueError(
                        f"{path} row {rownum}: face_found=0 but landmark "
                        f"fields present"
                    )
                landmarks = None
            if abs(timestamp * FPS - round(timestamp * FPS)) > 1e-6:
                raise ValueError(
                    f"{path} row {rownum}: timestamp {timestamp} off the "
                    f"{1000 // FPS} ms grid"
                )
            frames = sequences.setdefault(rec["sequence_id"], [])
            if frames and timestamp <= frames[-1].timestamp_s:
                raise ValueError(
                    f"{path} row {rownum}: non-monotone timestamp {timestamp} "
                    f"in sequence {rec['sequence_id']}"
                )
            image_path = rec["image_path"]
            if not os.path.isabs(image_path):
                image_path = os.path.join(base_dir, image_path)
            frames.append(FrameRecord(rec["sequence_id"], frame_index, timestamp,
                                      image_path, face_found, landmarks,
                                      valence))
            count += 1
    if count == 0:
        raise ValueError(f"{path}: no frames")
    return SequenceDataset(sequences)


# ---------------------------------------------------------------------------
# alignment


@dataclass(frozen=True)
class LandmarkTemplate:
    points: dict  # name -> (x, y) in output pixel coordinates
    out_size: int


def load_template(path) -> LandmarkTemplate:
    with open(path) as fh:
        doc = json.load(fh)
    missing = [n for n in LANDMARK_NAMES if n not in doc]
    if missing:
        raise ValueError(f"{path}: template missing points {missing}")
    points = {n: (float(doc[n][0]), float(doc[n][1])) for n in LANDMARK_NAMES}
    return LandmarkTemplate(points, int(doc["out_size"]))


def save_template(template: LandmarkTemplate, path):
    doc = {n: list(template.points[n]) for n in LANDMARK_NAMES}
    doc["out_size"] = template.out_size
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class SimilarityTransform:
    scale: float
    theta: float  # radians
    tx: float
    ty: float

    @property
    def matrix(self) -> np.ndarray:
        a = self.scale * np.cos(self.theta)
        b = self.scale * np.sin(self.theta)
        return np.array([[a, -b], [b, a]])

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.matrix.T + np.array([self.tx, self.ty])


def fit_similarity(src, dst) -> SimilarityTransform:
    """Least-squares similarity transform (scale, rotation, translation)
    mapping src points onto dst points.

    With the parameterization (a, b, tx, ty), a = s cos(theta),
    b = s sin(theta), the residual is linear in the unknowns and the fit is
    an ordinary least-squares solve.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError(
            f"landmark/template point sets must both be (N, 2), got "
            f"{src.shape} and {dst.shape}"
        )
    n = src.shape[0]
    if n < 3:
        raise ValueError(f"similarity fit needs >= 3 point pairs, got {n}")
    # degenerate when the centered points have (near-)zero spread off a line
    centered = src - src.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0.0 or sv[1] < 1e-9 * sv[0]:
        raise ValueError("degenerate landmarks: points are collinear")
    m = np.zeros((2 * n, 4))
    rhs = np.empty(2 * n)
    m[0::2, 0] = src[:, 0]
    m[0::2, 1] = -src[:, 1]
    m[0::2, 2] = 1.0
    m[1::2, 0] = src[:, 1]
    m[1::2, 1] = src[:, 0]
    m[1::2, 3] = 1.0
    rhs[0::2] = dst[:, 0]
    rhs[1::2] = dst[:, 1]
    (a, b, tx, ty), *_ = np.linalg.lstsq(m, rhs, rcond=None)
    return SimilarityTransform(float(np.hypot(a, b)), float(np.arctan2(b, a)),
                               float(tx), float(ty))


def _bilinear_sample(image, ys, xs):
    h, w = image.shape
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = ys - y0
    fx = xs - x0
    out = np.zeros(ys.shape)
    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            weight = (fy if dy else 1 - fy) * (fx if dx else 1 - fx)
            inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = np.zeros(ys.shape)
            vals[inside] = image[yy[inside], xx[inside]]
            out += weight * vals
    return out


def align_face(image, landmarks, template: LandmarkTemplate) -> np.ndarray:
    """Warp a face to the canonical template via the fitted similarity
    transform. Returns (1, out_size, out_size); samples falling outside the
    source image are 0.
    """
    gray = to_grayscale(image)
    src = np.array([landmarks[n] for n in LANDMARK_NAMES])
    dst = np.array([template.points[n] for n in LANDMARK_NAMES])
    transform = fit_similarity(src, dst)
    size = template.out_size
    # inverse mapping: output pixel -> source coordinates
    inv = np.linalg.inv(transform.matrix)
    us, vs = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64), indexing="xy")
    shifted = np.stack([us - transform.tx, vs - transform.ty], axis=-1)
    coords = shifted @ inv.T
    warped = _bilinear_sample(gray, coords[..., 1], coords[..., 0])
    return warped[None, :, :]


# ---------------------------------------------------------------------------
# photometric normalization


def normalize(image) -> np.ndarray:
    """Per-image mean subtraction and contrast normalization."""
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise ValueError("cannot normalize an empty image")
    std = image.std()
    return (image - image.mean()) / max(std, 1e-6)


# ---------------------------------------------------------------------------
# gap filling


def fill_gaps(values, missing):
    """Fill missing entries by linear interpolation between the nearest
    present neighbors; runs at either end hold the nearest present value.

    Returns (filled, mask) where mask is 1 at filled positions. Present
    entries are passed through untouched.
    """
    values = np.asarray(values, dtype=np.float64)
    missing = np.asarray(missing, dtype=bool)
    if values.shape != missing.shape or values.ndim != 1:
        raise ValueError(
            f"values and missing flags must be equal-length vectors, got "
            f"{values.shape} and {missing.shape}"
        )
    present = ~missing
    if not present.any():
        raise ValueError("cannot fill an all-missing timeline")
    idx = np.arange(len(values), dtype=np.float64)
    filled = values.copy()
    filled[missing] = np.interp(idx[missing], idx[present], values[present])
    return filled, missing.astype(np.uint8)


def fill_gaps_2d(rows, missing):
    """Column-wise fill_gaps for (T, D) data (e.g. feature timelines)."""
    rows = np.asarray(rows, dtype=np.float64)
    filled = rows.copy()
    for d in range(rows.shape[1]):
        filled[:, d], _ = fill_gaps(rows[:, d], missing)
    return filled, np.asarray(missing, dtype=bool).astype(np.uint8)


# ---------------------------------------------------------------------------
# feature timelines and windows


@dataclass
class FeatureTimeline:
    sequence_id: str
    features: np.ndarray = field(repr=False)  # (T, D)
    labels: np.ndarray = field(repr=False)  # (T,)
    mask: np.ndarray = field(repr=False)  # (T,) 1 where gap-filled

    def __post_init__(self):
        t = self.features.shape[0]
        if len(self.labels) != t or len(self.mask) != t:
            raise ValueError(
                f"{self.sequence_id}: features ({t}), labels "
                f"({len(self.labels)}) and mask ({len(self.mask)}) lengths differ"
            )

    def __len__(self):
        return self.features.shape[0]


def make_windows(timeline: FeatureTimeline, window: int):
    """All complete windows of length W: one per end index t in [W-1, T-1],
    so the count is T - W + 1. Labels are plain slices of the gold timeline.
    """
    t_len = len(timeline)
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if t_len < window:
        raise ValueError(
            f"sequence {timeline.sequence_id}: length {t_len} shorter than "
            f"window {window}"
        )
    return [
        (timeline.features[t - window + 1 : t + 1],
         timeline.labels[t - window + 1 : t + 1], t)
        for t in range(window - 1, t_len)
    ]


def write_features(timeline: FeatureTimeline, path):
    """Feature file: magic "AFFT1", length-prefixed JSON header, then
    row-major float64 features, float64 labels, and mask bytes."""
    header = {
        "sequence_id": timeline.sequence_id,
        "frames": int(timeline.features.shape[0]),
        "dim": int(timeline.features.shape[1]),
        "has_labels": True,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(timeline.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(timeline.labels, dtype="<f8").tobytes())
        fh.write(np.asarray(timeline.mask, dtype=np.uint8).tobytes())


def read_features(path) -> FeatureTimeline:
    with open(path, "rb") as fh:
        magic = fh.read(len(FEATURE_MAGIC))
        if magic != FEATURE_MAGIC:
            raise ValueError(f"{path}: not a feature file (bad magic {magic!r})")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        t, d = header["frames"], header["dim"]
        feats = np.frombuffer(fh.read(t * d * 8), dtype="<f8").astype(
            np.float64).reshape(t, d)
        labels = np.frombuffer(fh.read(t * 8), dtype="<f8").astype(np.float64)
        mask = np.frombuffer(fh.read(t), dtype=np.uint8).copy()
    return FeatureTimeline(header["sequence_id"], feats, labels, mask)


# ---------------------------------------------------------------------------
# pipeline helpers


def preprocess_frame(record: FrameRecord, template: LandmarkTemplate) -> np.ndarray:
    """Aligned, normalized (1, out, out) tensor for a frame with a face."""
    if not record.face_found:
        raise ValueError(
            f"{record.sequence_id} frame {record.frame_index}: no face to align"
        )
    image = read_image(record.image_path)
    return normalize(align_face(image, record.landmarks, template))


def labeled_frames(dataset: SequenceDataset, template: LandmarkTemplate):
    """(image, valence) training pairs from every frame with a detected
    face, in sequence order."""
    samples = []
    for seq_id in dataset.sequence_ids:
        for record in dataset.sequences[seq_id]:
            if record.face_found:
                samples.append((preprocess_frame(record, template), record.valence))
    if not samples:
        raise ValueError("dataset contains no frames with detected faces")
    return samples

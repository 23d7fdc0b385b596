"""Synthetic two-domain shape/texture datasets, oracles, and image IO.

Each image is one textured shape (ellipse or rectangle) on a flat
background. The shape's position/size/orientation are the features two
domains can share; the texture (horizontal stripes vs dots) is the
feature that tells the domains apart. Generation keeps a ground-truth
record per image so both claims are measurable.

Oracle constants (versioned; changing any of these invalidates recorded
scores):
  * foreground threshold 0.2 against a background estimated as the
    median of the 1-pixel border ring;
  * texture score = (R - W) / (R + W) over masked pixels, where R is the
    between-row energy of row means and W the within-row energy around
    them; horizontal stripes put everything in R (score +1), dot grids
    put most energy in W (score < 0), a flat region scores 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FOREGROUND_THRESHOLD = 0.2
ORACLE_VERSION = 1

# two-tone texture levels: mid +/- contrast * half
TONE_MID = 0.45
TONE_HALF = 0.4
DOT_RADIUS_FRAC = 0.32  # dot radius as a fraction of the lattice period

TEXTURE_KINDS = ("h-stripes", "dots")
SHAPE_KINDS = ("ellipse", "rectangle")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameter ranges for one domain; all draws are uniform."""

    canvas: tuple = (32, 32)
    channels: int = 1
    shape_kind: str = "ellipse"
    row_range: tuple = (11.0, 21.0)
    col_range: tuple = (11.0, 21.0)
    size_range: tuple = (5.0, 9.0)  # semi-major axis, px
    aspect_range: tuple = (0.55, 0.9)
    orientation_range: tuple = (0.0, 180.0)  # degrees
    texture_kind: str = "h-stripes"
    period_range: tuple = (3.5, 6.0)  # texture period, px
    contrast_range: tuple = (0.85, 1.0)
    background: float = -0.85

    def __post_init__(self):
        if self.shape_kind not in SHAPE_KINDS:
            raise ValueError(f"shape_kind must be one of {SHAPE_KINDS}, got {self.shape_kind!r}")
        if self.texture_kind not in TEXTURE_KINDS:
            raise ValueError(f"texture_kind must be one of {TEXTURE_KINDS}, got {self.texture_kind!r}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        h, w = self.canvas
        margin = 1.5  # keep the border ring clean for the oracles
        for centers, extent in ((self.row_range, h), (self.col_range, w)):
            if centers[0] - self.size_range[1] < margin or centers[1] + self.size_range[1] > extent - margin:
                raise ValueError(
                    f"shape can leave the canvas: centers {centers}, size up to {self.size_range[1]}, canvas {extent}")


@dataclass(frozen=True)
class GroundTruth:
    index: int
    centroid_row: float
    centroid_col: float
    orientation: float  # degrees
    texture_kind: str
    texture_freq: float  # cycles per pixel


@dataclass
class ImageDataset:
    name: str
    images: np.ndarray  # (N, C, H, W) float32 in [-1, 1]
    records: list
    seed: int

    def __post_init__(self):
        if self.images.ndim != 4 or len(self.images) == 0:
            raise ValueError(f"dataset needs a nonempty (N,C,H,W) stack, got {self.images.shape}")

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self):
        return self.images.shape[1:]

    @property
    def texture_kind(self):
        kinds = {r.texture_kind for r in self.records} if self.records else set()
        return kinds.pop() if len(kinds) == 1 else None

    def head(self, n: int) -> "ImageDataset":
        return ImageDataset(self.name, self.images[:n], self.records[:n], self.seed)

    def tail(self, n: int) -> "ImageDataset":
        return ImageDataset(self.name, self.images[len(self) - n:],
                            self.records[len(self) - n:], self.seed)


@dataclass(frozen=True)
class DatasetPair:
    """(shape source, texture target); shapes of the images must match."""

    shape_source: ImageDataset
    texture_target: ImageDataset

    def __post_init__(self):
        if self.shape_source.image_shape != self.texture_target.image_shape:
            raise ValueError(
                f"domain image shapes differ: {self.shape_source.image_shape} "
                f"vs {self.texture_target.image_shape}")


def _render(spec: SyntheticSpec, rng) -> tuple:
    h, w = spec.canvas
    cr = rng.uniform(*spec.row_range)
    cc = rng.uniform(*spec.col_range)
    a = rng.uniform(*spec.size_range)
    b = a * rng.uniform(*spec.aspect_range)
    theta = np.deg2rad(rng.uniform(*spec.orientation_range))
    period = rng.uniform(*spec.period_range)
    contrast = rng.uniform(*spec.contrast_range)
    phase_r = rng.uniform(0.0, period)
    phase_c = rng.uniform(0.0, period)

    rr, cc_grid = np.meshgrid(np.arange(h, dtype=np.float64),
                              np.arange(w, dtype=np.float64), indexing="ij")
    dr, dc = rr - cr, cc_grid - cc
    u = dr * np.cos(theta) + dc * np.sin(theta)
    v = -dr * np.sin(theta) + dc * np.cos(theta)
    if spec.shape_kind == "ellipse":
        mask = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    else:
        mask = (np.abs(u) <= a) & (np.abs(v) <= b)

    lo = TONE_MID - contrast * TONE_HALF
    hi = TONE_MID + contrast * TONE_HALF
    if spec.texture_kind == "h-stripes":
        tex = np.where(np.mod(rr - phase_r, period) < period / 2, hi, lo)
    else:
        # staggered dot lattice: alternate dot rows shifted half a period
        band = np.floor((rr - phase_r) / period + 0.5)
        drow = rr - phase_r - band * period
        offset = np.mod(band, 2.0) * (period / 2)
        dcol = np.mod(cc_grid - phase_c - offset + period / 2, period) - period / 2
        tex = np.where(drow ** 2 + dcol ** 2 <= (DOT_RADIUS_FRAC * period) ** 2, hi, lo)

    img = np.full((h, w), spec.background, np.float64)
    img[mask] = tex[mask]
    plane = img.astype(np.float32)
    stack = np.repeat(plane[None], spec.channels, axis=0)
    deg = float(np.rad2deg(theta))
    return stack, (float(cr), float(cc), deg, 1.0 / float(period))


def gen_domain(spec: SyntheticSpec, n: int, seed: int, name: str = "domain") -> ImageDataset:
    """Generate n images with per-image derived seeds (safe to parallelize)."""
    if n < 1:
        raise ValueError(f"need at least one image, got n={n}")
    images = np.empty((n, spec.channels) + spec.canvas, np.float32)
    records = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        images[i], (cr, cc, deg, freq) = _render(spec, rng)
        records.append(GroundTruth(i, cr, cc, deg, spec.texture_kind, freq))
    return ImageDataset(name, images, records, seed)


# ---------------------------------------------------------------- oracles


def _luma(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=0) if img.ndim == 3 else img


def _border_background(plane: np.ndarray) -> float:
    ring = np.concatenate([plane[0], plane[-1], plane[1:-1, 0], plane[1:-1, -1]])
    return float(np.median(ring))


def shape_centroid(img: np.ndarray, threshold: float = FOREGROUND_THRESHOLD):
    """Intensity-weighted centroid (row, col) of the foreground, or None."""
    plane = _luma(np.asarray(img, np.float64))
    wgt = np.abs(plane - _border_background(plane))
    mask = wgt > threshold
    if not mask.any():
        return None
    wgt = wgt * mask
    total = wgt.sum()
    rows = np.arange(plane.shape[0])[:, None]
    cols = np.arange(plane.shape[1])[None, :]
    return float((wgt * rows).sum() / total), float((wgt * cols).sum() / total)


def texture_score(img: np.ndarray, threshold: float = FOREGROUND_THRESHOLD) -> float:
    """Signed stripe-vs-dot contrast in [-1, 1] over the foreground.

    Decomposes masked-pixel variance by row: energy of the row means is
    the horizontal-band (stripe) part, energy within rows is the dot
    part. Positive means stripes, negative means dots, 0 means no
    foreground texture energy.
    """
    plane = _luma(np.asarray(img, np.float64))
    mask = np.abs(plane - _border_background(plane)) > threshold
    if not mask.any():
        return 0.0
    counts = mask.sum(axis=1)
    sums = np.where(mask, plane, 0.0).sum(axis=1)
    rows = counts > 0
    row_mean = np.zeros_like(sums)
    row_mean[rows] = sums[rows] / counts[rows]
    overall = sums.sum() / counts.sum()
    stripe_e = float((counts[rows] * (row_mean[rows] - overall) ** 2).sum())
    resid = np.where(mask, plane - row_mean[:, None], 0.0)
    dot_e = float((resid ** 2).sum())
    total = stripe_e + dot_e
    if total < 1e-12:
        return 0.0
    return (stripe_e - dot_e) / total


# ---------------------------------------------------------------- image IO


def _quantize(img: np.ndarray) -> np.ndarray:
    """[-1,1] floats to bytes: floor(127.5*(v+1) + 0.5), clamped (round half up)."""
    q = np.floor(127.5 * (np.asarray(img, np.float64) + 1.0) + 0.5)
    return np.clip(q, 0, 255).astype(np.uint8)


def _dequantize(q: np.ndarray) -> np.ndarray:
    return (q.astype(np.float32) / np.float32(127.5)) - np.float32(1.0)


def save_image(img: np.ndarray, path):
    """Write a (1,H,W) image as binary PGM (P5) or (3,H,W) as PPM (P6)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"expected (1|3,H,W) image, got shape {img.shape}")
    c, h, w = img.shape
    q = _quantize(img)
    payload = q[0] if c == 1 else np.moveaxis(q, 0, -1)  # HWC interleave for P6
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(payload.tobytes())


def load_image(path) -> np.ndarray:
    """Read binary P5/P6 into a (C,H,W) float32 image in [-1, 1]."""
    blob = Path(path).read_bytes()
    if blob[:2] == b"P5":
        channels = 1
    elif blob[:2] == b"P6":
        channels = 3
    else:
        raise ValueError(f"{path}: not a binary PGM/PPM (magic {blob[:2]!r})")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(blob):
            raise ValueError(f"{path}: header ended before width/height/maxval")
        ch = blob[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            nl = blob.find(b"\n", pos)
            pos = len(blob) if nl < 0 else nl + 1
        elif ch.isdigit():
            end = pos
            while end < len(blob) and blob[end:end + 1].isdigit():
                end += 1
            fields.append(int(blob[pos:end]))
            pos = end
        else:
            raise ValueError(f"{path}: unexpected header byte {ch!r}")
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    need = w * h * channels
    payload = blob[pos:pos + need]
    if len(payload) != need:
        raise ValueError(f"{path}: truncated payload, wanted {need} bytes got {len(payload)}")
    q = np.frombuffer(payload, np.uint8)
    if channels == 1:
        return _dequantize(q.reshape(1, h, w))
    return _dequantize(np.moveaxis(q.reshape(h, w, 3), -1, 0))


# ------------------------------------------------------------ dataset dirs

TRUTH_HEADER = ["index", "centroid_row", "centroid_col", "orientation",
                "texture_kind", "texture_freq"]


def save_dataset(ds: ImageDataset, out_dir):
    """Write images/NNNNNN.pgm|ppm plus the ground-truth sidecar CSV."""
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    ext = "pgm" if ds.images.shape[1] == 1 else "ppm"
    for i, img in enumerate(ds.images):
        save_image(img, img_dir / f"{i:06d}.{ext}")
    with open(out_dir / "truth.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(TRUTH_HEADER)
        for r in ds.records:
            wr.writerow([r.index, repr(r.centroid_row), repr(r.centroid_col),
                         repr(r.orientation), r.texture_kind, repr(r.texture_freq)])


def load_dataset(path, name=None) -> ImageDataset:
    path = Path(path)
    truth = path / "truth.csv"
    if not truth.exists():
        raise FileNotFoundError(f"{path} has no truth.csv; not a dataset directory")
    records = []
    with open(truth, newline="") as f:
        rd = csv.reader(f)
        header = next(rd)
        if header != TRUTH_HEADER:
            raise ValueError(f"{truth}: unexpected header {header}")
        for row in rd:
            records.append(GroundTruth(int(row[0]), float(row[1]), float(row[2]),
                                       float(row[3]), row[4], float(row[5])))
    files = sorted((path / "images").glob("*.p[gp]m"))
    if len(files) != len(records):
        raise ValueError(f"{path}: {len(files)} images but {len(records)} truth rows")
    images = np.stack([load_image(p) for p in files])
    return ImageDataset(name or path.name, images, records, seed=-1)


# ------------------------------------------------------------- batch iter


def batch_iter(images: np.ndarray, batch_size: int, seed: int, epoch: int):
    """Seeded shuffle of one epoch; yields (B,...) arrays, remainder dropped."""
    n = len(images)
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {n}")
    perm = np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch)])).permutation(n)
    for lo in range(0, n - batch_size + 1, batch_size):
        yield images[perm[lo:lo + batch_size]]


def batch_stream(images: np.ndarray, batch_size: int, seed: int):
    """Endless deterministic stream of shuffled batches, epoch after epoch."""
    epoch = 0
    while True:
        yield from batch_iter(images, batch_size, seed, epoch)
        epoch += 1

"""Binary PGM I/O, the synthetic small-target generator and dataset loading."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .tensor import ConfigError

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


class PGMError(DataError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


# -- PGM ----------------------------------------------------------------------
_WHITESPACE = b" \t\r\n\v\f"


def _header_token(buf: bytes, pos: int) -> tuple:
    """Next whitespace-delimited header token, skipping ``#`` comments."""
    while pos < len(buf):
        ch = buf[pos:pos + 1]
        if ch == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
        elif ch in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and buf[pos:pos + 1] not in _WHITESPACE and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PGMError("unexpected end of header", start)
    return buf[start:pos], start, pos


def decode_pgm(buf: bytes) -> tuple:
    """Raw integer pixels (H, W) and maxval from a binary P5 file."""
    magic, off, pos = _header_token(buf, 0)
    if magic != b"P5":
        raise PGMError(f"bad magic {magic[:8]!r}, expected b'P5'", off)
    vals = []
    for what in ("width", "height", "maxval"):
        tok, off, pos = _header_token(buf, pos)
        if not tok.isdigit() or int(tok) <= 0:
            raise PGMError(f"invalid {what} {tok[:16]!r}", off)
        vals.append(int(tok))
    w, h, maxval = vals
    if maxval not in (255, 65535):
        raise PGMError(f"unsupported maxval {maxval}", off)
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE:
        raise PGMError("missing whitespace after maxval", pos)
    pos += 1
    dtype = np.dtype(np.uint8) if maxval == 255 else np.dtype(">u2")
    need = w * h * dtype.itemsize
    if len(buf) - pos < need:
        raise PGMError(f"truncated payload: need {need} bytes, have {len(buf) - pos}", len(buf))
    pixels = np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return pixels.astype(np.int64), maxval


def load_pgm_bytes(buf: bytes) -> np.ndarray:
    """Intensities normalised to [0, 1] as float64."""
    pixels, maxval = decode_pgm(buf)
    return pixels / maxval


def load_pgm(path) -> np.ndarray:
    return load_pgm_bytes(Path(path).read_bytes())


def encode_pgm(image: np.ndarray, maxval: int = 255) -> bytes:
    """``image`` in [0, 1] is rounded to the nearest level; integer arrays are written as-is."""
    if maxval not in (255, 65535):
        raise ValueError(f"unsupported maxval {maxval}")
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValueError(f"PGM images are 2-D, got shape {arr.shape}")
    if np.issubdtype(arr.dtype, np.integer):
        levels = arr
    else:
        levels = np.rint(np.clip(arr, 0.0, 1.0) * maxval)
    dtype = np.uint8 if maxval == 255 else ">u2"
    h, w = arr.shape
    return f"P5\n{w} {h}\n{maxval}\n".encode() + levels.astype(dtype).tobytes()


def save_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    Path(path).write_bytes(encode_pgm(image, maxval))


# -- synthetic data -------------------------------------------------------------
BACKGROUNDS = ("flat", "gradient", "cloud")
MASK_FRACTION = 0.1  # mask = blob above this fraction of its own peak
PLACEMENT_TRIES = 100


@dataclass
class SynthConfig:
    count: int = 250
    image_size: int = 64
    targets_min: int = 1
    targets_max: int = 3
    sigma_min: float = 0.7
    sigma_max: float = 1.6
    contrast_min: float = 0.35
    contrast_max: float = 0.7
    background: str = "cloud"
    noise_sigma: float = 0.02
    seed: int = 0
    test_count: int = 50

    def __post_init__(self):
        if self.count < 0 or not 0 <= self.test_count <= self.count:
            raise ConfigError(f"need 0 <= test_count <= count, got {self.test_count}, {self.count}")
        if self.image_size < 4:
            raise ConfigError("image_size must be at least 4")
        if not 0 <= self.targets_min <= self.targets_max:
            raise ConfigError("need 0 <= targets_min <= targets_max")
        if not 0.5 <= self.sigma_min <= self.sigma_max:
            raise ConfigError("target sigma must be at least 0.5 px and min <= max")
        if not 0 < self.contrast_min <= self.contrast_max:
            raise ConfigError("need 0 < contrast_min <= contrast_max")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        if self.background not in BACKGROUNDS:
            raise ConfigError(f"background must be one of {BACKGROUNDS}, got {self.background!r}")

    @property
    def hard(self) -> bool:
        """Targets may be fainter than the noise."""
        return self.contrast_min <= self.noise_sigma


def support_radius(sigma: float) -> float:
    """Radius where a Gaussian falls to ``MASK_FRACTION`` of its peak."""
    return sigma * math.sqrt(2.0 * math.log(1.0 / MASK_FRACTION))


def gaussian_blob(size: int, row: float, col: float, sigma: float) -> np.ndarray:
    """Unit-peak Gaussian sampled at integer pixel centres."""
    r = np.arange(size)[:, None] - row
    c = np.arange(size)[None, :] - col
    return np.exp(-(r * r + c * c) / (2.0 * sigma * sigma))


def make_background(kind: str, size: int, rng) -> np.ndarray:
    if kind == "flat":
        return np.full((size, size), rng.uniform(0.15, 0.35))
    if kind == "gradient":
        angle = rng.uniform(0, 2 * np.pi)
        r, c = np.mgrid[0:size, 0:size] / max(size - 1, 1)
        ramp = np.cos(angle) * r + np.sin(angle) * c
        ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
        return 0.15 + 0.25 * ramp
    cloud = ndimage.gaussian_filter(rng.normal(size=(size, size)), sigma=size / 10, mode="wrap")
    cloud = (cloud - cloud.min()) / max(np.ptp(cloud), 1e-12)
    return 0.1 + 0.35 * cloud


@dataclass
class Target:
    row: float
    col: float
    sigma: float
    contrast: float


def place_targets(cfg: SynthConfig, rng) -> list:
    """Non-overlapping targets fully inside the frame (supports at least 2 px apart)."""
    want = int(rng.integers(cfg.targets_min, cfg.targets_max + 1))
    placed = []
    for _ in range(want):
        sigma = rng.uniform(cfg.sigma_min, cfg.sigma_max)
        contrast = rng.uniform(cfg.contrast_min, cfg.contrast_max)
        rad = support_radius(sigma)
        lo, hi = math.ceil(rad) + 1, cfg.image_size - math.ceil(rad) - 2
        for _ in range(PLACEMENT_TRIES):
            if lo > hi:
                break
            row, col = rng.uniform(lo, hi), rng.uniform(lo, hi)
            if all(math.hypot(row - t.row, col - t.col) > rad + support_radius(t.sigma) + 2 for t in placed):
                placed.append(Target(row, col, sigma, contrast))
                break
        else:
            log.warning("target placement failed after %d tries; skipping", PLACEMENT_TRIES)
    return placed


def render_sample(cfg: SynthConfig, index: int) -> tuple:
    """(image in [0, 1], binary mask, targets) for one sample; seeded per index."""
    rng = np.random.default_rng([cfg.seed, index])
    size = cfg.image_size
    image = make_background(cfg.background, size, rng)
    mask = np.zeros((size, size), dtype=bool)
    targets = place_targets(cfg, rng)
    for t in targets:
        blob = gaussian_blob(size, t.row, t.col, t.sigma)
        image = image + t.contrast * blob
        mask |= blob > MASK_FRACTION
    if cfg.noise_sigma > 0:
        image = image + rng.normal(scale=cfg.noise_sigma, size=image.shape)
    return np.clip(image, 0.0, 1.0), mask, targets


def generate_synthetic(cfg: SynthConfig, out_dir) -> Path:
    """Write images/, masks/ (8-bit PGM) and a manifest of ``id split`` lines.

    The last ``test_count`` samples form the test split.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(max(cfg.count - 1, 0))))
    lines = [f"# {k} = {v}" for k, v in vars(cfg).items()]
    for i in range(cfg.count):
        image, mask, _ = render_sample(cfg, i)
        sid = f"{i:0{width}d}"
        save_pgm(out / "images" / f"{sid}.pgm", image)
        save_pgm(out / "masks" / f"{sid}.pgm", mask.astype(np.uint8) * 255)
        lines.append(f"{sid} {'test' if i >= cfg.count - cfg.test_count else 'train'}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    return out


# -- datasets ---------------------------------------------------------------------
@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray
    id: str


def read_manifest(root) -> list:
    """(id, split) pairs; the split column is optional and defaults to ``all``."""
    path = Path(root) / "manifest.txt"
    if not path.exists():
        raise DataError(f"no manifest.txt in {root}")
    rows = []
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) > 2:
            raise DataError(f"manifest line {ln}: expected 'id [split]'")
        rows.append((parts[0], parts[1] if len(parts) == 2 else "all"))
    return rows


def load_sample(root, sid: str) -> Sample:
    root = Path(root)
    image = load_pgm(root / "images" / f"{sid}.pgm")
    mask = load_pgm(root / "masks" / f"{sid}.pgm") > 0
    if image.shape != mask.shape:
        raise DataError(f"sample {sid}: image {image.shape} and mask {mask.shape} differ")
    return Sample(image, mask, sid)


def load_dataset(root, split: str | None = None) -> list:
    rows = read_manifest(root)
    samples = [load_sample(root, sid) for sid, s in rows if split is None or s == split]
    if split is not None and not samples:
        raise DataError(f"split {split!r} is empty in {root}")
    return samples


def stack(samples) -> tuple:
    """(N, 1, H, W) float32 images and masks; all samples must share one size."""
    shapes = {s.image.shape for s in samples}
    if len(shapes) != 1:
        raise DataError(f"samples have differing sizes {sorted(shapes)}")
    images = np.stack([s.image for s in samples])[:, None].astype(np.float32)
    masks = np.stack([s.mask for s in samples])[:, None].astype(np.float32)
    return images, masks

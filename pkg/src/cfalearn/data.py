"""Image ingestion, channel construction, noise injection, dataset
splitting, and deterministic patch-pair sampling.

Images are float64 arrays in [0, 1].  The 4-channel sensor input is
(R, G, B, W) with W = R + G + B, so W can reach 3.  All randomness derives
from explicit seeds (and, for batches, the batch index), so any batch can
be regenerated independently of iteration order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Floor applied to network inputs so the log-domain path stays defined even
# after additive Gaussian noise.  Well below one LSB of 12-bit data.
LOG_FLOOR = 1e-4


class DataError(ValueError):
    pass


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list


@dataclass
class PatchBatch:
    """Paired noisy 4-channel input windows and clean RGB target patches."""

    x: np.ndarray  # B x 3P x 3P x 4, clamped at LOG_FLOOR
    y: np.ndarray  # B x P x P x 3, clean


# ---------------------------------------------------------------------------
# image I/O
# ---------------------------------------------------------------------------

def _read_pnm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    # header: magic, width, height, maxval, separated by whitespace/comments
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.match(rb"\s*(#[^\n]*\n|\S+)", raw[pos:])
        if not m:
            raise DataError(f"truncated header in {path}")
        pos += m.end()
        tok = m.group(1)
        if not tok.startswith(b"#"):
            tokens.append(tok)
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != b"P6":
        raise DataError(f"unsupported PNM magic {magic!r} in {path}")
    if maxval <= 0 or maxval >= 65536:
        raise DataError(f"bad maxval {maxval} in {path}")
    pos += 1  # single whitespace byte after maxval
    depth = 2 if maxval > 255 else 1
    need = width * height * 3 * depth
    body = raw[pos:pos + need]
    if len(body) != need:
        raise DataError(f"truncated pixel data in {path}")
    dtype = ">u2" if depth == 2 else np.uint8
    img = np.frombuffer(body, dtype=dtype).reshape(height, width, 3)
    return img.astype(np.float64) / maxval


def write_ppm(path, img: np.ndarray, maxval: int = 255) -> None:
    """Write an RGB image in [0, 1] as binary PPM (8- or 16-bit)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError("expected an HxWx3 image")
    if maxval not in (255, 65535):
        raise DataError("maxval must be 255 or 65535")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    data = q.astype(">u2" if maxval > 255 else np.uint8).tobytes()
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + data)


def load_image(path) -> np.ndarray:
    """Load an RGB image scaled to [0, 1].  Supports binary PPM and PNG."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pnm"):
        return _read_pnm(path)
    if suffix == ".png":
        from PIL import Image

        with Image.open(path) as im:
            mode = im.mode
            arr = np.asarray(im)
        if mode == "RGB":
            return arr.astype(np.float64) / 255.0
        if mode in ("I;16", "I"):
            raise DataError(f"{path}: single-channel PNG is not an RGB image")
        raise DataError(f"{path}: unsupported PNG mode {mode}")
    raise DataError(f"unsupported image format: {path}")


# ---------------------------------------------------------------------------
# channel construction and noise
# ---------------------------------------------------------------------------

def build_channels(img: np.ndarray) -> np.ndarray:
    """Stack (R, G, B, W) with W the sum of the RGB channels."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError("expected an HxWx3 image")
    w = img.sum(axis=2, keepdims=True)
    return np.concatenate([img, w], axis=2)


def add_noise(x: np.ndarray, std: float, seed) -> np.ndarray:
    """Add i.i.d. Gaussian noise of the given std (on the [0, 1] intensity
    scale), then clamp below at LOG_FLOOR.  std = 0 is the identity."""
    if std < 0:
        raise DataError("noise std must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if std == 0:
        return x.copy()
    rng = np.random.default_rng(seed)
    return np.maximum(x + rng.normal(0.0, std, size=x.shape), LOG_FLOOR)


# ---------------------------------------------------------------------------
# splitting and sampling
# ---------------------------------------------------------------------------

def split_dataset(ids, n_test: int, n_val: int, seed: int) -> DatasetSplit:
    """Deterministic shuffle of the sorted ids, then partition into
    test / val / train segments."""
    ids = sorted(ids)
    if n_test + n_val >= len(ids):
        raise DataError(f"cannot hold out {n_test}+{n_val} of {len(ids)} images")
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    return DatasetSplit(
        test=shuffled[:n_test],
        val=shuffled[n_test:n_test + n_val],
        train=shuffled[n_test + n_val:],
    )


def write_split(split: DatasetSplit, path) -> None:
    lines = [" ".join(str(i) for i in seg) for seg in (split.train, split.val, split.test)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_split(path) -> DatasetSplit:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if len(lines) != 3:
        raise DataError(f"split manifest must have 3 lines, found {len(lines)}")
    train, val, test = (line.split() for line in lines)
    return DatasetSplit(train=train, val=val, test=test)


def sample_patch_pairs(channel_imgs, period: int, batch: int, seed,
                       noise_std: float, batch_index: int = 0) -> PatchBatch:
    """Sample a batch of (noisy 3P x 3P x 4, clean P x P x 3) pairs.

    Patch top-left offsets are multiples of P so the tiled pattern phase is
    fixed.  The x window extends one period beyond the target patch on every
    side, so offsets are drawn from [P, dim - 2P].  Randomness is a pure
    function of (seed, batch_index).
    """
    p = period
    if batch < 1:
        raise DataError("batch must be >= 1")
    for im in channel_imgs:
        if im.shape[0] < 3 * p or im.shape[1] < 3 * p:
            raise DataError(f"image {im.shape[:2]} too small for period {p}")
    rng = np.random.default_rng([seed, batch_index])
    xs = np.empty((batch, 3 * p, 3 * p, 4))
    ys = np.empty((batch, p, p, 3))
    for b in range(batch):
        im = channel_imgs[rng.integers(len(channel_imgs))]
        h, w = im.shape[:2]
        i0 = p * int(rng.integers(1, h // p - 1))
        j0 = p * int(rng.integers(1, w // p - 1))
        window = im[i0 - p:i0 + 2 * p, j0 - p:j0 + 2 * p]
        ys[b] = im[i0:i0 + p, j0:j0 + p, :3]
        if noise_std > 0:
            window = window + rng.normal(0.0, noise_std, size=window.shape)
        xs[b] = np.maximum(window, LOG_FLOOR)
    return PatchBatch(x=xs, y=ys)


# ---------------------------------------------------------------------------
# synthetic toy imagery for desk-scale runs
# ---------------------------------------------------------------------------

def make_synthetic_images(count: int, size: int, seed: int) -> list:
    """Deterministic set of smooth-plus-texture RGB test images in [0, 1]."""
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    images = []
    for _ in range(count):
        img = np.empty((size, size, 3))
        # smooth base: random linear gradient per channel
        for c in range(3):
            a, b, c0 = rng.uniform(-1, 1, 3)
            img[:, :, c] = 0.5 + 0.35 * (a * yy + b * xx + 0.5 * c0)
        # low-frequency colored blobs
        blob = gaussian_filter(rng.normal(0, 1, (size, size, 3)), sigma=(size / 8, size / 8, 0))
        img += blob / (np.abs(blob).max() + 1e-12) * rng.uniform(0.1, 0.3)
        # oriented sinusoidal texture, correlated across channels
        freq = rng.uniform(2, 8)
        theta = rng.uniform(0, np.pi)
        wave = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy))
        img += wave[:, :, None] * rng.uniform(0.02, 0.1, 3)
        # a hard edge now and then
        if rng.random() < 0.5:
            mask = (np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)) > 0
            img[mask] *= rng.uniform(0.5, 0.9)
        # keep a little ambient light: pure black drives the log-domain
        # features to extremes that natural photographs rarely show
        images.append(np.clip(img, 0.03, 1.0))
    return images


def make_lowlight_images(count: int, size: int, seed: int, detail: float = 0.12) -> list:
    """Deterministic low-light test images: smooth chromaticity, shared
    high-frequency luminance texture, and a spatially varying illumination
    field with deep shadows.

    This family mimics the statistics that make panchromatic (W) sites
    worthwhile on real sensors: fine detail lives in luminance and is shared
    across color channels, chroma varies slowly, and large regions are dark
    enough that per-channel noise is significant relative to signal.
    """
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng(seed)
    images = []
    for _ in range(count):
        img = np.empty((size, size, 3))
        # slowly varying chromaticity
        ch = gaussian_filter(rng.normal(0, 1, (size, size, 3)),
                             sigma=(size / 6, size / 6, 0))
        ch /= np.abs(ch).max() + 1e-12
        for c in range(3):
            img[:, :, c] = 0.55 + 0.25 * ch[:, :, c]
        # high-pass luminance texture, identical in all channels
        n = rng.normal(0, 1, (size, size))
        tex = n - gaussian_filter(n, 1.5)
        img += detail * (tex / tex.std())[:, :, None]
        # illumination with deep shadows
        illum = gaussian_filter(rng.normal(0, 1, (size, size)), sigma=size / 5)
        illum = (illum - illum.min()) / (illum.max() - illum.min() + 1e-12)
        illum = 0.04 + 0.96 * illum ** 2.5
        images.append(np.clip(img * illum[:, :, None], 0.0, 1.0))
    return images


def make_texture_images(count: int, size: int, seed: int, scale: float = 0.25,
                        chroma=0.2, detail: float = 0.15) -> list:
    """Deterministic texture-dominant test images: smooth chromaticity plus a
    strong near-Nyquist luminance texture, uniformly dimmed by ``scale``.

    The dominant high-frequency content aliases badly under per-pixel color
    sampling, which is the regime where dense-luminance sampling and learned
    reconstruction pay off over channel-wise interpolation.  ``chroma`` may be
    a scalar or a per-channel (R, G, B) triple; an asymmetric triple shifts
    where the color information lives, which fixed mosaics cannot adapt to.
    """
    from scipy.ndimage import gaussian_filter

    chroma = np.broadcast_to(np.asarray(chroma, dtype=float), (3,))
    rng = np.random.default_rng(seed)
    images = []
    for _ in range(count):
        img = np.empty((size, size, 3))
        ch = gaussian_filter(rng.normal(0, 1, (size, size, 3)),
                             sigma=(size / 6, size / 6, 0))
        ch /= np.abs(ch).max() + 1e-12
        for c in range(3):
            img[:, :, c] = 0.55 + chroma[c] * ch[:, :, c]
        n = rng.normal(0, 1, (size, size))
        tex = n - gaussian_filter(n, 1.5)
        img += detail * (tex / tex.std())[:, :, None]
        images.append(np.clip(img, 0.05, 1.0) * scale)
    return images

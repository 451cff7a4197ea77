"""Full-image reconstruction by patch tiling, PSNR computation, quantile
reporting, and pattern visualization export.

PSNR uses peak 1.0 and clips reconstructions to [0, 1] first; identical
images report +inf.  Quantiles are nearest-rank.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import data as dp
from . import reconnet, sensor
from .patterns import CHANNEL_NAMES, HardPattern

# sRGB-ish render colors for the four channel classes
_RENDER = np.array([[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 255]], dtype=np.uint8)


class EvalError(ValueError):
    pass


@dataclass
class EvalReport:
    """Per-(pattern, noise level) patch PSNR lists with quantile summaries."""

    patch_size: int = 64
    psnrs: dict = field(default_factory=dict)  # (pattern_name, sigma) -> list of dB

    def add(self, pattern_name: str, sigma: float, values):
        self.psnrs[(pattern_name, float(sigma))] = list(values)

    def quantiles(self, pattern_name: str, sigma: float):
        """Nearest-rank 25/50/75% quantiles."""
        vals = sorted(self.psnrs[(pattern_name, float(sigma))])
        n = len(vals)
        pick = lambda q: vals[max(0, math.ceil(q * n) - 1)]
        return pick(0.25), pick(0.50), pick(0.75)

    def median(self, pattern_name: str, sigma: float) -> float:
        return self.quantiles(pattern_name, sigma)[1]

    def table(self) -> str:
        lines = [f"{'pattern':<12} {'sigma':>8} {'q25':>8} {'q50':>8} {'q75':>8} {'count':>6}"]
        for (name, sigma) in sorted(self.psnrs):
            q25, q50, q75 = self.quantiles(name, sigma)
            lines.append(f"{name:<12} {sigma:>8.4f} {q25:>8.2f} {q50:>8.2f} {q75:>8.2f} "
                         f"{len(self.psnrs[(name, sigma)]):>6}")
        return "\n".join(lines)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="ascii") as fh:
            writer = csv.writer(fh)
            writer.writerow(["pattern", "sigma", "q25", "q50", "q75", "count"])
            for (name, sigma) in sorted(self.psnrs):
                q25, q50, q75 = self.quantiles(name, sigma)
                writer.writerow([name, sigma, f"{q25:.4f}", f"{q50:.4f}", f"{q75:.4f}",
                                 len(self.psnrs[(name, sigma)])])


def psnr(ref: np.ndarray, recon: np.ndarray) -> float:
    """10 * log10(1 / mse) with recon clipped to [0, 1]; inf when mse is 0."""
    ref = np.asarray(ref, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if ref.shape != recon.shape:
        raise EvalError(f"shape mismatch: {ref.shape} vs {recon.shape}")
    diff = ref - np.clip(recon, 0.0, 1.0)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def reconstruct_image(s: np.ndarray, params: reconnet.NetParams,
                      tile_batch: int = 256) -> np.ndarray:
    """Reconstruct an H x W measurement image tile by tile.

    H and W must be multiples of the pattern period P.  Each P x P output
    tile is computed independently from its 3P x 3P context; border context
    comes from reflection padding.  Tiles abut with no blending.
    """
    s = np.asarray(s, dtype=np.float64)
    p = params.P
    h, w = s.shape
    if h % p or w % p:
        raise EvalError(f"image {h}x{w} is not a multiple of period {p}")
    padded = np.maximum(np.pad(s, p, mode="reflect"), dp.LOG_FLOOR)
    th, tw = h // p, w // p
    contexts = np.empty((th * tw, 3 * p, 3 * p))
    for i in range(th):
        for j in range(tw):
            contexts[i * tw + j] = padded[i * p:(i + 3) * p, j * p:(j + 3) * p]
    out = np.empty((h, w, 3))
    for lo in range(0, len(contexts), tile_batch):
        chunk = contexts[lo:lo + tile_batch]
        y = reconnet.forward(chunk, params).y_hat.data
        for n in range(len(chunk)):
            idx = lo + n
            i, j = divmod(idx, tw)
            out[i * p:(i + 1) * p, j * p:(j + 1) * p] = y[n]
    return out


def _patch_psnrs(ref: np.ndarray, recon: np.ndarray, patch_size: int):
    h, w = ref.shape[:2]
    vals = []
    for i in range(0, h - patch_size + 1, patch_size):
        for j in range(0, w - patch_size + 1, patch_size):
            vals.append(psnr(ref[i:i + patch_size, j:j + patch_size],
                             recon[i:i + patch_size, j:j + patch_size]))
    return vals


def evaluate(pattern: HardPattern, params_by_sigma, images, sigma_list, seed,
             patch_size: int = 64, pattern_name: str = "pattern",
             report: EvalReport | None = None) -> EvalReport:
    """PSNR over all non-overlapping ``patch_size`` patches of every image.

    ``params_by_sigma`` is either one NetParams shared across noise levels
    or a dict mapping sigma to NetParams.  Images are cropped to period
    multiples before measurement.
    """
    if not images:
        raise EvalError("empty image set")
    if report is None:
        report = EvalReport(patch_size=patch_size)
    p = pattern.period
    for sigma in sigma_list:
        params = params_by_sigma[sigma] if isinstance(params_by_sigma, dict) else params_by_sigma
        vals = []
        for idx, img in enumerate(images):
            h = (img.shape[0] // p) * p
            w = (img.shape[1] // p) * p
            ref = np.asarray(img, dtype=np.float64)[:h, :w]
            x = dp.add_noise(dp.build_channels(ref), sigma, seed=[seed, idx])
            sel = sensor.one_hot(pattern.tiled(h, w), 4)
            s = (sel * x).sum(axis=-1)
            recon = reconstruct_image(s, params)
            vals.extend(_patch_psnrs(ref, recon, patch_size))
        report.add(pattern_name, sigma, vals)
    return report


def evaluate_classical(pattern: HardPattern, images, sigma_list, seed,
                       patch_size: int = 64, pattern_name: str = "bilinear",
                       report: EvalReport | None = None) -> EvalReport:
    """Same protocol as ``evaluate`` but with the bilinear interpolation
    reference instead of a network."""
    from .patterns import bilinear_demosaick

    if not images:
        raise EvalError("empty image set")
    if report is None:
        report = EvalReport(patch_size=patch_size)
    p = pattern.period
    for sigma in sigma_list:
        vals = []
        for idx, img in enumerate(images):
            h = (img.shape[0] // p) * p
            w = (img.shape[1] // p) * p
            ref = np.asarray(img, dtype=np.float64)[:h, :w]
            x = dp.add_noise(dp.build_channels(ref), sigma, seed=[seed, idx])
            sel = sensor.one_hot(pattern.tiled(h, w), 4)
            s = (sel * x).sum(axis=-1)
            recon = bilinear_demosaick(s, pattern)
            vals.extend(_patch_psnrs(ref, recon, patch_size))
        report.add(pattern_name, sigma, vals)
    return report


def render_pattern(pattern: HardPattern, upscale: int = 1) -> np.ndarray:
    """8-bit RGB raster of the pattern (R/G/B in their colors, W white)."""
    if upscale < 1:
        raise EvalError("upscale must be >= 1")
    img = _RENDER[pattern.channels]
    return np.kron(img, np.ones((upscale, upscale, 1), dtype=np.uint8))


def export_pattern_image(pattern: HardPattern, path, upscale: int = 1) -> None:
    img = render_pattern(pattern, upscale)
    dp.write_ppm(path, img.astype(np.float64) / 255.0)


def classify_rendered(img: np.ndarray) -> np.ndarray:
    """Inverse of ``render_pattern`` for unit upscale: map colors back to indices."""
    img = np.asarray(img)
    dist = ((img[:, :, None, :].astype(np.int64) - _RENDER[None, None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(dist, axis=-1)

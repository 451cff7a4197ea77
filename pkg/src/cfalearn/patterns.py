"""Hard CFA pattern constructors, pattern file I/O, and a classical
bilinear-style demosaicking reference.

Channel indices: 0 = R, 1 = G, 2 = B, 3 = W (panchromatic).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CHANNEL_NAMES = ("R", "G", "B", "W")
_NAME_TO_INDEX = {n: i for i, n in enumerate(CHANNEL_NAMES)}


class PatternError(ValueError):
    pass


class PatternParseError(PatternError):
    """Malformed pattern file; carries the offending line number."""

    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class HardPattern:
    """P x P grid of channel indices, tiled periodically over the sensor."""

    period: int
    channels: np.ndarray  # P x P of int in {0..3}

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.int64)
        p = self.period
        if self.channels.shape != (p, p):
            raise PatternError(f"grid must be {p}x{p}, got {self.channels.shape}")
        if self.channels.min() < 0 or self.channels.max() >= len(CHANNEL_NAMES):
            raise PatternError("channel index out of range")

    def __eq__(self, other):
        return (isinstance(other, HardPattern) and self.period == other.period
                and np.array_equal(self.channels, other.channels))

    def census(self):
        """Counts of (R, G, B, W) sites in one period."""
        return tuple(int((self.channels == c).sum()) for c in range(4))

    def tiled(self, h: int, w: int) -> np.ndarray:
        p = self.period
        if h % p or w % p:
            raise PatternError(f"pattern period {p} does not tile {h}x{w}")
        return np.tile(self.channels, (h // p, w // p))


def bayer_pattern(period: int) -> HardPattern:
    """Tiling of the 2x2 unit [[G, R], [B, G]] to a P x P grid (P even)."""
    if period % 2:
        raise PatternError("Bayer pattern requires an even period")
    unit = np.array([[1, 0], [2, 1]])
    return HardPattern(period, np.tile(unit, (period // 2, period // 2)))


def cfz_pattern(period: int, rate: int) -> HardPattern:
    """Sparse-color pattern: panchromatic everywhere except a 2x2 Bayer
    block at the top-left of every rate x rate cell."""
    if rate < 2:
        raise PatternError("rate must be >= 2")
    if period % rate:
        raise PatternError(f"rate {rate} must divide period {period}")
    grid = np.full((period, period), 3, dtype=np.int64)
    bayer = np.array([[1, 0], [2, 1]])
    for i in range(0, period, rate):
        for j in range(0, period, rate):
            grid[i:i + 2, j:j + 2] = bayer
    return HardPattern(period, grid)


def write_pattern(pattern: HardPattern, path) -> None:
    lines = [f"CFA v1 P={pattern.period}"]
    for row in pattern.channels:
        lines.append(" ".join(CHANNEL_NAMES[c] for c in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_pattern(path) -> HardPattern:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise PatternParseError("empty file", 1)
    header = lines[0].split()
    if len(header) != 3 or header[0] != "CFA" or header[1] != "v1" or not header[2].startswith("P="):
        raise PatternParseError(f"bad header {lines[0]!r}", 1)
    try:
        period = int(header[2][2:])
    except ValueError:
        raise PatternParseError(f"bad period in header {lines[0]!r}", 1) from None
    if period < 1:
        raise PatternParseError("period must be positive", 1)
    if len(lines) < 1 + period:
        raise PatternParseError(f"expected {period} rows, found {len(lines) - 1}", len(lines))
    grid = np.empty((period, period), dtype=np.int64)
    for i in range(period):
        tokens = lines[1 + i].split()
        if len(tokens) != period:
            raise PatternParseError(f"expected {period} tokens, found {len(tokens)}", 2 + i)
        for j, tok in enumerate(tokens):
            if tok not in _NAME_TO_INDEX:
                raise PatternParseError(f"unknown channel {tok!r}", 2 + i)
            grid[i, j] = _NAME_TO_INDEX[tok]
    return HardPattern(period, grid)


def _interp_stencils(pattern: HardPattern, channel: int):
    """Per-residue interpolation stencils for one color channel.

    For each pixel class (i mod P, j mod P) that does not measure
    ``channel``, the stencil is the list of window offsets that do, with
    inverse-distance weights normalized to sum to 1.  Window radius is P
    (a (2P+1)^2 window).
    """
    p = pattern.period
    grid = pattern.channels
    if not (grid == channel).any():
        raise PatternError(f"channel {CHANNEL_NAMES[channel]} has no measurement sites")
    stencils = {}
    offs = range(-p, p + 1)
    for ri in range(p):
        for rj in range(p):
            if grid[ri, rj] == channel:
                stencils[(ri, rj)] = [((0, 0), 1.0)]
                continue
            entries = []
            for di in offs:
                for dj in offs:
                    if grid[(ri + di) % p, (rj + dj) % p] == channel:
                        entries.append(((di, dj), 1.0 / np.hypot(di, dj)))
            total = sum(w for _, w in entries)
            stencils[(ri, rj)] = [(o, w / total) for o, w in entries]
    return stencils


def bilinear_demosaick(s: np.ndarray, pattern: HardPattern) -> np.ndarray:
    """Classical reference reconstruction by distance-weighted interpolation.

    Each output color channel keeps the measured value at its own sites and
    fills every other pixel with a normalized inverse-distance average of
    that channel's sites inside a (2P+1)^2 window.  Panchromatic sites are
    holes for all three colors.  Borders are handled by reflecting the
    measurement image.
    """
    s = np.asarray(s, dtype=np.float64)
    h, w = s.shape
    p = pattern.period
    if h % p or w % p:
        raise PatternError(f"pattern period {p} does not tile {h}x{w}")
    padded = np.pad(s, p, mode="reflect")
    out = np.zeros((h, w, 3))
    for c in range(3):
        stencils = _interp_stencils(pattern, c)
        for (ri, rj), entries in stencils.items():
            for (di, dj), weight in entries:
                src = padded[p + ri + di:p + ri + di + h - p + 1:p,
                             p + rj + dj:p + rj + dj + w - p + 1:p]
                out[ri::p, rj::p, c] += weight * src
    return out

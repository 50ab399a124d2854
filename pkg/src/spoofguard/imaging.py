"""Constellation histogram images.

A chunk of IQ samples is binned on a fixed P x Q grid over the I/Q plane.
Each bin count becomes a grayscale pixel, saturating at 255.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .iq import IqChunk

PIXEL_MAX = 255
DEFAULT_GRID_SIZE = 224
DEFAULT_RANGE = (-1.5, 1.5)


@dataclass(frozen=True)
class GridSpec:
    p: int = DEFAULT_GRID_SIZE
    q: int = DEFAULT_GRID_SIZE
    i_range: tuple[float, float] = DEFAULT_RANGE
    q_range: tuple[float, float] = DEFAULT_RANGE

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise ValueError(f"grid must have at least one bin per axis, got {self.p}x{self.q}")
        for name, (lo, hi) in (("i_range", self.i_range), ("q_range", self.q_range)):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"{name} must satisfy min < max, got [{lo}, {hi}]")
        object.__setattr__(self, "i_range", (float(self.i_range[0]), float(self.i_range[1])))
        object.__setattr__(self, "q_range", (float(self.q_range[0]), float(self.q_range[1])))

    @classmethod
    def square(cls, size: int, lo: float = DEFAULT_RANGE[0], hi: float = DEFAULT_RANGE[1]) -> "GridSpec":
        return cls(size, size, (lo, hi), (lo, hi))

    @property
    def size(self) -> int:
        return self.p * self.q

    @property
    def i_edges(self) -> np.ndarray:
        lo, hi = self.i_range
        return lo + np.arange(self.p + 1) * ((hi - lo) / self.p)

    @property
    def q_edges(self) -> np.ndarray:
        lo, hi = self.q_range
        return lo + np.arange(self.q + 1) * ((hi - lo) / self.q)

    def to_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "i_range": list(self.i_range), "q_range": list(self.q_range)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(int(d["p"]), int(d["q"]), tuple(d["i_range"]), tuple(d["q_range"]))


@dataclass(frozen=True)
class HistogramImage:
    pixels: np.ndarray  # uint8, shape (p, q); axis 0 is I, axis 1 is Q
    grid: GridSpec
    n_source: int
    n_out_of_range: int


def _bin_index(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Half-open bin index per value, last edge inclusive; -1 when outside."""
    n_bins = len(edges) - 1
    idx = np.searchsorted(edges, values, side="right") - 1
    idx[values == edges[-1]] = n_bins - 1
    idx[(idx < 0) | (idx >= n_bins) | ~np.isfinite(values)] = -1
    return idx


def bin_counts(samples: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, int]:
    """Untruncated ``(p, q)`` counts and the number of samples off the grid."""
    s = np.asarray(samples)
    ii = _bin_index(s.real.astype(np.float64), grid.i_edges)
    jj = _bin_index(s.imag.astype(np.float64), grid.q_edges)
    inside = (ii >= 0) & (jj >= 0)
    flat = ii[inside] * grid.q + jj[inside]
    counts = np.bincount(flat, minlength=grid.size).reshape(grid.p, grid.q)
    return counts, int(len(s) - np.count_nonzero(inside))


def make_histogram(c: IqChunk | np.ndarray, grid: GridSpec) -> HistogramImage:
    samples = c.samples if isinstance(c, IqChunk) else np.asarray(c)
    if len(samples) == 0:
        raise ValueError("cannot build a histogram from an empty chunk")
    counts, outside = bin_counts(samples, grid)
    pixels = np.minimum(counts, PIXEL_MAX).astype(np.uint8)
    return HistogramImage(pixels, grid, len(samples), outside)


def normalize_image(m: HistogramImage | np.ndarray) -> np.ndarray:
    """Row-major flattening of the pixels scaled into [0, 1]."""
    pixels = m.pixels if isinstance(m, HistogramImage) else np.asarray(m)
    return pixels.reshape(-1).astype(np.float64) / PIXEL_MAX


def images_to_matrix(images, grid: GridSpec) -> np.ndarray:
    """Stack chunks (or ready images) into an ``(n, p*q)`` float matrix."""
    rows = []
    for item in images:
        img = item if isinstance(item, HistogramImage) else make_histogram(item, grid)
        rows.append(normalize_image(img))
    if not rows:
        return np.empty((0, grid.size))
    return np.vstack(rows)


def pgm_bytes(m: HistogramImage) -> bytes:
    # image rows run along Q, columns along I
    header = f"P5\n{m.grid.p} {m.grid.q}\n{PIXEL_MAX}\n".encode("ascii")
    return header + np.ascontiguousarray(m.pixels.T, dtype=np.uint8).tobytes()


def export_pgm(m: HistogramImage, path) -> None:
    path = Path(path)
    try:
        path.write_bytes(pgm_bytes(m))
    except OSError as exc:
        raise OSError(f"cannot write image {path}: {exc}") from exc


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM written by :func:`export_pgm` back to a ``(p, q)`` matrix."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    payload = data[pos + 1:pos + 1 + width * height]
    if len(payload) != width * height:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).T.copy()

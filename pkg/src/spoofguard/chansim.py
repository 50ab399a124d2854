"""Synthetic DQPSK-like channel for desk-scale experiments.

Only the symbol geometry matters for the histogram images, so symbols are
drawn independently from the four QPSK points (no bit-level differential
encoding).  Each sample then goes through an optional Rician gain, a phase
jitter and per-axis additive Gaussian noise.  The spoofer is modeled as the
same constellation seen through a noisier channel; this is a stand-in, not
a physical LEO or aerial channel model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .iq import CaptureMeta, IqChunk, Label, meta_path, write_iq_file, write_meta

QPSK_ANGLES = np.deg2rad([45.0, 135.0, 225.0, 315.0])


@dataclass(frozen=True)
class ChannelParams:
    noise_sigma: float = 0.05
    amplitude: float = 1.0
    fading_k: float = math.inf
    phase_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be > 0")
        if self.phase_jitter < 0:
            raise ValueError("phase_jitter must be >= 0")
        if self.fading_k < 0:
            raise ValueError("fading_k must be >= 0")

    def to_dict(self) -> dict:
        return {
            "noise_sigma": self.noise_sigma,
            "amplitude": self.amplitude,
            "fading_k": "inf" if math.isinf(self.fading_k) else self.fading_k,
            "phase_jitter": self.phase_jitter,
            "seed": self.seed,
        }


def constellation(amplitude: float = 1.0) -> np.ndarray:
    return amplitude * np.exp(1j * QPSK_ANGLES)


def _samples(p: ChannelParams, n: int, rng: np.random.Generator) -> np.ndarray:
    symbols = constellation(p.amplitude)[rng.integers(0, 4, size=n)]
    if math.isfinite(p.fading_k):
        k = p.fading_k
        scatter = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
        symbols = symbols * (math.sqrt(k / (k + 1.0)) + math.sqrt(1.0 / (k + 1.0)) * scatter)
    if p.phase_jitter > 0:
        symbols = symbols * np.exp(1j * p.phase_jitter * rng.standard_normal(n))
    if p.noise_sigma > 0:
        symbols = symbols + p.noise_sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return symbols.astype(np.complex64)


def gen_dqpsk_chunk(p: ChannelParams, n: int, label: Label = Label.UNKNOWN, source_id: str = "") -> IqChunk:
    if n < 1:
        raise ValueError(f"chunk length must be >= 1, got {n}")
    return IqChunk(_samples(p, n, np.random.default_rng(p.seed)), label, source_id)


@dataclass
class Dataset:
    legit: list[IqChunk]
    spoof: list[IqChunk]
    legit_params: ChannelParams
    spoof_params: ChannelParams
    n: int
    seed: int


def chunk_seeds(seed: int, class_index: int, count: int) -> list[int]:
    """Independent per-chunk seeds derived from a master seed."""
    ss = np.random.SeedSequence([seed, class_index])
    return [int(child.generate_state(1, np.uint64)[0]) for child in ss.spawn(count)]


def gen_dataset(
    legit: ChannelParams,
    spoof: ChannelParams,
    chunks_per_class: int,
    n: int,
    seed: int | None = None,
) -> Dataset:
    """Generate two labeled chunk collections; ``seed`` defaults to ``legit.seed``."""
    if chunks_per_class < 1:
        raise ValueError("chunks_per_class must be >= 1")
    master = legit.seed if seed is None else seed
    out = {}
    for idx, (label, params) in enumerate(((Label.LEGITIMATE, legit), (Label.SPOOFED, spoof))):
        out[label] = [
            gen_dqpsk_chunk(replace(params, seed=s), n, label, f"{label.value}_{k:05d}")
            for k, s in enumerate(chunk_seeds(master, idx, chunks_per_class))
        ]
    return Dataset(out[Label.LEGITIMATE], out[Label.SPOOFED], legit, spoof, n, master)


def export_dataset(ds: Dataset, out_dir) -> list[Path]:
    """Write one ``.iq`` + ``.meta`` pair per chunk; returns the ``.iq`` paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in ds.legit + ds.spoof:
        path = out_dir / f"{c.source_id}.iq"
        write_iq_file(path, c.samples)
        write_meta(meta_path(path), CaptureMeta(label=c.label, source=c.source_id))
        paths.append(path)
    return paths


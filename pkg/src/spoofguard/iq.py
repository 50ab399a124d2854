"""Raw IQ capture handling: parsing, metadata sidecars, chunking and SNR.

Captures are stored as interleaved little-endian float32 ``I, Q`` pairs
(``.iq``), optionally accompanied by a ``.meta`` sidecar of ``key=value``
lines.  In memory a sequence of samples is a 1-D ``complex64`` array, which
round-trips to the file format bit-exactly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SNR_CLAMP_DB = 120.0
POWER_FLOOR = 1e-12


class IqFormatError(ValueError):
    """Raised for malformed or non-finite capture data."""


class IqFileFormat(enum.Enum):
    CF32_LE = "cf32_le"

    @property
    def record_size(self) -> int:
        return 8

    @property
    def dtype(self) -> np.dtype:
        return np.dtype("<f4")


class Label(str, enum.Enum):
    LEGITIMATE = "legitimate"
    SPOOFED = "spoofed"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class IqChunk:
    samples: np.ndarray  # complex64, shape (n,)
    label: Label = Label.UNKNOWN
    source_id: str = ""

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def i(self) -> np.ndarray:
        return self.samples.real

    @property
    def q(self) -> np.ndarray:
        return self.samples.imag


@dataclass
class CaptureMeta:
    label: Label = Label.UNKNOWN
    source: str = ""
    sample_rate: float | None = None
    boundaries: list[int] = field(default_factory=list)
    extra: dict[str, str] = field(default_factory=dict)


def as_samples(values) -> np.ndarray:
    """Coerce complex values or an ``(n, 2)`` array of ``(I, Q)`` pairs to complex64."""
    arr = np.asarray(values)
    if arr.ndim == 2 and arr.shape[1] == 2 and not np.iscomplexobj(arr):
        return _pack(arr[:, 0], arr[:, 1])
    return np.asarray(arr, dtype=np.complex64).reshape(-1)


def _pack(i: np.ndarray, q: np.ndarray) -> np.ndarray:
    # assigning parts keeps signed zeros, unlike i + 1j * q
    out = np.empty(len(i), dtype=np.complex64)
    out.real = i
    out.imag = q
    return out


def _check_finite(samples: np.ndarray) -> None:
    bad = ~(np.isfinite(samples.real) & np.isfinite(samples.imag))
    if bad.any():
        idx = np.flatnonzero(bad)
        shown = ", ".join(str(k) for k in idx[:10])
        more = f" (+{len(idx) - 10} more)" if len(idx) > 10 else ""
        raise IqFormatError(f"non-finite sample value at index {shown}{more}")


def decode_iq_bytes(data: bytes, fmt: IqFileFormat = IqFileFormat.CF32_LE) -> np.ndarray:
    rec = fmt.record_size
    if len(data) % rec:
        offset = (len(data) // rec) * rec
        raise IqFormatError(f"truncated record at offset {offset}")
    flat = np.frombuffer(data, dtype=fmt.dtype)
    samples = _pack(flat[0::2], flat[1::2])
    _check_finite(samples)
    return samples


def encode_iq_bytes(samples, fmt: IqFileFormat = IqFileFormat.CF32_LE) -> bytes:
    s = as_samples(samples)
    flat = np.empty(2 * len(s), dtype=fmt.dtype)
    flat[0::2] = s.real
    flat[1::2] = s.imag
    return flat.tobytes()


def parse_iq_file(path, fmt: IqFileFormat = IqFileFormat.CF32_LE) -> np.ndarray:
    """Read a raw capture file into a complex64 sample array, in file order."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read capture {path}: {exc}") from exc
    try:
        return decode_iq_bytes(data, fmt)
    except IqFormatError as exc:
        raise IqFormatError(f"{path}: {exc}") from None


def write_iq_file(path, samples, fmt: IqFileFormat = IqFileFormat.CF32_LE) -> None:
    Path(path).write_bytes(encode_iq_bytes(samples, fmt))


def meta_path(iq_path) -> Path:
    return Path(iq_path).with_suffix(".meta")


def read_meta(path) -> CaptureMeta:
    meta = CaptureMeta()
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise IqFormatError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "label":
            try:
                meta.label = Label(value)
            except ValueError:
                raise IqFormatError(f"{path}:{lineno}: unknown label {value!r}") from None
        elif key == "source":
            meta.source = value
        elif key == "sample_rate":
            meta.sample_rate = float(value)
        elif key == "boundaries":
            meta.boundaries = [int(v) for v in value.split(",") if v.strip()]
        else:
            meta.extra[key] = value
    return meta


def write_meta(path, meta: CaptureMeta) -> None:
    lines = [f"label={meta.label.value}", f"source={meta.source}"]
    if meta.sample_rate is not None:
        lines.append(f"sample_rate={meta.sample_rate!r}")
    if meta.boundaries:
        lines.append("boundaries=" + ",".join(str(b) for b in meta.boundaries))
    lines.extend(f"{k}={v}" for k, v in meta.extra.items())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_capture(path, fmt: IqFileFormat = IqFileFormat.CF32_LE) -> tuple[np.ndarray, CaptureMeta]:
    """Parse a capture and its sidecar, if one exists next to it."""
    samples = parse_iq_file(path, fmt)
    mp = meta_path(path)
    meta = read_meta(mp) if mp.exists() else CaptureMeta(source=Path(path).stem)
    if not meta.source:
        meta.source = Path(path).stem
    return samples, meta


def chunk(
    samples,
    n: int,
    label: Label = Label.UNKNOWN,
    source_id: str = "",
    boundaries: Sequence[int] | None = None,
) -> list[IqChunk]:
    """Split samples into consecutive non-overlapping chunks of exactly ``n``.

    The trailing remainder is dropped.  When message ``boundaries`` (sample
    indices where a new message starts) are given, each message is chunked
    on its own so no chunk straddles two messages.
    """
    if n < 1:
        raise ValueError(f"chunk size must be >= 1, got {n}")
    s = as_samples(samples)
    if boundaries:
        cuts = sorted({b for b in boundaries if 0 < b < len(s)})
        out: list[IqChunk] = []
        for seg in np.split(s, cuts):
            out.extend(chunk(seg, n, label, source_id))
        return out
    count = len(s) // n
    return [
        IqChunk(s[k * n:(k + 1) * n], label=label, source_id=source_id)
        for k in range(count)
    ]


def snr_db(samples) -> np.ndarray:
    """Per-sample SNR in dB, taking ``(1, 0)`` as the reference symbol.

    Both power terms are floored at ``POWER_FLOOR`` and the result is clamped
    to +-``SNR_CLAMP_DB`` so samples at the origin or on the reference point
    give a finite value.
    """
    s = np.asarray(samples)
    i = np.real(s).astype(np.float64)
    q = np.imag(s).astype(np.float64)
    signal = np.maximum(i * i + q * q, POWER_FLOOR)
    noise = np.maximum((i - 1.0) ** 2 + q * q, POWER_FLOOR)
    return np.clip(10.0 * np.log10(signal / noise), -SNR_CLAMP_DB, SNR_CLAMP_DB)


def snr_of_sample(i: float, q: float) -> float:
    return float(snr_db(np.complex128(complex(i, q))))


def chunk_snr(c: IqChunk | np.ndarray) -> float:
    """Mean of the per-sample dB values over a chunk."""
    samples = c.samples if isinstance(c, IqChunk) else np.asarray(c)
    if len(samples) == 0:
        raise ValueError("cannot compute SNR of an empty chunk")
    return float(np.mean(snr_db(samples)))


def load_chunks(data_dir, n: int) -> dict[Label, list[IqChunk]]:
    """Read every ``.iq`` capture in ``data_dir`` (sorted by name), chunked and grouped by label."""
    out: dict[Label, list[IqChunk]] = {label: [] for label in Label}
    for path in sorted(Path(data_dir).glob("*.iq")):
        samples, meta = load_capture(path)
        out[meta.label].extend(chunk(samples, n, meta.label, meta.source, meta.boundaries))
    return out

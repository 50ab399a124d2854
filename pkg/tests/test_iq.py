import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spoofguard.iq import (
    CaptureMeta,
    IqFormatError,
    Label,
    chunk,
    chunk_snr,
    decode_iq_bytes,
    encode_iq_bytes,
    load_capture,
    load_chunks,
    meta_path,
    parse_iq_file,
    read_meta,
    snr_db,
    snr_of_sample,
    write_iq_file,
    write_meta,
)

finite32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


class TestParse:
    def test_two_records(self, tmp_path):
        path = tmp_path / "a.iq"
        path.write_bytes(struct.pack("<4f", 1.0, 0.0, 0.0, 1.0))
        assert path.stat().st_size == 16
        s = parse_iq_file(path)
        assert s.dtype == np.complex64
        assert s.tolist() == [1 + 0j, 1j]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.iq"
        path.write_bytes(b"")
        assert len(parse_iq_file(path)) == 0

    def test_truncated_record_reports_offset(self, tmp_path):
        path = tmp_path / "bad.iq"
        path.write_bytes(b"\x00" * 17)
        with pytest.raises(IqFormatError, match="truncated record at offset 16"):
            parse_iq_file(path)

    def test_non_finite_rejected_with_index(self):
        data = struct.pack("<6f", 0.0, 0.0, 1.0, float("nan"), 2.0, 2.0)
        with pytest.raises(IqFormatError, match="index 1"):
            decode_iq_bytes(data)

    def test_inf_rejected(self):
        with pytest.raises(IqFormatError):
            decode_iq_bytes(struct.pack("<2f", float("inf"), 0.0))

    @given(st.lists(st.tuples(finite32, finite32), max_size=50))
    def test_roundtrip_bytes(self, pairs):
        data = struct.pack(f"<{2 * len(pairs)}f", *[v for p in pairs for v in p])
        assert encode_iq_bytes(decode_iq_bytes(data)) == data

    def test_file_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        s = (rng.normal(size=100) + 1j * rng.normal(size=100)).astype(np.complex64)
        write_iq_file(tmp_path / "x.iq", s)
        np.testing.assert_array_equal(parse_iq_file(tmp_path / "x.iq"), s)


class TestMeta:
    def test_roundtrip(self, tmp_path):
        meta = CaptureMeta(Label.SPOOFED, "drone-30m", 250000.0, [0, 500, 1200])
        write_meta(tmp_path / "c.meta", meta)
        back = read_meta(tmp_path / "c.meta")
        assert back.label is Label.SPOOFED
        assert back.source == "drone-30m"
        assert back.sample_rate == 250000.0
        assert back.boundaries == [0, 500, 1200]

    def test_unknown_label(self, tmp_path):
        (tmp_path / "c.meta").write_text("label=maybe\n")
        with pytest.raises(IqFormatError, match="unknown label"):
            read_meta(tmp_path / "c.meta")

    def test_capture_without_sidecar(self, tmp_path):
        write_iq_file(tmp_path / "cap.iq", np.zeros(4, np.complex64))
        _, meta = load_capture(tmp_path / "cap.iq")
        assert meta.label is Label.UNKNOWN
        assert meta.source == "cap"

    def test_load_chunks_groups_by_label(self, tmp_path):
        for name, label, n in (("a", Label.LEGITIMATE, 25), ("b", Label.SPOOFED, 10)):
            write_iq_file(tmp_path / f"{name}.iq", np.ones(n, np.complex64))
            write_meta(meta_path(tmp_path / f"{name}.iq"), CaptureMeta(label, name))
        out = load_chunks(tmp_path, 10)
        assert len(out[Label.LEGITIMATE]) == 2
        assert len(out[Label.SPOOFED]) == 1
        assert out[Label.UNKNOWN] == []


class TestChunk:
    @pytest.mark.parametrize("length, expected", [(2500, 2), (1000, 1), (999, 0)])
    def test_counts(self, length, expected):
        chunks = chunk(np.zeros(length, np.complex64), 1000)
        assert len(chunks) == expected
        assert all(len(c) == 1000 for c in chunks)

    def test_zero_size(self):
        with pytest.raises(ValueError):
            chunk(np.zeros(10, np.complex64), 0)

    @given(st.integers(0, 300), st.integers(1, 40))
    def test_partition_prefix(self, length, n):
        s = np.arange(length, dtype=np.float32).astype(np.complex64)
        chunks = chunk(s, n)
        joined = np.concatenate([c.samples for c in chunks]) if chunks else np.empty(0, np.complex64)
        np.testing.assert_array_equal(joined, s[: (length // n) * n])

    def test_boundaries_prevent_straddling(self):
        s = np.arange(25).astype(np.complex64)
        chunks = chunk(s, 5, boundaries=[0, 12])
        # message 0 is 12 samples -> 2 chunks; message 1 is 13 samples -> 2 chunks
        assert [c.samples[0].real for c in chunks] == [0, 5, 12, 17]

    def test_label_and_source_propagate(self):
        (c,) = chunk(np.zeros(3, np.complex64), 3, Label.SPOOFED, "cap7")
        assert c.label is Label.SPOOFED and c.source_id == "cap7"


class TestSnr:
    def test_equidistant_point(self):
        assert snr_of_sample(0.5, 0.0) == pytest.approx(0.0, abs=1e-12)

    def test_two_zero(self):
        assert snr_of_sample(2.0, 0.0) == pytest.approx(10 * math.log10(4.0), rel=1e-12)
        assert snr_of_sample(2.0, 0.0) == pytest.approx(6.0206, abs=1e-4)

    def test_reference_point_clamps(self):
        assert snr_of_sample(1.0, 0.0) == 120.0

    def test_origin_clamps_low(self):
        assert snr_of_sample(0.0, 0.0) == -120.0

    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_q_reflection(self, i, q):
        assert snr_of_sample(i, q) == snr_of_sample(i, -q)

    @given(st.floats(-10, 10))
    def test_bisector_is_zero_db(self, q):
        assert snr_of_sample(0.5, q) == pytest.approx(0.0, abs=1e-9)

    def test_chunk_means(self):
        assert chunk_snr(np.full(10, 0.5 + 0j)) == pytest.approx(0.0, abs=1e-12)
        assert chunk_snr(np.array([2 + 0j, 2 + 0j])) == pytest.approx(6.0206, abs=1e-4)
        assert chunk_snr(np.array([0.5 + 0j, 2 + 0j])) == pytest.approx(3.0103, abs=1e-4)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(0)
        s = rng.normal(size=20) + 1j * rng.normal(size=20)
        np.testing.assert_allclose(snr_db(s), [snr_of_sample(v.real, v.imag) for v in s])

    def test_empty_chunk(self):
        with pytest.raises(ValueError):
            chunk_snr(np.empty(0, np.complex64))

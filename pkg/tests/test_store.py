"""Feature-store tests against hand-packed golden bytes and error paths."""
import struct

import numpy as np
import pytest

from oblique_fewshot import errors
from oblique_fewshot.store import (
    FeatureStore,
    read_store,
    synth_store,
    validate_store,
    write_store,
)


def golden_pooled_bytes():
    """Byte-for-byte expected encoding of a tiny pre-pooled store, assembled
    by hand from the documented layout."""
    rec_a = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], dtype="<f4")  # n=3, p=2
    rec_b = np.array([[-1.0, 0.5], [0.0, 7.0], [2.5, -3.0]], dtype="<f4")
    buf = b"OMFS"
    buf += struct.pack("<7I", 1, 1 | 2, 3, 0, 0, 2, 2)  # version, pooled|split, n,h,w,p,c
    buf += struct.pack("<H", 4) + b"newt"
    buf += struct.pack("<I", 1)
    buf += struct.pack("<6f", 1.0, 3.0, 5.0, 2.0, 4.0, 6.0)  # column-major payload
    buf += struct.pack("<H", 3) + b"eft"
    buf += struct.pack("<I", 1)
    buf += struct.pack("<6f", -1.0, 0.0, 2.5, 0.5, 7.0, -3.0)
    store = FeatureStore(
        n=3, h=0, w=0, p=2, pooled=True, split=True,
        classes=["newt", "eft"], records=[[rec_a], [rec_b]],
    )
    return buf, store


def golden_raw_bytes():
    rec = np.arange(12, dtype="<f4").reshape(2, 3, 2)  # n=2, h=3, w=2
    buf = b"OMFS"
    buf += struct.pack("<7I", 1, 0, 2, 3, 2, 0, 1)
    buf += struct.pack("<H", 2) + b"ok"
    buf += struct.pack("<I", 2)
    buf += rec.tobytes() + rec.tobytes()  # channel-major C order
    store = FeatureStore(
        n=2, h=3, w=2, p=0, pooled=False, split=False,
        classes=["ok"], records=[[rec, rec]],
    )
    return buf, store


class TestGoldenBytes:
    def test_pooled_write_matches_hand_packed(self, tmp_path):
        buf, store = golden_pooled_bytes()
        path = tmp_path / "pooled.omfs"
        write_store(store, str(path))
        assert path.read_bytes() == buf

    def test_pooled_read_matches_hand_packed(self, tmp_path):
        buf, store = golden_pooled_bytes()
        path = tmp_path / "pooled.omfs"
        path.write_bytes(buf)
        got = read_store(str(path))
        assert got.classes == ["newt", "eft"]
        assert (got.n, got.h, got.w, got.p) == (3, 0, 0, 2)
        assert got.pooled and got.split
        assert np.array_equal(got.records[0][0], store.records[0][0])
        assert np.array_equal(got.records[1][0], store.records[1][0])

    def test_raw_roundtrip_matches_hand_packed(self, tmp_path):
        buf, store = golden_raw_bytes()
        path = tmp_path / "raw.omfs"
        write_store(store, str(path))
        assert path.read_bytes() == buf
        got = read_store(str(path))
        assert not got.pooled and not got.split
        assert got.record_shape() == (2, 3, 2)
        assert np.array_equal(got.records[0][1], store.records[0][1])

    def test_reread_write_is_byte_identical(self, tmp_path):
        store = synth_store(3, 5, 4, 2, separation=2.0, shift=0.5, seed=7)
        first = tmp_path / "a.omfs"
        second = tmp_path / "b.omfs"
        write_store(store, str(first))
        write_store(read_store(str(first)), str(second))
        assert first.read_bytes() == second.read_bytes()


class TestFormatErrors:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.omfs"
        path.write_bytes(b"NOPE" + bytes(28))
        with pytest.raises(errors.StoreFormatError, match="bad magic"):
            read_store(str(path))

    def test_truncated_header(self, tmp_path):
        buf, _ = golden_pooled_bytes()
        path = tmp_path / "short.omfs"
        path.write_bytes(buf[:10])
        with pytest.raises(errors.StoreFormatError, match="unexpected end of file"):
            read_store(str(path))

    def test_truncated_record(self, tmp_path):
        buf, _ = golden_pooled_bytes()
        path = tmp_path / "short.omfs"
        path.write_bytes(buf[:-4])
        with pytest.raises(errors.StoreFormatError, match="unexpected end of file"):
            read_store(str(path))

    def test_trailing_bytes(self, tmp_path):
        buf, _ = golden_pooled_bytes()
        path = tmp_path / "long.omfs"
        path.write_bytes(buf + b"\x00")
        with pytest.raises(errors.StoreFormatError, match="trailing bytes"):
            read_store(str(path))

    def test_unsupported_version(self, tmp_path):
        buf, _ = golden_pooled_bytes()
        path = tmp_path / "v9.omfs"
        path.write_bytes(buf[:4] + struct.pack("<I", 9) + buf[8:])
        with pytest.raises(errors.StoreFormatError, match="unsupported version"):
            read_store(str(path))

    def test_unknown_flag_bits(self, tmp_path):
        buf, _ = golden_pooled_bytes()
        path = tmp_path / "flags.omfs"
        path.write_bytes(buf[:8] + struct.pack("<I", 8 | 1) + buf[12:])
        with pytest.raises(errors.StoreFormatError, match="unknown flag bits"):
            read_store(str(path))

    def test_duplicate_class_names(self, tmp_path):
        rec = np.ones((2, 1), dtype="<f4")
        store = FeatureStore(
            n=2, h=0, w=0, p=1, pooled=True, split=False,
            classes=["same", "same"], records=[[rec], [rec]],
        )
        path = tmp_path / "dup.omfs"
        write_store(store, str(path))
        with pytest.raises(errors.StoreFormatError, match="duplicate class name"):
            read_store(str(path))

    def test_pooled_dims_enforced(self, tmp_path):
        buf, _ = golden_pooled_bytes()
        # corrupt h (third u32 after version+flags) to a nonzero value
        path = tmp_path / "dims.omfs"
        path.write_bytes(buf[:16] + struct.pack("<I", 5) + buf[20:])
        with pytest.raises(errors.StoreFormatError, match="h = w = 0"):
            read_store(str(path))

    def test_raw_dims_enforced(self, tmp_path):
        buf, _ = golden_raw_bytes()
        path = tmp_path / "dims.omfs"
        path.write_bytes(buf[:12] + struct.pack("<I", 0) + buf[16:])
        with pytest.raises(errors.StoreFormatError, match="channel count"):
            read_store(str(path))

    def test_zero_classes(self, tmp_path):
        path = tmp_path / "empty.omfs"
        path.write_bytes(b"OMFS" + struct.pack("<7I", 1, 1, 2, 0, 0, 1, 0))
        with pytest.raises(errors.StoreFormatError, match="no classes"):
            read_store(str(path))

    def test_class_without_records(self, tmp_path):
        buf = b"OMFS" + struct.pack("<7I", 1, 1, 2, 0, 0, 1, 1)
        buf += struct.pack("<H", 1) + b"x" + struct.pack("<I", 0)
        path = tmp_path / "norecs.omfs"
        path.write_bytes(buf)
        with pytest.raises(errors.StoreFormatError, match="no records"):
            read_store(str(path))

    def test_invalid_utf8_name(self, tmp_path):
        buf = b"OMFS" + struct.pack("<7I", 1, 1, 2, 0, 0, 1, 1)
        buf += struct.pack("<H", 2) + b"\xff\xfe" + struct.pack("<I", 1)
        buf += struct.pack("<2f", 1.0, 1.0)
        path = tmp_path / "utf8.omfs"
        path.write_bytes(buf)
        with pytest.raises(errors.StoreFormatError, match="not valid UTF-8"):
            read_store(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(errors.StoreFormatError, match="cannot read store"):
            read_store(str(tmp_path / "absent.omfs"))

    def test_write_rejects_wrong_record_shape(self, tmp_path):
        store = FeatureStore(
            n=2, h=0, w=0, p=1, pooled=True, split=False,
            classes=["a"], records=[[np.ones((3, 1), dtype="<f4")]],
        )
        with pytest.raises(errors.StoreFormatError, match="does not match header"):
            write_store(store, str(tmp_path / "x.omfs"))


class TestValidate:
    def test_summary(self, tmp_path):
        store = synth_store(4, 6, 5, 3, separation=2.0, shift=0.0, seed=1)
        path = tmp_path / "s.omfs"
        write_store(store, str(path))
        summary = validate_store(str(path))
        assert summary["n"] == 5 and summary["p"] == 3
        assert summary["pooled"] and summary["split"]
        assert summary["classes"] == 4 and summary["records"] == 24
        assert summary["sampled_records_checked"] >= 4

    def test_detects_nonfinite(self, tmp_path):
        store = synth_store(1, 2, 2, 1, separation=2.0, shift=0.0, seed=2)
        store.records[0][0][0, 0] = np.nan
        path = tmp_path / "nan.omfs"
        write_store(store, str(path))
        with pytest.raises(errors.StoreFormatError, match="non-finite"):
            validate_store(str(path))


class TestSynth:
    def test_deterministic(self):
        a = synth_store(3, 4, 6, 2, separation=1.5, shift=0.3, seed=9)
        b = synth_store(3, 4, 6, 2, separation=1.5, shift=0.3, seed=9)
        for ra, rb in zip(a.records, b.records):
            for x, y in zip(ra, rb):
                assert np.array_equal(x, y)
        c = synth_store(3, 4, 6, 2, separation=1.5, shift=0.3, seed=10)
        assert not np.array_equal(a.records[0][0], c.records[0][0])

    def test_layout_and_names(self):
        store = synth_store(3, 5, 4, 2, separation=2.0, shift=0.0, seed=0)
        assert store.pooled and store.split
        assert store.classes == ["class00", "class01", "class02"]
        assert all(len(r) == 5 for r in store.records)
        assert all(rec.shape == (4, 2) for recs in store.records for rec in recs)
        # odd record counts put the extra sample in the support pool
        assert store.support_pool_size(0) == 3

    def test_non_negative_float32(self):
        store = synth_store(2, 3, 4, 2, separation=1.0, shift=2.0, seed=3)
        for recs in store.records:
            for rec in recs:
                assert rec.dtype == np.float32
                assert rec.min() >= 0.0

    def test_rejects_bad_parameters(self):
        with pytest.raises(errors.OutOfRange):
            synth_store(0, 4, 4, 2, separation=1.0, shift=0.0, seed=0)
        with pytest.raises(errors.OutOfRange):
            synth_store(2, 4, 4, 2, separation=0.0, shift=0.0, seed=0)
        with pytest.raises(errors.OutOfRange):
            synth_store(2, 4, 4, 2, separation=1.0, shift=-0.1, seed=0)

    def test_shift_separates_pools(self):
        # a large shift moves query records away from the support cluster
        store = synth_store(1, 40, 8, 2, separation=20.0, shift=5.0, seed=4)
        sup = np.stack(store.records[0][:20]).reshape(20, -1)
        qry = np.stack(store.records[0][20:]).reshape(20, -1)
        gap = np.linalg.norm(sup.mean(axis=0) - qry.mean(axis=0))
        spread = np.linalg.norm(sup - sup.mean(axis=0, keepdims=True), axis=1).mean()
        assert gap > spread

import hashlib
from pathlib import Path

import numpy as np
import pytest

from dasguard.trace_io import (
    SAMPLES_PER_ZONE,
    BadMagicError,
    DatasetManifest,
    ManifestEntry,
    SampleRecord,
    ThreatClass,
    TraceFormatError,
    TruncatedFileError,
    UnsupportedVersionError,
    ZoneTrace,
    load_records,
    read_manifest,
    read_trace_file,
    split_dataset,
    write_manifest,
    write_trace_file,
)
from conftest import make_record

GOLDEN = Path(__file__).parent / "data" / "golden.dast"


def test_zero_record_payload_is_zero_bytes(tmp_path):
    traces = tuple(
        ZoneTrace(z, np.zeros(SAMPLES_PER_ZONE, dtype=np.float32)) for z in (4, 5, 6)
    )
    rec = SampleRecord(5, traces, ThreatClass.NO_THREAT, 40.0)
    path = tmp_path / "zero.dast"
    write_trace_file([rec], path)
    raw = path.read_bytes()
    header = 4 + 2 + 4
    rec_header = 4 + 4 + 1
    assert len(raw) == header + rec_header + 3 * SAMPLES_PER_ZONE * 4
    assert raw[:4] == b"DAST"
    payload = raw[header + rec_header :]
    assert payload == b"\x00" * len(payload)


def test_round_trip_identity(tmp_path):
    records = [make_record(seed=i, label=ThreatClass(i % 3), radial=3.0 * i + 1) for i in range(4)]
    path = tmp_path / "t.dast"
    write_trace_file(records, path)
    loaded = read_trace_file(path)
    assert len(loaded) == len(records)
    for orig, back in zip(records, loaded):
        assert back.center_zone == orig.center_zone
        assert back.label == orig.label
        assert back.radial_distance_m == pytest.approx(orig.radial_distance_m, rel=1e-6)
        for t_orig, t_back in zip(orig.traces, back.traces):
            assert t_back.zone_index == t_orig.zone_index
            assert np.array_equal(t_back.samples, t_orig.samples)


def test_round_trip_random_records_property(tmp_path):
    # bit-exactness holds for arbitrary float32 payloads, including extremes
    rng = np.random.default_rng(7)
    for trial in range(10):
        scale = float(10.0 ** rng.integers(-6, 6))
        records = [make_record(seed=100 + trial, scale=scale)]
        path = tmp_path / f"p{trial}.dast"
        write_trace_file(records, path)
        loaded = read_trace_file(path)
        for t_orig, t_back in zip(records[0].traces, loaded[0].traces):
            assert np.array_equal(t_back.samples, t_orig.samples)


def test_write_rejects_short_trace(tmp_path):
    bad = make_record()
    shorted = ZoneTrace(4, bad.traces[0].samples[:-1])
    rec = SampleRecord(5, (shorted, bad.traces[1], bad.traces[2]), bad.label, 1.0)
    path = tmp_path / "bad.dast"
    with pytest.raises(ValueError):
        write_trace_file([rec], path)
    assert not path.exists()


def test_write_rejects_nonfinite(tmp_path):
    rec = make_record()
    rec.traces[1].samples[10] = np.nan
    with pytest.raises(ValueError):
        write_trace_file([rec], tmp_path / "nan.dast")


def test_bad_magic(tmp_path):
    path = tmp_path / "x.dast"
    write_trace_file([make_record()], path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        read_trace_file(path)


def test_truncated(tmp_path):
    path = tmp_path / "x.dast"
    write_trace_file([make_record()], path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(TruncatedFileError):
        read_trace_file(path)


def test_unknown_version(tmp_path):
    path = tmp_path / "x.dast"
    write_trace_file([make_record()], path)
    raw = bytearray(path.read_bytes())
    raw[4:6] = (99).to_bytes(2, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedVersionError):
        read_trace_file(path)


def _manifest(counts, seed=0):
    entries = []
    for label, n in counts.items():
        for i in range(n):
            entries.append(ManifestEntry("f.dast", i, label, 5.0))
    return DatasetManifest(records=entries, split_seed=seed)


def test_split_1000_per_class_gives_800_200():
    manifest = _manifest({c: 1000 for c in ThreatClass})
    train, test = split_dataset(manifest, seed=1)
    for c in ThreatClass:
        assert sum(1 for e in train if e.label == c) == 800
        assert sum(1 for e in test if e.label == c) == 200
    assert len(train) + len(test) == 3000


def test_split_deterministic():
    manifest = _manifest({c: 50 for c in ThreatClass})
    a = split_dataset(manifest, seed=9)
    b = split_dataset(manifest, seed=9)
    assert [(e.trace_file, e.record_index, e.label) for e in a[0]] == [
        (e.trace_file, e.record_index, e.label) for e in b[0]
    ]


def test_split_smallest_legal_class():
    manifest = _manifest({ThreatClass.ALARM: 5, ThreatClass.TRACKING: 10, ThreatClass.NO_THREAT: 10})
    train, test = split_dataset(manifest, seed=2)
    assert sum(1 for e in train if e.label == ThreatClass.ALARM) == 4
    assert sum(1 for e in test if e.label == ThreatClass.ALARM) == 1


def test_split_rejects_tiny_class():
    manifest = _manifest({ThreatClass.ALARM: 4, ThreatClass.TRACKING: 10, ThreatClass.NO_THREAT: 10})
    with pytest.raises(ValueError):
        split_dataset(manifest, seed=0)


def test_split_partition_no_overlap():
    manifest = _manifest({c: 23 for c in ThreatClass})
    train, test = split_dataset(manifest, seed=3)
    train_ids = {(e.label, e.record_index) for e in train}
    test_ids = {(e.label, e.record_index) for e in test}
    assert not train_ids & test_ids
    assert len(train_ids) + len(test_ids) == len(manifest.records)
    # per-class counts stay within one record of 4:1
    for c in ThreatClass:
        n_train = sum(1 for e in train if e.label == c)
        n_test = sum(1 for e in test if e.label == c)
        assert abs(n_train - 4 / 5 * 23) <= 1
        assert n_train + n_test == 23


def test_manifest_round_trip(tmp_path):
    manifest = _manifest({ThreatClass.ALARM: 2, ThreatClass.TRACKING: 2, ThreatClass.NO_THREAT: 2})
    path = tmp_path / "manifest.txt"
    write_manifest(manifest, path)
    loaded = read_manifest(path)
    assert [(e.trace_file, e.record_index, e.label, e.radial_distance_m) for e in loaded.records] == [
        (e.trace_file, e.record_index, e.label, e.radial_distance_m) for e in manifest.records
    ]


def test_load_records_by_manifest(tmp_path):
    records = [make_record(seed=i, label=ThreatClass(i % 3)) for i in range(3)]
    write_trace_file(records, tmp_path / "f.dast")
    entries = [ManifestEntry("f.dast", i, r.label, r.radial_distance_m) for i, r in enumerate(records)]
    loaded = load_records(entries, base_dir=str(tmp_path))
    assert len(loaded) == 3
    assert all(np.array_equal(a.traces[1].samples, b.traces[1].samples) for a, b in zip(records, loaded))


def test_golden_file_parses_identically():
    # byte-order-pinned file committed to the repo; values frozen below
    records = read_trace_file(GOLDEN)
    assert len(records) == 1
    rec = records[0]
    assert rec.center_zone == 7
    assert rec.label == ThreatClass.TRACKING
    assert rec.radial_distance_m == pytest.approx(17.25, abs=1e-6)
    digest = hashlib.sha256(
        b"".join(t.samples.astype("<f4").tobytes() for t in rec.traces)
    ).hexdigest()
    assert digest == "3d7e26117c678fa8711f3cd6c3aed64de6eaa5ee5a9efe8962dd462559f6e349"

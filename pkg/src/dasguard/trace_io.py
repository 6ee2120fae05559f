"""Data model and binary I/O for multi-zone DAS recordings.

A recording window covers three adjacent 10 m defense zones around the zone
where an event was localized axially. Waveforms are stored as little-endian
32-bit floats so files round-trip bit-exactly across platforms.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

MAGIC = b"DAST"
FORMAT_VERSION = 1
SAMPLES_PER_ZONE = 20_000
SAMPLE_RATE_HZ = 2000.0
ZONES_PER_RECORD = 3

_HEADER = struct.Struct("<4sHI")          # magic, version, record count
_RECORD_HEADER = struct.Struct("<IfB")    # center zone, radial distance, label


class TraceFormatError(ValueError):
    """Base error for malformed trace files."""


class BadMagicError(TraceFormatError):
    pass


class UnsupportedVersionError(TraceFormatError):
    pass


class TruncatedFileError(TraceFormatError):
    pass


class ThreatClass(IntEnum):
    """Radial threat area; integer codes are fixed in the serialized form."""

    ALARM = 0
    TRACKING = 1
    NO_THREAT = 2

    @property
    def label(self) -> str:
        return _CLASS_NAMES[self]

    @classmethod
    def from_label(cls, name: str) -> "ThreatClass":
        try:
            return _CLASS_BY_NAME[name]
        except KeyError:
            raise ValueError(f"unknown threat class {name!r}") from None


_CLASS_NAMES = {
    ThreatClass.ALARM: "Alarm",
    ThreatClass.TRACKING: "Tracking",
    ThreatClass.NO_THREAT: "NoThreat",
}
_CLASS_BY_NAME = {v: k for k, v in _CLASS_NAMES.items()}


@dataclass
class ZoneTrace:
    """One defense zone's waveform window (float32 strain-rate proxy)."""

    zone_index: int
    samples: np.ndarray
    sample_rate_hz: float = SAMPLE_RATE_HZ

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)

    def validate(self) -> None:
        if self.zone_index < 0:
            raise ValueError(f"zone_index must be >= 0, got {self.zone_index}")
        if self.sample_rate_hz != SAMPLE_RATE_HZ:
            raise ValueError(
                f"sample_rate_hz must be {SAMPLE_RATE_HZ}, got {self.sample_rate_hz}"
            )
        if self.samples.ndim != 1 or self.samples.shape[0] != SAMPLES_PER_ZONE:
            raise ValueError(
                f"zone {self.zone_index}: expected {SAMPLES_PER_ZONE} samples, "
                f"got shape {self.samples.shape}"
            )
        if not np.all(np.isfinite(self.samples)):
            raise ValueError(f"zone {self.zone_index}: non-finite samples")


@dataclass
class SampleRecord:
    """Three adjacent zone traces around the event's center zone, plus label."""

    center_zone: int
    traces: tuple
    label: ThreatClass
    radial_distance_m: float

    def validate(self) -> None:
        if len(self.traces) != ZONES_PER_RECORD:
            raise ValueError(f"expected {ZONES_PER_RECORD} traces, got {len(self.traces)}")
        if self.center_zone < 1:
            raise ValueError("center_zone must be >= 1 so the lower neighbor exists")
        expected = (self.center_zone - 1, self.center_zone, self.center_zone + 1)
        got = tuple(t.zone_index for t in self.traces)
        if got != expected:
            raise ValueError(f"traces must cover zones {expected} in order, got {got}")
        for t in self.traces:
            t.validate()
        if not (np.isfinite(self.radial_distance_m) and self.radial_distance_m >= 0):
            raise ValueError(f"radial_distance_m must be >= 0, got {self.radial_distance_m}")

    @property
    def center_trace(self) -> ZoneTrace:
        return self.traces[1]


def write_trace_file(records, path) -> None:
    """Serialize records; rejects invalid records before touching the file."""
    records = list(records)
    for rec in records:
        rec.validate()
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(records)))
            for rec in records:
                fh.write(
                    _RECORD_HEADER.pack(
                        rec.center_zone, rec.radial_distance_m, int(rec.label)
                    )
                )
                for trace in rec.traces:
                    fh.write(trace.samples.astype("<f4", copy=False).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write trace file {path}: {exc}") from exc


def read_trace_file(path):
    """Parse a trace file, validating structure and record invariants."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read trace file {path}: {exc}") from exc

    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than header")
    magic, version, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")

    offset = _HEADER.size
    payload = SAMPLES_PER_ZONE * 4
    records = []
    for i in range(count):
        need = _RECORD_HEADER.size + ZONES_PER_RECORD * payload
        if offset + need > len(raw):
            raise TruncatedFileError(f"{path}: truncated in record {i}")
        center, radial, label_code = _RECORD_HEADER.unpack_from(raw, offset)
        offset += _RECORD_HEADER.size
        try:
            label = ThreatClass(label_code)
        except ValueError:
            raise TraceFormatError(f"{path}: record {i} has label code {label_code}") from None
        traces = []
        for z in range(ZONES_PER_RECORD):
            samples = np.frombuffer(raw, dtype="<f4", count=SAMPLES_PER_ZONE, offset=offset)
            offset += payload
            traces.append(ZoneTrace(center - 1 + z, samples.copy()))
        rec = SampleRecord(center, tuple(traces), label, radial)
        rec.validate()
        records.append(rec)
    return records


@dataclass
class ManifestEntry:
    """One labeled record reference: file, index within file, label, distance."""

    trace_file: str
    record_index: int
    label: ThreatClass
    radial_distance_m: float

    def to_line(self) -> str:
        return (
            f"{self.trace_file}:{self.record_index}:{self.label.label}:"
            f"{self.radial_distance_m:.6g}"
        )

    @classmethod
    def from_line(cls, line: str) -> "ManifestEntry":
        parts = line.rsplit(":", 3)
        if len(parts) != 4:
            raise ValueError(f"malformed manifest line: {line!r}")
        return cls(parts[0], int(parts[1]), ThreatClass.from_label(parts[2]), float(parts[3]))


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)
    split_seed: int = 0
    split_ratio: tuple = (4, 1)


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w") as fh:
        for entry in manifest.records:
            fh.write(entry.to_line() + "\n")


def read_manifest(path, split_seed: int = 0) -> DatasetManifest:
    entries = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(ManifestEntry.from_line(line))
    return DatasetManifest(records=entries, split_seed=split_seed)


def split_dataset(manifest: DatasetManifest, seed: int):
    """Stratified train/test split at the manifest's ratio (default 4:1).

    Per class the train count is round(n * train/(train+test)), so both
    partitions stay within one record of the exact ratio. Deterministic in
    the seed.
    """
    if not manifest.records:
        raise ValueError("cannot split an empty manifest")
    r_train, r_test = manifest.split_ratio
    by_class = {}
    for entry in manifest.records:
        by_class.setdefault(entry.label, []).append(entry)

    min_count = r_train + r_test
    train, test = [], []
    for label in sorted(by_class):
        group = by_class[label]
        if len(group) < min_count:
            raise ValueError(
                f"class {label.label} has {len(group)} records; "
                f"need at least {min_count} to honor a {r_train}:{r_test} split"
            )
        order = np.random.default_rng([seed, int(label)]).permutation(len(group))
        n_train = round(len(group) * r_train / (r_train + r_test))
        for pos, idx in enumerate(order):
            (train if pos < n_train else test).append(group[idx])
    return train, test


def load_records(entries, base_dir=None):
    """Materialize manifest entries, reading each trace file once."""
    cache = {}
    out = []
    for entry in entries:
        path = entry.trace_file
        if base_dir is not None and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        if path not in cache:
            cache[path] = read_trace_file(path)
        recs = cache[path]
        if entry.record_index >= len(recs):
            raise TraceFormatError(
                f"{path}: manifest points at record {entry.record_index}, "
                f"file has {len(recs)}"
            )
        out.append(recs[entry.record_index])
    return out

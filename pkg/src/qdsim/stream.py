"""Time-tagged photon events: in-memory model, binary persistence, detector model.

Timestamps are integer picoseconds from acquisition start. Truth streams carry
the per-photon center frequency (Hz offset from the reference) and the
Markovian dephasing rate (1/s) so that downstream analysis can be checked
against exact oracles; measured streams never expose these fields.

Binary tag file layout (all integers little-endian):

    magic           4 bytes  b"QTAG"
    version         u16
    flags           u16      bit 0: truth fields present
    channel_count   u8
    duration        u64      picoseconds
    metadata_len    u32
    metadata        UTF-8, "key=value" lines
    records         channel u8, timestamp u64 [, frequency f64, dephasing f64]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ._kernels import dead_time_keep

MAGIC = b"QTAG"
FORMAT_VERSION = 1
FLAG_TRUTH = 0x0001
_LABELS_KEY = "_channel_labels"

_HEADER = struct.Struct("<4sHHBQI")

_GAUSS_FWHM = 2.0 * np.sqrt(2.0 * np.log(2.0))  # FWHM / sigma for a Gaussian


class FormatError(ValueError):
    """Malformed tag file; `offset` is the byte position of the violation."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class PhotonTag:
    """One detected or emitted photon."""

    channel: int
    timestamp: int  # ps
    truth_frequency: float | None = None  # Hz offset from reference
    truth_dephasing_rate: float | None = None  # 1/s


@dataclass(frozen=True)
class DetectorModel:
    """Single-photon detector: Gaussian jitter, binomial loss, dead time, darks."""

    jitter_fwhm: float = 350e-12  # s
    efficiency: float = 1.0
    dead_time: float = 0.0  # s
    dark_rate: float = 0.0  # Hz

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency must be in [0, 1], got {self.efficiency}")
        if self.jitter_fwhm < 0 or self.dead_time < 0 or self.dark_rate < 0:
            raise ValueError("jitter_fwhm, dead_time and dark_rate must be >= 0")


#: 350 ps / 30 % modules used for correlation-type measurements.
DETECTOR_STANDARD = DetectorModel(jitter_fwhm=350e-12, efficiency=0.30)
#: 50 ps / 2 % modules used for decay-time measurements.
DETECTOR_LIFETIME = DetectorModel(jitter_fwhm=50e-12, efficiency=0.02)


class TagStream:
    """Immutable, globally sorted sequence of photon tags.

    Stored as structure-of-arrays for throughput; `tag(i)` and iteration give
    PhotonTag views. Sorting is by timestamp with ties broken by channel index.
    """

    __slots__ = ("channel", "timestamp", "duration", "channel_labels",
                 "metadata", "truth_frequency", "truth_dephasing_rate")

    def __init__(self, channel, timestamp, duration, channel_labels=None,
                 metadata=None, truth_frequency=None, truth_dephasing_rate=None,
                 validate=True):
        self.channel = np.ascontiguousarray(channel, dtype=np.uint8)
        self.timestamp = np.ascontiguousarray(timestamp, dtype=np.int64)
        self.duration = int(duration)
        nch = int(self.channel.max()) + 1 if len(self.channel) else 1
        if channel_labels is None:
            channel_labels = [f"ch{i}" for i in range(nch)]
        self.channel_labels = list(channel_labels)
        self.metadata = dict(metadata) if metadata else {}
        if truth_frequency is not None:
            truth_frequency = np.ascontiguousarray(truth_frequency, dtype=np.float64)
        if truth_dephasing_rate is not None:
            truth_dephasing_rate = np.ascontiguousarray(truth_dephasing_rate, dtype=np.float64)
        self.truth_frequency = truth_frequency
        self.truth_dephasing_rate = truth_dephasing_rate
        if validate:
            self._check()

    def _check(self):
        n = len(self.timestamp)
        if len(self.channel) != n:
            raise ValueError("channel and timestamp arrays differ in length")
        if (self.truth_frequency is None) != (self.truth_dephasing_rate is None):
            raise ValueError("truth fields must be present together or not at all")
        if self.truth_frequency is not None and len(self.truth_frequency) != n:
            raise ValueError("truth arrays must match the tag count")
        if n:
            if self.timestamp[0] < 0:
                raise ValueError("timestamps must be >= 0")
            if int(self.timestamp[-1]) > self.duration:
                raise ValueError("timestamps must not exceed the stream duration")
            dt = np.diff(self.timestamp)
            bad = np.nonzero(dt < 0)[0]
            if len(bad):
                raise ValueError(f"tags not sorted by timestamp at index {bad[0] + 1}")
            ties = np.nonzero(dt == 0)[0]
            if len(ties) and np.any(self.channel[ties] > self.channel[ties + 1]):
                raise ValueError("timestamp ties must be ordered by channel index")
        if len(self.channel) and int(self.channel.max()) >= len(self.channel_labels):
            raise ValueError("channel index exceeds channel_labels")

    # -- sequence protocol -------------------------------------------------

    def __len__(self):
        return len(self.timestamp)

    def tag(self, i):
        f = float(self.truth_frequency[i]) if self.truth_frequency is not None else None
        d = float(self.truth_dephasing_rate[i]) if self.truth_dephasing_rate is not None else None
        return PhotonTag(int(self.channel[i]), int(self.timestamp[i]), f, d)

    def __iter__(self):
        return (self.tag(i) for i in range(len(self)))

    @property
    def has_truth(self):
        return self.truth_frequency is not None

    @property
    def n_channels(self):
        return len(self.channel_labels)

    def times_s(self):
        """Timestamps in seconds (float64)."""
        return self.timestamp * 1e-12

    def channel_times(self, ch):
        """Sorted timestamps (ps) of one channel."""
        return self.timestamp[self.channel == ch]

    def __eq__(self, other):
        if not isinstance(other, TagStream):
            return NotImplemented
        if (self.duration != other.duration
                or self.channel_labels != other.channel_labels
                or self.metadata != other.metadata
                or self.has_truth != other.has_truth):
            return False
        if not (np.array_equal(self.channel, other.channel)
                and np.array_equal(self.timestamp, other.timestamp)):
            return False
        if self.has_truth:
            return (np.array_equal(self.truth_frequency, other.truth_frequency)
                    and np.array_equal(self.truth_dephasing_rate, other.truth_dephasing_rate))
        return True

    @classmethod
    def from_tags(cls, tags, duration, channel_labels=None, metadata=None):
        """Build a stream from PhotonTag objects (sorted internally)."""
        tags = list(tags)
        ch = np.array([t.channel for t in tags], dtype=np.uint8)
        ts = np.array([t.timestamp for t in tags], dtype=np.int64)
        truth = [t.truth_frequency for t in tags]
        if any(v is not None for v in truth):
            fr = np.array([t.truth_frequency for t in tags], dtype=np.float64)
            de = np.array([t.truth_dephasing_rate for t in tags], dtype=np.float64)
        else:
            fr = de = None
        order = np.lexsort((ch, ts))
        return cls(ch[order], ts[order], duration, channel_labels, metadata,
                   None if fr is None else fr[order],
                   None if de is None else de[order])


def sort_stream_arrays(channel, timestamp, *extra):
    """Lexsort tag arrays by (timestamp, channel); extras are reordered along."""
    order = np.lexsort((channel, timestamp))
    out = [np.asarray(channel)[order], np.asarray(timestamp)[order]]
    out.extend(None if e is None else np.asarray(e)[order] for e in extra)
    return tuple(out)


# ---------------------------------------------------------------------------
# binary persistence
# ---------------------------------------------------------------------------

def _record_dtype(truth):
    fields = [("channel", "u1"), ("timestamp", "<u8")]
    if truth:
        fields += [("frequency", "<f8"), ("dephasing", "<f8")]
    return np.dtype(fields)


def _encode_metadata(stream):
    meta = dict(stream.metadata)
    meta[_LABELS_KEY] = ",".join(stream.channel_labels)
    lines = []
    for k in sorted(meta):
        v = str(meta[k])
        if "=" in k or "\n" in k or "\n" in v:
            raise ValueError(f"metadata key/value not encodable: {k!r}")
        lines.append(f"{k}={v}\n")
    return "".join(lines).encode("utf-8")


def write_stream(stream, destination):
    """Serialize a TagStream; returns the number of bytes written.

    `destination` is a binary file object or a path.
    """
    if hasattr(destination, "write"):
        return _write_stream(stream, destination)
    with open(destination, "wb") as fh:
        return _write_stream(stream, fh)


def _write_stream(stream, fh):
    truth = stream.has_truth
    meta = _encode_metadata(stream)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, FLAG_TRUTH if truth else 0,
                          len(stream.channel_labels), stream.duration, len(meta))
    rec = np.empty(len(stream), dtype=_record_dtype(truth))
    rec["channel"] = stream.channel
    rec["timestamp"] = stream.timestamp.astype(np.uint64)
    if truth:
        rec["frequency"] = stream.truth_frequency
        rec["dephasing"] = stream.truth_dephasing_rate
    payload = rec.tobytes()
    try:
        fh.write(header)
        fh.write(meta)
        fh.write(payload)
    except OSError as exc:
        raise IOError(f"tag file write failed after header+metadata "
                      f"({len(header) + len(meta)} bytes): {exc}") from exc
    return len(header) + len(meta) + len(payload)


def read_stream(source):
    """Parse a tag file written by `write_stream`; exact inverse of it."""
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    if len(data) < _HEADER.size:
        raise FormatError(f"file too short for header: {len(data)} < {_HEADER.size} bytes",
                          offset=0)
    magic, version, flags, nch, duration, meta_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4)
    truth = bool(flags & FLAG_TRUTH)
    pos = _HEADER.size
    if len(data) < pos + meta_len:
        raise FormatError("truncated metadata block", offset=len(data))
    meta_raw = data[pos:pos + meta_len].decode("utf-8")
    pos += meta_len
    metadata = {}
    for line in meta_raw.split("\n"):  # values may hold any byte except newline
        if line:
            k, _, v = line.partition("=")
            metadata[k] = v
    labels = metadata.pop(_LABELS_KEY, None)
    labels = labels.split(",") if labels else [f"ch{i}" for i in range(nch)]

    dtype = _record_dtype(truth)
    body = len(data) - pos
    if body % dtype.itemsize:
        nrec = body // dtype.itemsize
        raise FormatError(
            f"truncated record {nrec}: expected {dtype.itemsize} bytes, "
            f"got {body - nrec * dtype.itemsize}",
            offset=pos + nrec * dtype.itemsize)
    rec = np.frombuffer(data, dtype=dtype, offset=pos)
    ts = rec["timestamp"].astype(np.int64)
    bad = np.nonzero(np.diff(ts) < 0)[0]
    if len(bad):
        raise FormatError(f"tags out of order at record {bad[0] + 1}",
                          offset=pos + (int(bad[0]) + 1) * dtype.itemsize)
    try:
        return TagStream(
            rec["channel"], ts, duration, labels, metadata,
            rec["frequency"] if truth else None,
            rec["dephasing"] if truth else None)
    except ValueError as exc:
        raise FormatError(str(exc), offset=pos) from exc


def record_size(truth):
    """Bytes per record; the file body is exactly n_tags * record_size."""
    return _record_dtype(truth).itemsize


def header_size(stream):
    """Bytes before the first record for this stream's metadata."""
    return _HEADER.size + len(_encode_metadata(stream))


# ---------------------------------------------------------------------------
# detector model
# ---------------------------------------------------------------------------

def apply_detector(stream, model, seed):
    """Pass a truth stream through a detector model; returns a measured stream.

    Order of operations follows the physical chain: binomial loss, Gaussian
    timing jitter (re-sorting afterwards, jitter legitimately swaps close
    tags), non-paralyzable dead time per channel, then independent dark
    counts. Truth fields are stripped from the output.
    """
    rng = np.random.default_rng(seed)
    ch = stream.channel
    ts = stream.timestamp

    if model.efficiency < 1.0:
        keep = rng.random(len(ts)) < model.efficiency
        ch, ts = ch[keep], ts[keep]

    if model.jitter_fwhm > 0:
        sigma_ps = model.jitter_fwhm / _GAUSS_FWHM * 1e12
        ts = ts + np.rint(rng.normal(0.0, sigma_ps, len(ts))).astype(np.int64)
        np.clip(ts, 0, stream.duration, out=ts)

    ch, ts = sort_stream_arrays(ch, ts)[:2]

    if model.dead_time > 0:
        dead_ps = int(round(model.dead_time * 1e12))
        keep = np.ones(len(ts), dtype=bool)
        for c in np.unique(ch):
            m = ch == c
            keep[m] = dead_time_keep(ts[m], dead_ps)
        ch, ts = ch[keep], ts[keep]

    if model.dark_rate > 0:
        dur_s = stream.duration * 1e-12
        parts_ch, parts_ts = [ch], [ts]
        for c in range(stream.n_channels):
            n_dark = rng.poisson(model.dark_rate * dur_s)
            dark = rng.integers(0, stream.duration + 1, n_dark)
            parts_ch.append(np.full(n_dark, c, dtype=np.uint8))
            parts_ts.append(dark.astype(np.int64))
        ch = np.concatenate(parts_ch)
        ts = np.concatenate(parts_ts)
        ch, ts = sort_stream_arrays(ch, ts)[:2]

    meta = dict(stream.metadata)
    meta["detector"] = (f"jitter_fwhm={model.jitter_fwhm};efficiency={model.efficiency};"
                        f"dead_time={model.dead_time};dark_rate={model.dark_rate}")
    return TagStream(ch, ts, stream.duration, stream.channel_labels, meta,
                     validate=False)


def beamsplit(stream, seed, out_channels=(0, 1), labels=("transmit", "reflect")):
    """Route every tag through an ideal 50/50 beamsplitter onto two channels.

    Truth fields are carried along so the result can still feed truth-based
    analyses before detection.
    """
    rng = np.random.default_rng(seed)
    ch = np.where(rng.random(len(stream)) < 0.5, out_channels[0], out_channels[1])
    ch = ch.astype(np.uint8)
    arrays = sort_stream_arrays(ch, stream.timestamp,
                                stream.truth_frequency, stream.truth_dephasing_rate)
    meta = dict(stream.metadata)
    meta["beamsplit_seed"] = str(seed)
    return TagStream(arrays[0], arrays[1], stream.duration, list(labels), meta,
                     truth_frequency=arrays[2], truth_dephasing_rate=arrays[3],
                     validate=False)

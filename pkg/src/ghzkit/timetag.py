"""Time-tag record format and the windowed coincidence engine.

Records are (timestamp, tag) pairs: a 64-bit unsigned tick count at
156.25 ps per tick, and one tag byte laid out as

    bits 0-3  channel id (0 trigger, 1 Alice, 2 Bob, 3 Charlie by default)
    bit 4     latched basis bit (0 -> R/L analyzer, 1 -> D/A)
    bit 5     outcome bit (0 -> +1 detector, 1 -> -1 detector)
    bits 6-7  reserved

The on-disk layout is little-endian with a 32-byte header

    offset 0   4s   magic b"TTAG"
    offset 4   u16  version (1)
    offset 6   u16  reserved
    offset 8   u64  tick period in femtoseconds (156250)
    offset 16  16B  channel map: role byte per channel id (0 unused,
                    1 trigger, 2 polarization detector, 3 auxiliary)

followed by repeated 9-byte records (u64 tick, u8 tag).

Coincidence semantics: one stream anchors the search (the trigger); an
event fires when every other required stream has a record whose
offset-corrected time lies within +/- window of the anchor record.  When
several candidates fall inside the window the earliest not-yet-consumed one
is taken, and every detection participates in at most one event.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .counts import CountsTable, ALL_OUTCOME_STRINGS
from .errors import NoPeak, ScheduleGap, UnsortedInput

TICK_SECONDS = 156.25e-12
TICK_FEMTOSECONDS = 156_250

MAGIC = b"TTAG"
VERSION = 1
_HEADER = struct.Struct("<4sHHQ16s")

ROLE_UNUSED = 0
ROLE_TRIGGER = 1
ROLE_DETECTOR = 2
ROLE_AUX = 3

DEFAULT_CHANNELS = {"trigger": 0, "Alice": 1, "Bob": 2, "Charlie": 3}


def make_tags(channel: int, basis_bits, outcome_bits) -> np.ndarray:
    basis = np.asarray(basis_bits, dtype=np.uint8)
    outcome = np.asarray(outcome_bits, dtype=np.uint8)
    return (np.uint8(channel & 0x0F)
            | (basis << np.uint8(4))
            | (outcome << np.uint8(5))).astype(np.uint8)


def split_tags(tags: np.ndarray):
    """(channel, basis bit, outcome bit) arrays from tag bytes."""
    tags = np.asarray(tags, dtype=np.uint8)
    return (tags & 0x0F,
            (tags >> np.uint8(4)) & 0x01,
            (tags >> np.uint8(5)) & 0x01)


@dataclass
class TimeTagStream:
    """One station's sorted record stream."""

    ticks: np.ndarray
    tags: np.ndarray
    channel_roles: bytes = bytes([ROLE_UNUSED] * 16)

    def __post_init__(self):
        self.ticks = np.ascontiguousarray(self.ticks, dtype=np.uint64)
        self.tags = np.ascontiguousarray(self.tags, dtype=np.uint8)
        if self.ticks.shape != self.tags.shape:
            raise ValueError("ticks and tags must have equal length")
        if self.ticks.size > 1 and np.any(np.diff(self.ticks.astype(np.int64)) < 0):
            raise UnsortedInput("timestamps must be non-decreasing")
        if len(self.channel_roles) != 16:
            raise ValueError("channel role map must be 16 bytes")

    def __len__(self) -> int:
        return int(self.ticks.size)

    def times_s(self) -> np.ndarray:
        return self.ticks.astype(np.float64) * TICK_SECONDS

    def write(self, path) -> None:
        header = _HEADER.pack(MAGIC, VERSION, 0, TICK_FEMTOSECONDS,
                              self.channel_roles)
        rec = np.zeros(self.ticks.size,
                       dtype=np.dtype([("tick", "<u8"), ("tag", "u1")]))
        rec["tick"] = self.ticks
        rec["tag"] = self.tags
        with open(path, "wb") as fh:
            fh.write(header)
            rec.tofile(fh)

    @classmethod
    def read(cls, path) -> "TimeTagStream":
        with open(path, "rb") as fh:
            head = fh.read(_HEADER.size)
            if len(head) < _HEADER.size:
                raise ValueError(f"{path}: truncated header")
            magic, version, _, tick_fs, roles = _HEADER.unpack(head)
            if magic != MAGIC:
                raise ValueError(f"{path}: bad magic {magic!r}")
            if version != VERSION:
                raise ValueError(f"{path}: unsupported version {version}")
            if tick_fs != TICK_FEMTOSECONDS:
                raise ValueError(f"{path}: unexpected tick period {tick_fs} fs")
            rec = np.fromfile(fh, dtype=np.dtype([("tick", "<u8"), ("tag", "u1")]))
        return cls(ticks=rec["tick"].astype(np.uint64),
                   tags=rec["tag"].astype(np.uint8), channel_roles=roles)


# ---------------------------------------------------------------------------
# offset calibration


def find_offset(stream_a, stream_b, search_range_s: float, bin_s: float,
                max_pairs: int = 50_000_000) -> float:
    """Offset maximizing the histogram of (t_b - t_a) arrival differences.

    Returns the offset such that stream B runs ahead of stream A by that
    amount; subtract it from B to align.  Raises NoPeak when the histogram
    maximum does not stand out (max < 5x median, counting empty bins).
    """
    ta = stream_a.times_s() if isinstance(stream_a, TimeTagStream) else np.asarray(stream_a, float)
    tb = stream_b.times_s() if isinstance(stream_b, TimeTagStream) else np.asarray(stream_b, float)
    if ta.size == 0 or tb.size == 0:
        raise ValueError("both streams must be non-empty")
    lo = np.searchsorted(tb, ta - search_range_s, side="left")
    hi = np.searchsorted(tb, ta + search_range_s, side="right")
    counts_per_anchor = hi - lo
    total = int(counts_per_anchor.sum())
    if total == 0:
        raise NoPeak("no arrival-time pairs inside the search range")
    if total > max_pairs:
        raise ValueError(
            f"{total} candidate pairs exceed max_pairs={max_pairs}; "
            "reduce search_range_s or subsample")
    anchor_idx = np.repeat(np.arange(ta.size), counts_per_anchor)
    csum = np.concatenate(([0], np.cumsum(counts_per_anchor)))
    flat = (np.arange(total) - np.repeat(csum[:-1], counts_per_anchor)
            + np.repeat(lo, counts_per_anchor))
    diffs = tb[flat] - ta[anchor_idx]
    nbins = max(int(np.ceil(2.0 * search_range_s / bin_s)), 1)
    hist, edges = np.histogram(diffs, bins=nbins,
                               range=(-search_range_s, search_range_s))
    peak = int(hist.argmax())
    median = float(np.median(hist))
    if hist[peak] < 5.0 * max(median, 1.0):
        raise NoPeak(f"histogram maximum {hist[peak]} below 5x median "
                     f"{max(median, 1.0):.1f}")
    return float(0.5 * (edges[peak] + edges[peak + 1]))


# ---------------------------------------------------------------------------
# coincidence engine


@dataclass(frozen=True)
class CoincidenceQuery:
    """Window and per-stream offsets; stream 0 is the anchor."""

    window_s: float
    offsets_s: tuple = ()

    def __post_init__(self):
        if self.window_s <= 0:
            raise ValueError("window must be positive")
        if not all(np.isfinite(self.offsets_s)):
            raise ValueError("offsets must be finite")


@dataclass
class EventSet:
    """Coincidence events as parallel index arrays into the input streams."""

    indices: tuple          # one int64 array per stream, same length
    anchor_times_s: np.ndarray

    def __len__(self) -> int:
        return int(self.anchor_times_s.size)


@njit(cache=True)
def _merge_kernel(anchor, anchor_base, others_flat, other_starts, ptr, window):
    """Greedy earliest-match windowed join over one batch of anchors.

    ``others_flat`` concatenates the offset-corrected times of the
    non-anchor streams, ``other_starts`` delimits them, and ``ptr`` holds
    the per-stream next-unconsumed cursor, updated in place so batches can
    be chained.  Returns (count, anchor indices, flat candidate indices).
    """
    n_other = other_starts.size - 1
    n_anchor = anchor.size
    out_anchor = np.empty(n_anchor, dtype=np.int64)
    out_other = np.empty((n_other, n_anchor), dtype=np.int64)
    count = 0
    for i in range(n_anchor):
        t = anchor[i]
        ok = True
        for j in range(n_other):
            end = other_starts[j + 1]
            p = ptr[j]
            # records earlier than t - window can never match again
            while p < end and others_flat[p] < t - window:
                p += 1
            ptr[j] = p
            if p >= end or others_flat[p] > t + window:
                ok = False
                break
            out_other[j, count] = p
        if ok:
            out_anchor[count] = anchor_base + i
            for j in range(n_other):
                ptr[j] = out_other[j, count] + 1
            count += 1
    return count, out_anchor, out_other


def _corrected_times(streams, offsets):
    times = []
    for s, off in zip(streams, offsets):
        t = s.times_s() if isinstance(s, TimeTagStream) else np.asarray(s, float)
        if t.size > 1 and np.any(np.diff(t) < 0):
            raise UnsortedInput("streams must be time-sorted")
        times.append(t - off)
    return times


def coincidences(streams, query: CoincidenceQuery,
                 anchor_batch: int | None = None) -> EventSet:
    """Multi-way windowed join of 2-4 sorted streams (stream 0 anchors).

    Offset-corrected times are t_i - offset_i; an event requires every
    stream to contribute one record within +/- window of the anchor record,
    consuming each matched record (greedy earliest match).  ``anchor_batch``
    bounds how many anchors are fed to the kernel at once; the per-stream
    cursors carry across batches, so the output never depends on it.
    """
    if not 2 <= len(streams) <= 4:
        raise ValueError("need between 2 and 4 streams")
    offsets = query.offsets_s or (0.0,) * len(streams)
    if len(offsets) != len(streams):
        raise ValueError("one offset per stream required")
    times = _corrected_times(streams, offsets)
    anchor = times[0]
    others = times[1:]
    starts = np.zeros(len(others) + 1, dtype=np.int64)
    for j, t in enumerate(others):
        starts[j + 1] = starts[j] + t.size
    flat = np.concatenate(others) if others else np.empty(0)
    ptr = starts[:-1].copy()

    batch = anchor.size if anchor_batch is None else max(int(anchor_batch), 1)
    idx_parts = [[] for _ in streams]
    for lo in range(0, max(anchor.size, 1), batch):
        part = anchor[lo:lo + batch]
        if part.size == 0:
            break
        count, out_anchor, out_other = _merge_kernel(
            part, lo, flat, starts, ptr, query.window_s)
        idx_parts[0].append(out_anchor[:count].copy())
        for j in range(len(others)):
            idx_parts[j + 1].append(out_other[j, :count] - starts[j])
    idx = [np.concatenate(p) if p else np.empty(0, dtype=np.int64)
           for p in idx_parts]
    return EventSet(indices=tuple(idx),
                    anchor_times_s=anchor[idx[0]] + offsets[0])


def brute_force_coincidences(streams, query: CoincidenceQuery) -> EventSet:
    """Quadratic reference implementation of the same greedy semantics."""
    offsets = query.offsets_s or (0.0,) * len(streams)
    times = []
    for s, off in zip(streams, offsets):
        t = s.times_s() if isinstance(s, TimeTagStream) else np.asarray(s, float)
        times.append(t - off)
    consumed = [np.zeros(t.size, dtype=bool) for t in times]
    idx_rows = []
    anchor_times = []
    for i, t in enumerate(times[0]):
        picks = [i]
        ok = True
        for j in range(1, len(times)):
            cand = None
            for k in range(times[j].size):
                if consumed[j][k]:
                    continue
                if abs(times[j][k] - t) <= query.window_s:
                    cand = k
                    break
                if times[j][k] > t + query.window_s:
                    break
            if cand is None:
                ok = False
                break
            picks.append(cand)
        if ok:
            for j in range(1, len(times)):
                consumed[j][picks[j]] = True
            idx_rows.append(picks)
            anchor_times.append(t + offsets[0])
    if not idx_rows:
        empty = tuple(np.empty(0, dtype=np.int64) for _ in streams)
        return EventSet(indices=empty, anchor_times_s=np.empty(0))
    arr = np.array(idx_rows, dtype=np.int64)
    return EventSet(indices=tuple(arr[:, j] for j in range(len(streams))),
                    anchor_times_s=np.array(anchor_times))


# ---------------------------------------------------------------------------
# outcome tagging


#: Pockels-cell settling time subtracted before schedule lookup
SETTLING_NS = 10.0


def tag_outcomes(events: EventSet, streams, schedules: dict,
                 station_order=("Alice", "Bob", "Charlie"),
                 on_gap: str = "raise") -> CountsTable:
    """Aggregate four-fold events into the 64-key outcome count table.

    ``streams`` are the same objects the events index into, with the anchor
    (trigger) first and the three stations following in ``station_order``.
    Each station's basis comes from its schedule evaluated at arrival time
    minus the 10 ns Pockels settling; the outcome bit comes from the
    record's tag byte.  ``on_gap="skip"`` drops events falling in schedule
    gaps instead of raising.
    """
    if on_gap not in ("raise", "skip"):
        raise ValueError("on_gap must be 'raise' or 'skip'")
    n = len(events)
    letters = np.empty((3, n), dtype="U1")
    keep = np.ones(n, dtype=bool)
    for pos, name in enumerate(station_order):
        stream = streams[pos + 1]
        idx = events.indices[pos + 1]
        t = stream.times_s()[idx]
        _, _, outcome = split_tags(stream.tags[idx])
        sched = schedules[name]
        basis = sched.value_at(t - SETTLING_NS * 1e-9,
                               on_gap="raise" if on_gap == "raise" else "mark")
        if on_gap == "skip":
            keep &= basis >= 0
        basis01 = np.clip(basis, 0, 1).astype(np.uint8)
        table = np.array([["R", "L"], ["D", "A"]])
        letters[pos] = table[basis01, outcome]
    counts = {k: 0 for k in ALL_OUTCOME_STRINGS}
    for i in range(n):
        if not keep[i]:
            continue
        key = letters[0][i] + letters[1][i] + letters[2][i]
        counts[key] += 1
    return CountsTable(counts)

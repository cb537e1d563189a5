"""Time-stamped basis-bit schedules driving each station's Pockels cell.

A schedule answers "which basis bit was latched at time t?" over a covered
interval.  The latched value is the most recent grid sample (sample and
hold), shifted by the station's fixed selection latency, which callers fold
into ``start_s``.  Querying outside the covered range raises ScheduleGap,
or yields -1 entries with ``on_gap="mark"``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ScheduleGap
from .qrng import BitStream, QrngGridSampler, TelegraphQrngConfig


def _check_gap(values: np.ndarray, inside: np.ndarray, on_gap: str,
               what: str) -> np.ndarray:
    if on_gap == "raise":
        if not inside.all():
            t_bad = int(np.flatnonzero(~inside)[0])
            raise ScheduleGap(f"{what} does not cover query #{t_bad}")
        return values
    if on_gap == "mark":
        out = values.astype(np.int8)
        out[~inside] = -1
        return out
    raise ValueError(f"on_gap must be 'raise' or 'mark', got {on_gap!r}")


@dataclass(frozen=True)
class PeriodicSchedule:
    """Deterministic square-wave switching (basis toggles every half period)."""

    start_s: float
    half_period_s: float
    end_s: float
    first_bit: int = 0

    def value_at(self, times_s, on_gap: str = "raise") -> np.ndarray:
        t = np.asarray(times_s, dtype=float)
        inside = (t >= self.start_s) & (t < self.end_s)
        k = np.floor((t - self.start_s) / self.half_period_s).astype(np.int64)
        vals = ((k + self.first_bit) % 2).astype(np.uint8)
        return _check_gap(vals, inside, on_gap, "periodic schedule")


@dataclass(frozen=True)
class SampledSchedule:
    """Sample-and-hold over an explicit recorded bit stream."""

    stream: BitStream

    def value_at(self, times_s, on_gap: str = "raise") -> np.ndarray:
        t = np.asarray(times_s, dtype=float)
        s = self.stream
        idx = np.floor((t - s.start_time_s) / s.sample_period_s).astype(np.int64)
        inside = (idx >= 0) & (idx < len(s))
        vals = s.bits[np.clip(idx, 0, len(s) - 1)]
        return _check_gap(vals, inside, on_gap, "sampled schedule")


@dataclass(frozen=True)
class QrngSchedule:
    """Telegraph-QRNG switching sampled on the 1 MHz-style grid.

    Bits come from a counter-addressed sampler, so arbitrary times can be
    answered without materializing the full grid; ``bit_stream`` renders an
    explicit record (Randy's log) of any sub-range on demand.
    """

    config: TelegraphQrngConfig
    key: int
    start_s: float
    end_s: float

    def __post_init__(self):
        object.__setattr__(self, "_sampler",
                           QrngGridSampler(self.config, self.key))

    @property
    def sample_period_s(self) -> float:
        return self.config.sample_period_s

    def n_samples(self) -> int:
        return int(np.floor((self.end_s - self.start_s) / self.sample_period_s))

    def value_at(self, times_s, on_gap: str = "raise") -> np.ndarray:
        t = np.asarray(times_s, dtype=float)
        idx = np.floor((t - self.start_s) / self.sample_period_s).astype(np.int64)
        inside = (idx >= 0) & (idx < self.n_samples())
        vals = self._sampler.bits_at(np.clip(idx, 0, max(self.n_samples() - 1, 0)))
        return _check_gap(vals, inside, on_gap, "qrng schedule")

    def bit_stream(self, start_index: int = 0, count: int | None = None,
                   chunk: int = 1 << 24) -> BitStream:
        """Materialize grid bits [start_index, start_index + count)."""
        total = self.n_samples()
        if count is None:
            count = total - start_index
        if not (0 <= start_index and start_index + count <= total):
            raise ValueError("requested range outside schedule coverage")
        parts = []
        for lo in range(start_index, start_index + count, chunk):
            n = min(chunk, start_index + count - lo)
            parts.append(self._sampler.bits_range(lo, n))
        return BitStream(bits=np.concatenate(parts),
                         start_time_s=self.start_s
                         + start_index * self.sample_period_s,
                         sample_period_s=self.sample_period_s)


@dataclass(frozen=True)
class ShiftedSchedule:
    """A schedule observed after a fixed transport delay (the RF link)."""

    base: object
    delay_s: float

    def value_at(self, times_s, on_gap: str = "raise") -> np.ndarray:
        t = np.asarray(times_s, dtype=float)
        return self.base.value_at(t - self.delay_s, on_gap=on_gap)


def schedule_from_manifest(entry: dict):
    """Rebuild a schedule from its manifest description (see simulator)."""
    kind = entry["kind"]
    if kind == "periodic":
        return PeriodicSchedule(start_s=entry["start_s"],
                                half_period_s=entry["half_period_s"],
                                end_s=entry["end_s"],
                                first_bit=entry.get("first_bit", 0))
    if kind == "qrng":
        cfg = TelegraphQrngConfig(
            set_rate_hz=entry["set_rate_hz"],
            reset_rate_hz=entry["reset_rate_hz"],
            sample_period_s=entry["sample_period_s"])
        sched = QrngSchedule(config=cfg, key=int(entry["key"]),
                             start_s=entry["start_s"], end_s=entry["end_s"])
        if entry.get("delay_s"):
            return ShiftedSchedule(base=sched, delay_s=entry["delay_s"])
        return sched
    raise ValueError(f"unknown schedule kind {kind!r}")

import numpy as np
import pytest

from ghzkit import timetag as tt
from ghzkit.errors import NoPeak, ScheduleGap, UnsortedInput
from ghzkit.schedules import PeriodicSchedule

NS = 1e-9


def query(window_ns, n_streams, offsets=None):
    return tt.CoincidenceQuery(
        window_s=window_ns * NS,
        offsets_s=offsets or (0.0,) * n_streams)


class TestTags:
    def test_round_trip(self):
        tags = tt.make_tags(3, [0, 1, 1, 0], [1, 0, 1, 0])
        ch, basis, outcome = tt.split_tags(tags)
        assert np.all(ch == 3)
        assert np.array_equal(basis, [0, 1, 1, 0])
        assert np.array_equal(outcome, [1, 0, 1, 0])


class TestStreamIO:
    def test_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        ticks = np.sort(rng.integers(0, 1 << 40, 5000)).astype(np.uint64)
        tags = tt.make_tags(2, rng.integers(0, 2, 5000),
                            rng.integers(0, 2, 5000))
        stream = tt.TimeTagStream(ticks=ticks, tags=tags)
        path = tmp_path / "bob.ttag"
        stream.write(path)
        again = tt.TimeTagStream.read(path)
        assert np.array_equal(again.ticks, ticks)
        assert np.array_equal(again.tags, tags)
        # 32-byte header + 9 bytes per record
        assert path.stat().st_size == 32 + 9 * 5000

    def test_rejects_unsorted(self):
        with pytest.raises(UnsortedInput):
            tt.TimeTagStream(ticks=np.array([5, 3], dtype=np.uint64),
                             tags=np.zeros(2, np.uint8))

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ttag"
        path.write_bytes(b"NOPE" + bytes(28))
        with pytest.raises(ValueError):
            tt.TimeTagStream.read(path)


class TestFindOffset:
    def test_planted_fiber_delay_recovered(self):
        rng = np.random.default_rng(1)
        base = np.sort(rng.uniform(0.0, 2.0, 30_000))
        shifted = base + 2875.7 * NS
        off = tt.find_offset(base, shifted, search_range_s=5e-6, bin_s=1e-9)
        assert abs(off - 2875.7 * NS) <= 1e-9

    def test_zero_shift(self):
        rng = np.random.default_rng(2)
        base = np.sort(rng.uniform(0.0, 1.0, 10_000))
        off = tt.find_offset(base, base, search_range_s=1e-6, bin_s=1e-9)
        assert abs(off) <= 1e-9

    def test_independent_streams_no_peak(self):
        rng = np.random.default_rng(3)
        a = np.sort(rng.uniform(0.0, 1.0, 20_000))
        b = np.sort(rng.uniform(0.0, 1.0, 20_000))
        with pytest.raises(NoPeak):
            tt.find_offset(a, b, search_range_s=5e-6, bin_s=1e-9)


class TestCoincidences:
    def test_four_single_records(self):
        streams = [np.array([0.0])] * 4
        ev = tt.coincidences(streams, query(3.0, 4))
        assert len(ev) == 1

    def test_window_boundary(self):
        for dt_ns, expected in ((1.6, 1), (3.2, 0)):
            ev = tt.coincidences([np.array([0.0]), np.array([dt_ns * NS])],
                                 query(3.0, 2))
            assert len(ev) == expected, dt_ns

    def test_each_detection_used_once(self):
        # two anchors compete for a single partner record
        ev = tt.coincidences([np.array([0.0, 1.0 * NS]), np.array([0.5 * NS])],
                             query(3.0, 2))
        assert len(ev) == 1
        assert ev.indices[0][0] == 0  # earliest anchor wins

    def test_greedy_earliest_match(self):
        # one anchor, two candidates in window: earliest taken
        ev = tt.coincidences([np.array([0.0]),
                              np.array([-1.0 * NS, 0.5 * NS])], query(3.0, 2))
        assert len(ev) == 1
        assert ev.indices[1][0] == 0

    def test_offsets_align(self):
        a = np.array([10.0])
        b = np.array([10.0 + 500 * NS])
        ev = tt.coincidences([a, b], query(3.0, 2, offsets=(0.0, 500 * NS)))
        assert len(ev) == 1

    def test_unsorted_raises(self):
        with pytest.raises(UnsortedInput):
            tt.coincidences([np.array([1.0, 0.0]), np.array([0.0])],
                            query(3.0, 2))

    def test_stream_count_bounds(self):
        with pytest.raises(ValueError):
            tt.coincidences([np.array([0.0])], query(3.0, 1))


def random_instance(rng, n_streams):
    streams = []
    for _ in range(n_streams):
        n = rng.integers(20, 1000)
        span = rng.uniform(1e-6, 1e-4)
        streams.append(np.sort(rng.uniform(0.0, span, n)))
    offsets = tuple(rng.uniform(-5e-9, 5e-9, n_streams))
    return streams, offsets


class TestBruteForceEquivalence:
    @pytest.mark.parametrize("window_ns", [1.0, 3.0, 6.0])
    def test_random_instances(self, window_ns):
        rng = np.random.default_rng(int(window_ns * 10))
        for trial in range(20):
            n_streams = int(rng.integers(2, 5))
            streams, offsets = random_instance(rng, n_streams)
            q = query(window_ns, n_streams, offsets)
            fast = tt.coincidences(streams, q)
            slow = tt.brute_force_coincidences(streams, q)
            for j in range(n_streams):
                assert np.array_equal(fast.indices[j], slow.indices[j]), \
                    (window_ns, trial, j)


class TestChunkingInvariance:
    def test_anchor_batching(self):
        rng = np.random.default_rng(8)
        streams, offsets = random_instance(rng, 4)
        q = query(3.0, 4, offsets)
        whole = tt.coincidences(streams, q)
        for batch in (1, 7, 64):
            parts = tt.coincidences(streams, q, anchor_batch=batch)
            for j in range(4):
                assert np.array_equal(whole.indices[j], parts.indices[j])

    def test_shard_and_remerge(self):
        # splitting a stream into shards and re-merging leaves the join
        # output unchanged
        rng = np.random.default_rng(9)
        streams, offsets = random_instance(rng, 3)
        q = query(6.0, 3, offsets)
        whole = tt.coincidences(streams, q)
        shards = np.array_split(streams[1], 5)
        remerged = np.concatenate(shards)
        again = tt.coincidences([streams[0], remerged, streams[2]], q)
        for j in range(3):
            assert np.array_equal(whole.indices[j], again.indices[j])


class TestThroughput:
    def test_merge_rate_exceeds_ten_million_per_second(self):
        rng = np.random.default_rng(10)
        n = 2_000_000
        streams = [np.sort(rng.uniform(0.0, 100.0, n)) for _ in range(2)]
        q = query(3.0, 2)
        tt.coincidences([s[:100] for s in streams], q)  # jit warmup
        import time
        t0 = time.perf_counter()
        tt.coincidences(streams, q)
        elapsed = time.perf_counter() - t0
        assert 2 * n / elapsed > 1e7


def make_station_stream(times_s, channel, basis, outcome):
    order = np.argsort(times_s)
    ticks = np.round(np.asarray(times_s)[order] / tt.TICK_SECONDS)
    return tt.TimeTagStream(
        ticks=ticks.astype(np.uint64),
        tags=tt.make_tags(channel, np.asarray(basis)[order],
                          np.asarray(outcome)[order]))


class TestTagOutcomes:
    def _simple_setup(self, n_events=8):
        # trigger at k ms, stations 100 ns later; schedule alternates per ms
        t = np.arange(n_events) * 1e-3 + 1e-4
        trig = make_station_stream(t, 0, np.zeros(n_events), np.zeros(n_events))
        streams = [trig]
        outcomes = np.resize([0, 1], n_events)
        for ch in (1, 2, 3):
            streams.append(make_station_stream(t + 100 * NS, ch,
                                               np.zeros(n_events), outcomes))
        q = tt.CoincidenceQuery(window_s=3e-9,
                                offsets_s=(0.0, 100 * NS, 100 * NS, 100 * NS))
        events = tt.coincidences(streams, q)
        scheds = {name: PeriodicSchedule(start_s=0.0, half_period_s=1e-3,
                                         end_s=1.0)
                  for name in ("Alice", "Bob", "Charlie")}
        return events, streams, scheds

    def test_single_event_single_cell(self):
        events, streams, scheds = self._simple_setup(n_events=1)
        table = tt.tag_outcomes(events, streams, scheds)
        assert table.total() == 1
        assert table["RRR"] == 1  # basis bit 0 -> R/L, outcome bit 0 -> R

    def test_basis_letters_follow_schedule(self):
        events, streams, scheds = self._simple_setup(n_events=8)
        table = tt.tag_outcomes(events, streams, scheds)
        # events in odd milliseconds latch basis 1 (D/A analyzer)
        assert table["RRR"] + table["LLL"] == 4
        assert table["DDD"] + table["AAA"] == 4

    def test_schedule_gap_raises(self):
        events, streams, _ = self._simple_setup(n_events=4)
        short = {name: PeriodicSchedule(start_s=0.0, half_period_s=1e-3,
                                        end_s=2e-3)
                 for name in ("Alice", "Bob", "Charlie")}
        with pytest.raises(ScheduleGap):
            tt.tag_outcomes(events, streams, short)

    def test_schedule_gap_skip_keeps_count_conservation(self):
        events, streams, _ = self._simple_setup(n_events=4)
        short = {name: PeriodicSchedule(start_s=0.0, half_period_s=1e-3,
                                        end_s=2e-3)
                 for name in ("Alice", "Bob", "Charlie")}
        table = tt.tag_outcomes(events, streams, short, on_gap="skip")
        assert table.total() < len(events)
        full = {name: PeriodicSchedule(start_s=0.0, half_period_s=1e-3,
                                       end_s=1.0)
                for name in ("Alice", "Bob", "Charlie")}
        table_full = tt.tag_outcomes(events, streams, full, on_gap="skip")
        assert table_full.total() == len(events)

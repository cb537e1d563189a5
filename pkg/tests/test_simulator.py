import math
from pathlib import Path

import numpy as np
import pytest

from ghzkit import counts, quantum, simulator as sim
from ghzkit.errors import ConfigError, UnknownScenario

GHZ = quantum.ghz_state(-math.pi / 2)


def ideal_setup(visibility=1.0, efficiency=1.0):
    src = sim.SourceConfig(
        state=quantum.werner_state(GHZ, visibility),
        trigger_background_hz=0.0,
        singles_background_hz={"Alice": 0.0, "Bob": 0.0, "Charlie": 0.0})
    stations = sim.paper_stations()
    for st in stations:
        st.link_efficiency = efficiency
        st.dark_rate_hz = 0.0
    return src, stations


class TestRunExperiment:
    def test_zero_duration_gives_empty_streams(self):
        src, stations = ideal_setup()
        art = sim.run_experiment(src, stations, 0.0, seed=0)
        assert len(art.truth) == 0
        for stream in art.streams.values():
            assert len(stream) == 0

    def test_deterministic_artifacts(self, tmp_path):
        src, stations = ideal_setup(visibility=0.8, efficiency=0.5)
        a = sim.run_experiment(src, stations, 20.0, seed=123)
        b = sim.run_experiment(src, stations, 20.0, seed=123)
        dir_a, dir_b = tmp_path / "a", tmp_path / "b"
        a.write(dir_a, bit_record=True)
        b.write(dir_b, bit_record=True)
        for f in sorted(p.name for p in dir_a.iterdir()):
            assert (dir_a / f).read_bytes() == (dir_b / f).read_bytes(), f

    def test_seed_changes_outcomes(self):
        src, stations = ideal_setup()
        a = sim.run_experiment(src, stations, 5.0, seed=1)
        b = sim.run_experiment(src, stations, 5.0, seed=2)
        assert len(a.truth) != len(b.truth) or not np.array_equal(
            a.truth.outcome_bits, b.truth.outcome_bits)

    def test_truth_reconciles_with_streams(self):
        src, stations = ideal_setup(efficiency=0.6)
        art = sim.run_experiment(src, stations, 30.0, seed=7)
        for j, name in enumerate(sim.STATION_NAMES):
            ticks = set(art.streams[name].ticks.tolist())
            survived = art.truth.survived[:, j]
            for tick in art.truth.arrival_ticks[survived, j]:
                assert int(tick) in ticks
            # with zero background the stream holds nothing else
            assert len(art.streams[name]) == int(survived.sum())

    def test_station_order_enforced(self):
        src, stations = ideal_setup()
        with pytest.raises(ConfigError):
            sim.run_experiment(src, stations[::-1], 1.0, seed=0)

    def test_bad_efficiency_rejected(self):
        src, stations = ideal_setup()
        stations[1].link_efficiency = 1.5
        with pytest.raises(ConfigError):
            sim.run_experiment(src, stations, 1.0, seed=0)


class TestRates:
    def test_singles_and_fourfold_rates_within_3_sigma(self):
        src = sim.SourceConfig(
            state=quantum.werner_state(GHZ, 0.77),
            trigger_background_hz=300.0,
            singles_background_hz={"Alice": 200.0, "Bob": 200.0,
                                   "Charlie": 200.0})
        stations = sim.paper_stations()
        duration = 120.0
        art = sim.run_experiment(src, stations, duration, seed=31)
        n_creations = len(art.truth)
        expect_creations = src.fourfold_rate_hz * duration
        assert abs(n_creations - expect_creations) <= 3 * math.sqrt(expect_creations)
        for j, st in enumerate(stations):
            n_signal = int(art.truth.survived[:, j].sum())
            expect_signal = expect_creations * st.link_efficiency
            assert abs(n_signal - expect_signal) <= 3 * math.sqrt(expect_signal)
            n_total = len(art.streams[st.name])
            expect_bg = (200.0 + st.dark_rate_hz) * duration
            expect_total = expect_signal + expect_bg
            assert abs(n_total - expect_total) <= 3 * math.sqrt(expect_total)

    def test_fourfold_rate_at_paper_parameters(self):
        src = sim.SourceConfig(state=quantum.werner_state(GHZ, 0.77))
        stations = sim.paper_stations()
        analytic = sim.expected_fourfold_rate(src, stations)
        assert analytic == pytest.approx(39.0 * 0.33 * 0.32 * 0.14, rel=1e-12)
        art = sim.run_experiment(src, stations, 200.0, seed=5)
        ana = sim.analyze_run(art)
        assert abs(ana.fourfold_rate_hz - analytic) <= \
            3 * math.sqrt(analytic * 200.0) / 200.0


class TestBasisSchedules:
    def test_periodic_pattern(self):
        st = sim.paper_stations("periodic")[1]
        eff, _ = sim.basis_schedule(st, 10e-6, seed=0)
        latency = st.basis_delay_min_ns * 1e-9
        t = latency + np.arange(10) * 1e-6 + 0.5e-6
        vals = eff.value_at(t)
        assert np.array_equal(vals[::2], vals[::2][:1].repeat(5))
        assert np.all(vals[::2] != vals[1::2])

    def test_qrng_bias(self):
        st = sim.paper_stations()[1]
        eff, base = sim.basis_schedule(st, 2.0, seed=3)
        bits = base.bit_stream(0, 1_000_000).bits
        assert abs(bits.mean() - 0.5) < 0.01

    def test_same_seed_identical(self):
        st = sim.paper_stations()[2]
        _, b1 = sim.basis_schedule(st, 0.1, seed=11)
        _, b2 = sim.basis_schedule(st, 0.1, seed=11)
        assert np.array_equal(b1.bit_stream(0, 10_000).bits,
                              b2.bit_stream(0, 10_000).bits)

    def test_alice_feed_is_randys_stream_delayed(self):
        src, stations = ideal_setup()
        art = sim.run_experiment(src, stations, 10.0, seed=9)
        randy = art.randy_schedule
        alice = art.schedules["Alice"]
        t = np.linspace(0.02, 9.5, 5000)
        delay = stations[0].basis_delay_min_ns * 1e-9
        assert np.array_equal(alice.value_at(t), randy.value_at(t - delay))

    def test_randy_bit_record_transport(self):
        # the RF link is modeled lossless: Alice logs exactly the bits Randy
        # generated, indexed by their generation times
        from ghzkit import qrng as qrng_mod
        src, stations = ideal_setup()
        art = sim.run_experiment(src, stations, 5.0, seed=13)
        sent = art.randy_bits(0.0, 2.0)
        received = qrng_mod.BitStream(sent.bits.copy(), sent.start_time_s,
                                      sent.sample_period_s)
        errors, compared = qrng_mod.verify_transport(sent, received)
        assert errors == 0
        assert compared == len(sent)
        # a recorder that started 3 samples late still verifies cleanly
        late = qrng_mod.BitStream(sent.bits[3:].copy(),
                                  sent.start_time_s + 3e-6,
                                  sent.sample_period_s)
        errors, compared = qrng_mod.verify_transport(sent, late)
        assert errors == 0
        assert compared == len(sent) - 3


class TestPipelineClosure:
    @pytest.mark.parametrize("phase,visibility", [
        (-math.pi / 2, 1.0), (0.7, 0.85)])
    def test_mermin_recovered_within_3_sigma(self, phase, visibility):
        state = quantum.werner_state(quantum.ghz_state(phase), visibility)
        truth_m = quantum.mermin_parameter(state, quantum.STANDARD_PAIRS)
        src = sim.SourceConfig(state=state, trigger_background_hz=0.0,
                               singles_background_hz={n: 0.0 for n in
                                                      sim.STATION_NAMES})
        stations = sim.paper_stations()
        for st in stations:
            st.link_efficiency = 1.0
            st.dark_rate_hz = 0.0
        art = sim.run_experiment(src, stations, 45.0, seed=int(phase * 100) % 97)
        ana = sim.analyze_run(art)
        res = counts.mermin_from_counts(ana.counts, "M")
        sigma = math.sqrt(sum(counts.conservative_sigma(c) ** 2
                              for c in res.correlations))
        assert abs(res.m_value - truth_m) <= 3 * sigma
        assert ana.n_fourfold == len(art.truth)


class TestScenarios:
    def test_main_run_structure(self):
        (sc,) = sim.scenario_suite("main_run")
        assert sc.duration_s == 4740.0
        assert sc.expected["form"] == "M"
        m = quantum.mermin_parameter(sc.source.state, quantum.STANDARD_PAIRS)
        assert m == pytest.approx(2.7720, abs=1e-10)

    def test_phase_scan_structure(self):
        scans = sim.scenario_suite("phase_scan")
        phases = [sc.expected["phase"] for sc in scans]
        assert sorted(phases) == sorted([-math.pi / 2, math.pi / 2, 0.0])
        zero = next(sc for sc in scans if sc.expected["phase"] == 0.0)
        assert zero.expected["form"] == "M_prime"

    def test_random_vs_deterministic_structure(self):
        pair = sim.scenario_suite("random_vs_deterministic")
        modes = {sc.stations[0].basis_mode for sc in pair}
        assert modes == {"qrng", "periodic"}
        for sc in pair:
            assert sc.duration_s == 900.0
            assert sc.expected["m_value"] > 2.0

    def test_unknown_scenario(self):
        with pytest.raises(UnknownScenario):
            sim.scenario_suite("warp_drive")


class TestArtifacts:
    def test_write_layout(self, tmp_path):
        src, stations = ideal_setup(efficiency=0.5)
        art = sim.run_experiment(src, stations, 5.0, seed=21)
        art.write(tmp_path, bit_record=True)
        names = {p.name for p in tmp_path.iterdir()}
        assert {"trigger.ttag", "alice.ttag", "bob.ttag", "charlie.ttag",
                "truth.csv", "manifest.json", "randy_bits.bin",
                "randy_bits.bin.json"} <= names

    def test_periodic_run_has_no_bit_record(self, tmp_path):
        src = sim.SourceConfig()
        art = sim.run_experiment(src, sim.paper_stations("periodic"), 2.0,
                                 seed=1)
        with pytest.raises(ConfigError):
            art.randy_bits()

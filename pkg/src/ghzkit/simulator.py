"""End-to-end Monte Carlo of the distributed GHZ experiment.

Per four-photon creation (a Poisson process at the configured source
four-fold rate), each distributed photon independently survives its link
with the station efficiency; survivors arrive after the station's total
photon delay plus a per-run systematic offset drawn from the surveyed delay
uncertainty plus a small per-photon jitter.  Outcomes are sampled from the
Born distribution of the configured state under the basis each station's
schedule had latched at that moment.  Background singles and dark counts
are independent Poisson processes with random outcomes.  All detections are
quantized to 156.25 ps ticks and emitted as per-station time-tag streams; a
ground-truth event log reconciles with the streams exactly.

The surveyed delay sigma enters as a once-per-run offset, not per-photon
spread: it is uncertainty in knowing a fixed cable/path length, and the
offset calibration step of the analysis recovers it, exactly as the real
pipeline calibrates its delays.  Per-photon timing jitter (detector and
electronics) is a separate, much smaller knob.

Default background rates are desk-scale stand-ins: the real uncorrelated
singles run at hundreds of kHz and would bloat artifact files a
hundredfold without changing four-fold statistics at these windows.  The
config accepts the full rates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import quantum
from .counts import CountsTable
from .errors import ConfigError, UnknownScenario
from .qrng import BitStream, TelegraphQrngConfig
from .schedules import PeriodicSchedule, QrngSchedule, ShiftedSchedule
from .timetag import (DEFAULT_CHANNELS, TICK_SECONDS, CoincidenceQuery,
                      TimeTagStream, coincidences, find_offset, make_tags,
                      tag_outcomes)
from . import data as data_mod

_NS = 1e-9

#: default telegraph QRNG at the hardware operating point
DEFAULT_QRNG = TelegraphQrngConfig(set_rate_hz=14e6, reset_rate_hz=14e6,
                                   sample_period_s=1e-6)

STATION_NAMES = ("Alice", "Bob", "Charlie")


def _default_state() -> np.ndarray:
    return quantum.ket_density(quantum.ghz_state(-math.pi / 2.0))


@dataclass
class SourceConfig:
    fourfold_rate_hz: float = 39.0
    pulse_rate_hz: float = 80e6
    state: np.ndarray = field(default_factory=_default_state)
    trigger_delay_ns: float = 10.0
    trigger_background_hz: float = 2000.0
    singles_background_hz: dict = field(
        default_factory=lambda: {"Alice": 500.0, "Bob": 500.0, "Charlie": 500.0})

    def validate(self):
        if not 0 < self.fourfold_rate_hz <= self.pulse_rate_hz:
            raise ConfigError("need 0 < fourfold rate <= pulse rate")
        quantum.check_density(self.state)


@dataclass
class StationConfig:
    name: str
    photon_delay_ns: float
    photon_delay_sigma_ns: float
    link_efficiency: float
    basis_mode: str = "qrng"              # "qrng" or "periodic"
    qrng: TelegraphQrngConfig = field(default_factory=lambda: DEFAULT_QRNG)
    periodic_hz: float = 500e3
    basis_delay_min_ns: float = 665.0
    basis_delay_max_ns: float = 1865.0
    dark_rate_hz: float = 100.0
    photon_jitter_ns: float = 0.4
    chooser_name: str = ""                # remote QRNG site, if any

    def validate(self):
        if not 0.0 <= self.link_efficiency <= 1.0:
            raise ConfigError(f"{self.name}: efficiency must be in [0, 1]")
        if self.basis_delay_min_ns > self.basis_delay_max_ns:
            raise ConfigError(f"{self.name}: basis delay min exceeds max")
        if self.basis_mode not in ("qrng", "periodic"):
            raise ConfigError(f"{self.name}: unknown basis mode {self.basis_mode!r}")
        if self.photon_delay_sigma_ns < 0 or self.photon_jitter_ns < 0:
            raise ConfigError(f"{self.name}: sigmas must be nonnegative")


def paper_stations(basis_mode: str = "qrng") -> list:
    """The three stations with published delays and link efficiencies."""
    return [
        StationConfig(name="Alice", photon_delay_ns=2926.3,
                      photon_delay_sigma_ns=5.1, link_efficiency=0.14,
                      basis_mode=basis_mode, basis_delay_min_ns=2218.0,
                      basis_delay_max_ns=3431.0, chooser_name="Randy"),
        StationConfig(name="Bob", photon_delay_ns=3078.7,
                      photon_delay_sigma_ns=24.0, link_efficiency=0.33,
                      basis_mode=basis_mode, basis_delay_min_ns=665.0,
                      basis_delay_max_ns=1865.0),
        StationConfig(name="Charlie", photon_delay_ns=2791.5,
                      photon_delay_sigma_ns=24.0, link_efficiency=0.32,
                      basis_mode=basis_mode, basis_delay_min_ns=663.0,
                      basis_delay_max_ns=1863.0),
    ]


def expected_fourfold_rate(source: SourceConfig, stations) -> float:
    rate = source.fourfold_rate_hz
    for st in stations:
        rate *= st.link_efficiency
    return rate


def basis_schedule(station: StationConfig, duration_s: float, seed):
    """Stand-alone schedule for one station (qrng grid or 500 kHz square).

    The selection latency (minimum basis budget) shifts the schedule as
    seen at the Pockels cell; Randy's grid also exists unshifted when the
    station's chooser is remote.  Returns (effective, base) schedules.
    """
    station.validate()
    latency_s = station.basis_delay_min_ns * _NS
    pad_s = latency_s + 20e-6
    if station.basis_mode == "periodic":
        half = 0.5 / station.periodic_hz
        start = -math.ceil(pad_s / half) * half
        eff = PeriodicSchedule(start_s=start + latency_s, half_period_s=half,
                               end_s=duration_s + 2 * pad_s)
        return eff, eff
    ss = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    key = int(ss.generate_state(1, np.uint64)[0])
    period = station.qrng.sample_period_s
    start = -math.ceil(pad_s / period) * period
    base = QrngSchedule(config=station.qrng, key=key, start_s=start,
                        end_s=duration_s + 2 * pad_s)
    return ShiftedSchedule(base=base, delay_s=latency_s), base


@dataclass
class EventLog:
    """Ground truth: one row per four-photon creation."""

    creation_s: np.ndarray
    survived: np.ndarray       # (n, 3) bool, station order Alice/Bob/Charlie
    basis_bits: np.ndarray     # (n, 3) uint8
    outcome_bits: np.ndarray   # (n, 3) uint8
    arrival_ticks: np.ndarray  # (n, 3) uint64, 0 where lost

    def __len__(self) -> int:
        return int(self.creation_s.size)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            cols = ["creation_s"]
            for name in STATION_NAMES:
                cols += [f"{name}_survived", f"{name}_basis",
                         f"{name}_outcome", f"{name}_tick"]
            fh.write(",".join(cols) + "\n")
            for i in range(len(self)):
                row = [f"{self.creation_s[i]:.12f}"]
                for j in range(3):
                    row += [str(int(self.survived[i, j])),
                            str(int(self.basis_bits[i, j])),
                            str(int(self.outcome_bits[i, j])),
                            str(int(self.arrival_ticks[i, j]))]
                fh.write(",".join(row) + "\n")


@dataclass
class RunArtifacts:
    streams: dict                 # name -> TimeTagStream (incl. "trigger")
    schedules: dict               # station -> effective schedule
    randy_schedule: object        # base QRNG grid behind Alice's feed (or None)
    truth: EventLog
    duration_s: float
    seed: int
    manifest: dict

    def randy_bits(self, start_s: float = 0.0,
                   duration_s: float | None = None) -> BitStream:
        """Materialize Randy's recorded bit stream over [start, start+duration)."""
        if self.randy_schedule is None:
            raise ConfigError("run used periodic switching; no QRNG record")
        sched = self.randy_schedule
        if duration_s is None:
            duration_s = self.duration_s - start_s
        i0 = int(math.ceil((start_s - sched.start_s) / sched.sample_period_s))
        n = int(duration_s / sched.sample_period_s)
        return sched.bit_stream(start_index=i0, count=n)

    def write(self, out_dir, bit_record: bool = True) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, stream in self.streams.items():
            stream.write(out / f"{name.lower()}.ttag")
        self.truth.write_csv(out / "truth.csv")
        if bit_record and self.randy_schedule is not None:
            self.randy_bits().save(out / "randy_bits.bin")
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _truncated_normal(rng, sigma, size):
    """Gaussian with tails clipped at +/- 4 sigma."""
    if np.isscalar(size) and size == 0:
        return np.zeros(0)
    draw = rng.normal(0.0, 1.0, size)
    return np.clip(draw, -4.0, 4.0) * sigma


def _schedule_manifest(station: StationConfig, eff, base) -> dict:
    if station.basis_mode == "periodic":
        return {"kind": "periodic", "start_s": eff.start_s,
                "half_period_s": eff.half_period_s, "end_s": eff.end_s,
                "first_bit": eff.first_bit}
    return {"kind": "qrng", "set_rate_hz": station.qrng.set_rate_hz,
            "reset_rate_hz": station.qrng.reset_rate_hz,
            "sample_period_s": station.qrng.sample_period_s,
            "key": base.key, "start_s": base.start_s, "end_s": base.end_s,
            "delay_s": eff.delay_s if isinstance(eff, ShiftedSchedule) else 0.0}


def run_experiment(source: SourceConfig, stations, duration_s: float,
                   seed: int) -> RunArtifacts:
    """Simulate one run and return its streams, schedules and ground truth."""
    source.validate()
    if len(stations) != 3:
        raise ConfigError("exactly three stations required")
    for st, expect in zip(stations, STATION_NAMES):
        st.validate()
        if st.name != expect:
            raise ConfigError(f"stations must be ordered {STATION_NAMES}")
    if duration_s < 0:
        raise ConfigError("duration must be nonnegative")

    root = np.random.SeedSequence(seed)
    ss_events, ss_a, ss_b, ss_c, ss_bg = root.spawn(5)
    rng = np.random.default_rng(ss_events)

    # basis schedules (Alice's feed originates at Randy's QRNG)
    sched_seeds = {"Alice": ss_a, "Bob": ss_b, "Charlie": ss_c}
    schedules = {}
    bases = {}
    for st in stations:
        eff, base = basis_schedule(st, duration_s, sched_seeds[st.name])
        schedules[st.name] = eff
        bases[st.name] = base
    randy_base = bases["Alice"] if stations[0].basis_mode == "qrng" else None

    # four-photon creations
    n_events = rng.poisson(source.fourfold_rate_hz * duration_s)
    creation = np.sort(rng.uniform(0.0, duration_s, n_events))

    survived = np.empty((n_events, 3), dtype=bool)
    for j, st in enumerate(stations):
        survived[:, j] = rng.random(n_events) < st.link_efficiency

    systematic = {st.name: float(_truncated_normal(
        rng, st.photon_delay_sigma_ns * _NS, 1)[0]) for st in stations}

    arrivals = np.empty((n_events, 3))
    basis_bits = np.empty((n_events, 3), dtype=np.uint8)
    for j, st in enumerate(stations):
        jitter = _truncated_normal(rng, st.photon_jitter_ns * _NS, n_events)
        arrivals[:, j] = (creation + st.photon_delay_ns * _NS
                          + systematic[st.name] + jitter)
        basis_bits[:, j] = schedules[st.name].value_at(
            arrivals[:, j] - 10.0 * _NS)

    # Born-rule outcomes per basis combination
    outcome_bits = np.empty((n_events, 3), dtype=np.uint8)
    basis_key = basis_bits[:, 0] * 4 + basis_bits[:, 1] * 2 + basis_bits[:, 2]
    for combo in range(8):
        mask = basis_key == combo
        m = int(mask.sum())
        if m == 0:
            continue
        settings = tuple(quantum.RL if (combo >> k) & 1 == 0 else quantum.DA
                         for k in (2, 1, 0))
        probs = quantum.outcome_probabilities(source.state, settings)
        probs = np.clip(probs, 0.0, None)
        probs /= probs.sum()
        drawn = rng.choice(8, size=m, p=probs)
        outcome_bits[mask, 0] = (drawn >> 2) & 1
        outcome_bits[mask, 1] = (drawn >> 1) & 1
        outcome_bits[mask, 2] = drawn & 1

    # trigger stream: local detection of every four-fold, plus background
    bg_rng = np.random.default_rng(ss_bg)
    trig_jitter = _truncated_normal(bg_rng, 0.3 * _NS, n_events)
    trig_times = creation + source.trigger_delay_ns * _NS + trig_jitter
    n_trig_bg = bg_rng.poisson(source.trigger_background_hz * duration_s)
    trig_bg = bg_rng.uniform(0.0, duration_s, n_trig_bg)
    trig_all = np.concatenate([trig_times, trig_bg])
    trig_tags = np.full(trig_all.size, make_tags(DEFAULT_CHANNELS["trigger"], 0, 0),
                        dtype=np.uint8)

    streams = {}
    order = np.argsort(trig_all, kind="stable")
    streams["trigger"] = TimeTagStream(
        ticks=np.round(trig_all[order] / TICK_SECONDS).astype(np.uint64),
        tags=trig_tags[order])

    arrival_ticks = np.zeros((n_events, 3), dtype=np.uint64)
    for j, st in enumerate(stations):
        keep = survived[:, j]
        t_sig = arrivals[keep, j]
        b_sig = basis_bits[keep, j]
        o_sig = outcome_bits[keep, j]

        bg_rate = (source.singles_background_hz.get(st.name, 0.0)
                   + st.dark_rate_hz)
        n_bg = bg_rng.poisson(bg_rate * duration_s)
        t_bg = bg_rng.uniform(0.0, duration_s, n_bg)
        b_bg = schedules[st.name].value_at(t_bg - 10.0 * _NS, on_gap="mark")
        miss = b_bg < 0
        b_bg = np.where(miss, 0, b_bg).astype(np.uint8)
        o_bg = bg_rng.integers(0, 2, n_bg).astype(np.uint8)

        t_all = np.concatenate([t_sig, t_bg])
        b_all = np.concatenate([b_sig, b_bg])
        o_all = np.concatenate([o_sig, o_bg])
        tags = make_tags(DEFAULT_CHANNELS[st.name], b_all, o_all)
        order = np.argsort(t_all, kind="stable")
        ticks = np.round(t_all[order] / TICK_SECONDS).astype(np.uint64)
        streams[st.name] = TimeTagStream(ticks=ticks, tags=tags[order])
        arrival_ticks[keep, j] = np.round(t_sig / TICK_SECONDS).astype(np.uint64)

    truth = EventLog(creation_s=creation, survived=survived,
                     basis_bits=basis_bits, outcome_bits=outcome_bits,
                     arrival_ticks=arrival_ticks)

    manifest = {
        "seed": int(seed),
        "duration_s": duration_s,
        "fourfold_rate_hz": source.fourfold_rate_hz,
        "trigger_delay_ns": source.trigger_delay_ns,
        "stations": {
            st.name: {
                "photon_delay_ns": st.photon_delay_ns,
                "photon_delay_sigma_ns": st.photon_delay_sigma_ns,
                "link_efficiency": st.link_efficiency,
                "basis_mode": st.basis_mode,
                "chooser": st.chooser_name or st.name,
                "schedule": _schedule_manifest(st, schedules[st.name],
                                               bases[st.name]),
            } for st in stations
        },
        "channels": DEFAULT_CHANNELS,
        "files": {"trigger": "trigger.ttag",
                  **{n: f"{n.lower()}.ttag" for n in STATION_NAMES}},
    }
    return RunArtifacts(streams=streams, schedules=schedules,
                        randy_schedule=randy_base, truth=truth,
                        duration_s=duration_s, seed=int(seed),
                        manifest=manifest)


# ---------------------------------------------------------------------------
# analysis pipeline


@dataclass
class RunAnalysis:
    offsets_s: dict
    n_fourfold: int
    counts: CountsTable
    fourfold_rate_hz: float


def analyze_run(artifacts: RunArtifacts, window_ns: float = 3.0,
                search_range_s: float = 10e-6, bin_s: float = 0.5e-9,
                on_gap: str = "skip") -> RunAnalysis:
    """Offset-calibrate, join four-folds, and tag outcomes for one run."""
    trig = artifacts.streams["trigger"]
    station_streams = [artifacts.streams[n] for n in STATION_NAMES]
    offsets = [0.0]
    for s in station_streams:
        offsets.append(find_offset(trig, s, search_range_s, bin_s))
    query = CoincidenceQuery(window_s=window_ns * _NS,
                             offsets_s=tuple(offsets))
    events = coincidences([trig] + station_streams, query)
    table = tag_outcomes(events, [trig] + station_streams,
                         artifacts.schedules, on_gap=on_gap)
    return RunAnalysis(
        offsets_s={n: offsets[i + 1] for i, n in enumerate(STATION_NAMES)},
        n_fourfold=len(events), counts=table,
        fourfold_rate_hz=len(events) / artifacts.duration_s
        if artifacts.duration_s > 0 else 0.0)


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class Scenario:
    name: str
    source: SourceConfig
    stations: tuple
    duration_s: float
    expected: dict


def _scenario_source(phase: float, visibility: float) -> SourceConfig:
    state = quantum.werner_state(quantum.ghz_state(phase), visibility)
    return SourceConfig(state=state)


def scenario_suite(name: str) -> list:
    """Ready-made configs mirroring the published experiment structure.

    Visibilities are tuned so the ideal Mermin value matches each published
    one (a Werner mixture with M = 4V); durations and switching modes follow
    the published runs.
    """
    if name == "main_run":
        m = 2.7720
        return [Scenario(
            name="main_run",
            source=_scenario_source(-math.pi / 2.0, m / 4.0),
            stations=tuple(paper_stations()),
            duration_s=4740.0,
            expected={"form": "M", "m_value": m, "published_sigma": 0.0824,
                      "fourfold_rate_hz": 0.5},
        )]
    if name == "phase_scan":
        table = data_mod.load_json("table_s5.json")["experiments"]
        out = []
        for exp in table:
            phase = float(exp["phase"])
            out.append(Scenario(
                name=f"phase_{phase:+.3f}",
                source=_scenario_source(phase, float(exp["m_value"]) / 4.0),
                stations=tuple(paper_stations()),
                duration_s=float(exp["duration_s"]),
                expected={"form": exp["form"], "m_value": exp["m_value"],
                          "published_sigma": exp["m_sigma"], "phase": phase},
            ))
        return out
    if name == "random_vs_deterministic":
        table = data_mod.load_json("table_s6.json")["experiments"]
        out = []
        for exp in table:
            mode = "qrng" if exp["switching"] == "random" else "periodic"
            out.append(Scenario(
                name=f"switching_{exp['switching']}",
                source=_scenario_source(-math.pi / 2.0,
                                        float(exp["m_value"]) / 4.0),
                stations=tuple(paper_stations(basis_mode=mode)),
                duration_s=float(exp["duration_s"]),
                expected={"form": "M", "m_value": exp["m_value"],
                          "published_sigma": exp["m_sigma"],
                          "switching": exp["switching"]},
            ))
        return out
    raise UnknownScenario(f"no scenario named {name!r}")

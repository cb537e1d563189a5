"""Two-detector flip-flop QRNG: telegraph-process model and diagnostics.

The hardware holds one bit in a flip-flop that two photon counters drive:
the "1" detector sets it, the "0" detector resets it.  With Poisson
detection at rates r1 (set) and r0 (reset) the bit is a random telegraph
process: sojourns in state 1 are Exp(r0), sojourns in state 0 are Exp(r1),
the stationary bias is p1 = r1/(r0+r1) and the autocorrelation decays as
exp(-(r0+r1) t), i.e. tau = 1/(r0+r1).

External logic samples the flip-flop on a uniform grid (1 us period in the
experiment).  Between grid points the state decorrelates by
rho = exp(-(r0+r1) * period); at the hardware operating point rho ~ 7e-13,
which is why subsequent sampled bits are unbiased coin flips for every
practical purpose.

Diagnostics implemented here: bit bias, the run-length chi-square monitor
(maximal runs of each bit value, lengths 1..16, Pearson statistic against
the geometric law), an exponential fit to the continuous-signal
autocorrelation, and bitwise transport verification between two streams.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit

from .errors import FitFailed, InsufficientData, NoOverlap

_CHUNK_EVENTS = 8_000_000


@dataclass(frozen=True)
class TelegraphQrngConfig:
    set_rate_hz: float
    reset_rate_hz: float
    sample_period_s: float = 1e-6
    hardware_delay_s: float = 0.0
    hardware_delay_sigma_s: float = 0.0

    def __post_init__(self):
        if self.set_rate_hz < 0 or self.reset_rate_hz < 0:
            raise ValueError("rates must be nonnegative")
        if self.set_rate_hz + self.reset_rate_hz <= 0:
            raise ValueError("at least one rate must be positive")
        if self.sample_period_s <= 0:
            raise ValueError("sample_period_s must be positive")

    @property
    def switch_rate_hz(self) -> float:
        return self.set_rate_hz + self.reset_rate_hz

    @property
    def stationary_p1(self) -> float:
        return self.set_rate_hz / self.switch_rate_hz

    @property
    def tau_s(self) -> float:
        """Analytic 1/e autocorrelation time of the flip-flop state."""
        return 1.0 / self.switch_rate_hz


@dataclass
class BitStream:
    """Uniformly sampled bits with an absolute time origin."""

    bits: np.ndarray
    start_time_s: float
    sample_period_s: float

    def __post_init__(self):
        self.bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if self.bits.size == 0:
            raise ValueError("bit stream must be non-empty")
        if self.sample_period_s <= 0:
            raise ValueError("sample_period_s must be positive")

    def __len__(self) -> int:
        return int(self.bits.size)

    def bias(self) -> float:
        return float(self.bits.mean())

    def save(self, path) -> None:
        """Packed little-endian bit file plus a JSON sidecar."""
        path = Path(path)
        np.packbits(self.bits, bitorder="little").tofile(path)
        sidecar = {
            "start_time_s": self.start_time_s,
            "sample_period_s": self.sample_period_s,
            "count": int(self.bits.size),
        }
        with open(path.with_suffix(path.suffix + ".json"), "w",
                  encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "BitStream":
        path = Path(path)
        with open(path.with_suffix(path.suffix + ".json"), "r",
                  encoding="utf-8") as fh:
            meta = json.load(fh)
        packed = np.fromfile(path, dtype=np.uint8)
        bits = np.unpackbits(packed, bitorder="little")[: meta["count"]]
        return cls(bits=bits, start_time_s=meta["start_time_s"],
                   sample_period_s=meta["sample_period_s"])


@dataclass(frozen=True)
class SwitchRecord:
    """Continuous flip-flop trajectory: alternating transitions."""

    start_s: float
    end_s: float
    initial_state: int
    transition_times_s: np.ndarray

    def value_at(self, times_s) -> np.ndarray:
        times_s = np.asarray(times_s, dtype=float)
        k = np.searchsorted(self.transition_times_s, times_s, side="right")
        return ((k + self.initial_state) % 2).astype(np.uint8)

    @property
    def n_transitions(self) -> int:
        return int(self.transition_times_s.size)


def simulate_qrng(config: TelegraphQrngConfig, duration_s: float, seed,
                  record_events: bool = True):
    """Simulate the flip-flop and its sampled bit stream.

    Returns (BitStream, SwitchRecord); the record is None when
    ``record_events`` is False, which allows long runs without holding the
    full event list in memory.  Deterministic given the seed.
    """
    if duration_s < 100 * config.sample_period_s:
        raise ValueError("duration must cover at least 100 sample periods")
    rng = np.random.default_rng(seed)
    p1 = config.stationary_p1
    state = int(rng.random() < p1)

    n_bits = int(math.floor(duration_s / config.sample_period_s))
    grid = np.arange(n_bits, dtype=float) * config.sample_period_s
    bits = np.empty(n_bits, dtype=np.uint8)

    rates = (config.set_rate_hz, config.reset_rate_hz)  # exit rate of state 0, 1

    transitions = [] if record_events else None
    t = 0.0
    filled = 0
    while t < duration_s:
        # draw a block of alternating sojourns starting from `state`
        exit_rate_now = rates[1] if state == 1 else rates[0]
        exit_rate_next = rates[0] if state == 1 else rates[1]
        if exit_rate_now == 0.0:
            # absorbing: no more transitions
            block = np.empty(0)
        else:
            half = _CHUNK_EVENTS // 2
            s_now = rng.exponential(1.0 / exit_rate_now, half)
            if exit_rate_next == 0.0:
                # only one more transition can happen, then absorption
                block = s_now[:1]
            else:
                s_next = rng.exponential(1.0 / exit_rate_next, half)
                block = np.empty(2 * half)
                block[0::2] = s_now
                block[1::2] = s_next
        times = t + np.cumsum(block)
        chunk_end = times[-1] if times.size else duration_s
        chunk_end = min(chunk_end, duration_s)

        lo = filled
        hi = int(np.searchsorted(grid, chunk_end, side="right"))
        if hi > lo:
            k = np.searchsorted(times, grid[lo:hi], side="right")
            bits[lo:hi] = (k + state) % 2
            filled = hi

        keep = times[times < duration_s]
        if record_events and keep.size:
            transitions.append(keep)
        if times.size == 0 or times[-1] >= duration_s:
            if filled < n_bits:  # absorbing tail
                k = np.searchsorted(times, grid[filled:], side="right")
                bits[filled:] = (k + state) % 2
                filled = n_bits
            t = duration_s
        else:
            state = (state + len(times)) % 2
            t = times[-1]

    stream = BitStream(bits=bits, start_time_s=0.0,
                       sample_period_s=config.sample_period_s)
    record = None
    if record_events:
        trans = (np.concatenate(transitions) if transitions
                 else np.empty(0, dtype=float))
        # bits[0] samples t = 0, before any transition
        record = SwitchRecord(start_s=0.0, end_s=duration_s,
                              initial_state=int(stream.bits[0]),
                              transition_times_s=trans)
    return stream, record


# ---------------------------------------------------------------------------
# run-length chi-square


@dataclass(frozen=True)
class RunLengthHistogram:
    """Counts of maximal runs per bit value: lengths 1..16 plus overflow."""

    counts: np.ndarray      # shape (2, 17); [:, 16] is the overflow bucket
    n_runs: int

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> "RunLengthHistogram":
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.size == 0:
            raise ValueError("empty bit array")
        edges = np.flatnonzero(np.diff(bits)) + 1
        starts = np.concatenate(([0], edges))
        ends = np.concatenate((edges, [bits.size]))
        lengths = ends - starts
        values = bits[starts]
        counts = np.zeros((2, 17), dtype=np.int64)
        clipped = np.minimum(lengths, 17) - 1
        np.add.at(counts, (values, clipped), 1)
        return cls(counts=counts, n_runs=int(lengths.size))


@dataclass(frozen=True)
class ChiSquareResult:
    value: float
    dof: int
    n_runs: int
    bias: float
    mode: str


def theoretical_run_probabilities(p1: float) -> np.ndarray:
    """P(run has value k and length i), i = 1..16, shape (2, 16).

    Runs of 0s and 1s alternate, so each family holds half the runs; within
    a family the length is geometric with continuation probability p_k.
    """
    probs = np.empty((2, 16))
    for k, p in ((0, 1.0 - p1), (1, p1)):
        i = np.arange(1, 17)
        probs[k] = 0.5 * (1.0 - p) * p ** (i - 1)
    return probs


def chi_square_runs(bits, mode: str = "unbiased") -> ChiSquareResult:
    """Pearson chi-square of the run-length histogram against theory.

    ``mode="unbiased"`` tests against p1 = 1/2; ``mode="biased"`` uses the
    measured bias.  The statistic sums the 32 cells of lengths 1..16 for
    both bit values against expected counts n_runs * P; runs longer than 16
    fall into an overflow bucket that is excluded from the sum.  Reported
    dof is 31 (32 cells, one total-count constraint); the acceptance checks
    compare against a Monte Carlo null rather than the asymptotic law.
    """
    if isinstance(bits, BitStream):
        bits = bits.bits
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size < 10_000:
        raise InsufficientData(f"need at least 1e4 bits, got {bits.size}")
    if mode == "unbiased":
        p1 = 0.5
    elif mode == "biased":
        p1 = float(bits.mean())
        if p1 in (0.0, 1.0):
            raise InsufficientData("stream is constant; bias is degenerate")
    else:
        raise ValueError(f"mode must be 'unbiased' or 'biased', got {mode!r}")
    hist = RunLengthHistogram.from_bits(bits)
    expected = hist.n_runs * theoretical_run_probabilities(p1)
    observed = hist.counts[:, :16]
    chi2 = float(np.sum((observed - expected) ** 2 / expected))
    return ChiSquareResult(value=chi2, dof=31, n_runs=hist.n_runs,
                           bias=float(bits.mean()), mode=mode)


def chi_square_blocks(bits, block_size: int,
                      mode: str = "unbiased") -> np.ndarray:
    """Chi-square per consecutive block, mirroring the per-second monitor."""
    if isinstance(bits, BitStream):
        bits = bits.bits
    bits = np.asarray(bits, dtype=np.uint8)
    n_blocks = bits.size // block_size
    if n_blocks == 0:
        raise InsufficientData("fewer bits than one block")
    return np.array([
        chi_square_runs(bits[i * block_size:(i + 1) * block_size], mode).value
        for i in range(n_blocks)
    ])


# ---------------------------------------------------------------------------
# autocorrelation


def autocorrelation_fit(record: SwitchRecord, samples_per_sojourn: int = 20,
                        max_points: int = 1 << 22,
                        residual_threshold: float = 0.05):
    """Fit A*exp(-t/tau) to the empirical autocorrelation of the signal.

    The continuous trajectory is sampled on a grid fine enough to resolve
    individual sojourns, the normalized autocovariance is computed by FFT,
    and the decay is fitted over the range where it exceeds 0.05.  Returns
    (tau_s, rms_residual).
    """
    duration = record.end_s - record.start_s
    if record.n_transitions < 10:
        raise FitFailed("signal is (nearly) constant; no decay to fit")
    switch_rate = record.n_transitions / duration
    dt = 1.0 / (samples_per_sojourn * switch_rate)
    n = min(int(duration / dt), max_points)
    dt = duration / n
    times = record.start_s + np.arange(n) * dt
    x = record.value_at(times).astype(float)
    x -= x.mean()
    var = float(np.dot(x, x) / n)
    if var <= 0.0:
        raise FitFailed("signal has zero variance")

    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(spec * spec.conj(), nfft)[: n]
    acov /= np.arange(n, 0, -1)  # unbiased normalization
    acf = acov / acov[0]

    # fit range: from lag 1 until the curve first drops below 0.05
    below = np.flatnonzero(acf < 0.05)
    stop = int(below[0]) if below.size else min(n, 1000)
    stop = max(stop, 5)
    lags = np.arange(1, stop) * dt
    data = acf[1:stop]

    def model(t, amp, tau):
        return amp * np.exp(-t / tau)

    tau0 = max(lags[-1] / 3.0, dt)
    try:
        popt, _ = curve_fit(model, lags, data, p0=(1.0, tau0), maxfev=10_000)
    except RuntimeError as exc:
        raise FitFailed(f"exponential fit did not converge: {exc}") from exc
    amp, tau = float(popt[0]), float(popt[1])
    resid = float(np.sqrt(np.mean((model(lags, amp, tau) - data) ** 2)))
    if resid > residual_threshold or tau <= 0:
        raise FitFailed(f"fit residual {resid:.3f} exceeds {residual_threshold}")
    return tau, resid


# ---------------------------------------------------------------------------
# transport verification


def verify_transport(sent: BitStream, received: BitStream):
    """Bitwise comparison of the overlapping range; returns (errors, compared)."""
    if abs(sent.sample_period_s - received.sample_period_s) > 1e-15:
        raise ValueError("streams have different sample periods")
    period = sent.sample_period_s
    shift = (received.start_time_s - sent.start_time_s) / period
    k = round(shift)
    if abs(shift - k) > 1e-6:
        raise ValueError("streams are not on a common sampling grid")
    lo_sent = max(0, k)
    lo_recv = max(0, -k)
    n = min(len(sent) - lo_sent, len(received) - lo_recv)
    if n <= 0:
        raise NoOverlap("bit streams share no overlapping time range")
    a = sent.bits[lo_sent:lo_sent + n]
    b = received.bits[lo_recv:lo_recv + n]
    errors = int(np.count_nonzero(a != b))
    return errors, n


# ---------------------------------------------------------------------------
# counter-based grid sampling (used by basis schedules)

_PHI64 = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

#: grid decorrelation below which samples are treated as independent;
#: exp(-28) ~ 6.9e-13, the operating point of the 14+14 MHz / 1 us hardware
IID_RHO_THRESHOLD = 1e-12


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (x + _PHI64).astype(np.uint64)
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def hash_uniform(key: int, indices) -> np.ndarray:
    """Deterministic uniforms in [0, 1) addressed by sample index."""
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        mixed = _splitmix64(np.uint64(key & 0xFFFFFFFFFFFFFFFF)) ^ (idx * _PHI64)
    u = _splitmix64(mixed)
    return (u >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


class QrngGridSampler:
    """Random-access stationary samples of the telegraph state on a grid.

    When the per-step decorrelation rho = exp(-switch_rate * period) falls
    below 1e-12 the grid samples are independent Bernoulli(p1) draws to
    better than one part in 1e12, and a counter-based hash gives exact
    random access at any index (the simulator relies on this to look up
    basis bits sparsely).  Above the threshold the residual correlation is
    honored by a sequential refresh construction, which restricts sampling
    to contiguous ranges.
    """

    def __init__(self, config: TelegraphQrngConfig, key: int):
        self.config = config
        self.key = int(key)
        self.rho = math.exp(-config.switch_rate_hz * config.sample_period_s)
        self.iid = self.rho < IID_RHO_THRESHOLD

    def bits_at(self, indices) -> np.ndarray:
        if not self.iid:
            raise ValueError(
                "grid decorrelation too slow for random access; "
                "use bits_range on a contiguous index range")
        u = hash_uniform(self.key, indices)
        return (u < self.config.stationary_p1).astype(np.uint8)

    def bits_range(self, start: int, count: int) -> np.ndarray:
        if self.iid:
            return self.bits_at(start + np.arange(count, dtype=np.uint64))
        # exact two-state Markov chain: each step refreshes to a fresh
        # Bernoulli(p1) with probability 1-rho, else carries the previous
        # state; P(s_{k+1}=1|s_k) = p1 + rho (s_k - p1).
        p1 = self.config.stationary_p1
        fresh = hash_uniform(self.key, start + np.arange(count, dtype=np.uint64))
        fresh = (fresh < p1).astype(np.uint8)
        refresh = hash_uniform(~np.uint64(0) ^ np.uint64(self.key),
                               start + np.arange(count, dtype=np.uint64))
        refresh = refresh < (1.0 - self.rho)
        refresh[0] = True  # first sample in a range is stationary
        src = np.where(refresh, np.arange(count), 0)
        np.maximum.accumulate(src, out=src)
        return fresh[src]

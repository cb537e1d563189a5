"""Iterative maximum-likelihood reconstruction from 216-setting count data.

The dataset holds one count per three-letter analyzer string over
{H, V, D, A, R, L} (positions = Alice, Bob, Charlie): 27 product-basis
triples of 8 complementary rank-1 projectors each.  Frequencies are
normalized within each triple, matching how a polarizing-beam-splitter
analyzer partitions its events.

The reconstruction iterates the fixed point

    rho <- N[ R(rho) rho R(rho) ],   R(rho) = sum_j (f_j / p_j) Pi_j

with p_j = Tr(rho Pi_j) floored at 1e-12 (the floor only matters for
pathological datasets) and N the trace normalization.  Iteration stops when
the largest matrix-entry change drops below ``tol`` or ``max_iter`` is hit;
the log-likelihood sum_j n_j log p_j is tracked every step.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import quantum

LETTERS = "HVDARL"
SETTINGS_216 = tuple("".join(c) for c in itertools.product(LETTERS, repeat=3))

_BASIS_OF = {"H": "Z", "V": "Z", "D": "X", "A": "X", "R": "Y", "L": "Y"}

_P_FLOOR = 1e-12


def _group_key(setting: str) -> str:
    return "".join(_BASIS_OF[c] for c in setting)


def measurement_projectors() -> np.ndarray:
    """All 216 rank-1 projectors, ordered as SETTINGS_216, shape (216, 8, 8)."""
    ops = np.empty((len(SETTINGS_216), 8, 8), dtype=complex)
    for i, s in enumerate(SETTINGS_216):
        kets = [quantum.SINGLE_QUBIT_KETS[c] for c in s]
        k = np.kron(np.kron(kets[0], kets[1]), kets[2])
        ops[i] = np.outer(k, k.conj())
    return ops


_PROJECTORS = measurement_projectors()
_GROUPS: dict = {}
for _i, _s in enumerate(SETTINGS_216):
    _GROUPS.setdefault(_group_key(_s), []).append(_i)
_GROUP_INDEX = {g: np.array(idx) for g, idx in _GROUPS.items()}


@dataclass
class TomographyDataset:
    """Counts for the full 216-setting scan plus integration metadata."""

    counts: dict
    seconds_per_setting: float = 0.0
    repetitions: int = 1

    def __post_init__(self):
        missing = set(SETTINGS_216) - set(self.counts)
        extra = set(self.counts) - set(SETTINGS_216)
        if missing or extra:
            raise ValueError(
                f"dataset must cover exactly the 216 settings "
                f"({len(missing)} missing, {len(extra)} unexpected)")
        self.counts = {k: int(v) for k, v in self.counts.items()}
        if any(v < 0 for v in self.counts.values()):
            raise ValueError("counts must be nonnegative")

    def vector(self) -> np.ndarray:
        return np.array([self.counts[s] for s in SETTINGS_216], dtype=float)

    def total(self) -> int:
        return int(sum(self.counts.values()))

    def permuted(self, order) -> "TomographyDataset":
        """Dataset with qubit labels permuted (order maps new pos -> old pos)."""
        new = {}
        for s, v in self.counts.items():
            new["".join(s[order[i]] for i in range(3))] = v
        return TomographyDataset(new, self.seconds_per_setting, self.repetitions)

    @classmethod
    def from_csv(cls, path_or_buf) -> "TomographyDataset":
        if hasattr(path_or_buf, "read"):
            text = path_or_buf.read()
        else:
            with open(path_or_buf, "r", encoding="utf-8") as fh:
                text = fh.read()
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["setting", "count"]:
            raise ValueError("tomography CSV must start with header 'setting,count'")
        counts = {}
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            counts[row[0].strip()] = int(row[1])
        return cls(counts)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["setting", "count"])
            for s in SETTINGS_216:
                writer.writerow([s, self.counts[s]])


def simulate_dataset(rho: np.ndarray, events_per_group: float, seed=None,
                     exact: bool = False,
                     seconds_per_setting: float = 0.0) -> TomographyDataset:
    """Forward-simulate counts: n_j ~ Poisson(events_per_group * p_j).

    With ``exact=True`` the expected values are used directly (rounded),
    which is handy for symmetry tests that must not carry shot noise.
    """
    probs = np.einsum("jab,ba->j", _PROJECTORS, rho).real
    mean = events_per_group * probs
    if exact:
        vals = np.round(mean).astype(int)
    else:
        rng = np.random.default_rng(seed)
        vals = rng.poisson(np.clip(mean, 0.0, None))
    return TomographyDataset(dict(zip(SETTINGS_216, vals.tolist())),
                             seconds_per_setting=seconds_per_setting)


@dataclass
class ReconstructionResult:
    rho: np.ndarray
    log_likelihood: float
    iterations: int
    converged: bool
    log_likelihood_path: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "rho_real": self.rho.real.tolist(),
            "rho_imag": self.rho.imag.tolist(),
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def group_frequencies(data: TomographyDataset) -> np.ndarray:
    """Counts normalized within each 8-projector basis triple."""
    n = data.vector()
    f = np.zeros_like(n)
    for idx in _GROUP_INDEX.values():
        tot = n[idx].sum()
        if tot > 0:
            f[idx] = n[idx] / tot
    return f


def mle_reconstruct(data: TomographyDataset, tol: float = 1e-10,
                    max_iter: int = 10_000) -> ReconstructionResult:
    """Fixed-point R rho R iteration from the maximally mixed start."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    f = group_frequencies(data)
    n = data.vector()
    rho = np.eye(8, dtype=complex) / 8.0
    ll_path = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = np.einsum("jab,ba->j", _PROJECTORS, rho).real
        p = np.clip(p, _P_FLOOR, None)
        ll_path.append(float(np.dot(n, np.log(p))))
        r_op = np.einsum("j,jab->ab", f / p, _PROJECTORS)
        new = r_op @ rho @ r_op
        new /= np.trace(new).real
        delta = float(np.max(np.abs(new - rho)))
        rho = new
        if delta < tol:
            converged = True
            break
    p = np.clip(np.einsum("jab,ba->j", _PROJECTORS, rho).real, _P_FLOOR, None)
    ll_path.append(float(np.dot(n, np.log(p))))
    rho = 0.5 * (rho + rho.conj().T)
    return ReconstructionResult(rho=rho, log_likelihood=ll_path[-1],
                                iterations=it, converged=converged,
                                log_likelihood_path=np.array(ll_path))


# ---------------------------------------------------------------------------
# optimal-settings search


@dataclass(frozen=True)
class MaxMerminResult:
    m_max: float
    settings: tuple   # ((a, a'), (b, b'), (c, c')) as quantum.Setting
    search_space: str


_PAULIS = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)


def correlation_tensor(rho: np.ndarray) -> np.ndarray:
    """T[i,j,k] = Tr(rho sigma_i x sigma_j x sigma_k) over (x, y, z)."""
    t = np.empty((3, 3, 3))
    for i in range(3):
        for j in range(3):
            op_ij = np.kron(_PAULIS[i], _PAULIS[j])
            for k in range(3):
                t[i, j, k] = np.trace(rho @ np.kron(op_ij, _PAULIS[k])).real
    return t


def _angles_to_pairs(x: np.ndarray, search_space: str):
    if search_space == "equatorial":
        s = [quantum.equatorial(a) for a in x]
    else:
        s = [quantum.Setting(theta=x[2 * i], phi=x[2 * i + 1]) for i in range(6)]
    return ((s[0], s[1]), (s[2], s[3]), (s[4], s[5]))


def _bloch_vectors(x: np.ndarray, search_space: str) -> np.ndarray:
    if search_space == "equatorial":
        return np.stack([np.cos(x), np.sin(x), np.zeros_like(x)], axis=1)
    theta, phi = x[0::2], x[1::2]
    return np.stack([np.sin(theta) * np.cos(phi),
                     np.sin(theta) * np.sin(phi),
                     np.cos(theta)], axis=1)


def max_mermin(rho: np.ndarray, search_space: str = "equatorial",
               n_starts: int = 32, seed: int = 0) -> MaxMerminResult:
    """Maximize the Mermin parameter over per-party setting pairs.

    Equatorial mode optimizes the 6 analyzer azimuths (the published
    measurements all lie on the equator); full_sphere optimizes 12 angles.
    Multi-start Nelder-Mead on the correlation tensor, cross-checked
    against the density-matrix evaluation at the optimum.
    """
    if search_space not in ("equatorial", "full_sphere"):
        raise ValueError("search_space must be 'equatorial' or 'full_sphere'")
    ndim = 6 if search_space == "equatorial" else 12
    rng = np.random.default_rng(seed)
    tensor = correlation_tensor(rho)

    def neg_m(x):
        v = _bloch_vectors(x, search_space)  # order a, a', b, b', c, c'
        a, ap, b, bp, c, cp = v
        e = np.einsum("ijk,i,j,k->", tensor, a, b, c)
        e -= np.einsum("ijk,i,j,k->", tensor, a, bp, cp)
        e -= np.einsum("ijk,i,j,k->", tensor, ap, b, cp)
        e -= np.einsum("ijk,i,j,k->", tensor, ap, bp, c)
        return -abs(e)

    best_val = -np.inf
    best_x = None
    for _ in range(max(n_starts, 1)):
        if search_space == "equatorial":
            x0 = rng.uniform(0.0, 2.0 * np.pi, ndim)
        else:
            x0 = np.empty(ndim)
            x0[0::2] = np.arccos(rng.uniform(-1.0, 1.0, 6))
            x0[1::2] = rng.uniform(0.0, 2.0 * np.pi, 6)
        res = minimize(neg_m, x0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-13,
                                "maxiter": 4000})
        if -res.fun > best_val:
            best_val = -res.fun
            best_x = res.x
    pairs = _angles_to_pairs(best_x, search_space)
    direct = quantum.mermin_parameter(rho, pairs)
    if abs(direct - best_val) > 1e-8:
        raise AssertionError(
            f"tensor and operator evaluations disagree: {best_val} vs {direct}")
    return MaxMerminResult(m_max=float(direct), settings=pairs,
                           search_space=search_space)


# ---------------------------------------------------------------------------
# error bars


@dataclass(frozen=True)
class MonteCarloResult:
    mean: float
    sigma: float
    n_samples: int
    n_not_converged: int


def monte_carlo_errors(data: TomographyDataset, n_samples: int,
                       statistic: str = "fidelity", seed=None,
                       target_ket: np.ndarray | None = None,
                       tol: float = 1e-9, max_iter: int = 2000,
                       search_space: str = "equatorial",
                       n_starts: int = 8) -> MonteCarloResult:
    """Poisson-resample the counts and re-run the reconstruction.

    ``statistic`` is "fidelity" (requires ``target_ket``) or "max_mermin".
    Returns the sample mean and standard deviation of the statistic; runs
    that hit max_iter are counted in ``n_not_converged`` but still
    contribute their best iterate.
    """
    if n_samples < 10:
        raise ValueError("n_samples must be at least 10")
    if statistic == "fidelity":
        if target_ket is None:
            raise ValueError("fidelity statistic needs target_ket")
    elif statistic != "max_mermin":
        raise ValueError(f"unknown statistic {statistic!r}")
    rng = np.random.default_rng(seed)
    base = data.vector()
    values = np.empty(n_samples)
    not_conv = 0
    for k in range(n_samples):
        resampled = rng.poisson(base)
        ds = TomographyDataset(dict(zip(SETTINGS_216, resampled.tolist())))
        rec = mle_reconstruct(ds, tol=tol, max_iter=max_iter)
        if not rec.converged:
            not_conv += 1
        if statistic == "fidelity":
            values[k] = quantum.fidelity(rec.rho, target_ket)
        else:
            values[k] = max_mermin(rec.rho, search_space=search_space,
                                   n_starts=n_starts, seed=k).m_max
    return MonteCarloResult(mean=float(values.mean()),
                            sigma=float(values.std(ddof=1)),
                            n_samples=n_samples, n_not_converged=not_conv)

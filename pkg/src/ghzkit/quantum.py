"""Exact quantum mechanics of up to three polarization qubits.

States live in the 8-dimensional product space spanned by the ordered basis

    (HHH, HHV, HVH, HVV, VHH, VHV, VVH, VVV)

with tensor slots 1, 2, 3 assigned to Alice, Bob, Charlie.  Every function
here is pure and operates on plain numpy arrays: kets are complex vectors of
length 8, density matrices are 8x8 complex arrays.

Sign conventions (fixed here, reused everywhere):
  +1 outcomes are H, D, R;  -1 outcomes are V, A, L.
The D/A and R/L states are
  D = (H + V)/sqrt2,  A = (H - V)/sqrt2,
  R = (H + iV)/sqrt2, L = (H - iV)/sqrt2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DIM = 8
BASIS_LABELS = ("HHH", "HHV", "HVH", "HVV", "VHH", "VHV", "VVH", "VVV")

_SQ2 = math.sqrt(2.0)

# Single-qubit kets in the (H, V) basis.
SINGLE_QUBIT_KETS = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([1.0, 1.0], dtype=complex) / _SQ2,
    "A": np.array([1.0, -1.0], dtype=complex) / _SQ2,
    "R": np.array([1.0, 1.0j], dtype=complex) / _SQ2,
    "L": np.array([1.0, -1.0j], dtype=complex) / _SQ2,
}

#: outcome assigned to each analyzer letter
LETTER_OUTCOME = {"H": +1, "D": +1, "R": +1, "V": -1, "A": -1, "L": -1}


@dataclass(frozen=True)
class Setting:
    """A single-qubit measurement direction on the Bloch sphere.

    ``theta`` is the polar angle from the H/V axis, ``phi`` the azimuth in
    the equatorial plane.  The +1 outcome projects onto
    cos(theta/2)|H> + e^{i phi} sin(theta/2)|V>, so

        theta=0          -> H/V   (H = +1)
        theta=pi/2,phi=0 -> D/A   (D = +1)
        theta=pi/2,phi=pi/2 -> R/L (R = +1)
    """

    theta: float
    phi: float = 0.0

    def plus_ket(self) -> np.ndarray:
        return np.array(
            [math.cos(self.theta / 2.0),
             np.exp(1j * self.phi) * math.sin(self.theta / 2.0)],
            dtype=complex,
        )

    def minus_ket(self) -> np.ndarray:
        return np.array(
            [math.sin(self.theta / 2.0),
             -np.exp(1j * self.phi) * math.cos(self.theta / 2.0)],
            dtype=complex,
        )

    def observable(self) -> np.ndarray:
        """2x2 operator with eigenvalues +1 / -1 on plus/minus kets."""
        p = self.plus_ket()
        m = self.minus_ket()
        return np.outer(p, p.conj()) - np.outer(m, m.conj())

    def bloch_vector(self) -> np.ndarray:
        return np.array(
            [math.sin(self.theta) * math.cos(self.phi),
             math.sin(self.theta) * math.sin(self.phi),
             math.cos(self.theta)]
        )


HV = Setting(0.0, 0.0)
DA = Setting(math.pi / 2.0, 0.0)
RL = Setting(math.pi / 2.0, math.pi / 2.0)

BASIS_SETTINGS = {"HV": HV, "DA": DA, "RL": RL}


def equatorial(azimuth: float) -> Setting:
    """Equatorial setting: azimuth 0 is D/A, pi/2 is R/L."""
    return Setting(math.pi / 2.0, azimuth)


def check_ket(ket: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    ket = np.asarray(ket, dtype=complex)
    if ket.shape != (DIM,):
        raise ValueError(f"ket must have shape ({DIM},), got {ket.shape}")
    norm = np.linalg.norm(ket)
    if abs(norm - 1.0) > atol:
        raise ValueError(f"ket norm {norm} deviates from 1 by more than {atol}")
    return ket


def check_density(rho: np.ndarray, atol: float = 1e-10,
                  eig_floor: float = -1e-9) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (DIM, DIM):
        raise ValueError(f"density matrix must be {DIM}x{DIM}, got {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > atol:
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > atol:
        raise ValueError(f"trace {tr} deviates from 1")
    evals = np.linalg.eigvalsh(rho)
    if evals[0] < eig_floor:
        raise ValueError(f"density matrix has negative eigenvalue {evals[0]}")
    return rho


def ghz_state(phase: float) -> np.ndarray:
    """(|HHH> + e^{i phase}|VVV>)/sqrt2 as a length-8 ket."""
    if not np.isfinite(phase):
        raise ValueError("phase must be finite")
    ket = np.zeros(DIM, dtype=complex)
    ket[0] = 1.0 / _SQ2
    ket[7] = np.exp(1j * phase) / _SQ2
    return ket


def ket_density(ket: np.ndarray) -> np.ndarray:
    ket = np.asarray(ket, dtype=complex)
    return np.outer(ket, ket.conj())


def maximally_mixed() -> np.ndarray:
    return np.eye(DIM, dtype=complex) / DIM


def werner_state(ket: np.ndarray, visibility: float) -> np.ndarray:
    """visibility * |ket><ket| + (1 - visibility) * I/8."""
    if not 0.0 <= visibility <= 1.0:
        raise ValueError("visibility must lie in [0, 1]")
    return visibility * ket_density(ket) + (1.0 - visibility) * maximally_mixed()


def projector(settings, outcomes) -> np.ndarray:
    """Rank-1 projector onto the given three-party outcome.

    ``settings`` are three Setting objects, ``outcomes`` three values in
    {+1, -1}.  Result is the tensor product of single-qubit projectors.
    """
    if len(settings) != 3 or len(outcomes) != 3:
        raise ValueError("need exactly three settings and three outcomes")
    op = np.array([[1.0]], dtype=complex)
    for s, o in zip(settings, outcomes):
        if o not in (+1, -1):
            raise ValueError(f"outcome must be +1 or -1, got {o}")
        k = s.plus_ket() if o == +1 else s.minus_ket()
        op = np.kron(op, np.outer(k, k.conj()))
    return op


def outcome_probabilities(rho: np.ndarray, settings) -> np.ndarray:
    """Born probabilities of the 8 outcome combinations.

    Index ``b`` encodes outcomes via bits: bit 2 is Alice, bit 1 Bob,
    bit 0 Charlie, with bit value 0 meaning outcome +1.
    """
    probs = np.empty(8)
    for b in range(8):
        outs = tuple(+1 if (b >> k) & 1 == 0 else -1 for k in (2, 1, 0))
        probs[b] = np.trace(rho @ projector(settings, outs)).real
    return probs


def _outcome_signs() -> np.ndarray:
    signs = np.empty(8)
    for b in range(8):
        par = ((b >> 2) & 1) + ((b >> 1) & 1) + (b & 1)
        signs[b] = -1.0 if par % 2 else 1.0
    return signs


_SIGNS = _outcome_signs()


def correlation(rho: np.ndarray, settings) -> float:
    """Three-party correlation E = sum over outcomes of (product) Tr(rho Pi).

    Evaluated as Tr(rho O1xO2xO3) with O = plus-projector minus
    minus-projector, which is the same sum collected by bilinearity; the
    explicit projector-by-projector sum lives in outcome_probabilities and
    serves as the oracle in tests.
    """
    op = np.kron(np.kron(settings[0].observable(), settings[1].observable()),
                 settings[2].observable())
    return float(np.trace(rho @ op).real)


def mermin_parameter(rho: np.ndarray, pairs, form: str = "M") -> float:
    """Mermin combination of the four correlations built from setting pairs.

    ``pairs`` is ((a, a'), (b, b'), (c, c')).  The primary form is

        M  = |E(a,b,c) - E(a,b',c') - E(a',b,c') - E(a',b',c)|

    and ``form="M_prime"`` evaluates the complementary combination
    |E(a',b',c') - E(a,b,c') - E(a,b',c) - E(a',b,c)|, which is the same
    expression with primed and unprimed settings exchanged.
    """
    (a, ap), (b, bp), (c, cp) = pairs
    if form == "M_prime":
        a, ap, b, bp, c, cp = ap, a, bp, b, cp, c
    elif form != "M":
        raise ValueError(f"unknown form {form!r}")
    m = (correlation(rho, (a, b, c))
         - correlation(rho, (a, bp, cp))
         - correlation(rho, (ap, b, cp))
         - correlation(rho, (ap, bp, c)))
    return abs(m)


#: setting pairs used throughout: unprimed = R/L, primed = D/A
STANDARD_PAIRS = ((RL, DA), (RL, DA), (RL, DA))


def fidelity(rho: np.ndarray, target_ket: np.ndarray) -> float:
    """<target| rho |target> for a pure target."""
    t = np.asarray(target_ket, dtype=complex)
    return float(np.real(t.conj() @ rho @ t))


def equatorial_correlation(phase: float, azimuths) -> float:
    """Closed form for GHZ states measured on the equator.

    For ghz_state(phase) with all parties at equatorial azimuths
    (t1, t2, t3), the correlation is cos(t1 + t2 + t3 - phase).
    """
    return math.cos(sum(azimuths) - phase)

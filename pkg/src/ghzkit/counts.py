"""Correlation and Mermin analysis of 64-setting coincidence count tables.

A count table maps each three-letter outcome string over the alphabet
{R, L, D, A} (positions = Alice, Bob, Charlie) to a nonnegative integer.
Letters R and D carry outcome +1, L and A carry -1.  Each triple of analyzer
bases ("RL" or "DA" per party) selects 8 of the 64 cells; the correlation is

    E = (N+ - N-) / N

with one standard deviation from independent Poisson counts,

    sigma_E**2 = 4 N+ N- / N**3.

A triple with N+ N- = 0 but N > 0 gets the conservative floor
sigma_E = 2/N; zero-count cells contribute nothing.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateScan, EmptySetting

LETTERS = "RLDA"
LETTER_SIGN = {"R": +1, "D": +1, "L": -1, "A": -1}

#: all 64 outcome strings, grouped by basis triple and ordered as the
#: published table: (RL,RL,RL), (RL,RL,DA), (RL,DA,RL), (RL,DA,DA),
#: (DA,RL,RL), (DA,RL,DA), (DA,DA,RL), (DA,DA,DA)
BASIS_TRIPLES = tuple(itertools.product(("RL", "DA"), repeat=3))


def outcome_strings(triple) -> tuple[str, ...]:
    """The 8 outcome strings of a basis triple, most-positive first."""
    letter_pairs = [("R", "L") if b == "RL" else ("D", "A") for b in triple]
    return tuple("".join(c) for c in itertools.product(*letter_pairs))


ALL_OUTCOME_STRINGS = tuple(s for t in BASIS_TRIPLES for s in outcome_strings(t))


class CountsTable:
    """Immutable mapping of the 64 outcome strings to event counts."""

    def __init__(self, counts: dict):
        missing = set(ALL_OUTCOME_STRINGS) - set(counts)
        extra = set(counts) - set(ALL_OUTCOME_STRINGS)
        if missing or extra:
            raise ValueError(
                f"count table must have exactly the 64 R/L/D/A outcome keys "
                f"(missing {sorted(missing)[:4]}..., extra {sorted(extra)[:4]}...)"
                if missing and extra else
                f"count table keys invalid (missing {sorted(missing)[:6]}, "
                f"unexpected {sorted(extra)[:6]})"
            )
        vals = {k: int(v) for k, v in counts.items()}
        if any(v < 0 for v in vals.values()):
            raise ValueError("counts must be nonnegative")
        self._counts = vals

    def __getitem__(self, key: str) -> int:
        return self._counts[key]

    def __eq__(self, other) -> bool:
        return isinstance(other, CountsTable) and self._counts == other._counts

    def total(self) -> int:
        return sum(self._counts.values())

    def as_dict(self) -> dict:
        return dict(self._counts)

    @classmethod
    def from_csv(cls, path_or_buf) -> "CountsTable":
        """Read a `setting,count` CSV with 64 rows."""
        if hasattr(path_or_buf, "read"):
            text = path_or_buf.read()
        else:
            with open(path_or_buf, "r", encoding="utf-8") as fh:
                text = fh.read()
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["setting", "count"]:
            raise ValueError("count CSV must start with header 'setting,count'")
        counts = {}
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 2:
                raise ValueError(f"malformed count row: {row!r}")
            counts[row[0].strip()] = int(row[1])
        return cls(counts)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["setting", "count"])
            for key in ALL_OUTCOME_STRINGS:
                writer.writerow([key, self._counts[key]])


@dataclass(frozen=True)
class CorrelationEstimate:
    value: float
    sigma: float
    n_events: int


@dataclass(frozen=True)
class MerminResult:
    m_value: float
    m_sigma: float
    form: str
    correlations: tuple  # four CorrelationEstimate, in combination order
    triples: tuple       # the four basis triples, same order


def correlation_from_counts(table: CountsTable, triple) -> CorrelationEstimate:
    """Correlation estimate for one basis triple, e.g. ("RL", "DA", "DA")."""
    n_pos = n_neg = 0
    for key in outcome_strings(triple):
        sign = LETTER_SIGN[key[0]] * LETTER_SIGN[key[1]] * LETTER_SIGN[key[2]]
        if sign > 0:
            n_pos += table[key]
        else:
            n_neg += table[key]
    n = n_pos + n_neg
    if n == 0:
        raise EmptySetting(f"all 8 counts are zero for triple {triple}")
    value = (n_pos - n_neg) / n
    sigma = float(np.sqrt(4.0 * n_pos * n_neg / n**3))
    return CorrelationEstimate(value=value, sigma=sigma, n_events=n)


def conservative_sigma(estimate: CorrelationEstimate) -> float:
    """Sigma with a 2/N floor for deterministic triples (N+ N- = 0).

    The plain Poisson formula returns sigma = 0 when every event landed on
    one sign; callers that need a nonzero uncertainty for significance
    statements can use this floor instead.  No published value relies on it.
    """
    if estimate.sigma > 0.0:
        return estimate.sigma
    return 2.0 / estimate.n_events


_UNPRIMED, _PRIMED = "RL", "DA"


def mermin_triples(form: str):
    """The four (basis triple, sign) terms of the chosen Mermin form.

    Unprimed settings (a, b, c) measure R/L, primed (a', b', c') D/A.
    Form "M" is E(a,b,c) - E(a,b',c') - E(a',b,c') - E(a',b',c);
    form "M_prime" exchanges primed and unprimed everywhere.
    """
    u, p = (_UNPRIMED, _PRIMED) if form == "M" else (_PRIMED, _UNPRIMED)
    if form not in ("M", "M_prime"):
        raise ValueError(f"form must be 'M' or 'M_prime', got {form!r}")
    return (
        ((u, u, u), +1),
        ((u, p, p), -1),
        ((p, u, p), -1),
        ((p, p, u), -1),
    )


def mermin_from_counts(table: CountsTable, form: str = "M") -> MerminResult:
    """Mermin parameter with propagated Poisson uncertainty."""
    terms = mermin_triples(form)
    estimates = []
    total = 0.0
    var = 0.0
    for triple, sign in terms:
        est = correlation_from_counts(table, triple)
        estimates.append(est)
        total += sign * est.value
        var += est.sigma**2
    return MerminResult(
        m_value=abs(total),
        m_sigma=float(np.sqrt(var)),
        form=form,
        correlations=tuple(estimates),
        triples=tuple(t for t, _ in terms),
    )


def all_correlations(table: CountsTable) -> dict:
    """All 2**3 correlations keyed by basis triple."""
    return {t: correlation_from_counts(table, t) for t in BASIS_TRIPLES}


@dataclass(frozen=True)
class PhaseScanResult:
    phase: float
    objectives: tuple   # (phase, objective, sigma) per table, input order
    flat: bool


_SCAN_STRINGS = ("RRR", "RLL", "LRL", "LLR")


def phase_scan_objective(tagged_tables) -> PhaseScanResult:
    """Pick the phase maximizing the RRR+RLL+LRL+LLR fraction.

    ``tagged_tables`` is a sequence of (phase, CountsTable).  The objective
    per table is the summed fraction of the four target outcomes within the
    all-R/L triple; its binomial sigma drives the flatness check.
    """
    if not tagged_tables:
        raise DegenerateScan("no tables supplied")
    rows = []
    for phase, table in tagged_tables:
        n = sum(table[k] for k in outcome_strings(("RL", "RL", "RL")))
        if n == 0:
            raise DegenerateScan(f"table at phase {phase} has zero R/L counts")
        k = sum(table[s] for s in _SCAN_STRINGS)
        frac = k / n
        sigma = float(np.sqrt(max(frac * (1.0 - frac), 1.0 / n) / n))
        rows.append((phase, frac, sigma))
    objs = [r[1] for r in rows]
    best = rows[int(np.argmax(objs))]
    if len(rows) == 1:
        warnings.warn("phase scan with a single table is flat by construction",
                      stacklevel=2)
        return PhaseScanResult(phase=best[0], objectives=tuple(rows), flat=True)
    lo, hi = min(rows, key=lambda r: r[1]), max(rows, key=lambda r: r[1])
    spread = hi[1] - lo[1]
    noise = float(np.hypot(hi[2], lo[2]))
    if spread <= 2.0 * noise:
        raise DegenerateScan(
            f"objective spread {spread:.4f} within statistical error {noise:.4f}")
    return PhaseScanResult(phase=best[0], objectives=tuple(rows), flat=False)


def _triple_label(triple) -> str:
    parts = []
    for name, basis in zip(("a", "b", "c"), triple):
        parts.append(name + ("'" if basis == _PRIMED else ""))
    return "E(" + ",".join(parts) + ")"


def mermin_report(table: CountsTable, form: str = "M") -> dict:
    """JSON-ready report: form, value, sigma and all eight correlations."""
    result = mermin_from_counts(table, form)
    corr = all_correlations(table)
    return {
        "form": result.form,
        "value": result.m_value,
        "sigma": result.m_sigma,
        "n_events": table.total(),
        "correlations": [
            {
                "triple": _triple_label(t),
                "bases": list(t),
                "value": est.value,
                "sigma": est.sigma,
                "n_events": est.n_events,
            }
            for t, est in corr.items()
        ],
    }


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")

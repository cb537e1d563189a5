"""Geometry and causality analysis of the distributed experiment.

GPS coordinates (WGS84 geodetic) are converted to Earth-centered Cartesian
and then to a local East-North-Up frame; straight-line distances between
stations feed light-travel times.  Delay budgets place the important events
on a common clock with t = 0 at state creation:

    measurement(station)   = total photon delay
    basis late (chooser)   = measurement - measurement entry - min basis delay
    basis early (chooser)  = measurement - measurement entry - max basis delay

Loophole margins, both positive when closed:

    freedom-of-choice: distance(source, chooser)/c - t(basis late)
    locality:          t(basis early) + distance(chooser, target)/c
                       - t(measurement at target)

Uncertainty model.  Every delay item carries a one-sigma uncertainty;
first-order quadrature propagates them.  Positions carry a per-axis sigma
(default 5 m), giving a station-pair distance sigma of
sqrt(sigma_a^2 + sigma_b^2) along the line of sight.  Delay items flagged
``position_derived`` (free-space optical links, the RF link) owe their
uncertainty to the same surveyed geometry as the distance term, so margin
sigmas count the geometric term once and exclude those items; counting both
would double the dominant contribution.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingBudget

#: speed of light fixed to match the published arithmetic exactly
C_M_PER_NS = 0.299792

# WGS84 ellipsoid
_WGS84_A = 6378137.0
_WGS84_F = 1.0 / 298.257223563
_WGS84_E2 = _WGS84_F * (2.0 - _WGS84_F)


@dataclass(frozen=True)
class GeoCoordinate:
    """Geodetic position; longitude is in degrees West as surveyed."""

    lat_deg: float
    lon_w_deg: float
    elevation_m: float
    sigma_m: float = 5.0

    def __post_init__(self):
        if not -90.0 <= self.lat_deg <= 90.0:
            raise ValueError(f"latitude {self.lat_deg} out of range")
        if not -180.0 <= self.lon_w_deg <= 180.0:
            raise ValueError(f"longitude {self.lon_w_deg} out of range")


def geodetic_to_ecef(coord: GeoCoordinate) -> np.ndarray:
    lat = math.radians(coord.lat_deg)
    lon = math.radians(-coord.lon_w_deg)
    n = _WGS84_A / math.sqrt(1.0 - _WGS84_E2 * math.sin(lat) ** 2)
    h = coord.elevation_m
    return np.array([
        (n + h) * math.cos(lat) * math.cos(lon),
        (n + h) * math.cos(lat) * math.sin(lon),
        (n * (1.0 - _WGS84_E2) + h) * math.sin(lat),
    ])


def geo_to_local(coords, origin: GeoCoordinate) -> np.ndarray:
    """East-North-Up coordinates (meters) of each point relative to origin."""
    lat = math.radians(origin.lat_deg)
    lon = math.radians(-origin.lon_w_deg)
    rot = np.array([
        [-math.sin(lon), math.cos(lon), 0.0],
        [-math.sin(lat) * math.cos(lon), -math.sin(lat) * math.sin(lon), math.cos(lat)],
        [math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)],
    ])
    o = geodetic_to_ecef(origin)
    out = np.empty((len(coords), 3))
    for i, c in enumerate(coords):
        out[i] = rot @ (geodetic_to_ecef(c) - o)
    return out


def straight_line_distance(a: GeoCoordinate, b: GeoCoordinate):
    """(distance, sigma) in meters between two surveyed points."""
    d = float(np.linalg.norm(geo_to_local([b], a)[0]))
    sigma = math.hypot(a.sigma_m, b.sigma_m)
    return d, sigma


def derive_from_corners(corners, elevation_m: float,
                        sigma_m: float = 5.0) -> GeoCoordinate:
    """Centroid of surveyed building corners as a derived location.

    The published source position came from building schematics; the plain
    centroid lands within roughly 15 m of it and is exposed for geometry
    files that lack an interior survey.
    """
    lat = sum(c.lat_deg for c in corners) / len(corners)
    lon = sum(c.lon_w_deg for c in corners) / len(corners)
    return GeoCoordinate(lat, lon, elevation_m, sigma_m)


@dataclass(frozen=True)
class DelayItem:
    """One itemized delay contribution in nanoseconds."""

    name: str
    ns: float
    sigma_ns: float = 0.0
    position_derived: bool = False


@dataclass(frozen=True)
class BasisDelayItem:
    """Basis-selection delay with distinct minimum and maximum values."""

    name: str
    min_ns: float
    max_ns: float
    sigma_ns: float = 0.0
    position_derived: bool = False


def _quad(sigmas) -> float:
    return math.sqrt(sum(s * s for s in sigmas))


@dataclass(frozen=True)
class PhotonDelayBudget:
    """Source-to-time-tagger delay items for one station's photon.

    One item must be named "Measurement": the optics-to-memory tail that is
    subtracted when locating the Pockels cell on the timeline.
    """

    items: tuple

    def __post_init__(self):
        names = [i.name for i in self.items]
        if "Measurement" not in names:
            raise MissingBudget("photon delay budget needs a 'Measurement' item")

    @property
    def total_ns(self) -> float:
        return sum(i.ns for i in self.items)

    @property
    def total_sigma_ns(self) -> float:
        return _quad(i.sigma_ns for i in self.items)

    @property
    def measurement(self) -> DelayItem:
        return next(i for i in self.items if i.name == "Measurement")

    def pockels_time_ns(self) -> float:
        """Arrival at the Pockels cell: total minus the measurement tail."""
        return self.total_ns - self.measurement.ns

    def sigma_excluding(self, *, drop_measurement: bool,
                        positional: bool) -> float:
        """Quadrature over items, optionally dropping the measurement tail
        and/or items whose sigma is position-derived."""
        sig = []
        for i in self.items:
            if drop_measurement and i.name == "Measurement":
                continue
            if not positional and i.position_derived:
                continue
            sig.append(i.sigma_ns)
        return _quad(sig)


@dataclass(frozen=True)
class BasisDelayBudget:
    """Basis-selection delay items plus optional published totals.

    When ``total_min_ns``/``total_max_ns`` are given they override the item
    sums; the published totals are rounded independently of the items and
    the margin arithmetic must match them to 0.1 ns.
    """

    items: tuple
    total_min_ns: float | None = None
    total_max_ns: float | None = None
    total_sigma_ns: float | None = None

    def __post_init__(self):
        if not self.items:
            raise MissingBudget("basis delay budget has no items")

    @property
    def min_ns(self) -> float:
        if self.total_min_ns is not None:
            return self.total_min_ns
        return sum(i.min_ns for i in self.items)

    @property
    def max_ns(self) -> float:
        if self.total_max_ns is not None:
            return self.total_max_ns
        return sum(i.max_ns for i in self.items)

    @property
    def sigma_ns(self) -> float:
        if self.total_sigma_ns is not None:
            return self.total_sigma_ns
        return _quad(i.sigma_ns for i in self.items)

    def sigma_nonpositional_ns(self) -> float:
        return _quad(i.sigma_ns for i in self.items if not i.position_derived)


@dataclass(frozen=True)
class Station:
    """A measurement station with its chooser and delay budgets.

    ``chooser`` is where the basis decision physically happens (the QRNG
    box); for the station fed over the RF link it differs from ``location``.
    """

    name: str
    location: GeoCoordinate
    chooser_name: str
    chooser: GeoCoordinate
    photon: PhotonDelayBudget
    basis: BasisDelayBudget


@dataclass(frozen=True)
class SpacetimeEvent:
    label: str
    location_name: str
    location: GeoCoordinate
    time_ns: float
    sigma_ns: float
    #: quadrature excluding position-derived delay items (see module doc)
    sigma_nonpositional_ns: float


def event_timeline(source: GeoCoordinate, stations) -> list:
    """State creation, measurement, and basis early/late events."""
    events = [SpacetimeEvent("State creation", "Source", source, 0.0, 0.0, 0.0)]
    for st in stations:
        meas_sig = st.photon.total_sigma_ns
        meas_sig_np = st.photon.sigma_excluding(drop_measurement=False,
                                                positional=False)
        events.append(SpacetimeEvent(
            f"{st.name} measurement", st.name, st.location,
            st.photon.total_ns, meas_sig, meas_sig_np))
        pc = st.photon.pockels_time_ns()
        # dropping the measurement item cancels its sigma exactly
        path_sig = st.photon.sigma_excluding(drop_measurement=True,
                                             positional=True)
        path_sig_np = st.photon.sigma_excluding(drop_measurement=True,
                                                positional=False)
        for label, delay in (("late", st.basis.min_ns), ("early", st.basis.max_ns)):
            events.append(SpacetimeEvent(
                f"{st.chooser_name} basis {label}",
                st.chooser_name, st.chooser,
                pc - delay,
                _quad([path_sig, st.basis.sigma_ns]),
                _quad([path_sig_np, st.basis.sigma_nonpositional_ns()])))
    return events


@dataclass(frozen=True)
class Tolerance:
    kind: str          # "FoC" or "locality"
    chooser: str
    target: str
    value_ns: float
    sigma_ns: float
    distance_m: float


def foc_tolerance(basis_late: SpacetimeEvent, distance_m: float,
                  distance_sigma_m: float, *, chooser: str,
                  target: str = "Source") -> Tolerance:
    """Margin by which the source light cone misses the latest basis choice."""
    value = distance_m / C_M_PER_NS - basis_late.time_ns
    sigma = _quad([basis_late.sigma_nonpositional_ns,
                   distance_sigma_m / C_M_PER_NS])
    return Tolerance("FoC", chooser, target, value, sigma, distance_m)


def locality_tolerance(basis_early: SpacetimeEvent,
                       measurement: SpacetimeEvent, distance_m: float,
                       distance_sigma_m: float) -> Tolerance:
    """Margin by which the earliest basis choice misses a remote measurement."""
    value = basis_early.time_ns + distance_m / C_M_PER_NS - measurement.time_ns
    sigma = _quad([basis_early.sigma_nonpositional_ns,
                   measurement.sigma_nonpositional_ns,
                   distance_sigma_m / C_M_PER_NS])
    return Tolerance("locality", basis_early.location_name,
                     measurement.location_name, value, sigma, distance_m)


@dataclass(frozen=True)
class ToleranceReport:
    events: tuple
    foc: tuple
    locality: tuple

    @property
    def min_foc(self) -> Tolerance:
        return min(self.foc, key=lambda t: t.value_ns)

    @property
    def min_locality(self) -> Tolerance:
        return min(self.locality, key=lambda t: t.value_ns)

    def as_dict(self) -> dict:
        def tol(t):
            return {"kind": t.kind, "chooser": t.chooser, "target": t.target,
                    "tolerance_ns": t.value_ns, "sigma_ns": t.sigma_ns,
                    "distance_m": t.distance_m}
        return {
            "events": [
                {"label": e.label, "location": e.location_name,
                 "time_ns": e.time_ns, "sigma_ns": e.sigma_ns}
                for e in self.events
            ],
            "freedom_of_choice": [tol(t) for t in self.foc],
            "locality": [tol(t) for t in self.locality],
            "min_foc_ns": tol(self.min_foc),
            "min_locality_ns": tol(self.min_locality),
        }


def full_report(source: GeoCoordinate, stations,
                distance_overrides: dict | None = None) -> ToleranceReport:
    """All FoC margins (source vs each chooser) and all locality margins
    (each chooser's earliest choice vs every other station's measurement).

    ``distance_overrides`` maps frozenset({name_a, name_b}) or "A|B" strings
    to meters, letting published rounded distances replace the geodetic
    ones pair by pair.
    """
    overrides = {}
    for key, val in (distance_overrides or {}).items():
        if isinstance(key, str):
            key = frozenset(key.split("|"))
        overrides[frozenset(key)] = float(val)

    points = {"Source": source}
    for st in stations:
        points[st.name] = st.location
        points[st.chooser_name] = st.chooser

    def dist(name_a, name_b):
        d, sig = straight_line_distance(points[name_a], points[name_b])
        key = frozenset({name_a, name_b})
        if key in overrides:
            d = overrides[key]
        return d, sig

    events = event_timeline(source, stations)
    by_label = {e.label: e for e in events}

    foc = []
    locality = []
    for st in stations:
        late = by_label[f"{st.chooser_name} basis late"]
        early = by_label[f"{st.chooser_name} basis early"]
        d, sig = dist("Source", st.chooser_name)
        foc.append(foc_tolerance(late, d, sig, chooser=st.chooser_name))
        for other in stations:
            if other.name == st.name:
                continue
            meas = by_label[f"{other.name} measurement"]
            d, sig = dist(st.chooser_name, other.name)
            locality.append(locality_tolerance(early, meas, d, sig))
    return ToleranceReport(events=tuple(events), foc=tuple(foc),
                           locality=tuple(locality))


# ---------------------------------------------------------------------------
# config files


def _delay_item(entry: dict) -> DelayItem:
    return DelayItem(
        name=entry["name"],
        ns=float(entry["ns"]),
        sigma_ns=float(entry.get("sigma_ns", 0.0)),
        position_derived=bool(entry.get("position_derived", False)),
    )


def _basis_item(entry: dict) -> BasisDelayItem:
    if "ns" in entry:
        lo = hi = float(entry["ns"])
    else:
        lo, hi = float(entry["min_ns"]), float(entry["max_ns"])
    return BasisDelayItem(
        name=entry["name"], min_ns=lo, max_ns=hi,
        sigma_ns=float(entry.get("sigma_ns", 0.0)),
        position_derived=bool(entry.get("position_derived", False)),
    )


def load_geometry(path) -> dict:
    """Read a geometry config: {"locations": [{name, lat_deg, lon_w_deg,
    elevation_m, sigma_m?}, ...]} -> dict name -> GeoCoordinate."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    out = {}
    for loc in raw["locations"]:
        out[loc["name"]] = GeoCoordinate(
            lat_deg=float(loc["lat_deg"]),
            lon_w_deg=float(loc["lon_w_deg"]),
            elevation_m=float(loc["elevation_m"]),
            sigma_m=float(loc.get("sigma_m", 5.0)),
        )
    return out


def load_stations(path, geometry: dict):
    """Read a delays config and bind it to geometry.

    Returns (source, [Station, ...], distance_overrides).
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    source = geometry[raw.get("source_location", "Source")]
    stations = []
    for entry in raw["stations"]:
        basis = entry["basis_delays"]
        stations.append(Station(
            name=entry["name"],
            location=geometry[entry["location"]],
            chooser_name=entry.get("chooser_location", entry["location"]),
            chooser=geometry[entry.get("chooser_location", entry["location"])],
            photon=PhotonDelayBudget(
                items=tuple(_delay_item(i) for i in entry["photon_delays"])),
            basis=BasisDelayBudget(
                items=tuple(_basis_item(i) for i in basis["items"]),
                total_min_ns=basis.get("total_min_ns"),
                total_max_ns=basis.get("total_max_ns"),
                total_sigma_ns=basis.get("total_sigma_ns"),
            ),
        ))
    overrides = {k: float(v)
                 for k, v in raw.get("distance_overrides_m", {}).items()}
    return source, stations, overrides

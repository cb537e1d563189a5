"""Command-line front end.

Every subcommand is reproducible given ``--seed``, supports ``--json`` for
machine-readable output, and exits 0 on success, 2 on input/config errors,
3 on numerical failures (no convergence, no histogram peak, degenerate
scans).  Plot-ready CSVs are emitted instead of figures; rendering is left
to external tools.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import counts as counts_mod
from . import data as data_mod
from . import qrng as qrng_mod
from . import quantum, simulator, spacetime, tomography
from .errors import ConfigError, NumericalFailure
from .schedules import schedule_from_manifest
from .timetag import (CoincidenceQuery, TimeTagStream, coincidences,
                      find_offset, split_tags, tag_outcomes)

_NS = 1e-9


def _emit(args, payload: dict, text_lines) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for line in text_lines:
            print(line)


# ---------------------------------------------------------------------------
# simulate


def _config_from_json(path) -> tuple:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    phase = float(raw.get("phase", -math.pi / 2.0))
    visibility = float(raw.get("visibility", 1.0))
    source = simulator.SourceConfig(
        fourfold_rate_hz=float(raw.get("fourfold_rate_hz", 39.0)),
        state=quantum.werner_state(quantum.ghz_state(phase), visibility),
        trigger_background_hz=float(raw.get("trigger_background_hz", 2000.0)),
        singles_background_hz=raw.get(
            "singles_background_hz",
            {"Alice": 500.0, "Bob": 500.0, "Charlie": 500.0}),
    )
    stations = simulator.paper_stations(raw.get("basis_mode", "qrng"))
    eff = raw.get("efficiencies")
    if eff:
        for st in stations:
            st.link_efficiency = float(eff[st.name])
    dark = raw.get("dark_rate_hz")
    if dark is not None:
        for st in stations:
            st.dark_rate_hz = float(dark)
    duration = float(raw["duration_s"])
    return source, stations, duration


def cmd_simulate(args) -> int:
    out = Path(args.out)
    runs = []
    if args.config:
        source, stations, duration = _config_from_json(args.config)
        if args.duration is not None:
            duration = args.duration
        runs.append(("run", source, stations, duration, {}))
    else:
        for sc in simulator.scenario_suite(args.scenario):
            duration = args.duration if args.duration is not None else sc.duration_s
            runs.append((sc.name, sc.source, list(sc.stations), duration,
                         sc.expected))
    summary = []
    for i, (name, source, stations, duration, expected) in enumerate(runs):
        run_dir = out if len(runs) == 1 else out / name
        artifacts = simulator.run_experiment(source, stations, duration,
                                             seed=args.seed + i)
        artifacts.write(run_dir, bit_record=not args.no_bit_record)
        summary.append({"name": name, "dir": str(run_dir),
                        "events": len(artifacts.truth),
                        "duration_s": duration, "expected": expected})
    _emit(args, {"runs": summary},
          [f"wrote {r['name']}: {r['events']} four-photon creations -> "
           f"{r['dir']}" for r in summary])
    return 0


# ---------------------------------------------------------------------------
# coincide


def _load_run(run_dir: Path):
    with open(run_dir / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    streams = {"trigger": TimeTagStream.read(run_dir / "trigger.ttag")}
    schedules = {}
    for name in simulator.STATION_NAMES:
        streams[name] = TimeTagStream.read(run_dir / f"{name.lower()}.ttag")
        schedules[name] = schedule_from_manifest(
            manifest["stations"][name]["schedule"])
    return manifest, streams, schedules


def cmd_coincide(args) -> int:
    run_dir = Path(args.run)
    manifest, streams, schedules = _load_run(run_dir)
    trig = streams["trigger"]
    ordered = [trig] + [streams[n] for n in simulator.STATION_NAMES]
    offsets = [0.0]
    for s in ordered[1:]:
        offsets.append(find_offset(trig, s, args.search_range_us * 1e-6,
                                   args.bin_ns * _NS))
    query = CoincidenceQuery(window_s=args.window_ns * _NS,
                             offsets_s=tuple(offsets))
    events = coincidences(ordered, query)
    table = tag_outcomes(events, ordered, schedules, on_gap="skip")

    out_events = Path(args.out)
    with open(out_events, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header = ["trigger_tick"]
        for n in simulator.STATION_NAMES:
            header += [f"{n}_tick", f"{n}_basis", f"{n}_outcome"]
        writer.writerow(header)
        for row in range(len(events)):
            line = [int(trig.ticks[events.indices[0][row]])]
            for j, n in enumerate(simulator.STATION_NAMES):
                s = streams[n]
                k = events.indices[j + 1][row]
                _, b, o = split_tags(s.tags[k:k + 1])
                line += [int(s.ticks[k]), int(b[0]), int(o[0])]
            writer.writerow(line)
    if args.counts:
        table.to_csv(args.counts)
    payload = {
        "n_fourfold": len(events),
        "fourfold_rate_hz": len(events) / manifest["duration_s"],
        "offsets_ns": {n: offsets[i + 1] / _NS
                       for i, n in enumerate(simulator.STATION_NAMES)},
        "events_csv": str(out_events),
        "counts_csv": args.counts,
    }
    _emit(args, payload, [
        f"four-fold events: {payload['n_fourfold']} "
        f"({payload['fourfold_rate_hz']:.3f} Hz)",
        *(f"offset {n}: {payload['offsets_ns'][n]:.1f} ns"
          for n in simulator.STATION_NAMES),
        f"events -> {out_events}" + (f", counts -> {args.counts}"
                                     if args.counts else ""),
    ])
    return 0


# ---------------------------------------------------------------------------
# mermin


def cmd_mermin(args) -> int:
    table = counts_mod.CountsTable.from_csv(args.counts)
    form = "M" if args.form == "M" else "M_prime"
    report = counts_mod.mermin_report(table, form)
    if args.out:
        counts_mod.write_report(report, args.out)
    label = "M" if form == "M" else "M'"
    lines = [f"{label} = {report['value']:.4f} +- {report['sigma']:.4f} "
             f"({report['n_events']} events)"]
    for c in report["correlations"]:
        lines.append(f"  {c['triple']:>12s} = {c['value']:+.4f} "
                     f"+- {c['sigma']:.4f}  (N = {c['n_events']})")
    _emit(args, report, lines)
    return 0


# ---------------------------------------------------------------------------
# tomo


def cmd_tomo(args) -> int:
    data = tomography.TomographyDataset.from_csv(args.data)
    rec = tomography.mle_reconstruct(data, tol=args.tol,
                                     max_iter=args.max_iter)
    payload = rec.to_json_dict()
    lines = [f"reconstruction: {rec.iterations} iterations, "
             f"converged={rec.converged}, logL={rec.log_likelihood:.2f}"]
    if args.target_phase is not None:
        f = quantum.fidelity(rec.rho, quantum.ghz_state(args.target_phase))
        payload["fidelity"] = f
        payload["target_phase"] = args.target_phase
        lines.append(f"fidelity with target GHZ({args.target_phase:+.4f}) "
                     f"= {f:.4f}")
    if args.max_mermin:
        best = tomography.max_mermin(rec.rho, search_space=args.search_space)
        payload["max_mermin"] = best.m_max
        payload["search_space"] = best.search_space
        lines.append(f"max Mermin ({best.search_space}) = {best.m_max:.4f}")
    if args.mc:
        if args.target_phase is None:
            raise ConfigError("--mc needs --target-phase for the fidelity statistic")
        mc = tomography.monte_carlo_errors(
            data, n_samples=args.mc, statistic="fidelity", seed=args.seed,
            target_ket=quantum.ghz_state(args.target_phase))
        payload["fidelity_mc"] = {"mean": mc.mean, "sigma": mc.sigma,
                                  "n_samples": mc.n_samples,
                                  "n_not_converged": mc.n_not_converged}
        lines.append(f"fidelity Monte Carlo: {mc.mean:.4f} +- {mc.sigma:.4f} "
                     f"({mc.n_samples} resamples)")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if not rec.converged:
        _emit(args, payload, lines)
        raise NumericalFailure("reconstruction hit max_iter before tolerance")
    _emit(args, payload, lines)
    return 0


# ---------------------------------------------------------------------------
# spacetime


def cmd_spacetime(args) -> int:
    geometry = spacetime.load_geometry(args.geometry or
                                       data_mod.path("geometry.json"))
    source, stations, overrides = spacetime.load_stations(
        args.delays or data_mod.path("delays.json"), geometry)
    if args.no_distance_overrides:
        overrides = {}
    report = spacetime.full_report(source, stations,
                                   distance_overrides=overrides)
    payload = report.as_dict()
    if args.pair:
        chooser, target = (p.capitalize() for p in args.pair)
        rows = [t for t in report.locality + report.foc
                if t.chooser == chooser and t.target == target]
        if not rows:
            raise ConfigError(f"no tolerance pair {chooser} -> {target}")
        lines = [f"{t.kind:9s} {t.chooser} -> {t.target}: "
                 f"{t.value_ns:.1f} +- {t.sigma_ns:.1f} ns "
                 f"(distance {t.distance_m:.2f} m)" for t in rows]
        _emit(args, {"pairs": [payload["locality"] + payload["freedom_of_choice"]]},
              lines)
        return 0
    lines = ["events (ns, relative to state creation):"]
    for e in report.events:
        lines.append(f"  {e.label:>22s} @ {e.location_name:<8s} "
                     f"t = {e.time_ns:8.1f} +- {e.sigma_ns:.1f}")
    lines.append("freedom-of-choice margins:")
    for t in report.foc:
        lines.append(f"  Source -> {t.chooser:<8s} {t.value_ns:7.1f} "
                     f"+- {t.sigma_ns:.1f} ns")
    lines.append("locality margins:")
    for t in report.locality:
        lines.append(f"  {t.chooser:<8s}-> {t.target:<8s} {t.value_ns:7.1f} "
                     f"+- {t.sigma_ns:.1f} ns")
    mf, ml = report.min_foc, report.min_locality
    lines.append(f"minimum FoC margin: {mf.value_ns:.1f} +- {mf.sigma_ns:.1f} ns "
                 f"({mf.chooser})")
    lines.append(f"minimum locality margin: {ml.value_ns:.1f} "
                 f"+- {ml.sigma_ns:.1f} ns ({ml.chooser} -> {ml.target})")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    _emit(args, payload, lines)
    return 0


# ---------------------------------------------------------------------------
# qrng-test


def cmd_qrng_test(args) -> int:
    if args.bits:
        stream = qrng_mod.BitStream.load(args.bits)
        record = None
    else:
        cfg = qrng_mod.TelegraphQrngConfig(set_rate_hz=args.set_rate,
                                           reset_rate_hz=args.reset_rate)
        stream, _ = qrng_mod.simulate_qrng(cfg, args.duration, seed=args.seed,
                                           record_events=False)
        _, record = qrng_mod.simulate_qrng(cfg, min(args.duration, 0.002),
                                           seed=args.seed + 1)
    payload = {"n_bits": len(stream), "bias": stream.bias()}
    lines = [f"bits: {len(stream)}, bias: {payload['bias']:.4f}"]
    for mode in ("unbiased", "biased"):
        res = qrng_mod.chi_square_runs(stream, mode)
        payload[f"chi2_{mode}"] = {"value": res.value, "dof": res.dof,
                                   "n_runs": res.n_runs}
        lines.append(f"run-length chi2 ({mode}): {res.value:.1f} "
                     f"(dof {res.dof}, {res.n_runs} runs)")
    if record is not None and record.n_transitions >= 10:
        tau, resid = qrng_mod.autocorrelation_fit(record)
        payload["tau_ns"] = tau / _NS
        payload["fit_residual"] = resid
        lines.append(f"autocorrelation time: {tau / _NS:.2f} ns "
                     f"(fit residual {resid:.4f})")
    if args.out:
        stream.save(args.out)
        lines.append(f"bit stream -> {args.out}")
    _emit(args, payload, lines)
    return 0


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not args.counts and not args.run:
        raise ConfigError("report needs --counts or --run")
    if args.counts:
        table = counts_mod.CountsTable.from_csv(args.counts)
    else:
        run_dir = Path(args.run)
        manifest, streams, schedules = _load_run(run_dir)
        ordered = [streams["trigger"]] + [streams[n]
                                          for n in simulator.STATION_NAMES]
        offsets = [0.0] + [find_offset(streams["trigger"], s, 10e-6, 0.5e-9)
                           for s in ordered[1:]]
        events = coincidences(ordered, CoincidenceQuery(
            window_s=args.window_ns * _NS, offsets_s=tuple(offsets)))
        table = tag_outcomes(events, ordered, schedules, on_gap="skip")
        table.to_csv(out / "counts.csv")
    report_m = counts_mod.mermin_report(table, "M")
    report_mp = counts_mod.mermin_report(table, "M_prime")
    with open(out / "correlations_bar.csv", "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["triple", "value", "sigma", "n_events"])
        for c in report_m["correlations"]:
            writer.writerow([c["triple"], f"{c['value']:.6f}",
                             f"{c['sigma']:.6f}", c["n_events"]])
    summary = {"M": {"value": report_m["value"], "sigma": report_m["sigma"]},
               "M_prime": {"value": report_mp["value"],
                           "sigma": report_mp["sigma"]},
               "n_events": report_m["n_events"]}
    geometry_path = args.geometry or data_mod.path("geometry.json")
    delays_path = args.delays or data_mod.path("delays.json")
    geometry = spacetime.load_geometry(geometry_path)
    source, stations, overrides = spacetime.load_stations(delays_path, geometry)
    st_report = spacetime.full_report(source, stations,
                                      distance_overrides=overrides)
    with open(out / "spacetime_events.csv", "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "location", "distance_from_source_m",
                         "time_ns", "sigma_ns"])
        for e in st_report.events:
            d, _ = spacetime.straight_line_distance(source, e.location)
            writer.writerow([e.label, e.location_name, f"{d:.2f}",
                             f"{e.time_ns:.1f}", f"{e.sigma_ns:.1f}"])
    summary["min_foc_ns"] = st_report.min_foc.value_ns
    summary["min_locality_ns"] = st_report.min_locality.value_ns
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _emit(args, summary, [
        f"M  = {summary['M']['value']:.4f} +- {summary['M']['sigma']:.4f}",
        f"M' = {summary['M_prime']['value']:.4f} "
        f"+- {summary['M_prime']['sigma']:.4f}",
        f"min FoC margin {summary['min_foc_ns']:.1f} ns, "
        f"min locality margin {summary['min_locality_ns']:.1f} ns",
        f"report files -> {out}",
    ])
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ghzkit",
        description="distributed three-photon Bell-test simulation and analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the Monte Carlo experiment")
    p.add_argument("--scenario", default="main_run")
    p.add_argument("--config", help="JSON run config (overrides --scenario)")
    p.add_argument("--duration", type=float, default=None,
                   help="override scenario duration in seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-bit-record", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("coincide", help="extract four-fold coincidences")
    p.add_argument("--run", required=True, help="simulate output directory")
    p.add_argument("--window-ns", type=float, default=3.0)
    p.add_argument("--search-range-us", type=float, default=10.0)
    p.add_argument("--bin-ns", type=float, default=0.5)
    p.add_argument("--out", required=True, help="events CSV path")
    p.add_argument("--counts", help="optional counts CSV path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_coincide)

    p = sub.add_parser("mermin", help="Mermin analysis of a counts CSV")
    p.add_argument("counts", nargs="?", default=str(data_mod.path("table_s4.csv")))
    p.add_argument("--form", choices=["M", "Mprime"], default="M")
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_mermin)

    p = sub.add_parser("tomo", help="maximum-likelihood state reconstruction")
    p.add_argument("--data", required=True, help="216-row setting,count CSV")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--target-phase", type=float, default=None)
    p.add_argument("--max-mermin", action="store_true")
    p.add_argument("--search-space", choices=["equatorial", "full_sphere"],
                   default="equatorial")
    p.add_argument("--mc", type=int, default=0,
                   help="Monte Carlo resamples for error bars")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSON result path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_tomo)

    p = sub.add_parser("spacetime", help="loophole-closure tolerance report")
    p.add_argument("--geometry", help="geometry JSON (default: bundled)")
    p.add_argument("--delays", help="delay-budget JSON (default: bundled)")
    p.add_argument("--pair", nargs=2, metavar=("CHOOSER", "TARGET"))
    p.add_argument("--no-distance-overrides", action="store_true",
                   help="use geodetic distances everywhere")
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_spacetime)

    p = sub.add_parser("qrng-test", help="telegraph QRNG diagnostics")
    p.add_argument("--bits", help="analyze an existing packed bit file")
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--set-rate", type=float, default=14e6)
    p.add_argument("--reset-rate", type=float, default=14e6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="save the simulated bit stream here")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_qrng_test)

    p = sub.add_parser("report", help="summary + plot-ready CSVs")
    p.add_argument("--run", help="simulate output directory")
    p.add_argument("--counts", help="counts CSV (alternative to --run)")
    p.add_argument("--window-ns", type=float, default=3.0)
    p.add_argument("--geometry")
    p.add_argument("--delays")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"ghzkit: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"ghzkit: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()

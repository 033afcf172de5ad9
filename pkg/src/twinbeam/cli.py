"""Command-line interface: simulate, fit, reconstruct, analyze, criteria, report."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io
from .criteria import enumerate_identifiers
from .errors import (DegenerateHistogramError, NumericalInstabilityError,
                     TruncationError, TwinBeamError, ZeroConditionError)
from .experiment import ExperimentConfig, analyze, simulate
from .reconstruct import em_reconstruct, fit_twin_beam
from .detector import DetectorModel, build_response

NUMERICAL_ERRORS = (NumericalInstabilityError, TruncationError,
                    DegenerateHistogramError, ZeroConditionError)


def _threads() -> int:
    raw = os.environ.get("THREADS", "1")
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"THREADS must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ValueError(f"THREADS must be >= 1, got {value}")
    return value


def _cmd_simulate(args) -> int:
    config = io.read_config(args.config)
    experiment = config.experiment
    if args.runs is not None or args.seed is not None:
        experiment = ExperimentConfig(
            twin_beam=experiment.twin_beam,
            signal_detector=experiment.signal_detector,
            idler_detector=experiment.idler_detector,
            runs=args.runs if args.runs is not None else experiment.runs,
            seed=args.seed if args.seed is not None else experiment.seed)
    hist = simulate(experiment, threads=_threads())
    io.write_histogram(hist, args.out)
    counts = hist.counts
    mean_s = np.arange(counts.shape[0]) @ counts.sum(axis=1) / hist.total
    mean_i = np.arange(counts.shape[1]) @ counts.sum(axis=0) / hist.total
    print(f"simulated {hist.total} runs: mean counts "
          f"signal={mean_s:.4f} idler={mean_i:.4f} -> {args.out}")
    return 0


def _cmd_fit(args) -> int:
    hist = io.read_histogram(args.hist)
    with open(args.geometry, "r", encoding="utf-8") as fh:
        geom_raw = json.load(fh)
    try:
        sig = geom_raw["signal_detector"]
        idl = geom_raw["idler_detector"]
        geometry = (int(sig["pixels"]), int(idl["pixels"]),
                    float(sig["dark_total"]) / int(sig["pixels"]),
                    float(idl["dark_total"]) / int(idl["pixels"]))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{args.geometry}: malformed geometry file ({exc})") from exc
    result = fit_twin_beam(hist, geometry)
    io.write_fit_result(result, {
        "signal_pixels": sig["pixels"], "signal_dark_total": sig["dark_total"],
        "idler_pixels": idl["pixels"], "idler_dark_total": idl["dark_total"],
    }, args.out)
    p = result.params
    print(f"fit {'converged' if result.converged else 'DID NOT CONVERGE'}: "
          f"M_p={p.M_p:.4g} B_p={p.B_p:.4g} M_s={p.M_s:.4g} B_s={p.B_s:.4g} "
          f"M_i={p.M_i:.4g} B_i={p.B_i:.4g} eta_s={result.eta_s:.4f} "
          f"eta_i={result.eta_i:.4f} -> {args.out}")
    return 0


def _cmd_reconstruct(args) -> int:
    hist = io.read_histogram(args.hist)
    with open(args.detector, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    model = DetectorModel.from_dict(data.get("idler_detector", data))
    if not 0 <= args.condition < hist.counts.shape[0]:
        raise ValueError(f"condition c_s={args.condition} outside histogram extent")
    row = hist.counts[args.condition]
    n_r = int(row.sum())
    if n_r == 0:
        raise DegenerateHistogramError(f"no events with c_s={args.condition}")
    response = build_response(model, n_max=args.n_max)
    padded = np.zeros(response.c_max + 1)
    padded[:row.size] = row / n_r
    dist, diag = em_reconstruct(padded, response, tol=args.tol, max_iter=args.max_iter)
    lines = ["n,probability"]
    lines += [f"{n},{float(p)!r}" for n, p in enumerate(dist.probs)]
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(json.dumps({"condition": args.condition, "n_r": n_r,
                      "iterations": diag.iterations, "converged": diag.converged,
                      "final_delta": diag.final_delta}))
    return 0


def _cmd_analyze(args) -> int:
    hist = io.read_histogram(args.hist)
    params, signal_model, idler_model = io.read_model_file(args.params)
    from .distributions import twin_beam_joint
    joint = twin_beam_joint(params)
    idler_response = build_response(idler_model, n_max=joint.n_max)
    report = analyze(hist, idler_response,
                     theory=(params, signal_model, idler_model),
                     max_order=args.max_order,
                     c_s_range=(args.c_s_min, args.c_s_max),
                     n_boot=args.bootstrap, seed=args.seed,
                     with_reconstruction=not args.no_reconstruction)
    io.write_report(report, args.out, config_echo={"params_file": str(args.params)})
    print(f"analyzed {len(report.rows)} conditional fields -> {args.out}")
    return 0


def _cmd_criteria(args) -> int:
    if args.action != "list":
        raise ValueError(f"unknown criteria action {args.action!r}")
    for spec in enumerate_identifiers(args.max_order):
        print(f"{spec.name}  :=  {spec.definition}")
    return 0


def _cmd_report(args) -> int:
    report = io.read_report(getattr(args, "in"))
    written = io.write_figure_data(report, args.figdata)
    print(f"wrote {len(written)} figure data files to {args.figdata}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twinbeam",
        description="Twin-beam photon statistics: simulation, reconstruction "
                    "and intensity-moment nonclassicality analysis.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample the experiment into a histogram CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit the twin-beam model to a joint histogram")
    p.add_argument("--hist", required=True)
    p.add_argument("--geometry", required=True,
                   help="JSON with signal_detector/idler_detector pixels and dark_total")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("reconstruct",
                       help="EM-deconvolve one conditional idler histogram")
    p.add_argument("--hist", required=True)
    p.add_argument("--condition", type=int, required=True, help="signal count c_s")
    p.add_argument("--detector", required=True, help="JSON detector model")
    p.add_argument("--out", required=True)
    p.add_argument("--n-max", type=int, default=300, dest="n_max")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=10_000, dest="max_iter")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("analyze", help="full conditional analysis report")
    p.add_argument("--hist", required=True)
    p.add_argument("--params", required=True, help="fitted-parameter JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--max-order", type=int, default=5, dest="max_order")
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--c-s-min", type=int, default=0, dest="c_s_min")
    p.add_argument("--c-s-max", type=int, default=10, dest="c_s_max")
    p.add_argument("--no-reconstruction", action="store_true")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("criteria", help="enumerate nonclassicality identifiers")
    p.add_argument("action", choices=["list"])
    p.add_argument("--max-order", type=int, default=5, dest="max_order")
    p.set_defaults(func=_cmd_criteria)

    p = sub.add_parser("report", help="emit per-figure TSV data from a report")
    p.add_argument("--in", required=True)
    p.add_argument("--figdata", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (TwinBeamError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

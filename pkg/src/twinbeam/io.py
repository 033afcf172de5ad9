"""File formats: JSON run configuration, sparse histogram CSV, JSON analysis
reports, fitted-parameter files and tab-separated figure data."""
from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .detector import DetectorModel
from .distributions import TwinBeamParams
from .errors import HistogramFormatError
from .experiment import ConditionalReport, ExperimentConfig
from .reconstruct import FitResult, JointPhotocountHistogram

HISTOGRAM_HEADER = "c_s,c_i,count"


@dataclass(frozen=True)
class RunConfig:
    """Parsed run configuration: the experiment plus analysis defaults."""

    experiment: ExperimentConfig
    max_order: int = 5
    bootstrap: int = 1000

    def __post_init__(self):
        if self.max_order < 2:
            raise ValueError("max_order must be >= 2")
        if self.bootstrap < 1:
            raise ValueError("bootstrap must be >= 1")

    def to_dict(self) -> dict:
        d = self.experiment.to_dict()
        d["max_order"] = int(self.max_order)
        d["bootstrap"] = int(self.bootstrap)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        required = {"twin_beam", "signal_detector", "idler_detector", "runs", "seed"}
        missing = required - d.keys()
        if missing:
            raise ValueError(f"config is missing keys: {sorted(missing)}")
        return cls(experiment=ExperimentConfig.from_dict(d),
                   max_order=int(d.get("max_order", 5)),
                   bootstrap=int(d.get("bootstrap", 1000)))


def read_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    try:
        return RunConfig.from_dict(data)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed config ({exc})") from exc


def write_config(config: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def bundled_config_path(name: str = "default_run") -> Path:
    """Path of a configuration shipped with the package."""
    ref = resources.files("twinbeam").joinpath("data", f"{name}.json")
    with resources.as_file(ref) as path:
        return Path(path)


def write_histogram(hist: JointPhotocountHistogram, path) -> None:
    """Sparse CSV triplets (c_s, c_i, count) in ascending cell order."""
    lines = [HISTOGRAM_HEADER]
    counts = hist.counts
    for c_s, c_i in zip(*np.nonzero(counts)):
        lines.append(f"{c_s},{c_i},{counts[c_s, c_i]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_histogram(path) -> JointPhotocountHistogram:
    """Parse sparse CSV triplets; absent cells are zero, duplicates are errors."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0].strip() != HISTOGRAM_HEADER:
        raise HistogramFormatError(f"{path}:1: expected header '{HISTOGRAM_HEADER}'")
    cells = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        pieces = line.split(",")
        if len(pieces) != 3:
            raise HistogramFormatError(f"{path}:{lineno}: expected 3 comma-separated fields")
        try:
            c_s, c_i, count = (int(piece) for piece in pieces)
        except ValueError as exc:
            raise HistogramFormatError(f"{path}:{lineno}: non-integer field ({exc})") from exc
        if c_s < 0 or c_i < 0:
            raise HistogramFormatError(f"{path}:{lineno}: negative cell index")
        if count < 0:
            raise HistogramFormatError(f"{path}:{lineno}: negative count")
        if (c_s, c_i) in cells:
            raise HistogramFormatError(f"{path}:{lineno}: duplicate cell ({c_s}, {c_i})")
        cells[(c_s, c_i)] = count
    if not cells:
        raise HistogramFormatError(f"{path}: histogram holds no cells")
    top_s = max(c for c, _ in cells)
    top_i = max(c for _, c in cells)
    counts = np.zeros((top_s + 1, top_i + 1), dtype=np.int64)
    for (c_s, c_i), count in cells.items():
        counts[c_s, c_i] = count
    return JointPhotocountHistogram(counts)


def write_fit_result(result: FitResult, geometry: dict, path) -> None:
    """Fitted twin-beam parameters plus the detector models they assume.

    ``geometry`` carries the fixed pixel counts and dark rates; the fitted
    efficiencies are merged in so the file is a complete model description.
    """
    payload = {
        "twin_beam": result.params.to_dict(),
        "signal_detector": {"pixels": int(geometry["signal_pixels"]),
                            "efficiency": float(result.eta_s),
                            "dark_total": float(geometry["signal_dark_total"])},
        "idler_detector": {"pixels": int(geometry["idler_pixels"]),
                           "efficiency": float(result.eta_i),
                           "dark_total": float(geometry["idler_dark_total"])},
        "objective_value": float(result.objective_value),
        "converged": bool(result.converged),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_model_file(path):
    """Read a fitted-parameter (or config-shaped) file into model objects."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    params = TwinBeamParams.from_dict(data["twin_beam"])
    signal = DetectorModel.from_dict(data["signal_detector"])
    idler = DetectorModel.from_dict(data["idler_detector"])
    return params, signal, idler


def _variant_dict(variant) -> dict | None:
    if variant is None:
        return None
    out = {"mean": float(variant.mean), "fano": float(variant.fano),
           "values": [float(v) for v in variant.values]}
    if variant.mean_err is not None:
        out["mean_err"] = float(variant.mean_err)
    if variant.fano_err is not None:
        out["fano_err"] = float(variant.fano_err)
    if variant.value_errs is not None:
        out["value_errs"] = [float(v) for v in variant.value_errs]
    return out


def report_to_dict(report: ConditionalReport, config_echo: dict | None = None,
                   timestamp: bool = True) -> dict:
    """JSON-ready report; ``generated_at`` is the only nondeterministic field."""
    metadata = {
        "versions": {"twinbeam": __version__, "numpy": np.__version__},
        "seed": int(report.seed),
        "n_boot": int(report.n_boot),
        "max_order": int(report.max_order),
        "identifiers": [spec.name for spec in report.identifiers],
    }
    if config_echo is not None:
        metadata["config"] = config_echo
    if timestamp:
        metadata["generated_at"] = datetime.now(timezone.utc).isoformat()
    rows = []
    for row in report.rows:
        rows.append({
            "c_s": int(row.c_s),
            "n_r": int(row.n_r),
            "low_stats": bool(row.low_stats),
            "photocount": _variant_dict(row.photocount),
            "reconstructed": _variant_dict(row.reconstructed),
            "theory": _variant_dict(row.theory),
            "em_iterations": row.em_iterations,
            "em_converged": row.em_converged,
        })
    out = {"metadata": metadata, "rows": rows,
           "f_s": [float(v) for v in report.f_s]}
    if report.f_s_theory is not None:
        out["f_s_theory"] = [float(v) for v in report.f_s_theory]
    return out


def write_report(report: ConditionalReport, path, config_echo: dict | None = None,
                 timestamp: bool = True) -> None:
    payload = report_to_dict(report, config_echo=config_echo, timestamp=timestamp)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _fig_name(identifier_name: str) -> str:
    safe = (identifier_name.replace("{", "").replace("}", "")
            .replace("^", "_").replace(",", "-"))
    return f"fig4_{safe}.tsv"


def write_figure_data(report: dict, out_dir) -> list[Path]:
    """Emit the per-figure tab-separated files from a report dictionary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name: str, header: list[str], rows: list[list]) -> None:
        lines = ["\t".join(header)]
        for row in rows:
            lines.append("\t".join("" if v is None else repr(v) if isinstance(v, float) else str(v)
                                   for v in row))
        path = out / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)

    def pick(row: dict, variant: str, key: str):
        block = row.get(variant)
        if block is None:
            return None
        return block.get(key)

    rows = report["rows"]
    emit("fig2a.tsv",
         ["c_s", "mean_c_i", "mean_c_i_err", "mean_n_i_reconstructed",
          "mean_n_i_reconstructed_err", "mean_n_i_theory"],
         [[r["c_s"], pick(r, "photocount", "mean"), pick(r, "photocount", "mean_err"),
           pick(r, "reconstructed", "mean"), pick(r, "reconstructed", "mean_err"),
           pick(r, "theory", "mean")] for r in rows])
    emit("fig2b.tsv",
         ["c_s", "fano_photocount", "fano_photocount_err", "fano_reconstructed",
          "fano_reconstructed_err", "fano_theory"],
         [[r["c_s"], pick(r, "photocount", "fano"), pick(r, "photocount", "fano_err"),
           pick(r, "reconstructed", "fano"), pick(r, "reconstructed", "fano_err"),
           pick(r, "theory", "fano")] for r in rows])

    f_s = report["f_s"]
    f_s_theory = report.get("f_s_theory")
    fig3_rows = []
    for c_s in range(max(len(f_s), len(f_s_theory or []))):
        empirical = f_s[c_s] if c_s < len(f_s) else None
        predicted = f_s_theory[c_s] if f_s_theory and c_s < len(f_s_theory) else None
        fig3_rows.append([c_s, empirical, predicted])
    emit("fig3.tsv", ["c_s", "f_s", "f_s_theory"], fig3_rows)

    names = report["metadata"]["identifiers"]
    for j, name in enumerate(names):
        def value_at(row, variant, field="values"):
            block = row.get(variant)
            if block is None or block.get(field) is None:
                return None
            return block[field][j]
        emit(_fig_name(name),
             ["c_s", "photocount", "photocount_err", "reconstructed",
              "reconstructed_err", "theory"],
             [[r["c_s"], value_at(r, "photocount"), value_at(r, "photocount", "value_errs"),
               value_at(r, "reconstructed"), value_at(r, "reconstructed", "value_errs"),
               value_at(r, "theory")] for r in rows])
    return written

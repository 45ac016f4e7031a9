"""Comparison tables across evaluated runs."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError
from .evaluation import EvalReport

METRICS_FILE = "metrics.json"
HEADER_NOTE = (
    "MSE +/- is the standard error across runs (seeds) when a row pools several runs, "
    "otherwise across test series. Lower is better; ** marks the better of LUPI/NoPI."
)


@dataclass
class ReportRow:
    task: str
    model: str
    starred: bool
    n_runs: int
    mse: float
    mse_se: float
    calibration_error: float
    sharpness: float
    best_mse: bool = False
    best_calibration: bool = False
    best_sharpness: bool = False


def load_run(run_dir) -> EvalReport:
    path = os.path.join(run_dir, METRICS_FILE)
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing metrics file {path}")
    with open(path) as fh:
        return EvalReport.from_json(fh.read())


def _label(mode, starred):
    return ("LUPI" if mode == "lupi" else "NoPI") + ("*" if starred else "")


def build_table(reports) -> list[ReportRow]:
    if not reports:
        raise ConfigError("report needs at least one run")
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.task, r.starred, r.mode), []).append(r)
    rows = []
    for (task, starred, mode), runs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2] != "nopi")):
        mses = np.array([r.mse for r in runs])
        se = float(mses.std(ddof=1) / np.sqrt(len(runs))) if len(runs) > 1 else runs[0].mse_se
        rows.append(
            ReportRow(
                task=task,
                model=_label(mode, starred),
                starred=starred,
                n_runs=len(runs),
                mse=float(mses.mean()),
                mse_se=se,
                calibration_error=float(np.mean([r.calibration_error for r in runs])),
                sharpness=float(np.mean([r.sharpness for r in runs])),
            )
        )
    by_bracket: dict = {}
    for row in rows:
        by_bracket.setdefault((row.task, row.starred), []).append(row)
    for bracket in by_bracket.values():
        if len(bracket) < 2:
            continue
        for metric, flag in (("mse", "best_mse"), ("calibration_error", "best_calibration"), ("sharpness", "best_sharpness")):
            best = min(bracket, key=lambda r: getattr(r, metric))
            setattr(best, flag, True)
    return rows


def table_to_csv(rows) -> str:
    buf = io.StringIO()
    names = [f.name for f in fields(ReportRow)]
    writer = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        d = asdict(row)
        writer.writerow({k: format(v, ".17g") if isinstance(v, float) else v for k, v in d.items()})
    return buf.getvalue()


def table_from_csv(text) -> list[ReportRow]:
    rows = []
    for d in csv.DictReader(io.StringIO(text)):
        rows.append(
            ReportRow(
                task=d["task"],
                model=d["model"],
                starred=d["starred"] == "True",
                n_runs=int(d["n_runs"]),
                mse=float(d["mse"]),
                mse_se=float(d["mse_se"]),
                calibration_error=float(d["calibration_error"]),
                sharpness=float(d["sharpness"]),
                best_mse=d["best_mse"] == "True",
                best_calibration=d["best_calibration"] == "True",
                best_sharpness=d["best_sharpness"] == "True",
            )
        )
    return rows


def format_table(rows) -> str:
    def mark(text, flag):
        return f"**{text}**" if flag else text

    lines = [HEADER_NOTE, ""]
    head = f"{'task':<16}{'model':<8}{'runs':>5}  {'MSE':>22}  {'calib. error':>14}  {'sharpness':>12}"
    lines += [head, "-" * len(head)]
    for r in rows:
        mse = mark(f"{r.mse:.4f} +/- {r.mse_se:.4f}", r.best_mse)
        cal = mark(f"{r.calibration_error:.4f}", r.best_calibration)
        sha = mark(f"{r.sharpness:.4f}", r.best_sharpness)
        lines.append(f"{r.task:<16}{r.model:<8}{r.n_runs:>5}  {mse:>22}  {cal:>14}  {sha:>12}")
    return "\n".join(lines) + "\n"

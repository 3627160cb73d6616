"""Deterministic CSV / JSON artifact writers.

All floats are rendered with 17 significant digits so repeated runs with the
same inputs produce byte-identical files; metadata sidecars are JSON with
sorted keys and no timestamps.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bellman import GridFunction
from .dynamics import Trajectory
from .verify import VerificationReport


def fmt(v: float) -> str:
    return f"{float(v):.17g}"


def write_grid_function(path: Path, gf: GridFunction) -> None:
    grid = gf.grid
    coords = grid.coordinates()
    header = ",".join(f"x_{j + 1}" for j in range(grid.dimension)) + ",value"
    lines = [header]
    for row, v in zip(coords, gf.values):
        lines.append(",".join(fmt(c) for c in row) + "," + fmt(v))
    path.write_text("\n".join(lines) + "\n")
    meta = {
        "class": gf.class_tag.kind,
        "parameter": gf.class_tag.param,
        "truncation": gf.truncation,
        "iterations": gf.iterations,
        "final_residual": gf.final_residual,
        "time_step": gf.time_step,
        "converged": gf.converged,
        "grid": {"dimension": grid.dimension, "half_width": grid.half_width,
                 "spacing": grid.spacing},
    }
    path.with_suffix(".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def write_trajectory(path: Path, traj: Trajectory) -> None:
    n = traj.states.shape[1]
    d = traj.alpha1.shape[1] if traj.steps else n
    cols = ["t"] + [f"x_{j + 1}" for j in range(n)] \
        + [f"alpha1_{j + 1}" for j in range(d)] + [f"alpha2_{j + 1}" for j in range(d)] \
        + ["mu", "regime"]
    lines = [",".join(cols)]
    names = {0: "interface", 1: "omega1", 2: "omega2"}
    for k in range(traj.steps):
        row = [fmt(traj.times[k])] + [fmt(c) for c in traj.states[k]] \
            + [fmt(c) for c in traj.alpha1[k]] + [fmt(c) for c in traj.alpha2[k]] \
            + [fmt(traj.mu[k]), names[int(traj.regimes[k])]]
        lines.append(",".join(row))
    final = [fmt(traj.times[-1])] + [fmt(c) for c in traj.states[-1]] \
        + ["" for _ in range(2 * d)] + ["", "end"]
    lines.append(",".join(final))
    path.write_text("\n".join(lines) + "\n")


def write_report(path: Path, report: VerificationReport) -> None:
    lines = ["check,status,margin,tolerance,provenance,details"]
    for check_id, status, margin, tol, prov, details in report.rows():
        esc = details.replace(",", ";")
        lines.append(f"{check_id},{status},{fmt(margin)},{fmt(tol)},{prov.replace(',', ';')},{esc}")
    path.write_text("\n".join(lines) + "\n")


def write_table(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) if isinstance(v, (int, float, np.floating)) else str(v)
                              for v in row))
    path.write_text("\n".join(lines) + "\n")

"""Run directories, CSV/JSON exports and the run manifest.

Numbers are written with 17 significant digits so that reruns can be
compared byte for byte.  Timestamps only appear in ``manifest.json``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .state import StateTrajectory, energy

__all__ = [
    "OUTPUT_ROOT_ENV",
    "RunDirectory",
    "fmt",
    "resolve_run_dir",
    "export_timeseries",
    "export_adjoint",
    "export_boundary",
    "export_quench",
    "export_decay",
    "export_gradient_check",
]

OUTPUT_ROOT_ENV = "CHQUENCH_OUTPUT_ROOT"


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def resolve_run_dir(output: str, override: str | None = None) -> Path:
    """``override`` wins, then ``$CHQUENCH_OUTPUT_ROOT/output``, then ``output``."""
    if override:
        return Path(override)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root) / output if root else Path(output)


class RunDirectory:
    """Writes files into one directory and records them for the manifest."""

    def __init__(self, path, kind: str):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.kind = kind
        self.files: list[str] = []
        self.started = datetime.now(timezone.utc).isoformat()

    def _record(self, name):
        if name not in self.files:
            self.files.append(name)

    def write_csv(self, name: str, header, rows):
        with open(self.path / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
        self._record(name)

    def write_json(self, name: str, obj):
        with open(self.path / name, "w") as fh:
            json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self._record(name)

    def write_manifest(self, config_sha: str, metrics: dict, failures=()):
        inventory = []
        for name in self.files:
            data = (self.path / name).read_bytes()
            inventory.append({"name": name, "bytes": len(data),
                              "sha256": hashlib.sha256(data).hexdigest()})
        manifest = {
            "kind": self.kind,
            "version": __version__,
            "config_sha256": config_sha,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "files": inventory,
            "metrics": metrics,
            "failures": list(failures),
        }
        with open(self.path / "manifest.json", "w") as fh:
            json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return manifest


def _coord_header(dim):
    return ["x"] if dim == 1 else ["x", "y"]


def export_timeseries(run: RunDirectory, traj: StateTrajectory, u) -> None:
    """``state_tXXXX.csv`` per time level, ``metrics.csv`` and ``trajectory.json``."""
    model = traj.model
    g = model.grid
    u = np.asarray(u, dtype=float)
    for k, t in enumerate(traj.times):
        rows = (list(c) + [y, w] for c, y, w in zip(g.coords, traj.y[k], traj.w[k]))
        run.write_csv(f"state_t{k:04d}.csv", _coord_header(g.dim) + ["y", "w"], rows)
    mass = traj.y @ g.mass / g.volume
    # the step into t_k is forced by the mean control over the step
    u_step = np.vstack([u[:1], 0.5 * (u[1:] + u[:-1])])
    en = [energy(model, traj.y[k], u_step[k], traj.alpha) for k in range(len(traj.times))]
    run.write_csv("metrics.csv", ["time", "mass", "energy", "bound_margin"],
                  zip(traj.times, mass, en, traj.margins))
    run.write_json("trajectory.json", {
        "kind": "state",
        "alpha": traj.alpha,
        "times": traj.times,
        "newton_iterations": [s.iterations for s in traj.steps],
        "substeps": [s.substeps for s in traj.steps],
        "residuals": [s.residual for s in traj.steps],
        "mass_error_max": float(traj.mass_error.max()),
        "min_margin": float(traj.margins.min()),
        "monitors": traj.monitors(),
    })


def export_adjoint(run: RunDirectory, adjoint) -> None:
    g = adjoint.traj.model.grid
    for k, t in enumerate(adjoint.times):
        rows = (list(c) + [q, p] for c, q, p in zip(g.coords, adjoint.q[k], adjoint.p[k]))
        run.write_csv(f"adjoint_t{k:04d}.csv", _coord_header(g.dim) + ["q", "p"], rows)
    run.write_json("adjoint.json", {
        "kind": "adjoint",
        "alpha": adjoint.alpha,
        "times": adjoint.times,
        "beta": adjoint.weights.as_tuple(),
        "max_abs_mean_q": float(np.max(np.abs(adjoint.mean_q()))),
        "monitors": adjoint.monitors(),
    })


def export_boundary(run: RunDirectory, traj: StateTrajectory, u, q_gamma=None) -> None:
    """``boundary.csv``: one row per (time, boundary node); missing fields are nan."""
    yb = traj.y_gamma
    u = np.asarray(u, dtype=float)
    rows = []
    for k, t in enumerate(traj.times):
        for j in range(yb.shape[1]):
            q = float("nan") if q_gamma is None else q_gamma[k, j]
            rows.append((t, j, yb[k, j], u[k, j], q))
    run.write_csv("boundary.csv", ["time", "node", "y_Gamma", "u_Gamma", "q_Gamma"], rows)


def export_quench(run: RunDirectory, report, comp: dict) -> None:
    cols = ["alpha", "cost", "adapted_cost", "anchor_penalty", "increment", "stationarity",
            "iterations", "converged", "lam_q", "lam_q_gamma", "interior_decay",
            "concentration", "concentration_bound", "q_sup", "min_margin"]
    rows = []
    for st in report.stages:
        r = st.row()
        rows.append([r.get(c, float("nan")) for c in cols])
    run.write_csv("quench.csv", cols, rows)


def export_decay(run: RunDirectory, table) -> None:
    run.write_csv("decay.csv", ["alpha", "l2_Q", "l2_Sigma", "max_abs"],
                  zip(table.alphas, table.l2_q, table.l2_sigma, table.max_abs))


def export_gradient_check(run: RunDirectory, report) -> None:
    run.write_csv("gradient_check.csv",
                  ["direction", "step", "finite_difference", "adjoint", "relative_error"],
                  report.rows)

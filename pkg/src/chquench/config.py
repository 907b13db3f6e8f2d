"""Run configuration: TOML schema, validation and construction of solver objects.

Every problem is rejected before any solve if it violates the modelling
assumptions; messages name the assumption (``A1`` ... ``A6``) and the line
of the offending key when it can be located.
"""

from __future__ import annotations

import copy
import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .adjoint import CostWeights, Targets
from .control import Admissible
from .errors import ConfigError
from .expressions import ExpressionError, load_field
from .geometry import build_grid
from .oracles import FDGradientSpec, ObstacleOptions
from .potentials import LogPotential, Potentials, QuenchScaling, SmoothPotential
from .quench import QuenchSchedule
from .state import Model, NewtonOptions

__all__ = ["RunConfig", "load_config", "parse_config", "DEFAULTS"]

DEFAULTS = {
    "seed": 0,
    "output": "run",
    "grid": {"dim": 1, "cells": [64], "lengths": [1.0]},
    "time": {"T": 0.1, "steps": 20},
    "initial": {"y0": "0.5*cos(pi*x)"},
    "potentials": {"c_hat": 1.0, "f2": [0.5, 0.0, -0.5], "g2": [0.5, 0.0, -0.5]},
    "quench": {
        "p_phi": 1.0, "p_psi": 1.0, "c_phipsi": 1.0, "alpha": 0.03125,
        "alpha0": 1.0, "ratio": 0.5, "alpha_min": 1.0 / 1024,
        "base_tol": 1e-7, "tol_factor": 1e-4, "adapted": False,
    },
    "control": {"lower": "-1", "upper": "1", "M0": 10.0, "penalty": 0.0, "initial": "0"},
    "cost": {
        "beta": [1.0, 1.0, 0.0, 0.0, 0.01],
        "z_Q": "0.2", "z_Sigma": "0.2", "z_Omega": "0", "z_Gamma": "0",
    },
    "solver": {
        "newton_tol": 1e-10, "newton_max_iter": 50, "retry_cap": 5,
        "opt_tol": 1e-7, "opt_max_iter": 500,
        "fd_steps": [1e-3, 1e-4, 1e-5, 1e-6], "fd_directions": 20, "fd_threshold": 1e-6,
        "oracle_outer_tol": 1e-9, "oracle_control": "0.1",
        "decay_threshold": 5e-3,
    },
}

_SCALAR_TYPES = (int, float)


def _locate(text: str, section: str | None, key: str) -> int | None:
    """1-based line of ``key = ...`` inside ``[section]`` (top level if None)."""
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]", stripped)
        if m:
            current = m.group(1)
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return no
    return None


def _section_line(text: str, section: str) -> int | None:
    for no, line in enumerate(text.splitlines(), 1):
        if re.match(rf"^\[\s*{re.escape(section)}\s*\]", line.strip()):
            return no
    return None


def _merge(defaults: dict, data: dict, text: str, section: str | None = None) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in data.items():
        if key not in defaults:
            where = _section_line(text, key) if section is None and isinstance(val, dict) \
                else _locate(text, section, key)
            name = f"[{section}] {key}" if section else key
            raise ConfigError(f"unknown config key {name!r}", line=where)
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{key!r} must be a table", line=_locate(text, section, key))
            out[key] = _merge(defaults[key], val, text, key)
        else:
            out[key] = val
    return out


@dataclass(eq=False)
class RunConfig:
    """Validated configuration with the solver objects it describes."""

    data: dict
    text: str
    path: Path | None
    model: Model = field(repr=False)
    targets: Targets = field(repr=False)
    weights: CostWeights = field(repr=False)
    admissible: Admissible = field(repr=False)
    schedule: QuenchSchedule = field(repr=False)
    newton: NewtonOptions = field(repr=False)
    u_initial: np.ndarray = field(repr=False)
    oracle_control: np.ndarray = field(repr=False)
    fd_spec: FDGradientSpec = field(repr=False)
    oracle_options: ObstacleOptions = field(repr=False)

    @property
    def alpha(self) -> float:
        return float(self.data["quench"]["alpha"])

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def output(self) -> str:
        return str(self.data["output"])

    @property
    def solver(self) -> dict:
        return self.data["solver"]

    @property
    def adapted(self) -> bool:
        return bool(self.data["quench"]["adapted"])

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


class _Checker:
    def __init__(self, text: str):
        self.text = text

    def fail(self, section, key, message, assumption=None):
        tag = f" ({assumption})" if assumption else ""
        raise ConfigError(f"[{section}] {key}: {message}{tag}", assumption,
                          _locate(self.text, section, key))

    def number(self, cfg, section, key, positive=False, integer=False, minimum=None):
        val = cfg[section][key]
        if isinstance(val, bool) or not isinstance(val, _SCALAR_TYPES):
            self.fail(section, key, f"expected a number, got {val!r}")
        if integer and int(val) != val:
            self.fail(section, key, f"expected an integer, got {val!r}")
        if not math.isfinite(val):
            self.fail(section, key, "must be finite")
        if positive and not val > 0:
            self.fail(section, key, f"must be positive, got {val!r}")
        if minimum is not None and val < minimum:
            self.fail(section, key, f"must be at least {minimum}, got {val!r}")
        return int(val) if integer else float(val)

    def numbers(self, cfg, section, key, length=None):
        val = cfg[section][key]
        if not isinstance(val, list) or not all(
                isinstance(v, _SCALAR_TYPES) and not isinstance(v, bool) for v in val):
            self.fail(section, key, f"expected a list of numbers, got {val!r}")
        if length is not None and len(val) != length:
            self.fail(section, key, f"expected {length} entries, got {len(val)}")
        if not all(math.isfinite(v) for v in val):
            self.fail(section, key, "entries must be finite")
        return [float(v) for v in val]

    def field(self, cfg, section, key, coords, times=None, base_dir=None, assumption=None):
        spec = cfg[section][key]
        if isinstance(spec, bool) or not isinstance(spec, (str, int, float)):
            self.fail(section, key, f"expected an expression, number or CSV path, got {spec!r}")
        try:
            vals = load_field(spec, coords, times, base_dir)
        except ExpressionError as exc:
            self.fail(section, key, str(exc), assumption)
        if not np.all(np.isfinite(vals)):
            self.fail(section, key, "field values must be finite", assumption)
        return vals


def parse_config(text: str, path: Path | None = None) -> RunConfig:
    """Parse and validate a TOML config string."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"invalid TOML: {exc}", line=int(m.group(1)) if m else None) from None
    cfg = _merge(DEFAULTS, raw, text)
    ck = _Checker(text)
    base_dir = path.parent if path is not None else None

    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer", line=_locate(text, None, "seed"))
    if not isinstance(cfg["output"], str) or not cfg["output"].strip():
        raise ConfigError("output must be a nonempty string", line=_locate(text, None, "output"))

    # grid and time
    dim = ck.number(cfg, "grid", "dim", integer=True)
    if dim not in (1, 2):
        ck.fail("grid", "dim", f"must be 1 or 2, got {dim}")
    cells = ck.numbers(cfg, "grid", "cells", dim)
    lengths = ck.numbers(cfg, "grid", "lengths", dim)
    if any(int(c) != c or c < 4 for c in cells):
        ck.fail("grid", "cells", "need integers >= 4")
    if any(L <= 0 for L in lengths):
        ck.fail("grid", "lengths", "must be positive")
    grid = build_grid(dim, [int(c) for c in cells], lengths)
    T = ck.number(cfg, "time", "T", positive=True)
    steps = ck.number(cfg, "time", "steps", integer=True, minimum=1)

    # free energy
    c_hat = ck.number(cfg, "potentials", "c_hat", positive=True)
    f2 = ck.numbers(cfg, "potentials", "f2")
    g2 = ck.numbers(cfg, "potentials", "g2")
    if not f2:
        ck.fail("potentials", "f2", "need at least one coefficient", "A2")
    if not g2:
        ck.fail("potentials", "g2", "need at least one coefficient", "A2")
    p_phi = ck.number(cfg, "quench", "p_phi", positive=True)
    p_psi = ck.number(cfg, "quench", "p_psi", positive=True)
    c_pp = ck.number(cfg, "quench", "c_phipsi", positive=True)
    if p_phi < p_psi:
        ck.fail("quench", "p_phi", "phi(alpha) <= C psi(alpha) on (0, 1] needs p_phi >= p_psi")
    if c_pp < 1.0:
        ck.fail("quench", "c_phipsi", "phi(alpha) <= C psi(alpha) at alpha = 1 needs C >= 1")
    potentials = Potentials(LogPotential(c_hat), SmoothPotential(tuple(f2), tuple(g2)),
                            QuenchScaling(p_phi, p_psi, c_pp))

    alpha = ck.number(cfg, "quench", "alpha")
    if not 0.0 < alpha <= 1.0:
        ck.fail("quench", "alpha", f"must lie in (0, 1], got {alpha}")
    a0 = ck.number(cfg, "quench", "alpha0")
    ratio = ck.number(cfg, "quench", "ratio")
    a_min = ck.number(cfg, "quench", "alpha_min", positive=True)
    if not 0.0 < a0 <= 1.0:
        ck.fail("quench", "alpha0", f"must lie in (0, 1], got {a0}")
    if not 0.0 < ratio < 1.0:
        ck.fail("quench", "ratio", f"must lie in (0, 1), got {ratio}")
    if a_min > a0:
        ck.fail("quench", "alpha_min", "must not exceed alpha0")
    if not isinstance(cfg["quench"]["adapted"], bool):
        ck.fail("quench", "adapted", "must be true or false")
    schedule = QuenchSchedule(
        a0, ratio, a_min,
        base_tol=ck.number(cfg, "quench", "base_tol", positive=True),
        tol_factor=ck.number(cfg, "quench", "tol_factor", minimum=0.0),
        max_iter=ck.number(cfg, "solver", "opt_max_iter", integer=True, minimum=1),
    )

    # initial datum
    y0 = ck.field(cfg, "initial", "y0", grid.coords, base_dir=base_dir, assumption="A3")
    if not np.all(np.abs(y0) < 1.0):
        ck.fail("initial", "y0", f"initial datum must satisfy -1 < y0 < 1, max |y0| = "
                f"{float(np.max(np.abs(y0))):.17g}", "A3")
    model = Model(grid, potentials, y0, T, steps)

    # cost
    beta = ck.numbers(cfg, "cost", "beta", 5)
    if any(b < 0 for b in beta):
        ck.fail("cost", "beta", "weights must be nonnegative", "A1")
    if all(b == 0 for b in beta):
        ck.fail("cost", "beta", "weights must not all vanish", "A1")
    if beta[2] != 0 or beta[3] != 0:
        ck.fail("cost", "beta", "final-time weights beta3 and beta4 must be zero", "A6")
    weights = CostWeights(*beta)
    bcoords = grid.coords[grid.boundary]
    times = model.times
    z_q = ck.field(cfg, "cost", "z_Q", grid.coords, times, base_dir, "A1")
    z_s = ck.field(cfg, "cost", "z_Sigma", bcoords, times, base_dir, "A1")
    z_o = ck.field(cfg, "cost", "z_Omega", grid.coords, base_dir=base_dir, assumption="A1")
    z_g = ck.field(cfg, "cost", "z_Gamma", bcoords, base_dir=base_dir, assumption="A1")
    targets = Targets(z_q, z_s, z_o, z_g)

    # admissible controls
    lower = ck.field(cfg, "control", "lower", bcoords, times, base_dir, "A1")
    upper = ck.field(cfg, "control", "upper", bcoords, times, base_dir, "A1")
    if np.any(lower > upper):
        ck.fail("control", "upper", "bounds need lower <= upper everywhere on the boundary "
                "space-time grid, otherwise no control is admissible", "A1")
    m0 = ck.number(cfg, "control", "M0", positive=True)
    penalty = ck.number(cfg, "control", "penalty", minimum=0.0)
    admissible = Admissible(lower, upper, m0, penalty)
    u_init = ck.field(cfg, "control", "initial", bcoords, times, base_dir)
    oracle_u = ck.field(cfg, "solver", "oracle_control", bcoords, times, base_dir)

    newton = NewtonOptions(
        tol=ck.number(cfg, "solver", "newton_tol", positive=True),
        max_iter=ck.number(cfg, "solver", "newton_max_iter", integer=True, minimum=1),
        retry_cap=ck.number(cfg, "solver", "retry_cap", integer=True, minimum=0),
    )
    ck.number(cfg, "solver", "opt_tol", positive=True)
    ck.number(cfg, "solver", "fd_threshold", positive=True)
    ck.number(cfg, "solver", "decay_threshold", positive=True)
    fd_steps = ck.numbers(cfg, "solver", "fd_steps")
    try:
        fd_spec = FDGradientSpec(tuple(fd_steps), int(cfg["seed"]),
                                 ck.number(cfg, "solver", "fd_directions", integer=True,
                                           minimum=1))
    except ValueError as exc:
        ck.fail("solver", "fd_steps", str(exc))
    oracle_opts = ObstacleOptions(
        outer_tol=ck.number(cfg, "solver", "oracle_outer_tol", positive=True))

    return RunConfig(cfg, text, path, model, targets, weights, admissible, schedule, newton,
                     u_init, oracle_u, fd_spec, oracle_opts)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}") from None
    return parse_config(text, path)

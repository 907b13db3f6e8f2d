from pathlib import Path

import numpy as np
import pytest

from chquench.config import DEFAULTS, load_config, parse_config
from chquench.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_defaults_build_the_reference_problem():
    cfg = parse_config("")
    m = cfg.model
    assert m.grid.n_nodes == 65 and m.n_steps == 20 and m.T == 0.1
    assert np.allclose(m.y0, 0.5 * np.cos(np.pi * m.grid.coords[:, 0]))
    assert cfg.weights.as_tuple() == (1.0, 1.0, 0.0, 0.0, 0.01)
    assert cfg.schedule.alphas[-1] == 1 / 1024
    assert cfg.alpha == 0.03125 and cfg.seed == 0 and not cfg.adapted
    assert np.all(cfg.targets.z_q == 0.2)
    assert cfg.admissible.m0_bound == 10.0 and cfg.admissible.penalty == 0.0
    assert cfg.fd_spec.n_directions == 20


def test_shipped_configs_load():
    ref = load_config(CONFIGS / "acceptance.toml")
    dflt = parse_config("")
    assert np.array_equal(ref.model.y0, dflt.model.y0)
    assert ref.weights == dflt.weights
    assert len(ref.sha256) == 64
    load_config(CONFIGS / "stationary.toml")


def _error(text):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    return exc.value


@pytest.mark.parametrize("text,assumption,line", [
    ("[cost]\nbeta = [1, 1, 0.1, 0, 0]\n", "A6", 2),
    ("[cost]\nbeta = [1, 1, 0, 0.5, 0]\n", "A6", 2),
    ("[cost]\nbeta = [0, 0, 0, 0, 0]\n", "A1", 2),
    ("[cost]\nbeta = [-1, 1, 0, 0, 0]\n", "A1", 2),
    ("\n[control]\nlower = \"0.5\"\nupper = \"0.2\"\n", "A1", 4),
    ("[initial]\ny0 = \"1.0\"\n", "A3", 2),
    ("[initial]\ny0 = \"foo(x)\"\n", "A3", 2),
    ("[potentials]\nf2 = []\n", "A2", 2),
])
def test_assumption_violations_are_cited(text, assumption, line):
    err = _error(text)
    assert err.assumption == assumption
    assert f"({assumption})" in str(err)
    assert err.line == line and str(err).startswith(f"line {line}:")


@pytest.mark.parametrize("text,fragment", [
    ("bogus = 1\n", "unknown config key"),
    ("[grid]\nsize = 3\n", "unknown config key '[grid] size'"),
    ("[nope]\nx = 1\n", "unknown config key 'nope'"),
    ("grid = 3\n", "must be a table"),
    ("[grid]\ndim = 3\n", "must be 1 or 2"),
    ("[grid]\ncells = [2]\n", "integers >= 4"),
    ("[grid]\ndim = 2\n", "expected 2 entries"),
    ("[time]\nT = -1\n", "must be positive"),
    ("[time]\nsteps = 2.5\n", "integer"),
    ("[quench]\nalpha = 0\n", "(0, 1]"),
    ("[quench]\nratio = 1\n", "(0, 1)"),
    ("[quench]\np_phi = 1\np_psi = 2\n", "p_phi >= p_psi"),
    ("[quench]\nadapted = 1\n", "true or false"),
    ("[control]\nM0 = 0\n", "must be positive"),
    ("[solver]\nfd_steps = [1e-6, 1e-3]\n", "decreasing"),
    ("seed = -1\n", "seed"),
    ("x = [\n", "invalid TOML"),
    ("[time]\nT = \"a\"\n", "expected a number"),
])
def test_schema_errors(text, fragment):
    assert fragment in str(_error(text))


def test_unknown_key_line_is_reported():
    err = _error("seed = 1\n\n[time]\nT = 0.1\nstep = 3\n")
    assert err.line == 5


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/config.toml")


def test_fields_from_csv(tmp_path):
    times = np.linspace(0, 0.1, 21)
    lower = np.tile([-0.5, -0.25], (21, 1)) + times[:, None]
    np.savetxt(tmp_path / "lower.csv", lower, delimiter=",")
    path = tmp_path / "c.toml"
    path.write_text('[control]\nlower = "lower.csv"\n')
    cfg = load_config(path)
    assert np.array_equal(cfg.admissible.lower, lower)


def test_defaults_are_not_mutated():
    parse_config("[grid]\ncells = [32]\n")
    assert DEFAULTS["grid"]["cells"] == [64]

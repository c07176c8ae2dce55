from __future__ import annotations

import math

import numpy as np
import pytest

from patchyhjb import harness
from patchyhjb.errors import ConfigError
from patchyhjb.partition import ALBREKHT_ID, build_atlas
from patchyhjb.problem import QuadraticOracle, TestProblemOracle


# configuration ---------------------------------------------------------------------------------


def test_parse_config_values():
    cfg = harness.parse_config("""
        # comment line
        problem = lqr2d
        d = 2          # inline comment
        h = 0.4
        rings = 3
        counts = 8, 12, 16
        c0 = none
    """)
    assert (cfg.problem, cfg.d, cfg.h, cfg.rings, cfg.counts, cfg.c0) == ("lqr2d", 2, 0.4, 3, [8, 12, 16], None)


def test_parse_config_overrides_and_errors():
    assert harness.parse_config("d = 2", {"d": "3"}).d == 3
    with pytest.raises(ConfigError, match="unknown config keys: colour"):
        harness.parse_config("colour = red")
    with pytest.raises(ConfigError):
        harness.parse_config("d = 4")
    with pytest.raises(ConfigError):
        harness.parse_config("h = -1")
    with pytest.raises(ConfigError):
        harness.parse_config("rings = 0")
    with pytest.raises(ConfigError):
        harness.parse_config("rings = 2\ncounts = 8")
    with pytest.raises(ConfigError):
        harness.parse_config("h = abc")


def test_output_dir_env_override(monkeypatch):
    cfg = harness.parse_config("output_dir = here")
    monkeypatch.delenv(harness.OUTPUT_ENV, raising=False)
    assert cfg.resolved_output_dir() == "here"
    monkeypatch.setenv(harness.OUTPUT_ENV, "/tmp/elsewhere")
    assert cfg.resolved_output_dir() == "/tmp/elsewhere"


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        harness.load_config(str(tmp_path / "missing.cfg"))


# error grid ------------------------------------------------------------------------------------


def test_error_grid_reproduction(repro_atlas):
    rep = harness.error_grid(repro_atlas, TestProblemOracle())
    assert len(rep.points) == 10000
    assert rep.max_error <= 1e-2
    assert rep.max_error >= rep.mean_error >= 0.0
    assert 0.0 < rep.coverage < 1.0
    assert rep.excluded == int(round((1 - rep.coverage) * 10000))
    assert rep.summary().startswith("max_abs_error=")


def test_error_grid_lqr(lqr_atlas):
    rep = harness.error_grid(lqr_atlas, QuadraticOracle(lqr_atlas.albrekht.riccati))
    assert rep.max_error < 1e-9


def test_error_grid_empty_atlas(test_problem):
    atlas = build_atlas(test_problem, 3, 0.5, 0, albrekht_radius=0.25)
    rep = harness.error_grid(atlas, TestProblemOracle())
    X = harness.grid_points()
    inside = atlas.albrekht.cost(X) <= atlas.c0
    assert rep.coverage == pytest.approx(inside.mean())
    assert set(i for i in rep.ids if i is not None) == {ALBREKHT_ID}


def test_coverage_monotone_in_ring_count(test_problem):
    cov = []
    for rings in (1, 2, 3):
        atlas = build_atlas(test_problem, 3, 0.5, rings, albrekht_radius=0.25, growth="doubling")
        cov.append(harness.error_grid(atlas, TestProblemOracle()).coverage)
    assert cov == sorted(cov) and cov[-1] > cov[0]


def test_error_grid_csv(repro_atlas, tmp_path):
    rep = harness.error_grid(repro_atlas, TestProblemOracle(), harness.grid_points(5))
    rep.to_csv(tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,exact,approx,abs_error,patch"
    assert len(lines) == 26
    assert "np.float64" not in "".join(lines)


# sequence error -----------------------------------------------------------------------------------


def test_fit_geometric_recovers_ratio():
    ratio, scale = harness.fit_geometric([3.0 * 2.0**i for i in range(1, 6)])
    assert ratio == pytest.approx(2.0) and scale == pytest.approx(3.0)
    assert harness.fit_geometric([0.0, 0.0]) == (1.0, 0.0)


def test_sequence_error_single_ring(test_problem):
    atlas = build_atlas(test_problem, 3, 0.5, 1, albrekht_radius=0.25, counts=[8])
    rep = harness.sequence_error(atlas, TestProblemOracle())
    assert len(rep.chain) == 2 and rep.chain[0] == ALBREKHT_ID


def test_sequence_error_lqr(lqr_atlas):
    rep = harness.sequence_error(lqr_atlas, QuadraticOracle(lqr_atlas.albrekht.riccati))
    assert np.max(rep.chain_errors) < 1e-9
    assert np.max(rep.chain_coef_errors) < 1e-9


def test_sequence_error_doubling(doubling_atlas, tmp_path):
    rep = harness.sequence_error(doubling_atlas, TestProblemOracle())
    assert len(rep.chain) == 6 and rep.chain[0] == ALBREKHT_ID
    assert [c[0] for c in rep.chain] == list(range(6))
    assert np.all(np.isfinite(rep.chain_errors))
    assert rep.within_envelope(10.0)
    assert rep.terminal_error < 0.1
    rep.to_csv(tmp_path / "chain.csv")
    head = (tmp_path / "chain.csv").read_text().splitlines()[0]
    assert head.startswith("index,patch,x1,x2,value_error,model,coef_err_0")


# truncation probe ------------------------------------------------------------------------------------


def test_truncation_probe_slopes(test_problem):
    rep = harness.truncation_probe(test_problem, TestProblemOracle(), [0.3, 0.2], [0.6, 0.8])
    for j in (1, 2, 3):
        assert abs(rep.slopes[j] - (5 - j)) < 0.5
    again = harness.truncation_probe(test_problem, TestProblemOracle(), [0.3, 0.2], [0.6, 0.8])
    assert [round(s, 3) for s in rep.slopes] == [round(s, 3) for s in again.slopes]


def test_truncation_probe_lqr_is_flagged(lqr):
    rep = harness.truncation_probe(lqr, QuadraticOracle.for_problem(lqr), [0.3, 0.2], [1.0, 0.0])
    assert rep.slopes == [None] * 5
    assert np.max(rep.errors) < 1e-11
    assert "exact (not fit)" in rep.summary()


def test_truncation_probe_needs_oracle(test_problem):
    with pytest.raises(ValueError):
        harness.truncation_probe(test_problem, None, [0.3, 0.2], [1.0, 0.0])


# determinism and plots ------------------------------------------------------------------------------------


def test_reports_are_deterministic(repro_atlas):
    again = harness.solve(harness.parse_config(harness.REPRODUCTION_CONFIG))
    a = harness.error_grid(repro_atlas, TestProblemOracle())
    b = harness.error_grid(again, TestProblemOracle())
    assert a.summary() == b.summary()
    np.testing.assert_array_equal(a.approx, b.approx)


def test_svg_document(repro_atlas):
    rep = harness.error_grid(repro_atlas, TestProblemOracle(), harness.grid_points(20))
    svg = harness.svg_document(repro_atlas, rep)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg.count("<circle") == repro_atlas.patch_count - 1
    assert "log10|error|" in svg
    assert "log10" not in harness.svg_document(repro_atlas)


@pytest.mark.parametrize("name, text", [("reproduction", harness.REPRODUCTION_CONFIG),
                                        ("doubling", harness.DOUBLING_CONFIG)])
def test_shipped_configs_match_constants(name, text):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / f"{name}.cfg"
    assert harness.load_config(str(path)) == harness.parse_config(text)

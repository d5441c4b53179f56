"""Study pipeline: config validation, rows, serialization, figures."""

import json
import os

import numpy as np
import pytest

from edgefem.studies import (
    CSV_COLUMNS,
    MANUFACTURED,
    ConfigError,
    ManufacturedSolution,
    ResonanceError,
    StudyConfig,
    StudyError,
    check_boundary_trace,
    render_study_figures,
    run_convergence_study,
    solve_level,
    write_study_csv,
    write_study_json,
)


# -- configuration -----------------------------------------------------------


def test_config_defaults_round_trip():
    cfg = StudyConfig()
    assert StudyConfig.from_dict(cfg.as_dict()) == cfg
    assert isinstance(cfg.as_dict()["levels"], list)


def test_config_replace_overrides_one_key():
    cfg = StudyConfig().replace(omega=2.5)
    assert cfg.omega == 2.5
    assert cfg.levels == StudyConfig().levels


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config keys: tolerance"):
        StudyConfig.from_dict({"tolerance": 1e-8})


@pytest.mark.parametrize(
    "kw",
    [
        {"levels": ()},
        {"levels": (0, 2)},
        {"levels": (4, 2)},
        {"levels": (2, 2)},
        {"n": 0},
        {"omega": 0.0},
        {"omega": float("nan")},
        {"eps": -1.0},
        {"nu": 0.0},
        {"solution": "ms9"},
        {"order": 0},
        {"order": 7},
        {"factor_r": 0},
        {"factor_maxiter": 0},
    ],
)
def test_config_rejects_bad_values(kw):
    with pytest.raises(ConfigError):
        StudyConfig(**kw)


# -- manufactured solutions --------------------------------------------------


@pytest.mark.parametrize("name", sorted(MANUFACTURED))
def test_registered_solutions_satisfy_pec_trace(name):
    assert check_boundary_trace(MANUFACTURED[name]) <= 1e-12


def test_boundary_trace_rejects_tangential_leak():
    bad = ManufacturedSolution(
        "bad",
        lambda x: np.broadcast_to([1.0, 0.0, 0.0], x.shape).copy(),
        lambda x: np.zeros_like(x),
        lambda x: np.zeros_like(x),
    )
    with pytest.raises(StudyError, match="PEC trace"):
        check_boundary_trace(bad)


def test_current_combines_curl_curl_and_shift():
    ms = MANUFACTURED["ms1"]
    x = np.array([[0.3, 0.4, 0.6]])
    omega = 1.7
    j = ms.current(omega)(x)
    expected = ms.curl_curl(x) - omega ** 2 * ms.field(x)
    assert np.allclose(j, expected, rtol=0.0, atol=1e-15)


# -- execution ----------------------------------------------------------------


@pytest.fixture(scope="module")
def small_study():
    cfg = StudyConfig(levels=(1, 2), factors=False)
    return run_convergence_study(cfg)


def test_study_rows_converge(small_study):
    rows = small_study.rows
    assert [row.level for row in rows] == [0, 1]
    assert rows[1].ndof > rows[0].ndof
    assert rows[1].err_energy < rows[0].err_energy
    for row in rows:
        assert row.qo_ratio >= 1.0 - 1e-8  # Galerkin never beats the projection
        assert row.thm41_pass == "untested"
        assert row.thm42_pass == "untested"
        assert np.isnan(row.gamma_app)
    assert np.isnan(rows[0].rate_energy)
    assert 0.3 < rows[1].rate_energy < 1.5


def test_zero_solution_solves_to_zero():
    cfg = StudyConfig(levels=(2,), solution="zero", factors=False)
    row = solve_level(cfg, 2)
    assert row.err_energy == 0.0
    assert row.best_err == 0.0
    assert np.isnan(row.qo_ratio)
    assert np.abs(row.solution.coeffs).max() == 0.0


def test_factor_study_populates_cells():
    cfg = StudyConfig(levels=(1, 2), factor_r=1)
    rows = run_convergence_study(cfg).rows
    for row in rows:
        assert np.isfinite(row.beta_h)
        assert np.isfinite(row.c_st)
        assert row.thm42_pass in ("pass", "fail")
        assert row.report is not None
    assert rows[1].gamma_app < rows[0].gamma_app


def test_threaded_study_matches_serial(tmp_path, small_study):
    cfg = small_study.config
    threaded = run_convergence_study(cfg, threads=2)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_study_csv(small_study, p1)
    write_study_csv(threaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_resonant_frequency_is_refused():
    cfg = StudyConfig(levels=(2,), omega=4.13, factors=False)
    with pytest.raises(ResonanceError) as info:
        solve_level(cfg, 2)
    assert abs(info.value.eigenvalue - 17.0636) < 0.01
    assert "resonance" in str(info.value)


def test_factor_failure_degrades_to_nan_cells():
    cfg = StudyConfig(levels=(2,), factor_r=1, factor_maxiter=1)
    with pytest.warns(RuntimeWarning, match="factor estimation failed"):
        row = solve_level(cfg, 2)
    assert np.isfinite(row.err_energy)
    assert np.isnan(row.gamma_app)
    assert row.thm42_pass == "untested"
    assert row.report is None


# -- serialization -------------------------------------------------------------


def test_csv_header_and_cells(small_study, tmp_path):
    path = tmp_path / "study.csv"
    write_study_csv(small_study, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 1 + len(small_study.rows)
    cells = lines[1].split(",")
    row = small_study.rows[0]
    assert cells[0] == "0" and cells[1] == "1"
    # shortest round-trip float formatting: parsing recovers the exact value
    assert float(cells[5]) == row.err_energy
    assert cells[CSV_COLUMNS.index("gamma_app")] == "nan"
    assert cells[CSV_COLUMNS.index("thm41_pass")] == "untested"


def test_csv_is_byte_deterministic(tmp_path):
    cfg = StudyConfig(levels=(1, 2), factors=False)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_study_csv(run_convergence_study(cfg), p1)
    write_study_csv(run_convergence_study(cfg), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_json_mirrors_rows_with_null_nan(small_study, tmp_path):
    path = tmp_path / "study.json"
    write_study_json(small_study, path)
    payload = json.loads(path.read_text())
    assert set(payload) == {"config", "columns", "rows"}
    assert payload["config"] == small_study.config.as_dict()
    assert payload["columns"] == CSV_COLUMNS
    assert payload["rows"][0]["gamma_app"] is None
    assert payload["rows"][0]["err_energy"] == small_study.rows[0].err_energy


def test_figures_are_rendered(small_study, tmp_path):
    paths = render_study_figures(small_study, tmp_path)
    assert [os.path.basename(p) for p in paths] == ["convergence.png"]
    assert all(os.path.getsize(p) > 0 for p in paths)


def test_factor_figures_include_decay_plot(tmp_path):
    cfg = StudyConfig(levels=(1, 2), factor_r=1)
    result = run_convergence_study(cfg)
    paths = render_study_figures(result, tmp_path)
    names = [os.path.basename(p) for p in paths]
    assert names == ["convergence.png", "factors.png"]

import json

import numpy as np
import pytest

from lagreg.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from lagreg.fileio import load_field

SMALL = {
    "output": "run",
    "generator": {"name": "cshape", "m": 32, "intensity": 255},
    "alpha": 400,
    "gamma": 0.0,
    "N": 3,
    "padding": [0.5, 0.5],
    "schedule": {"image_m": [32, 32], "velocity_m": [16, 16], "nlevels": 2},
    "solver": {"max_gn_iters": 5},
}


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL))
    return p


def test_register_writes_artifacts(small_config, tmp_path, capsys):
    assert main(["register", "--config", str(small_config)]) == EXIT_OK
    out = tmp_path / "run"
    names = {p.name for p in out.iterdir()}
    assert {"velocity.field", "endpoints.field", "u1.field", "detjac.field", "iterations.csv", "summary.json"} <= names
    summary = json.loads((out / "summary.json").read_text())
    assert summary["reduction"] > 50 and summary["det_min"] > 0
    assert len(summary["config_hash"]) == 64 and len(summary["levels"]) == 2
    v = load_field(out / "velocity.field").to_velocity()
    assert v.grid.m == (16, 16) and v.grid.omega == (-0.5, 1.5, -0.5, 1.5)
    header = (out / "iterations.csv").read_text().splitlines()[0]
    assert header.startswith("level,iter,J")

    # metrics recomputes the reduction and Jacobian range from the saved files
    gen = tmp_path / "gen"
    assert main(["generate", "cshape", "--m", "32", "--intensity", "255", "--out", str(gen)]) == EXIT_OK
    capsys.readouterr()
    code = main([
        "metrics", "--endpoints", str(out / "endpoints.field"), "--velocity", str(out / "velocity.field"),
        "--template", str(gen / "cshape_template.field"), "--reference", str(gen / "cshape_reference.field"),
        "--N", "3",
    ])
    assert code == EXIT_OK
    metrics = json.loads(capsys.readouterr().out)
    assert metrics["det_min"] == pytest.approx(summary["det_min"], rel=1e-12)
    assert metrics["reduction"] == pytest.approx(summary["reduction"], rel=1e-9)

    code = main(["flow", "--velocity", str(out / "velocity.field"), "--image", str(gen / "cshape_template.field"),
                 "--out", str(tmp_path / "warped.field")])
    assert code == EXIT_OK
    warped = load_field(tmp_path / "warped.field").to_image()
    np.testing.assert_allclose(warped.data, load_field(out / "u1.field").data, rtol=1e-12, atol=1e-9)


def test_generate_writes_fields_and_pgms(tmp_path):
    assert main(["generate", "gaussian_mp", "--m", "32", "--out", str(tmp_path)]) == EXIT_OK
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["gaussian_mp_reference.field", "gaussian_mp_reference.pgm",
                     "gaussian_mp_template.field", "gaussian_mp_template.pgm"]


def test_config_errors_exit_1(tmp_path, capsys):
    bad = dict(SMALL, unknown_key=1)
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    assert main(["register", "--config", str(tmp_path / "bad.json")]) == EXIT_CONFIG
    assert "unknown keys" in capsys.readouterr().err
    assert main(["register", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    (tmp_path / "junk.field").write_bytes(b"garbage")
    assert main(["flow", "--velocity", str(tmp_path / "junk.field"), "--image", str(tmp_path / "junk.field"),
                 "--out", str(tmp_path / "o.field")]) == EXIT_CONFIG
    assert main(["metrics"]) == EXIT_CONFIG


def test_refuses_to_overwrite_inputs(tmp_path, capsys):
    gen = tmp_path
    main(["generate", "cshape", "--m", "32", "--out", str(gen)])
    cfg = {k: v for k, v in SMALL.items() if k != "generator"}
    cfg.update(output=".", template="cshape_template.field", reference="u1.field")
    (tmp_path / "u1.field").write_bytes((tmp_path / "cshape_reference.field").read_bytes())
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["register", "--config", str(tmp_path / "c.json")]) == EXIT_CONFIG
    assert "refusing" in capsys.readouterr().err


def test_numeric_failure_exit_2(small_config, tmp_path, monkeypatch):
    import lagreg.solver as solver_mod

    def boom(*args, **kwargs):
        raise FloatingPointError("synthetic")

    monkeypatch.setattr(solver_mod, "gauss_newton", boom)
    assert main(["register", "--config", str(small_config)]) == EXIT_NUMERIC
    summary = json.loads((tmp_path / "run" / "summary.json").read_text())
    assert summary["failed_level"] == 0


def test_check_exit_codes(monkeypatch, capsys):
    assert main(["check", "--suite", "order", "--suite", "mass"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS order/rk4_ratio" in out and "checks passed" in out

    import lagreg.cli as cli_mod
    from lagreg.checks import CheckResult

    monkeypatch.setattr(cli_mod, "run_checks", lambda names: [CheckResult("x", "y", 1.0, 0.5, False)])
    assert main(["check"]) == EXIT_CHECK

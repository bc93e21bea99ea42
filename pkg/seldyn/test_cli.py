"""
Tests for configuration parsing, CSV storage and the four CLI commands.
"""
import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from seldyn import cli, storage
from seldyn.cli import main, run
from seldyn.errors import ConfigError
from seldyn.fixtures import rank_one_instance
from seldyn.grid import make_grid, make_time_grid
from seldyn.schema import load_config, parse_config


def _base_config(**overrides) -> dict:
    doc = {
        "grid": {"n": 5},
        "time": {"T": 1.0, "steps": 8},
        "activation": "tanh",
        "initial_field": {"constant": 0.5},
        "controls": {"a": {"constant": 0.1}, "b": {"constant": 0.2}},
    }
    doc.update(overrides)
    return doc


def _write_config(directory: Path, doc: dict, name: str = "config.json") -> str:
    path = directory / name
    path.write_text(json.dumps(doc))
    return str(path)


def _report(out: Path) -> dict:
    return json.loads((out / "report.json").read_text())


# ============================================================================
# CONFIGURATION
# ============================================================================

def test_parse_minimal_config():
    cfg = parse_config(_base_config())
    assert cfg.grid.n == 5 and cfg.time.steps == 8
    assert cfg.integrator == "euler" and cfg.fd_step == 1e-5
    assert cfg.loss is None and cfg.train is None


def test_lambda_alias_and_train_section():
    cfg = parse_config(_base_config(
        loss={"kind": "tracking", "target": {"constant": 1.0}, "lambda": 0.25},
        train={"algo": "pmp", "box": {"a_lo": -2, "a_hi": 2}, "damping": 0.0},
    ))
    assert cfg.loss.lam == 0.25
    assert cfg.train.box.a_hi == 2.0
    assert cfg.echo()["loss"]["lambda"] == 0.25


@pytest.mark.parametrize("doc", [
    {"time": {"T": 1.0, "steps": 8}},
    _base_config(activation="softplus"),
    _base_config(grid={"n": 1}),
    _base_config(time={"T": -1.0, "steps": 8}),
    _base_config(initial_field={"constant": 1.0, "path": "f.csv"}),
    _base_config(controls={"b": {"constant": 0.0}}),
    _base_config(controls={"a": {"constant": 0.0}, "b": {"rank_one": {
        "phi": {"constant": 1.0}, "psi": {"constant": 1.0}, "a0": 1.0}}}),
    _base_config(loss={"kind": "classification", "label": {"constant": 1.0}}),
    _base_config(train={"algo": "pmp"}),
])
def test_invalid_config_rejected(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_relative_paths_resolve_against_config_dir(tmp_path):
    cfg = load_config(_write_config(tmp_path, _base_config()))
    assert cfg.resolve("f.csv") == tmp_path.resolve() / "f.csv"


# ============================================================================
# STORAGE
# ============================================================================

def test_field_file_round_trip(tmp_path):
    g = make_grid(6)
    values = np.sin(g.nodes) / 3.0
    path = storage.write_field(tmp_path / "f.csv", values, g)
    assert path.read_text().splitlines()[0] == "y,value"
    assert_allclose(storage.read_field(path, g), values, rtol=0, atol=0)


def test_field_file_errors(tmp_path):
    g = make_grid(4)
    with pytest.raises(ConfigError):
        storage.read_field(tmp_path / "none.csv", g)
    storage.write_rows(tmp_path / "off.csv", ("y", "value"), [(0.0, 1.0), (0.3, 1.0), (0.66, 1.0), (1.0, 1.0)])
    with pytest.raises(ConfigError):
        storage.read_field(tmp_path / "off.csv", g)
    storage.write_rows(tmp_path / "short.csv", ("y", "value"), [(0.0, 1.0), (1.0, 1.0)])
    with pytest.raises(ConfigError):
        storage.read_field(tmp_path / "short.csv", g)
    storage.write_rows(tmp_path / "hdr.csv", ("x", "value"), zip(g.nodes, g.nodes))
    with pytest.raises(ConfigError):
        storage.read_field(tmp_path / "hdr.csv", g)
    (tmp_path / "nan.csv").write_text("y,value\n0,1\n0.333333333333333315,abc\n")
    with pytest.raises(ConfigError):
        storage.read_field(tmp_path / "nan.csv", g)


def test_time_dependent_bias(tmp_path):
    g = make_grid(3)
    tg = make_time_grid(1.0, 2)
    rows = [(t, y, 10 * l + i) for l, t in enumerate(tg.times[:2]) for i, y in enumerate(g.nodes)]
    storage.write_rows(tmp_path / "a.csv", ("t", "y", "value"), rows)
    a, timed = storage.read_bias(tmp_path / "a.csv", g, tg)
    assert timed
    assert_allclose(a, [[0, 1, 2], [10, 11, 12]])

    storage.write_field(tmp_path / "a0.csv", np.ones(3), g)
    a, timed = storage.read_bias(tmp_path / "a0.csv", g, tg)
    assert not timed and a.shape == (2, 3)

    storage.write_rows(tmp_path / "late.csv", ("t", "y", "value"), [(1.0, y, 0.0) for y in g.nodes])
    with pytest.raises(ConfigError):
        storage.read_bias(tmp_path / "late.csv", g, tg)


def test_history_format(tmp_path):
    path = storage.write_history(tmp_path / "h.csv", [0.5, 0.1])
    assert path.read_text() == "iter,value\n0,0.5\n1,0.10000000000000001\n"


# ============================================================================
# COMMANDS
# ============================================================================

def test_forward_command(tmp_path):
    out = tmp_path / "out"
    code = run("forward", _write_config(tmp_path, _base_config()), str(out))
    assert code == 0
    report = _report(out)
    assert report["status"] == "ok" and report["exit_code"] == 0
    assert report["config"]["grid"]["n"] == 5
    assert report["forward"]["sigma_monotone"] is not None
    assert report["forward"]["growth"]["model"] == "linear"
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,y,value"
    assert len(lines) == 1 + 9 * 5
    assert {"trajectory.csv", "lyapunov.csv", "report.json"} <= set(report["artifacts"])


def test_forward_output_defaults_to_config(tmp_path):
    doc = _base_config(output="results")
    assert run("forward", _write_config(tmp_path, doc)) == 0
    assert (tmp_path / "results" / "report.json").is_file()


def test_forward_is_deterministic(tmp_path):
    cfg = _write_config(tmp_path, _base_config(integrator="rk4"))
    run("forward", cfg, str(tmp_path / "one"))
    run("forward", cfg, str(tmp_path / "two"))
    for name in ("trajectory.csv", "lyapunov.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_forward_divergence(tmp_path):
    doc = _base_config(
        activation="relu",
        time={"T": 40.0, "steps": 40},
        initial_field={"constant": 1.0},
        controls={"a": {"constant": 0.0}, "b": {"constant": -1.0}},
    )
    out = tmp_path / "out"
    assert run("forward", _write_config(tmp_path, doc), str(out)) == 3
    report = _report(out)
    assert report["status"] == "error"
    assert report["forward"]["diverged_at"] == 40
    assert (out / "trajectory_partial.csv").is_file()


def test_forward_rank_one_closed_form(tmp_path):
    g = make_grid(17)
    spec = rank_one_instance(g, "positive")
    storage.write_field(tmp_path / "phi.csv", spec.phi, g)
    storage.write_field(tmp_path / "psi.csv", spec.psi, g)
    doc = _base_config(
        grid={"n": 17},
        time={"T": 1.0, "steps": 1000},
        activation="relu",
        initial_field={"constant": 0.1},
        controls={"b": {"rank_one": {"phi": {"path": "phi.csv"}, "psi": {"path": "psi.csv"}, "a0": 1.0}}},
    )
    out = tmp_path / "out"
    assert run("forward", _write_config(tmp_path, doc), str(out)) == 0
    report = _report(out)
    assert report["forward"]["closed_form_error"] < 1e-2
    assert (out / "closed_form.csv").is_file()


def test_missing_data_file_is_config_error(tmp_path):
    doc = _base_config(initial_field={"path": "nowhere.csv"})
    out = tmp_path / "out"
    assert run("forward", _write_config(tmp_path, doc), str(out)) == 2
    assert _report(out)["status"] == "error"


def test_missing_config_file(tmp_path):
    assert run("forward", str(tmp_path / "missing.json"), str(tmp_path / "out")) == 2
    assert not (tmp_path / "out" / "report.json").exists()


def test_train_at_stationary_point(tmp_path):
    doc = _base_config(
        controls={"a": {"constant": 0.0}, "b": {"constant": 0.0}},
        loss={"kind": "tracking", "target": {"constant": 0.5}},
        train={"algo": "ppa", "max_iters": 5},
    )
    out = tmp_path / "out"
    assert run("train", _write_config(tmp_path, doc), str(out)) == 0
    report = _report(out)
    assert report["train"]["converged"] and report["train"]["iterations"] == 0
    assert (out / "a.csv").is_file() and (out / "b.csv").is_file()
    assert (out / "loss_history.csv").read_text().splitlines() == ["iter,value", "0,0"]


def test_train_nonconvergence_exit_code(tmp_path):
    doc = _base_config(
        loss={"kind": "tracking", "target": {"constant": 1.0}},
        train={"algo": "ppa", "max_iters": 2, "tol": 0.0},
    )
    out = tmp_path / "out"
    assert run("train", _write_config(tmp_path, doc), str(out)) == 3
    report = _report(out)
    assert report["train"]["loss_monotone"] is True
    assert len(report["train"]["loss_history"]) == 3
    assert (out / "loss_history.csv").is_file()


def test_train_pmp(tmp_path):
    doc = _base_config(
        time={"T": 0.5, "steps": 20},
        controls={"a": {"constant": 0.0}, "b": {"constant": 0.0}},
        loss={"kind": "tracking", "target": {"constant": 10.0}},
        train={"algo": "pmp", "box": {}, "damping": 0.0, "max_iters": 10},
    )
    out = tmp_path / "out"
    assert run("train", _write_config(tmp_path, doc), str(out)) == 0
    report = _report(out)
    assert report["train"]["algo"] == "pmp" and report["train"]["converged"]
    assert (out / "hamiltonian_history.csv").is_file()


def test_train_needs_loss(tmp_path):
    out = tmp_path / "out"
    assert run("train", _write_config(tmp_path, _base_config()), str(out)) == 2


def test_train_divergence_reports_failed_run(tmp_path):
    doc = _base_config(
        activation="relu",
        time={"T": 40.0, "steps": 40},
        initial_field={"constant": 1.0},
        controls={"a": {"constant": 0.0}, "b": {"constant": -1.0}},
        loss={"kind": "tracking", "target": {"constant": 0.5}},
        train={"algo": "pmp", "box": {}, "max_iters": 5},
    )
    out = tmp_path / "out"
    assert run("train", _write_config(tmp_path, doc), str(out)) == 3
    report = _report(out)
    assert report["status"] == "error" and report["exit_code"] == 3
    assert report["train"]["converged"] is False
    assert report["train"]["diverged_at"] == 40
    assert report["train"]["final_loss"] is None


def test_unexpected_failure_still_writes_report(tmp_path, monkeypatch):
    def broken(exp, out, report):
        raise RuntimeError("boom")

    monkeypatch.setitem(cli.COMMANDS, "forward", broken)
    out = tmp_path / "out"
    assert run("forward", _write_config(tmp_path, _base_config()), str(out)) == 1
    report = _report(out)
    assert report["status"] == "error" and report["exit_code"] == 1
    assert "RuntimeError: boom" in report["message"]


def test_analyze_command(tmp_path):
    doc = _base_config(controls={"a": {"constant": 1.0}, "b": {"constant": 1.0}})
    out = tmp_path / "out"
    assert run("analyze", _write_config(tmp_path, doc), str(out)) == 0
    analyze = _report(out)["analyze"]
    assert analyze["steady_state"]["in_range"] and analyze["steady_state"]["rank"] == 1
    assert analyze["spectral"]["verdict"] == "linearly_asympt_stable"
    assert len(analyze["conditioning"]) == 8
    assert (out / "spectrum.csv").read_text().splitlines()[0] == "index,sym_eig,eig_re,eig_im,singular"


def test_analyze_rank_one(tmp_path):
    g = make_grid(17)
    spec = rank_one_instance(g, "positive")
    storage.write_field(tmp_path / "phi.csv", spec.phi, g)
    storage.write_field(tmp_path / "psi.csv", spec.psi, g)
    doc = _base_config(
        grid={"n": 17},
        controls={"b": {"rank_one": {"phi": {"path": "phi.csv"}, "psi": {"path": "psi.csv"}, "a0": 1.0}}},
    )
    out = tmp_path / "out"
    assert run("analyze", _write_config(tmp_path, doc), str(out)) == 0
    assert _report(out)["analyze"]["rank_one"]["case_tag"] == "case1_stable"


def test_analyze_rejects_time_dependent_controls(tmp_path):
    g = make_grid(5)
    tg = make_time_grid(1.0, 8)
    rows = [(t, y, float(l)) for l, t in enumerate(tg.times[:-1]) for y in g.nodes]
    storage.write_rows(tmp_path / "a.csv", ("t", "y", "value"), rows)
    doc = _base_config(controls={"a": {"path": "a.csv"}, "b": {"constant": 1.0}})
    out = tmp_path / "out"
    assert run("analyze", _write_config(tmp_path, doc), str(out)) == 4
    assert _report(out)["exit_code"] == 4


@pytest.mark.parametrize("activation, a, b", [("tanh", 0.1, 0.2), ("arctan", 0.1, 0.2), ("relu", 0.3, 0.1)])
def test_gradcheck_passes(tmp_path, activation, a, b):
    # relu residuals stay positive, away from the kink
    doc = _base_config(
        activation=activation,
        controls={"a": {"constant": a}, "b": {"constant": b}},
        loss={"kind": "tracking", "target": {"constant": 1.0}},
    )
    out = tmp_path / "out"
    assert run("gradcheck", _write_config(tmp_path, doc), str(out)) == 0
    summary = _report(out)["gradcheck"]
    assert summary["passed"] and not summary["skipped"]
    assert summary["max_rel_error"] <= 1e-5
    assert (out / "gradcheck.csv").is_file()


def test_gradcheck_classification_with_regularizer(tmp_path):
    doc = _base_config(loss={
        "kind": "classification",
        "label": {"constant": 1.0},
        "lambda": 0.1,
        "classifier": {"W": {"constant": 0.5}, "mu": {"constant": -0.2}},
    })
    out = tmp_path / "out"
    assert run("gradcheck", _write_config(tmp_path, doc), str(out)) == 0
    summary = _report(out)["gradcheck"]
    assert {b["block"] for b in summary["blocks"]} == {"a", "b", "W", "mu"}
    assert summary["regularizer_error"] <= 1e-12


def test_gradcheck_zero_misfit_is_skipped(tmp_path):
    doc = _base_config(
        controls={"a": {"constant": 0.0}, "b": {"constant": 0.0}},
        loss={"kind": "tracking", "target": {"constant": 0.5}},
    )
    out = tmp_path / "out"
    assert run("gradcheck", _write_config(tmp_path, doc), str(out)) == 0
    summary = _report(out)["gradcheck"]
    assert summary["skipped"] and summary["passed"]


def test_main_parses_arguments(tmp_path):
    doc = _base_config(loss={"kind": "tracking", "target": {"constant": 1.0}})
    cfg = _write_config(tmp_path, doc)
    assert main(["gradcheck", "--config", cfg, "--out", str(tmp_path / "out"), "--threads", "2"]) == 0
    main(["forward", "--config", cfg, "--out", str(tmp_path / "out1"), "--threads", "1"])
    with pytest.raises(SystemExit):
        main(["forward"])


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

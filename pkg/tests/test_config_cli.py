import json
import math
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from tandemtail import Regime
from tandemtail.cli import cmd_analyze, cmd_simulate, cmd_verify, main
from tandemtail.config import (
    ConfigError,
    FitSettings,
    RunManifest,
    SimSettings,
    apply_overrides,
    manifest_hash,
    manifest_to_ini,
    parse_manifest,
    plan_sim_config,
)
from tandemtail.model import ModelParams
from tandemtail.kernel import kernel_report
from tandemtail import validate

SET_A_TEXT = """
[model]
lambda = 1, 0.5, 0.5
c = 2, 3, 4
sigma = 1, 1, 1

[sim]
dt = 0.001
horizon = 50.0
burn_in = 5.0
seed = 42
replicas = 2

[output]
dir = {out}
"""

SET_B_TEXT = SET_A_TEXT.replace("c = 2, 3, 4", "c = 2, 3, 3.6").replace(
    "sigma = 1, 1, 1", "sigma = 1, 1, 3"
)


def small_manifest(tmp_path, text=SET_A_TEXT, name="cfg.ini", **fit_kw):
    out = tmp_path / "out"
    path = tmp_path / name
    path.write_text(text.format(out=out))
    manifest = parse_manifest(path.read_text())
    if fit_kw:
        manifest = replace(manifest, fit=replace(manifest.fit, **fit_kw))
    return manifest, path


# --- manifest round trip and hashing -----------------------------------------


def test_manifest_round_trips_losslessly(tmp_path):
    manifest, _ = small_manifest(tmp_path)
    manifest = replace(
        manifest,
        sim=replace(manifest.sim, dt=0.0012345678901234567, horizon=98765.4321),
        fit=replace(manifest.fit, pair_quantiles=(0.5, 0.875, 0.96875)),
    )
    assert parse_manifest(manifest_to_ini(manifest)) == manifest


def test_manifest_hash_ignores_output_dir(tmp_path):
    m1, _ = small_manifest(tmp_path)
    m2 = replace(m1, out_dir="elsewhere")
    assert manifest_hash(m1) == manifest_hash(m2)
    m3 = replace(m1, sim=replace(m1.sim, seed=43))
    assert manifest_hash(m1) != manifest_hash(m3)


def test_overrides_apply_per_field(tmp_path):
    manifest, _ = small_manifest(tmp_path)
    bumped = apply_overrides(manifest, ["sim.seed=99", "model.sigma=1, 1, 2"])
    assert bumped.sim.seed == 99
    assert bumped.model.sigma == (1.0, 1.0, 2.0)
    assert bumped.sim.dt == manifest.sim.dt
    with pytest.raises(ConfigError):
        apply_overrides(manifest, ["not-an-override"])


def test_parse_errors_name_the_field():
    with pytest.raises(ConfigError, match=r"\[sim\] dt"):
        parse_manifest("[model]\nlambda=1,1,1\nc=2,3,4\nsigma=1,1,1\n[sim]\ndt=abc\n")
    with pytest.raises(ConfigError, match=r"\[model\] c"):
        parse_manifest("[model]\nlambda=1,1,1\nc=2,3\nsigma=1,1,1\n")
    with pytest.raises(ConfigError, match="required"):
        parse_manifest("[model]\nlambda=1,1,1\nc=2,3,4\n")


def test_planner_levels_are_grid_members(tmp_path):
    manifest, _ = small_manifest(tmp_path)
    report = kernel_report(validate(manifest.model))
    cfg = plan_sim_config(manifest, report)
    for (i, j), levels in zip(((1, 2), (1, 3), (2, 3)), cfg.pair_levels):
        for t in levels:
            assert t in cfg.ccdf_grid[i - 1] and t in cfg.ccdf_grid[j - 1]
    for row in cfg.triple_thresholds:
        for n, t in enumerate(row, start=1):
            assert t in cfg.ccdf_grid[n - 1]
    assert cfg.boundary_weights[1][2] == pytest.approx(1.0)  # z0 for this model


# --- commands -----------------------------------------------------------------


def test_analyze_writes_expected_values(tmp_path):
    manifest, _ = small_manifest(tmp_path)
    report = cmd_analyze(manifest)
    assert report.prediction(3).regime is Regime.BRANCH_POINT
    assert report.prediction(3).alpha == pytest.approx((1 + math.sqrt(6)) / 2, rel=1e-12)
    payload = json.loads((tmp_path / "out" / "kernel_report.json").read_text())
    assert payload["schema_version"] == 1
    assert payload["nodes"][2]["alpha"] == pytest.approx((1 + math.sqrt(6)) / 2, rel=1e-15)
    csv = (tmp_path / "out" / "kernel_report.csv").read_text().splitlines()
    assert csv[0].startswith("# manifest_sha256=")
    assert csv[1] == "node,alpha,mu,regime,z_min,z_max,z_star"


def test_analyze_set_b_simple_pole(tmp_path):
    manifest, _ = small_manifest(tmp_path, SET_B_TEXT)
    report = cmd_analyze(manifest)
    assert report.prediction(3).regime is Regime.SIMPLE_POLE
    assert report.prediction(3).alpha == pytest.approx(0.37142857142857144, rel=1e-9)


def test_simulate_outputs_are_byte_identical_across_runs(tmp_path):
    manifest, _ = small_manifest(tmp_path)
    cmd_simulate(manifest)
    files = sorted(p.name for p in (tmp_path / "out").iterdir())
    first = {p: (tmp_path / "out" / p).read_bytes() for p in files}
    cmd_simulate(manifest)
    second = {p: (tmp_path / "out" / p).read_bytes() for p in files}
    assert first == second
    assert "ccdf_1.csv" in first and "summary.json" in first and "manifest.ini" in first


def test_simulate_seventeen_digit_output(tmp_path):
    manifest, _ = small_manifest(tmp_path)
    cmd_simulate(manifest)
    line = (tmp_path / "out" / "ccdf_1.csv").read_text().splitlines()[3]
    level = line.split(",")[0]
    assert len(level.replace(".", "").replace("-", "").lstrip("0")) >= 15


def test_unstable_manifest_exit_code_and_message(tmp_path, capsys):
    text = SET_A_TEXT.replace("c = 2, 3, 4", "c = 2, 3, 3.4")
    _, path = small_manifest(tmp_path, text)
    code = main(["analyze", str(path)])
    assert code == 1
    assert "lambda3 + c2 < c3" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[model]\nlambda=oops\n")
    assert main(["analyze", str(path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_zero_horizon_surfaces_empty_window(tmp_path, capsys):
    text = SET_A_TEXT.replace("horizon = 50.0", "horizon = 0.0").replace("burn_in = 5.0", "burn_in = 0.0")
    _, path = small_manifest(tmp_path, text)
    assert main(["simulate", str(path)]) == 1
    assert "no accumulated steps" in capsys.readouterr().err


def test_env_var_overrides_output_dir(tmp_path, monkeypatch, capsys):
    _, path = small_manifest(tmp_path)
    target = tmp_path / "env_out"
    monkeypatch.setenv("TANDEMTAIL_OUT", str(target))
    assert main(["analyze", str(path)]) == 0
    assert (target / "kernel_report.csv").exists()


def test_cli_flag_overrides(tmp_path):
    _, path = small_manifest(tmp_path)
    out2 = tmp_path / "flagged"
    assert main(["analyze", str(path), "--out", str(out2), "--seed", "7"]) == 0
    echoed = (out2 / "manifest.ini").read_text()
    assert "seed = 7" in echoed


def test_cli_subprocess_entry_point(tmp_path):
    _, path = small_manifest(tmp_path)
    proc = subprocess.run(
        [sys.executable, "-m", "tandemtail.cli", "analyze", str(path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "regime=BranchPoint" in proc.stdout


# --- verify ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def verified(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("verify")
    out = tmp / "out"
    path = tmp / "cfg.ini"
    path.write_text(SET_A_TEXT.format(out=out).replace("horizon = 50.0", "horizon = 4000.0"))
    manifest = parse_manifest(path.read_text())
    manifest = replace(
        manifest,
        fit=replace(
            manifest.fit,
            gumbel_blocks=20,
            gumbel_block_length=50.0,
            pair_quantiles=(0.5, 0.9),
            triple_quantiles=(0.0, 0.5),
        ),
    )
    result = cmd_verify(manifest)
    return manifest, result, out


def test_verify_emits_acceptance_table(verified):
    manifest, result, out = verified
    text = (out / "verification.csv").read_text().splitlines()
    assert text[1] == "quantity,predicted,estimated,tolerance,pass"
    names = [row.split(",")[0] for row in text[2:]]
    assert "regulator_rate_node1" in names
    assert "boundary_transform_node2_at_z0" in names
    assert "decay_rate_node3" in names
    assert any(n.startswith("dependence_pair") for n in names)
    payload = json.loads((out / "verification.json").read_text())
    assert payload["manifest_sha256"] == manifest_hash(manifest)
    analytic = {
        r["quantity"]: r["pass"]
        for r in payload["rows"]
        if r["quantity"].startswith(("delta_", "z_max", "z_star", "classification"))
    }
    assert all(analytic.values())


def test_verify_rates_pass_at_small_scale(verified):
    _, result, _ = verified
    rate_rows = [r for r in result.rows if r.quantity.startswith("regulator_rate")]
    assert len(rate_rows) == 3
    # loose scale here: this fixture runs a short horizon; acceptance runs the
    # pinned horizon in test_acceptance
    for row in rate_rows:
        assert abs(row.estimated / row.predicted - 1.0) < 0.10


def test_verify_exit_code_matches_primary_rows(tmp_path, capsys):
    out = tmp_path / "out"
    path = tmp_path / "cfg.ini"
    path.write_text(SET_A_TEXT.format(out=out).replace("horizon = 50.0", "horizon = 800.0"))
    manifest = parse_manifest(path.read_text())
    manifest = replace(
        manifest,
        fit=replace(manifest.fit, gumbel_blocks=20, gumbel_block_length=25.0, triple_quantiles=(0.0, 0.5)),
    )
    result = cmd_verify(manifest)
    code = main(["verify", str(path), "--set", "fit.gumbel_blocks=20",
                 "--set", "fit.gumbel_block_length=25.0", "--set", "fit.triple_quantiles=0, 0.5"])
    assert code == (0 if result.passed else 1)
    assert ("verification PASSED" if result.passed else "verification FAILED") in capsys.readouterr().out


def test_verify_negative_control_fails_decay_row(tmp_path):
    out = tmp_path / "out"
    path = tmp_path / "cfg.ini"
    path.write_text(SET_A_TEXT.format(out=out).replace("horizon = 50.0", "horizon = 2000.0"))
    manifest = parse_manifest(path.read_text())
    manifest = replace(
        manifest,
        fit=replace(
            manifest.fit,
            gumbel_blocks=20,
            gumbel_block_length=50.0,
            pair_quantiles=(0.5, 0.9),
            triple_quantiles=(0.0, 0.5),
        ),
    )

    def corrupt(report):
        from dataclasses import replace as drep
        from tandemtail.kernel import AsymptoticPrediction

        p3 = report.prediction(3)
        wrong = AsymptoticPrediction(node=3, alpha=2.0 * p3.alpha, mu=p3.mu, regime=p3.regime)
        return drep(report, predictions=(report.predictions[0], report.predictions[1], wrong))

    result = cmd_verify(manifest, predictions_override=corrupt)
    decay3 = next(r for r in result.rows if r.quantity == "decay_rate_node3")
    assert not decay3.passed
    assert not result.passed

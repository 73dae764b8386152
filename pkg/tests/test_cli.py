import json

from openpyxl import load_workbook

TINY_TRAINING = """
[fishery]
horizon = 10

[td3]
total_env_steps = 60
warmup_steps = 20
batch_size = 8
hidden_sizes = 4
eval_interval = 30
eval_episodes = 2
"""


def _manifest(directory):
    return json.loads((directory / "manifest.json").read_text(encoding="utf-8"))


def _config(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_help_lists_commands(app, runner):
    result = runner.invoke(app, ["--help"])
    assert result.exit_code == 0
    for command in ("train", "evaluate", "simulate", "tune", "policy-curve", "bifurcation",
                    "solve-mdp", "recommend", "calibrate"):
        assert command in result.output


def test_usage_error_exits_with_one(app, runner, tmp_run_dir):
    result = runner.invoke(app, ["bifurcation", "--bogus", "--out", str(tmp_run_dir)])
    assert result.exit_code == 1


def test_unknown_config_key_exits_with_one(app, runner, tmp_path, tmp_run_dir):
    config = _config(tmp_path, "[fishery]\ngrowth = 0.3\n")
    result = runner.invoke(app, ["evaluate", "--config", config, "--out", str(tmp_run_dir)])
    assert result.exit_code == 1
    assert "growth" in result.output


def test_value_iteration_cap_exits_with_two(app, runner, tmp_path, tmp_run_dir):
    config = _config(tmp_path, "[experiment]\nvi_max_iters = 2\n")
    result = runner.invoke(app, ["solve-mdp", "--config", config, "--states", "20", "--actions", "20",
                                 "--out", str(tmp_run_dir)])
    assert result.exit_code == 2


def test_policy_for_wrong_environment_exits_with_one(app, runner, tmp_run_dir):
    result = runner.invoke(app, ["evaluate", "--env", "conservation", "--policy", "escapement",
                                 "--out", str(tmp_run_dir)])
    assert result.exit_code == 1


def test_bifurcation_outputs_are_byte_identical(app, runner, tmp_path):
    outputs = []
    for name in ("first", "second"):
        directory = tmp_path / name
        result = runner.invoke(app, ["bifurcation", "--points", "31", "--out", str(directory)])
        assert result.exit_code == 0, result.output
        outputs.append(((directory / "bifurcation.csv").read_bytes(), (directory / "fold_points.csv").read_bytes()))
    assert outputs[0] == outputs[1]
    header = outputs[0][0].decode("utf-8").splitlines()[0]
    assert header == "m,X,stable,branch"
    manifest = _manifest(tmp_path / "first")
    assert manifest["command"] == "bifurcation"
    assert abs(manifest["config"]["results"]["m_upper_fold"] - 0.215) < 0.01


def test_solve_mdp_writes_value_function(app, runner, tmp_run_dir):
    result = runner.invoke(app, ["solve-mdp", "--states", "41", "--actions", "41", "--gamma", "0.95",
                                 "--out", str(tmp_run_dir)])
    assert result.exit_code == 0, result.output
    lines = (tmp_run_dir / "value_function.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "state,value,action"
    assert len(lines) == 42
    manifest = _manifest(tmp_run_dir)
    assert manifest["outputs"] == ["value_function.csv"]
    assert manifest["config"]["experiment"]["vi_gamma"] == 0.95
    assert "escapement_threshold" in manifest["config"]["results"]


def test_evaluate_with_baseline_comparison(app, runner, tmp_path):
    tables = []
    for name in ("first", "second"):
        directory = tmp_path / name
        result = runner.invoke(app, ["evaluate", "--replicates", "5", "--compare-baseline", "--seed", "3",
                                     "--out", str(directory)])
        assert result.exit_code == 0, result.output
        tables.append((directory / "evaluation.csv").read_bytes())
        assert (directory / "returns.csv").exists()
        assert (directory / "comparison.csv").exists()
    assert tables[0] == tables[1]
    manifest = _manifest(tmp_path / "first")
    assert manifest["seed"] == 3
    assert manifest["config"]["results"]["replicates"] == 5
    assert "crossover_step" in manifest["config"]["results"]


def test_evaluate_conservation_reports_collapse(app, runner, tmp_run_dir):
    result = runner.invoke(app, ["evaluate", "--env", "conservation", "--replicates", "3",
                                 "--out", str(tmp_run_dir)])
    assert result.exit_code == 0, result.output
    fraction = _manifest(tmp_run_dir)["config"]["results"]["collapsed_fraction"]
    assert 0.0 <= fraction <= 1.0


def test_xlsx_output(app, runner, tmp_run_dir):
    result = runner.invoke(app, ["evaluate", "--replicates", "2", "--format", "xlsx", "--out", str(tmp_run_dir)])
    assert result.exit_code == 0, result.output
    sheet = load_workbook(tmp_run_dir / "evaluation.xlsx").active
    header = [cell.value for cell in next(sheet.iter_rows(max_row=1))]
    assert header == ["t", "mean_state", "ci_lo", "ci_hi", "mean_reward", "cumulative_mean_reward"]
    assert sheet.max_row == 102


def test_simulate_writes_every_trajectory(app, runner, tmp_run_dir):
    result = runner.invoke(app, ["simulate", "--replicates", "2", "--out", str(tmp_run_dir)])
    assert result.exit_code == 0, result.output
    lines = (tmp_run_dir / "trajectories.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "replicate,seed,t,obs_0,act_0,reward"
    assert len(lines) == 1 + 2 * 101


def test_policy_curve_for_steady_state(app, runner, tmp_run_dir):
    result = runner.invoke(app, ["policy-curve", "--env", "conservation", "--points", "11", "--out", str(tmp_run_dir)])
    assert result.exit_code == 0, result.output
    lines = (tmp_run_dir / "policy_curve.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "obs_0,obs_1,action_0"
    assert all(line.endswith(",0.001") for line in lines[1:])


def test_train_then_evaluate_actor(app, runner, tmp_path):
    config = _config(tmp_path, TINY_TRAINING)
    curves = []
    for name in ("first", "second"):
        directory = tmp_path / name
        result = runner.invoke(app, ["train", "--config", config, "--seed", "1", "--out", str(directory)])
        assert result.exit_code == 0, result.output
        curves.append((directory / "learning_curve.csv").read_bytes())
        assert (directory / "agent" / "actor.npz").exists()
    assert curves[0] == curves[1]
    assert curves[0].decode("utf-8").splitlines()[0] == "env_step,eval_return_mean,eval_return_sd"

    actor = str(tmp_path / "first" / "agent" / "actor.npz")
    result = runner.invoke(app, ["evaluate", "--config", config, "--actor", actor, "--replicates", "2",
                                 "--out", str(tmp_path / "eval")])
    assert result.exit_code == 0, result.output
    result = runner.invoke(app, ["policy-curve", "--config", config, "--actor", actor, "--points", "5",
                                 "--out", str(tmp_path / "curve")])
    assert result.exit_code == 0, result.output


def test_tune_writes_trial_table(app, runner, tmp_path, tmp_run_dir):
    config = _config(tmp_path, TINY_TRAINING)
    result = runner.invoke(app, ["tune", "--config", config, "--trials", "2", "--trial-budget", "30",
                                 "--out", str(tmp_run_dir)])
    assert result.exit_code == 0, result.output
    header = (tmp_run_dir / "trials.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("trial_id,")
    assert _manifest(tmp_run_dir)["config"]["results"]["best_trial"] in (0, 1)


def test_recommend_quotas(app, runner, tmp_path, tmp_run_dir):
    series = tmp_path / "stock.csv"
    series.write_text("year,biomass,catch\n2000,300,10\n2001,700,20\n", encoding="utf-8")
    result = runner.invoke(app, ["recommend", "--series", str(series), "--k-estimate", "1000",
                                 "--out", str(tmp_run_dir)])
    assert result.exit_code == 0, result.output
    lines = (tmp_run_dir / "recommendations.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "year,biomass,historical_catch,recommended_quota"
    assert lines[1].endswith(",0.0")


def test_recommend_rejects_bad_series(app, runner, tmp_path, tmp_run_dir):
    series = tmp_path / "stock.csv"
    series.write_text("year,biomass,catch\n1990,300,10\n1989,700,20\n", encoding="utf-8")
    result = runner.invoke(app, ["recommend", "--series", str(series), "--k-estimate", "1000",
                                 "--out", str(tmp_run_dir)])
    assert result.exit_code == 1
    assert "row 2" in result.output


def test_calibrate_prints_config_snippet(app, runner, tmp_run_dir):
    result = runner.invoke(app, ["calibrate", "--out", str(tmp_run_dir)])
    assert result.exit_code == 0, result.output
    assert "[conservation]" in result.output
    assert "r = " in result.output
    assert (tmp_run_dir / "calibration.csv").exists()


def test_solve_mdp_is_byte_identical_across_runs(app, runner, tmp_path):
    tables = []
    for name in ("first", "second"):
        directory = tmp_path / name
        result = runner.invoke(app, ["solve-mdp", "--states", "41", "--actions", "41", "--gamma", "0.95",
                                     "--seed", "3", "--out", str(directory)])
        assert result.exit_code == 0, result.output
        tables.append((directory / "value_function.csv").read_bytes())
    assert tables[0] == tables[1]


def test_recommend_rejects_empty_series(app, runner, tmp_path, tmp_run_dir):
    series = tmp_path / "stock.csv"
    series.write_text("", encoding="utf-8")
    result = runner.invoke(app, ["recommend", "--series", str(series), "--k-estimate", "1000",
                                 "--out", str(tmp_run_dir)])
    assert result.exit_code == 1
    assert "cannot parse" in result.output

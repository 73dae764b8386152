"""
Command-line entry point for conservation_rl.

`create_app` loads `.env` settings, configures logging and returns the click
group carrying every subcommand.  Each command resolves a RunConfig
(defaults < config file < flags), writes its tables into the output
directory and finishes with a manifest.json.

Exit codes: 0 success, 1 invalid input, 2 simulation or training failure.
"""
from __future__ import annotations

import functools
import logging
import os
import sys
import time
from dataclasses import asdict

import click
import numpy as np
import pandas as pd

from . import __version__
from .baselines import (
    GreedyPolicy,
    discretize_fishery,
    escapement_policy,
    escapement_threshold,
    steady_state_policy,
    value_iteration,
)
from .config import DevelopmentConfig, RunConfig, load_run_config
from .conservation import (
    DEFAULT_TARGETS,
    bifurcation_table,
    calibrate,
    collapse_threshold,
    fold_points,
    post_collapse_state,
    separatrix,
)
from .errors import ConfigurationError, ConservationRLError, ShapeError, SimulationError, TrainingError
from .experiments import (
    collapsed_fraction,
    comparison_frame,
    conservation_obs_grid,
    crossover_step,
    evaluate_policy,
    extract_policy_curve,
    random_search_tune,
)
from .export_utils import write_frame, write_manifest
from .helpers import configure_logging, log_event, logger
from .stock import ingest_stock_series, recommend_quotas
from .td3 import load_actor_policy, train
from .time_utils import elapsed_ms

try:
    from dotenv import load_dotenv
except Exception:  # pragma: no cover
    load_dotenv = None

POLICIES = ("escapement", "steady-state", "greedy", "actor")


class ConservationGroup(click.Group):
    """Click group mapping usage errors to exit code 1."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        if not standalone_mode:
            return super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.ClickException as exc:
            exc.show()
            sys.exit(1)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(1)
        sys.exit(rv if isinstance(rv, int) else 0)


def command_errors(name: str):
    """Log start/finish of a command and turn package errors into exit codes."""

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            log_event("command_started", command=name)
            try:
                result = func(*args, **kwargs)
            except (ConfigurationError, ShapeError) as exc:
                log_event("error", level=logging.ERROR, command=name, error=str(exc))
                click.echo(f"Error: {exc}", err=True)
                sys.exit(1)
            except SimulationError as exc:
                log_event("error", level=logging.ERROR, command=name, error=str(exc))
                click.echo(f"Error: {exc}", err=True)
                sys.exit(2)
            except ConservationRLError as exc:
                logger.exception("%s", exc)
                click.echo(f"Error: {exc}", err=True)
                sys.exit(2)
            log_event("command_finished", command=name,
                      duration_ms=elapsed_ms(start))
            return result

        return wrapper

    return decorator


def _output_dir(run_config: RunConfig, out: str | None, command: str, fallback: str) -> str:
    directory = out or os.path.join(run_config.run.output_dir or fallback, command)
    os.makedirs(directory, exist_ok=True)
    return directory


def _resolve_policy(run_config: RunConfig, name: str | None, actor_path: str | None):
    env = run_config.env_factory()(run_config.seed)
    if actor_path and not name:
        name = "actor"
    name = name or ("escapement" if run_config.env == "fishery" else "steady-state")
    if name not in POLICIES:
        raise ConfigurationError(f"unknown policy {name!r}")
    if name == "actor":
        if not actor_path:
            raise ConfigurationError("--policy actor needs --actor PATH")
        return load_actor_policy(actor_path, env)
    if name == "escapement":
        if run_config.env != "fishery":
            raise ConfigurationError("the escapement policy applies to the fishery environment")
        params = run_config.fishery
        S = run_config.experiment.escapement
        return escapement_policy(params.K / 2 if S is None else S, K=params.K)
    if name == "steady-state":
        if run_config.env != "conservation":
            raise ConfigurationError("the steady-state policy applies to the conservation environment")
        return steady_state_policy(run_config.conservation.alpha)
    if run_config.env != "fishery":
        raise ConfigurationError("the greedy dynamic-programming policy applies to the fishery environment")
    exp = run_config.experiment
    mdp = discretize_fishery(run_config.fishery, exp.state_grid, exp.action_grid,
                             gamma=exp.vi_gamma, kernel=exp.vi_kernel, tail_sds=exp.vi_tail_sds)
    vf = value_iteration(mdp, epsilon=exp.vi_epsilon, max_iters=exp.vi_max_iters, horizon=exp.vi_horizon)
    return GreedyPolicy.from_solution(vf, mdp)


def _baseline_policy(run_config: RunConfig):
    return _resolve_policy(run_config, None, None)


def create_app(config_class=DevelopmentConfig) -> click.Group:
    """
    Command factory.  Loads environment settings and builds the click group.

    Args:
        config_class: Process settings class (DevelopmentConfig, ProductionConfig or TestingConfig).
    Returns:
        The configured click group.
    """
    if load_dotenv is not None:
        load_dotenv(os.path.join(os.getcwd(), ".env"), override=False)

    configure_logging(config_class.LOG_LEVEL, json_format=config_class.LOG_JSON)

    def resolve(config_path, overrides) -> RunConfig:
        defaults = {
            "experiment": {
                "replicates": config_class.DEFAULT_REPLICATES,
                "eval_episodes": config_class.DEFAULT_EVAL_EPISODES,
                "max_workers": config_class.MAX_WORKERS,
            },
        }
        return load_run_config(config_path, overrides=overrides, defaults=defaults)

    def finish(directory, command, run_config: RunConfig, outputs, **extra):
        config = {**run_config.to_dict(), "results": extra}
        write_manifest(directory, command=command, seed=run_config.seed,
                       config_hash=run_config.config_hash, config=config, outputs=outputs)

    @click.group(cls=ConservationGroup)
    @click.version_option(version=__version__)
    def cli():
        """Optimal control and TD3 for fishery and tipping-point conservation problems."""

    config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                                 help="Run configuration (INI).")
    env_option = click.option("--env", type=click.Choice(["fishery", "conservation"]), default=None,
                              help="Environment (overrides [run] env).")
    seed_option = click.option("--seed", type=int, default=None, help="Seed (overrides [run] seed).")
    out_option = click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
    format_option = click.option("--format", "fmt", type=click.Choice(["csv", "xlsx"]), default=None,
                                 help="Table format (overrides [experiment] output_format).")

    @cli.command("train")
    @config_option
    @env_option
    @seed_option
    @out_option
    @click.option("--steps", type=int, default=None, help="Total environment steps.")
    @command_errors("train")
    def train_command(config_path, env, seed, out, steps):
        """Train a TD3 agent; writes learning_curve.csv and agent snapshots."""
        run_config = resolve(config_path, {"run": {"env": env, "seed": seed}, "td3": {"total_env_steps": steps}})
        directory = _output_dir(run_config, out, "train", config_class.OUTPUT_DIR)
        try:
            result = train(run_config.env_factory(), run_config.hyperparams())
        except TrainingError as exc:
            if exc.curve is not None:
                write_frame(exc.curve, os.path.join(directory, "learning_curve.csv"))
            raise
        curve_path = write_frame(result.curve, os.path.join(directory, "learning_curve.csv"))
        result.agent.save(os.path.join(directory, "agent"))
        finish(directory, "train", run_config, [curve_path], final_return=result.final_return)
        click.echo(f"Final evaluation return: {result.final_return:.6f}")

    @cli.command("evaluate")
    @config_option
    @env_option
    @seed_option
    @out_option
    @format_option
    @click.option("--policy", type=click.Choice(POLICIES), default=None, help="Policy to evaluate.")
    @click.option("--actor", "actor_path", type=click.Path(exists=True, dir_okay=False), default=None,
                  help="Actor snapshot (.npz).")
    @click.option("--replicates", type=int, default=None, help="Replicate count.")
    @click.option("--compare-baseline", is_flag=True, help="Also evaluate the environment's baseline policy.")
    @command_errors("evaluate")
    def evaluate_command(config_path, env, seed, out, fmt, policy, actor_path, replicates, compare_baseline):
        """Replicate evaluation; writes evaluation and returns tables."""
        run_config = resolve(config_path, {"run": {"env": env, "seed": seed},
                                           "experiment": {"replicates": replicates, "output_format": fmt}})
        exp = run_config.experiment
        directory = _output_dir(run_config, out, "evaluate", config_class.OUTPUT_DIR)
        chosen = _resolve_policy(run_config, policy, actor_path)
        report = evaluate_policy(run_config.env_factory(), chosen, exp.replicates, run_config.seed,
                                 max_workers=exp.max_workers)
        outputs = [
            write_frame(report.to_frame(), os.path.join(directory, "evaluation"), exp.output_format),
            write_frame(report.returns_frame(), os.path.join(directory, "returns"), exp.output_format),
        ]
        results = {"mean_return": report.mean_return, "replicates": report.replicates}
        if run_config.env == "conservation":
            results["collapsed_fraction"] = collapsed_fraction(report, run_config.conservation)
        if compare_baseline:
            baseline = evaluate_policy(run_config.env_factory(), _baseline_policy(run_config), exp.replicates,
                                       run_config.seed, max_workers=exp.max_workers)
            frame = comparison_frame({"policy": report, "baseline": baseline})
            outputs.append(write_frame(frame, os.path.join(directory, "comparison"), exp.output_format))
            results["baseline_mean_return"] = baseline.mean_return
            results["crossover_step"] = crossover_step(report.cumulative_mean_reward,
                                                       baseline.cumulative_mean_reward)
        finish(directory, "evaluate", run_config, outputs, **results)
        click.echo(f"Mean return over {report.replicates} replicates: {report.mean_return:.6f}")

    @cli.command("simulate")
    @config_option
    @env_option
    @seed_option
    @out_option
    @format_option
    @click.option("--policy", type=click.Choice(POLICIES), default=None, help="Policy to simulate.")
    @click.option("--actor", "actor_path", type=click.Path(exists=True, dir_okay=False), default=None,
                  help="Actor snapshot (.npz).")
    @click.option("--replicates", type=int, default=None, help="Replicate count.")
    @command_errors("simulate")
    def simulate_command(config_path, env, seed, out, fmt, policy, actor_path, replicates):
        """Write per-replicate trajectories (replicate, seed, t, obs..., act..., reward)."""
        run_config = resolve(config_path, {"run": {"env": env, "seed": seed},
                                           "experiment": {"replicates": replicates, "output_format": fmt}})
        exp = run_config.experiment
        directory = _output_dir(run_config, out, "simulate", config_class.OUTPUT_DIR)
        chosen = _resolve_policy(run_config, policy, actor_path)
        report = evaluate_policy(run_config.env_factory(), chosen, exp.replicates, run_config.seed,
                                 keep_trajectories=True, max_workers=exp.max_workers)
        path = write_frame(report.trajectories_frame(), os.path.join(directory, "trajectories"), exp.output_format)
        finish(directory, "simulate", run_config, [path], mean_return=report.mean_return)
        click.echo(f"Wrote {report.replicates} trajectories to {path}")

    @cli.command("tune")
    @config_option
    @env_option
    @seed_option
    @out_option
    @format_option
    @click.option("--trials", type=int, default=None, help="Number of random-search trials.")
    @click.option("--trial-budget", type=int, default=None, help="Environment steps per trial.")
    @command_errors("tune")
    def tune_command(config_path, env, seed, out, fmt, trials, trial_budget):
        """Random-search hyperparameter tuning; writes the trial table."""
        run_config = resolve(config_path, {"run": {"env": env, "seed": seed},
                                           "experiment": {"output_format": fmt},
                                           "search": {"n_trials": trials, "trial_budget": trial_budget}})
        exp, search = run_config.experiment, run_config.search
        directory = _output_dir(run_config, out, "tune", config_class.OUTPUT_DIR)
        result = random_search_tune(
            run_config.env_factory(), search.search_space(), search.n_trials,
            trial_budget=search.trial_budget, seed=run_config.seed, base_hyper=run_config.hyperparams(),
            eval_episodes=exp.eval_episodes, max_workers=exp.max_workers,
        )
        path = write_frame(result.frame(), os.path.join(directory, "trials"), exp.output_format)
        if result.best is None:
            finish(directory, "tune", run_config, [path], best_trial=None)
            raise TrainingError(f"all {len(result.trials)} tuning trials failed")
        finish(directory, "tune", run_config, [path], best_trial=result.best.trial_id,
               best_return=result.best.mean_return, best_hyperparams=result.best.hyperparams)
        click.echo(f"Best trial {result.best.trial_id}: mean return {result.best.mean_return:.6f}")

    @cli.command("policy-curve")
    @config_option
    @env_option
    @seed_option
    @out_option
    @format_option
    @click.option("--policy", type=click.Choice(POLICIES), default=None, help="Policy to tabulate.")
    @click.option("--actor", "actor_path", type=click.Path(exists=True, dir_okay=False), default=None,
                  help="Actor snapshot (.npz).")
    @click.option("--points", type=int, default=None, help="Grid points along the state axis.")
    @command_errors("policy-curve")
    def policy_curve_command(config_path, env, seed, out, fmt, policy, actor_path, points):
        """Tabulate a policy over an observation grid (obs..., action...)."""
        run_config = resolve(config_path, {"run": {"env": env, "seed": seed},
                                           "experiment": {"curve_points": points, "output_format": fmt}})
        exp = run_config.experiment
        directory = _output_dir(run_config, out, "policy-curve", config_class.OUTPUT_DIR)
        chosen = _resolve_policy(run_config, policy, actor_path)
        if run_config.env == "fishery":
            grid = np.linspace(0.0, run_config.fishery.max_biomass, exp.curve_points)
        else:
            grid = conservation_obs_grid(run_config.conservation, exp.curve_points)
        curve = extract_policy_curve(chosen, grid)
        path = write_frame(curve.to_frame(), os.path.join(directory, "policy_curve"), exp.output_format)
        finish(directory, "policy-curve", run_config, [path])
        click.echo(f"Wrote policy curve to {path}")

    @cli.command("bifurcation")
    @config_option
    @out_option
    @format_option
    @click.option("--points", type=int, default=None, help="Grid points along m.")
    @command_errors("bifurcation")
    def bifurcation_command(config_path, out, fmt, points):
        """Equilibria of the conservation dynamics against m, plus the fold points."""
        run_config = resolve(config_path, {"run": {"env": "conservation"},
                                           "experiment": {"bifurcation_points": points, "output_format": fmt}})
        exp, params = run_config.experiment, run_config.conservation
        directory = _output_dir(run_config, out, "bifurcation", config_class.OUTPUT_DIR)
        m_upper, m_lower = fold_points(params)
        table = bifurcation_table(params, np.linspace(exp.m_min, exp.m_max, exp.bifurcation_points))
        folds = {
            "m_upper_fold": m_upper,
            "m_lower_fold": m_lower,
            "post_collapse_state": post_collapse_state(params),
            "separatrix_at_m0": separatrix(params, params.m0),
            "collapse_threshold": collapse_threshold(params),
        }
        outputs = [
            write_frame(table, os.path.join(directory, "bifurcation"), exp.output_format),
            write_frame(pd.DataFrame([folds]), os.path.join(directory, "fold_points"), exp.output_format),
        ]
        finish(directory, "bifurcation", run_config, outputs, **folds)
        click.echo(f"Fold points: upper {m_upper:.6f}, lower {m_lower:.6f}")

    @cli.command("solve-mdp")
    @config_option
    @seed_option
    @out_option
    @format_option
    @click.option("--gamma", type=float, default=None, help="Discount for value iteration.")
    @click.option("--states", type=int, default=None, help="State grid size N.")
    @click.option("--actions", type=int, default=None, help="Action grid size M.")
    @click.option("--horizon", type=int, default=None, help="Finite-horizon backward induction with H stages.")
    @command_errors("solve-mdp")
    def solve_mdp_command(config_path, seed, out, fmt, gamma, states, actions, horizon):
        """Stochastic dynamic programming on the discretized fishery (state, value, action)."""
        run_config = resolve(config_path, {
            "run": {"env": "fishery", "seed": seed},
            "experiment": {"vi_gamma": gamma, "state_grid": states, "action_grid": actions,
                           "vi_horizon": horizon, "output_format": fmt},
        })
        exp = run_config.experiment
        directory = _output_dir(run_config, out, "solve-mdp", config_class.OUTPUT_DIR)
        mdp = discretize_fishery(run_config.fishery, exp.state_grid, exp.action_grid,
                                 gamma=exp.vi_gamma, kernel=exp.vi_kernel, tail_sds=exp.vi_tail_sds)
        vf = value_iteration(mdp, epsilon=exp.vi_epsilon, max_iters=exp.vi_max_iters, horizon=exp.vi_horizon)
        frame = pd.DataFrame({"state": mdp.states, "value": vf.values, "action": vf.greedy_action_values(mdp)})
        path = write_frame(frame, os.path.join(directory, "value_function"), exp.output_format)
        threshold = escapement_threshold(vf, mdp)
        finish(directory, "solve-mdp", run_config, [path], escapement_threshold=threshold,
               iterations=vf.iterations, residual=vf.residual)
        click.echo(f"Escapement threshold: {threshold:.6f} ({vf.iterations} iterations)")

    @cli.command("recommend")
    @config_option
    @out_option
    @format_option
    @click.option("--series", "series_path", required=True, type=click.Path(exists=True, dir_okay=False),
                  help="Stock-assessment CSV with year,biomass,catch.")
    @click.option("--k-estimate", type=float, required=True, help="Carrying capacity in assessment units.")
    @click.option("--policy", type=click.Choice(["escapement", "greedy", "actor"]), default=None,
                  help="Policy to query.")
    @click.option("--actor", "actor_path", type=click.Path(exists=True, dir_okay=False), default=None,
                  help="Actor snapshot (.npz).")
    @command_errors("recommend")
    def recommend_command(config_path, out, fmt, series_path, k_estimate, policy, actor_path):
        """Per-year quota recommendations for an observed stock series."""
        run_config = resolve(config_path, {"run": {"env": "fishery"}, "experiment": {"output_format": fmt}})
        exp = run_config.experiment
        directory = _output_dir(run_config, out, "recommend", config_class.OUTPUT_DIR)
        series = ingest_stock_series(series_path, k_estimate)
        chosen = _resolve_policy(run_config, policy, actor_path)
        frame = recommend_quotas(chosen, series, model_K=run_config.fishery.K)
        path = write_frame(frame, os.path.join(directory, "recommendations"), exp.output_format)
        finish(directory, "recommend", run_config, [path], rows=len(frame))
        click.echo(f"Wrote {len(frame)} recommendations to {path}")

    @cli.command("calibrate")
    @config_option
    @out_option
    @click.option("--upper", type=float, default=DEFAULT_TARGETS[0], show_default=True, help="Target upper fold.")
    @click.option("--lower", type=float, default=DEFAULT_TARGETS[1], show_default=True, help="Target lower fold.")
    @click.option("--collapsed", type=float, default=DEFAULT_TARGETS[2], show_default=True,
                  help="Target collapsed state just past the upper fold.")
    @command_errors("calibrate")
    def calibrate_command(config_path, out, upper, lower, collapsed):
        """Fit (r, K, h) of the conservation dynamics to fold-point targets."""
        run_config = resolve(config_path, {"run": {"env": "conservation"}})
        directory = _output_dir(run_config, out, "calibrate", config_class.OUTPUT_DIR)
        result = calibrate((upper, lower, collapsed), start=run_config.conservation)
        path = write_frame(pd.DataFrame([asdict(result)]), os.path.join(directory, "calibration.csv"))
        finish(directory, "calibrate", run_config, [path], **asdict(result))
        click.echo("[conservation]")
        click.echo(f"r = {result.r:.6g}")
        click.echo(f"K = {result.K:.6g}")
        click.echo(f"h = {result.h:.6g}")

    return cli

# /superlab/commands/oracle.py

import click
import numpy as np
import pandas as pd
from scipy.stats import norm

import data_manager
from config import logger
from malliavin import FUNCTIONALS, simulate_weights, density_profile, duality_check, pooled_mean
from noise import STREAM_W, sample_sheet, replica_seed, discrete_norm_sq
from particle import simulate_system
from regularity import Verdict, identity_verdict, mean_estimate, IDENTITY_RTOL
from utils.command_helpers import (
    run_options, run_subcommand, exit_code_for, query_points, build_model, environment_seeds,
)
from utils.parallel import ordered_map


def _system_task(task: tuple) -> float:
    kernel, grid, seed, x, n_particles, r_index, t_index = task
    sheet = sample_sheet(grid, seed, STREAM_W)
    snapshot = simulate_system(kernel, sheet, np.full(n_particles, x), seed, t_index, r_index)
    return float(np.mean((snapshot.positions - x) ** 2))


def _row(check: str, label: str, measured: float, expected: float, std_err: float, verdict: Verdict) -> dict:
    return {"check": check, "label": label, "measured": measured, "expected": expected, "std_err": std_err,
            "verdict": verdict.value}


# --- ORACLE SUITE ---
def run_oracle(cfg, manifest, out_dir: str) -> int:
    """Gaussian facts the estimators must reproduce: the unconditional law of xi_t, mean-zero weights and duality."""
    grid, kernel = build_model(cfg)
    exp, mc = cfg.experiment, cfg.mc
    r_index, t_index = grid.time_index(exp.r), grid.time_index(exp.t)
    span = exp.t - exp.r
    variance = span * (1.0 + discrete_norm_sq(grid, kernel, 0, exp.x))
    ys = query_points(cfg)
    rows = []

    n_env = 1 if kernel.is_zero else int(exp.density_envs)
    profiles = []
    for seed in environment_seeds(cfg, n_env):
        sheet = sample_sheet(grid, seed, STREAM_W)
        weights = simulate_weights(kernel, sheet, r_index, exp.x, t_index, mc.n_paths, seed, mc.antithetic,
                                   mc.derivative_scheme, cfg.workers)
        profile = density_profile(kernel, sheet, exp.r, exp.x, exp.t, ys, mc.n_paths, seed, mc.antithetic,
                                  mc.derivative_scheme, cfg.workers, weights=weights)
        profiles.append(profile)

        mean, se = pooled_mean(weights.delta, weights.antithetic)
        rows.append(_row("mean_zero", f"env {seed}", float(mean), 0.0, float(se),
                         identity_verdict(float(mean), float(se), 0.0, rtol=0.0)))
        for label in FUNCTIONALS:
            report = duality_check(weights, label)
            verdict = Verdict.SATISFIES_BOUND if report.within_3se else Verdict.VIOLATES
            rows.append(_row("duality", f"{label} env {seed}", report.lhs, report.rhs, report.gap_se, verdict))

    gaussian = norm.pdf(ys, loc=exp.x, scale=np.sqrt(variance))
    values = np.array([[e.value for e in profile] for profile in profiles])
    if n_env == 1:
        p_hat = values[0]
        p_se = np.array([e.std_err for e in profiles[0]])
    else:
        p_hat = values.mean(axis=0)
        p_se = values.std(axis=0, ddof=1) / np.sqrt(n_env)
    density_frame = pd.DataFrame({"y": ys, "p_hat": p_hat, "std_err": p_se, "gaussian": gaussian})
    data_manager.write_csv(out_dir, "oracle_density.csv", density_frame, manifest,
                           plot={"x": "y", "y": ["p_hat", "gaussian"], "title": "density against the Gaussian law"})

    if kernel.is_zero or n_env > 1:
        rtol = 0.0 if kernel.is_zero else IDENTITY_RTOL
        for y, value, se, ref in zip(ys, p_hat, p_se, gaussian):
            rows.append(_row("gaussian_density", f"y={y:.4f}", float(value), float(ref), float(se),
                             identity_verdict(float(value), float(se), float(ref), rtol=rtol)))
    else:
        logger.warning("DENSITY: one environment cannot be compared with the averaged Gaussian law; "
                       "raise experiment.density_envs to include that check.")

    tasks = [(kernel, grid, replica_seed(cfg.rng.seed, k), exp.x, mc.n_paths, r_index, t_index)
             for k in range(int(mc.n_env_replicas))]
    second_moments = ordered_map(_system_task, tasks, cfg.workers)
    if len(second_moments) >= 2:
        measured, se = mean_estimate(second_moments)
        rows.append(_row("system_variance", f"{len(tasks)} replicas", measured, variance, se,
                         identity_verdict(measured, se, variance, rtol=0.0 if kernel.is_zero else IDENTITY_RTOL)))

    frame = pd.DataFrame(rows)
    data_manager.write_csv(out_dir, "oracle.csv", frame, manifest)
    failed = frame[frame["verdict"] == Verdict.VIOLATES.value]
    manifest.summary = {"checks": len(frame), "violations": len(failed)}
    for _, row in failed.iterrows():
        logger.warning(f"DENSITY: oracle check {row['check']} ({row['label']}) failed: "
                       f"{row['measured']:.6g} vs {row['expected']:.6g} +/- {row['std_err']:.3g}")
    logger.info(f"DENSITY: oracle suite ran {len(frame)} checks, {len(failed)} violations.")
    return exit_code_for(Verdict(v) for v in frame["verdict"])


def setup(cli: click.Group) -> None:
    @cli.command("oracle")
    @run_options
    def oracle(config_path, seed, workers, out_dir):
        """Gaussian density, mean-zero, duality and particle-system variance oracles."""
        return run_subcommand("oracle", config_path, seed, workers, out_dir, run_oracle)

# /superlab/commands/density.py

import click
import pandas as pd

import data_manager
from config import logger
from malliavin import density_profile
from noise import STREAM_W, sample_sheet
from utils.command_helpers import run_options, run_subcommand, query_points, build_model, environment_seeds, EXIT_OK


def run_density(cfg, manifest, out_dir: str) -> int:
    grid, kernel = build_model(cfg)
    exp, mc = cfg.experiment, cfg.mc
    ys = query_points(cfg)
    rows = []
    for seed in environment_seeds(cfg, int(exp.density_envs)):
        sheet = sample_sheet(grid, seed, STREAM_W)
        for estimate in density_profile(kernel, sheet, exp.r, exp.x, exp.t, ys, mc.n_paths, seed, mc.antithetic,
                                        mc.derivative_scheme, cfg.workers):
            rows.append({"env_seed": estimate.env_seed, "r": estimate.r, "x": estimate.x, "t": estimate.t,
                         "y": estimate.y, "p_hat": estimate.value, "std_err": estimate.std_err,
                         "n_paths": estimate.n_paths})
        logger.info(f"DENSITY: environment {seed} done ({len(ys)} points, {mc.n_paths} paths).")

    frame = pd.DataFrame(rows)
    data_manager.write_csv(out_dir, "density.csv", frame, manifest,
                           plot={"x": "y", "y": ["p_hat"], "title": f"p^W({exp.r}, {exp.x}; {exp.t}, y)"})
    manifest.summary = {"environments": int(frame["env_seed"].nunique()), "points": len(frame),
                        "max_std_err": float(frame["std_err"].max())}
    return EXIT_OK


def setup(cli: click.Group) -> None:
    @cli.command("density")
    @run_options
    def density(config_path, seed, workers, out_dir):
        """Malliavin-weight estimates of the conditional density p^W(r, x; t, y)."""
        return run_subcommand("density", config_path, seed, workers, out_dir, run_density)

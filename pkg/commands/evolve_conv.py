# /superlab/commands/evolve_conv.py

import click

import data_manager
from config import logger
from spde import ConvolutionSettings, initial_density, evolve_convolution, mass_series
from utils.command_helpers import (
    run_options, run_subcommand, build_model, build_sheets, field_frame, mass_frame, EXIT_OK,
)


def convolution_settings(cfg) -> ConvolutionSettings:
    return ConvolutionSettings(n_paths=cfg.mc.n_paths, seed=cfg.rng.seed, antithetic=cfg.mc.antithetic,
                               scheme=cfg.mc.derivative_scheme, workers=cfg.workers,
                               density_budget=cfg.scheme.density_budget,
                               total_path_budget=cfg.scheme.total_path_budget)


def run_evolve_conv(cfg, manifest, out_dir: str) -> int:
    grid, kernel = build_model(cfg)
    mu = initial_density(grid, cfg.mu.family, cfg.mu.params)
    sheet_w, sheet_v = build_sheets(cfg, grid)
    state = evolve_convolution(mu, kernel, sheet_w, sheet_v, convolution_settings(cfg))

    data_manager.write_csv(out_dir, "evolve_conv.csv", field_frame(state), manifest)
    data_manager.write_csv(out_dir, "evolve_conv_mass.csv", mass_frame(state), manifest,
                           plot={"x": "t", "y": ["mass"], "title": "total mass, convolution representation"})
    mass = mass_series(state)
    manifest.summary = {"paths_used": state.paths_used, "skipped_weight": state.skipped_weight,
                        "initial_mass": float(mass[0]), "final_mass": float(mass[-1])}
    logger.info(f"CONV: evolved {grid.n_t} steps with {state.paths_used} density paths.")
    return EXIT_OK


def setup(cli: click.Group) -> None:
    @cli.command("evolve-conv")
    @run_options
    def evolve_conv_command(config_path, seed, workers, out_dir):
        """Evolve the field through the convolution representation with estimated densities."""
        return run_subcommand("evolve-conv", config_path, seed, workers, out_dir, run_evolve_conv)

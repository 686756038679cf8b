# /superlab/commands/evolve_fd.py

import click

import data_manager
from config import logger
from spde import initial_density, evolve_fd, mass_series
from utils.command_helpers import (
    run_options, run_subcommand, build_model, build_sheets, field_frame, mass_frame, EXIT_OK,
)


def run_evolve_fd(cfg, manifest, out_dir: str) -> int:
    grid, kernel = build_model(cfg)
    mu = initial_density(grid, cfg.mu.family, cfg.mu.params)
    sheet_w, sheet_v = build_sheets(cfg, grid)
    state = evolve_fd(mu, kernel, sheet_w, sheet_v, cfg.scheme.nu_override)

    data_manager.write_csv(out_dir, "evolve_fd.csv", field_frame(state), manifest)
    data_manager.write_csv(out_dir, "evolve_fd_mass.csv", mass_frame(state), manifest,
                           plot={"x": "t", "y": ["mass"], "title": "total mass, finite differences"})
    mass = mass_series(state)
    manifest.summary = {"nu": state.nu, "initial_mass": float(mass[0]), "final_mass": float(mass[-1])}
    logger.info(f"FD: evolved {grid.n_t} steps, mass {mass[0]:.5f} -> {mass[-1]:.5f}.")
    return EXIT_OK


def setup(cli: click.Group) -> None:
    @cli.command("evolve-fd")
    @run_options
    def evolve_fd_command(config_path, seed, workers, out_dir):
        """Evolve the field with the explicit finite-difference scheme."""
        return run_subcommand("evolve-fd", config_path, seed, workers, out_dir, run_evolve_fd)

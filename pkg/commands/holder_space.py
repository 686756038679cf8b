# /superlab/commands/holder_space.py

import click

from commands.holder_time import write_slope_reports
from regularity import holder_space
from utils.command_helpers import run_options, run_subcommand


def run_holder_space(cfg, manifest, out_dir: str) -> int:
    return write_slope_reports("space", holder_space(cfg), manifest, out_dir)


def setup(cli: click.Group) -> None:
    @cli.command("holder-space")
    @run_options
    def holder_space_command(config_path, seed, workers, out_dir):
        """Space-lag Holder regression of the finite-difference field."""
        return run_subcommand("holder-space", config_path, seed, workers, out_dir, run_holder_space)

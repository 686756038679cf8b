# /superlab/commands/lemmas.py

import dataclasses

import click
import pandas as pd

import data_manager
from regularity import check_lemma_suite
from utils.command_helpers import run_options, run_subcommand, exit_code_for


def run_lemmas(cfg, manifest, out_dir: str) -> int:
    suite = check_lemma_suite(cfg)
    rows = pd.DataFrame([{**dataclasses.asdict(row), "verdict": row.verdict.value} for row in suite.rows])
    points = pd.DataFrame([dataclasses.asdict(point) for point in suite.points])
    data_manager.write_csv(out_dir, "lemmas.csv", rows, manifest)
    data_manager.write_csv(out_dir, "lemma_points.csv", points, manifest)
    manifest.summary = {"verdict": suite.verdict.value,
                        "rows": {f"{row.check}/{row.order}": row.verdict.value for row in suite.rows}}
    return exit_code_for(row.verdict for row in suite.rows)


def setup(cli: click.Group) -> None:
    @cli.command("lemmas")
    @run_options
    def lemmas(config_path, seed, workers, out_dir):
        """Moment bounds, identities and scaling slopes of the particle's Malliavin quantities."""
        return run_subcommand("lemmas", config_path, seed, workers, out_dir, run_lemmas)

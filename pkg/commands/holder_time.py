# /superlab/commands/holder_time.py

import click

import data_manager
from config import logger
from regularity import holder_time
from utils.command_helpers import run_options, run_subcommand, exit_code_for, moment_frame, slope_frame


def write_slope_reports(kind: str, reports, manifest, out_dir: str) -> int:
    """Summary table plus one moment table per order; shared with holder-space."""
    data_manager.write_csv(out_dir, f"holder_{kind}.csv", slope_frame(reports), manifest)
    for report in reports:
        data_manager.write_csv(out_dir, f"holder_{kind}_p{report.order}.csv", moment_frame(report.moments), manifest,
                               plot={"x": "lag", "y": ["moment"], "logscale": True,
                                     "title": f"{kind} increments, order {report.order}"})
        logger.info(f"HOLDER: {kind} order {report.order}: slope {report.slope:.3f} +/- {report.ci:.3f} "
                    f"(reference {report.reference:g}, target {report.target:g}) -> {report.verdict.value}")
    manifest.summary = {f"p{r.order}": {"slope": r.slope, "ci": r.ci, "verdict": r.verdict.value} for r in reports}
    return exit_code_for(r.verdict for r in reports)


def run_holder_time(cfg, manifest, out_dir: str) -> int:
    return write_slope_reports("time", holder_time(cfg), manifest, out_dir)


def setup(cli: click.Group) -> None:
    @cli.command("holder-time")
    @run_options
    def holder_time_command(config_path, seed, workers, out_dir):
        """Time-lag Holder regression of the finite-difference field."""
        return run_subcommand("holder-time", config_path, seed, workers, out_dir, run_holder_time)

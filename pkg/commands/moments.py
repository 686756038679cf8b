# /superlab/commands/moments.py

import click

import data_manager
from regularity import simulate_fields, holder_time, holder_space
from utils.command_helpers import run_options, run_subcommand, moment_frame, EXIT_OK


def run_moments(cfg, manifest, out_dir: str) -> int:
    """Raw increment-moment tables in time and space from one set of replicas; no verdicts."""
    fields = simulate_fields(cfg)
    slopes = {}
    for kind, reports in (("time", holder_time(cfg, fields)), ("space", holder_space(cfg, fields))):
        for report in reports:
            name = f"moments_{kind}_p{report.order}.csv"
            data_manager.write_csv(out_dir, name, moment_frame(report.moments), manifest,
                                   plot={"x": "lag", "y": ["moment"], "logscale": True,
                                         "title": f"E|increment|^{report.order} against the {kind} lag"})
            slopes[f"{kind}_p{report.order}"] = report.slope
    manifest.summary = {"replicas": int(fields.shape[0]), "slopes": slopes}
    return EXIT_OK


def setup(cli: click.Group) -> None:
    @cli.command("moments")
    @run_options
    def moments(config_path, seed, workers, out_dir):
        """Increment moments of the field at dyadic time lags and cell lags."""
        return run_subcommand("moments", config_path, seed, workers, out_dir, run_moments)

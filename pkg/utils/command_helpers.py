# /superlab/utils/command_helpers.py

import os
import functools
from typing import Callable, Optional

import click
import numpy as np
import pandas as pd

import data_manager
from config import logger, DEFAULT_CONFIG_FILE
from utils.errors import LabError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VIOLATES = 2


# --- COMMAND HELPERS ---
def run_options(fn):
    """--config/--seed/--workers/--out, shared by every subcommand."""
    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                  help="Sectioned YAML config (defaults to configs/default.yaml).")
    @click.option("--seed", type=int, default=None, help="Override rng.seed.")
    @click.option("--workers", type=click.IntRange(min=1), default=None, help="Override the worker count.")
    @click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output directory.")
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        return fn(*args, **kwargs)
    return wrapper


def exit_code_for(verdicts) -> int:
    from regularity import Verdict

    return EXIT_VIOLATES if any(v == Verdict.VIOLATES for v in verdicts) else EXIT_OK


def run_subcommand(name: str, config_path: Optional[str], seed: Optional[int], workers: Optional[int],
                   out_dir: Optional[str], body: Callable) -> int:
    """
    Load the config, run body(cfg, manifest, out_dir) and always leave a manifest behind.
    body returns an exit code (0 or 2); errors map to 1.
    """
    manifest = data_manager.new_manifest(name)
    target = out_dir or "runs"
    code = EXIT_ERROR
    try:
        cfg = data_manager.load_config(config_path or DEFAULT_CONFIG_FILE)
        cfg = data_manager.with_overrides(cfg, seed=seed, workers=workers, out_dir=out_dir)
        target = cfg.out_dir
        manifest = data_manager.new_manifest(name, cfg)
        data_manager.ensure_out_dir(target)
        data_manager.dump_config(cfg, os.path.join(target, "config.yaml"))
        logger.info(f"RUN: {name} (seed {cfg.rng.seed}, {cfg.workers} worker(s)) -> {os.path.abspath(target)}")
        code = body(cfg, manifest, target)
    except LabError as e:
        logger.error(f"RUN: {name} failed: {e}")
        click.echo(f"{name}: {e}", err=True)
        data_manager.record_error(manifest, e.module, e.code, str(e))
    except Exception as e:
        logger.error(f"RUN: {name} crashed: {e}", exc_info=True)
        click.echo(f"{name}: internal error: {e}", err=True)
        data_manager.record_error(manifest, "superlab", "internal-error", f"{type(e).__name__}: {e}")

    manifest.exit_code = code
    try:
        data_manager.write_manifest(target, manifest)
    except (OSError, LabError) as e:
        logger.error(f"RUN: could not write the manifest for {name}: {e}")
        code = EXIT_ERROR
    return code


def query_points(cfg) -> np.ndarray:
    """experiment.ys, or 21 points on [x - 3, x + 3]."""
    if cfg.experiment.ys:
        return np.asarray(cfg.experiment.ys, dtype=float)
    return np.linspace(cfg.experiment.x - 3.0, cfg.experiment.x + 3.0, 21)


def build_model(cfg):
    """(grid, kernel) of a validated config."""
    from kernel import from_config as kernel_from_config
    from noise import grid_from_config

    return grid_from_config(cfg.grid), kernel_from_config(cfg.kernel)


def build_sheets(cfg, grid, seed: Optional[int] = None):
    """W and V for one (W, V) seed; V is zero when branching is switched off."""
    from noise import STREAM_W, STREAM_V, sample_sheet, zero_sheet

    seed = cfg.rng.seed if seed is None else seed
    sheet_w = sample_sheet(grid, seed, STREAM_W)
    sheet_v = sample_sheet(grid, seed, STREAM_V) if cfg.scheme.branching else zero_sheet(grid, STREAM_V)
    return sheet_w, sheet_v


def environment_seeds(cfg, n_env: int) -> list[int]:
    """The run seed itself for a single environment, derived replica seeds otherwise."""
    from noise import replica_seed

    if n_env <= 1:
        return [int(cfg.rng.seed)]
    return [replica_seed(cfg.rng.seed, k) for k in range(n_env)]


def field_frame(state) -> pd.DataFrame:
    """Long-format (seed_W, seed_V, t, y, X) rows of every computed time of a field."""
    grid = state.grid
    steps = state.step + 1
    t = np.repeat(grid.times[:steps], grid.n_x)
    y = np.tile(grid.y, steps)
    frame = pd.DataFrame({"seed_W": state.seed_w, "seed_V": state.seed_v, "t": t, "y": y,
                          "X": state.X[:steps].ravel()})
    if state.X1 is not None:
        frame["X1"] = state.X1[:steps].ravel()
        frame["X2"] = state.X2[:steps].ravel()
        frame["X1_std_err"] = state.X1_std_err[:steps].ravel()
    return frame


def mass_frame(state) -> pd.DataFrame:
    from spde import mass_series

    return pd.DataFrame({"t": state.grid.times[:state.step + 1], "mass": mass_series(state)})


def moment_frame(table) -> pd.DataFrame:
    return pd.DataFrame({"lag": table.lags, "moment": table.moments, "std_err": table.std_errs, "n": table.counts})


def slope_frame(reports) -> pd.DataFrame:
    return pd.DataFrame([{"order": r.order, "slope": r.slope, "ci": r.ci, "reference": r.reference,
                          "target": r.target, "verdict": r.verdict.value} for r in reports])

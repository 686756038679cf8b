# /superlab/utils/checks.py

import math
from typing import TYPE_CHECKING

from config import logger, CFL_LIMIT, MAX_SECOND_DERIVATIVE_STEPS
from utils.errors import ConfigError, LabError

if TYPE_CHECKING:
    from data_manager import ExperimentConfig

# A start point should sit this many diffusion spans inside the interior walls.
MARGIN_SPANS = 4.0


# --- CROSS-MODULE CHECKS ---
def check_config(cfg: 'ExperimentConfig') -> list[str]:
    """
    Invariants that span several modules. Hard failures raise ConfigError('invalid-config');
    soft ones are logged and returned.
    """
    from kernel import from_config as kernel_from_config
    from noise import grid_from_config
    from particle import exit_margin, diffusion_span
    from spde import diffusion_coefficient, cfl_number

    try:
        grid = grid_from_config(cfg.grid)
        kernel = kernel_from_config(cfg.kernel)
    except LabError as e:
        raise ConfigError("invalid-config", str(e)) from e

    nu = diffusion_coefficient(grid, kernel, cfg.scheme.nu_override)
    cfl = cfl_number(grid, nu)
    if cfl > CFL_LIMIT:
        needed = math.ceil(nu * grid.t_max / (CFL_LIMIT * grid.dy ** 2))
        raise ConfigError("invalid-config", f"cfl-violation: nu*dt/dy^2 = {cfl:.4f} > {CFL_LIMIT} "
                                            f"(nu = {nu:.4f}); raise grid.n_t to at least {needed}")

    if grid.n_t > MAX_SECOND_DERIVATIVE_STEPS:
        raise ConfigError("invalid-config", f"grid.n_t = {grid.n_t} exceeds the second-derivative memory cap "
                                            f"of {MAX_SECOND_DERIVATIVE_STEPS}")

    if cfg.mc.antithetic and cfg.mc.n_paths % 2:
        raise ConfigError("invalid-config", f"mc.n_paths = {cfg.mc.n_paths} must be even with antithetic pairing")

    bad_orders = [o for o in cfg.experiment.moment_orders if o not in (2, 4)]
    if bad_orders or not cfg.experiment.moment_orders:
        raise ConfigError("invalid-config", f"experiment.moment_orders must be drawn from [2, 4], got "
                                            f"{cfg.experiment.moment_orders}")

    exp = cfg.experiment
    if not exp.r < exp.t <= grid.t_max:
        raise ConfigError("invalid-config", f"need experiment.r < experiment.t <= grid.t_max, got "
                                            f"r={exp.r}, t={exp.t}, t_max={grid.t_max}")
    for name, value in (("experiment.r", exp.r), ("experiment.t", exp.t)):
        if abs(round(value / grid.dt) * grid.dt - value) > 1e-9 * max(1.0, grid.t_max):
            raise ConfigError("invalid-config", f"{name} = {value} is not on the time grid (dt = {grid.dt})")

    warnings = []
    margin = exit_margin(grid, kernel)
    span = diffusion_span(kernel, grid.t_max)
    if abs(exp.x - 0.5 * (grid.x_min + grid.x_max)) > margin:
        raise ConfigError("invalid-config", f"experiment.x = {exp.x} is outside the grid interior")
    if margin < MARGIN_SPANS * span:
        warnings.append(f"grid margin {margin:.3f} is under {MARGIN_SPANS:g} diffusion spans ({span:.3f} each); "
                        f"widen [x_min, x_max] to avoid domain exits")
    for message in warnings:
        logger.warning(f"CONFIG: {message}")
    return warnings

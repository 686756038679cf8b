# /superlab/spde.py

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.fft import dst, idst
from scipy.stats import norm

from config import logger, BLOWUP_LIMIT, CFL_LIMIT
from kernel import SmoothingKernel
from malliavin import density_tensor
from noise import GridSpec, SheetSample, discrete_norm_sq
from particle import SCHEME_EULER, diffusion_span
from utils.errors import SpdeError

# Starting cells closer to the interior wall than this many diffusion spans are not used as sources.
SOURCE_SPAN_FACTOR = 4.0
RELATIVE_EPS = 1e-12


class InitialFamily(str, enum.Enum):
    GAUSSIAN_BUMP = "gaussian_bump"
    INDICATOR = "indicator"
    TABULATED = "tabulated"


class SchemeTag(str, enum.Enum):
    CONVOLUTION = "convolution"
    FINITE_DIFFERENCE = "finite_difference"


# --- INITIAL DENSITY ---
@dataclass(frozen=True)
class InitialDensity:
    family: InitialFamily
    params: dict
    values: np.ndarray = field(repr=False)
    dy: float = 1.0

    @property
    def mass(self) -> float:
        return float(np.sum(self.values) * self.dy)

    @property
    def max_value(self) -> float:
        return float(np.max(self.values)) if self.values.size else 0.0


def initial_density(grid: GridSpec, family, params: Optional[dict] = None) -> InitialDensity:
    """
    mu on the spatial cell centres.
      gaussian_bump: mass, mean, sd        -> mass * N(mean, sd^2) density
      indicator:     lo, hi, height        -> height on cells whose centre lies in [lo, hi]
      tabulated:     values (one per cell) or path to two columns "z mu(z)", linearly interpolated
    """
    family = InitialFamily(family)
    params = dict(params or {})
    y = grid.y
    if family == InitialFamily.GAUSSIAN_BUMP:
        sd = float(params.get("sd", 0.5))
        if not sd > 0:
            raise SpdeError("invalid-argument", f"mu.params.sd must be positive, got {sd}")
        values = float(params.get("mass", 1.0)) * norm.pdf(y, loc=float(params.get("mean", 0.0)), scale=sd)
    elif family == InitialFamily.INDICATOR:
        lo, hi = float(params.get("lo", -0.5)), float(params.get("hi", 0.5))
        values = np.where((y >= lo) & (y <= hi), float(params.get("height", 1.0)), 0.0)
    elif "values" in params:
        values = np.asarray(params["values"], dtype=float)
        if values.shape != (grid.n_x,):
            raise SpdeError("shape-error", f"tabulated mu has {values.size} values, grid has {grid.n_x} cells")
    elif "path" in params:
        try:
            table = np.loadtxt(params["path"], dtype=float, ndmin=2)
        except (OSError, ValueError) as e:
            raise SpdeError("invalid-argument", f"could not read mu table {params['path']}: {e}") from e
        values = np.interp(y, table[:, 0], table[:, 1], left=0.0, right=0.0)
    else:
        raise SpdeError("invalid-argument", "tabulated mu needs 'values' or 'path' in mu.params")

    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise SpdeError("invalid-argument", "mu must be finite and non-negative")
    values.setflags(write=False)
    return InitialDensity(family=family, params=params, values=values, dy=grid.dy)


def point_mass(grid: GridSpec, index: Optional[int] = None) -> InitialDensity:
    """Unit mass in a single cell (the grid centre by default)."""
    j = grid.center_index if index is None else index
    values = np.zeros(grid.n_x)
    values[j] = 1.0 / grid.dy
    return initial_density(grid, InitialFamily.TABULATED, {"values": values})


# --- FIELD STATE ---
@dataclass
class FieldState:
    """
    X[i][j] = X_{t_i}(y_j). Rows beyond `step` are not yet computed.
    Convolution runs also keep the two terms of the representation apart (X1, X2) and the X1 standard errors.
    """
    grid: GridSpec
    X: np.ndarray = field(repr=False)
    scheme: SchemeTag
    seed_w: int = 0
    seed_v: int = 0
    step: int = 0
    nu: Optional[float] = None
    X1: Optional[np.ndarray] = field(default=None, repr=False)
    X2: Optional[np.ndarray] = field(default=None, repr=False)
    X1_std_err: Optional[np.ndarray] = field(default=None, repr=False)
    paths_used: int = 0
    skipped_weight: float = 0.0

    @property
    def mass(self) -> np.ndarray:
        return mass_series(self)


def mass_series(state: FieldState) -> np.ndarray:
    """Total mass sum_j X_{i,j} dy for every computed time."""
    return np.sum(state.X[:state.step + 1], axis=1) * state.grid.dy


def _new_state(grid: GridSpec, mu: InitialDensity, scheme: SchemeTag, sheet_w: SheetSample,
               sheet_v: SheetSample) -> FieldState:
    if mu.values.shape != (grid.n_x,):
        raise SpdeError("shape-error", f"mu has {mu.values.size} cells, grid has {grid.n_x}")
    if sheet_w.grid != grid or sheet_v.grid != grid:
        raise SpdeError("shape-error", "W and V sheets must live on the field grid")
    X = np.zeros((grid.n_t + 1, grid.n_x))
    X[0] = mu.values
    return FieldState(grid=grid, X=X, scheme=scheme, seed_w=sheet_w.seed_id, seed_v=sheet_v.seed_id)


# --- FINITE DIFFERENCES ---
def diffusion_coefficient(grid: GridSpec, kernel: SmoothingKernel, nu_override: Optional[float] = None) -> float:
    """nu = (1 + ||h||^2_discrete) / 2 unless overridden."""
    if nu_override is not None:
        return float(nu_override)
    centre = float(grid.y[grid.center_index])
    return 0.5 * (1.0 + discrete_norm_sq(grid, kernel, 0, centre))


def cfl_number(grid: GridSpec, nu: float) -> float:
    return nu * grid.dt / grid.dy ** 2


def kernel_matrix(grid: GridSpec, kernel: SmoothingKernel) -> np.ndarray:
    """H[j][k] = h(y_k - y_j)."""
    y = grid.y
    if kernel.is_zero:
        return np.zeros((grid.n_x, grid.n_x))
    return kernel.eval(0, y[None, :] - y[:, None])


def step_finite_difference(state: FieldState, kernel: SmoothingKernel, sheet_w: SheetSample, sheet_v: SheetSample,
                           i: Optional[int] = None, hmat: Optional[np.ndarray] = None) -> FieldState:
    """
    X_{i+1} = X_i + nu dt Lap(X_i) - D_y[X_i * (H dW_i)] + sqrt(max(X_i, 0)) dV_i / dy,
    with zero ghost values outside the truncated domain.
    """
    grid = state.grid
    i = state.step if i is None else i
    if i != state.step or i >= grid.n_t:
        raise SpdeError("invalid-argument", f"cannot step from {i}: state is at step {state.step} of {grid.n_t}")
    nu = state.nu
    if cfl_number(grid, nu) > CFL_LIMIT:
        raise SpdeError("cfl-violation", f"nu*dt/dy^2 = {cfl_number(grid, nu):.4f} exceeds {CFL_LIMIT}")

    x = state.X[i]
    padded = np.pad(x, 1)
    lap = (padded[2:] - 2.0 * x + padded[:-2]) / grid.dy ** 2
    new = x + nu * grid.dt * lap

    dW = sheet_w.increments[i]
    if not kernel.is_zero and np.any(dW):
        hmat = kernel_matrix(grid, kernel) if hmat is None else hmat
        G = np.pad(x * (hmat @ dW), 1)
        new -= (G[2:] - G[:-2]) / (2.0 * grid.dy)

    dV = sheet_v.increments[i]
    if np.any(dV):
        new += np.sqrt(np.maximum(x, 0.0)) * dV / grid.dy

    worst = float(np.max(np.abs(new))) if np.all(np.isfinite(new)) else math.inf
    if worst > BLOWUP_LIMIT:
        raise SpdeError("blowup", f"max|X| = {worst:.3e} at step {i + 1}")
    state.X[i + 1] = new
    state.step = i + 1
    return state


def evolve_fd(mu: InitialDensity, kernel: SmoothingKernel, sheet_w: SheetSample, sheet_v: SheetSample,
              nu_override: Optional[float] = None, n_steps: Optional[int] = None) -> FieldState:
    grid = sheet_w.grid
    state = _new_state(grid, mu, SchemeTag.FINITE_DIFFERENCE, sheet_w, sheet_v)
    state.nu = diffusion_coefficient(grid, kernel, nu_override)
    n_steps = grid.n_t if n_steps is None else n_steps
    hmat = kernel_matrix(grid, kernel)
    for i in range(n_steps):
        step_finite_difference(state, kernel, sheet_w, sheet_v, i, hmat)
    logger.debug(f"FD: {n_steps} steps, nu={state.nu:.5f}, final mass {mass_series(state)[-1]:.6f}.")
    return state


def heat_semigroup(values, grid: GridSpec, nu: float, n_steps: int) -> np.ndarray:
    """
    The explicit Dirichlet heat scheme applied n_steps times, computed in its sine eigenbasis
    rather than by stepping.
    """
    values = np.asarray(values, dtype=float)
    n = len(values)
    k = np.arange(1, n + 1)
    factor = 1.0 - 4.0 * cfl_number(grid, nu) * np.sin(np.pi * k / (2.0 * (n + 1))) ** 2
    return idst(dst(values, type=1) * factor ** n_steps, type=1)


# --- CONVOLUTION REPRESENTATION ---
@dataclass(frozen=True)
class ConvolutionSettings:
    n_paths: int
    seed: int
    antithetic: bool = True
    scheme: str = SCHEME_EULER
    workers: int = 1
    density_budget: int = 10_000
    total_path_budget: int = 200_000_000


def _source_seed(seed: int, r_index: int, j: int) -> int:
    """Independent B-ensembles per source cell, so per-source standard errors add in quadrature."""
    digest = hashlib.blake2b(f"{int(seed)}|source|{r_index}|{j}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def _safe_source(grid: GridSpec, kernel: SmoothingKernel, z: float, horizon: float) -> bool:
    centre = 0.5 * (grid.x_min + grid.x_max)
    reach = grid.half_width - kernel.support_radius - SOURCE_SPAN_FACTOR * diffusion_span(kernel, horizon)
    return abs(z - centre) <= reach


def _charge(state: FieldState, settings: ConvolutionSettings) -> None:
    """density_budget caps the paths of one density query; total_path_budget caps the whole evolution."""
    if settings.n_paths > settings.density_budget:
        raise SpdeError("budget-exceeded", f"{settings.n_paths} paths per density query exceed the budget "
                                           f"of {settings.density_budget}")
    if state.paths_used + settings.n_paths > settings.total_path_budget:
        raise SpdeError("budget-exceeded", f"{state.paths_used + settings.n_paths} density paths exceed the total "
                                           f"budget of {settings.total_path_budget}")
    state.paths_used += settings.n_paths


def _emit_sources(state: FieldState, kernel: SmoothingKernel, sheet_w: SheetSample, r_index: int, weights: np.ndarray,
                  end_indices: list[int], settings: ConvolutionSettings, target: np.ndarray,
                  target_var: Optional[np.ndarray] = None) -> None:
    """Add sum_z w(z) p^W(r, z; t_e, .) to target[e] for every end e; zero weights are skipped."""
    grid = state.grid
    horizon = (max(end_indices) - r_index) * grid.dt
    for j in np.flatnonzero(weights):
        z = float(grid.y[j])
        if not _safe_source(grid, kernel, z, horizon):
            state.skipped_weight += abs(float(weights[j]))
            continue
        _charge(state, settings)
        means, ses = density_tensor(kernel, sheet_w, r_index, z, end_indices, grid.y, settings.n_paths,
                                    _source_seed(settings.seed, r_index, j), settings.antithetic, settings.scheme,
                                    settings.workers)
        target[end_indices] += weights[j] * means
        if target_var is not None:
            target_var[end_indices] += (weights[j] * ses) ** 2


def initial_term(mu: InitialDensity, kernel: SmoothingKernel, sheet: SheetSample, t_index, n_paths: int, seed: int,
                 antithetic: bool = True, scheme: str = SCHEME_EULER, workers: int = 1, density_budget: int = 10_000,
                 total_path_budget: int = 200_000_000) -> tuple[np.ndarray, np.ndarray]:
    """
    X_{t,1}(y) = sum_z mu(z) p^W(0, z; t, y) dz on the cell centres, with its standard error.
    t_index may be a single index or a list; the result then has one row per index.
    """
    grid = sheet.grid
    single = np.ndim(t_index) == 0
    ends = [int(t_index)] if single else [int(e) for e in t_index]
    if min(ends) < 1:
        raise SpdeError("invalid-argument", "the initial term needs t > 0")
    settings = ConvolutionSettings(n_paths=n_paths, seed=seed, antithetic=antithetic, scheme=scheme, workers=workers,
                                   density_budget=density_budget, total_path_budget=total_path_budget)
    state = _new_state(grid, mu, SchemeTag.CONVOLUTION, sheet, sheet)
    values = np.zeros((grid.n_t + 1, grid.n_x))
    var = np.zeros_like(values)
    _emit_sources(state, kernel, sheet, 0, mu.values * grid.dy, ends, settings, values, var)
    out, se = values[ends], np.sqrt(var[ends])
    return (out[0], se[0]) if single else (out, se)


def step_convolution(state: FieldState, kernel: SmoothingKernel, sheet_w: SheetSample, sheet_v: SheetSample,
                     settings: ConvolutionSettings, i: Optional[int] = None) -> FieldState:
    """
    Advance from t_i to t_{i+1}. Sources at time i, sqrt(max(X_i(z), 0)) dV[i][z], are pushed through
    p^W(t_i, z; t_e, .) for every later e at once, so X2 at t_{i+1} already holds every r <= i.
    """
    grid = state.grid
    i = state.step if i is None else i
    if i != state.step or i >= grid.n_t:
        raise SpdeError("invalid-argument", f"cannot step from {i}: state is at step {state.step} of {grid.n_t}")
    if state.X1 is None or state.X2 is None:
        raise SpdeError("invalid-argument", "convolution state has no initial term; build it with evolve_convolution")

    weights = np.sqrt(np.maximum(state.X[i], 0.0)) * sheet_v.increments[i]
    ends = list(range(i + 1, grid.n_t + 1))
    _emit_sources(state, kernel, sheet_w, i, weights, ends, settings, state.X2)

    state.X[i + 1] = state.X1[i + 1] + state.X2[i + 1]
    if not np.all(np.isfinite(state.X[i + 1])):
        raise SpdeError("blowup", f"non-finite field at step {i + 1}")
    state.step = i + 1
    return state


def evolve_convolution(mu: InitialDensity, kernel: SmoothingKernel, sheet_w: SheetSample, sheet_v: SheetSample,
                       settings: ConvolutionSettings, n_steps: Optional[int] = None) -> FieldState:
    grid = sheet_w.grid
    state = _new_state(grid, mu, SchemeTag.CONVOLUTION, sheet_w, sheet_v)
    state.X1 = np.zeros_like(state.X)
    state.X1[0] = mu.values
    state.X2 = np.zeros_like(state.X)
    var = np.zeros_like(state.X)
    _emit_sources(state, kernel, sheet_w, 0, mu.values * grid.dy, list(range(1, grid.n_t + 1)), settings,
                  state.X1, var)
    state.X1_std_err = np.sqrt(var)

    n_steps = grid.n_t if n_steps is None else n_steps
    for i in range(n_steps):
        step_convolution(state, kernel, sheet_w, sheet_v, settings, i)

    total = float(np.sum(mu.values) * grid.dy)
    if state.skipped_weight > RELATIVE_EPS * max(total, 1.0):
        logger.warning(f"CONV: source weight {state.skipped_weight:.3e} sat too close to the wall and was dropped; "
                       f"enlarge the domain if this matters.")
    logger.debug(f"CONV: {n_steps} steps used {state.paths_used} density paths.")
    return state


# --- CROSS-VALIDATION ---
def crosscheck(conv: FieldState, fd: FieldState) -> np.ndarray:
    """||X_conv - X_fd|| / max(||X_fd||, eps) in the grid L2 norm, one entry per computed time."""
    if conv.grid != fd.grid or conv.X.shape != fd.X.shape:
        raise SpdeError("shape-error", "crosscheck needs both fields on the same grid")
    steps = min(conv.step, fd.step) + 1
    dy = fd.grid.dy
    diff = np.sqrt(np.sum((conv.X[:steps] - fd.X[:steps]) ** 2, axis=1) * dy)
    ref = np.sqrt(np.sum(fd.X[:steps] ** 2, axis=1) * dy)
    return diff / np.maximum(ref, RELATIVE_EPS)

# /superlab/noise.py

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from config import logger
from kernel import SmoothingKernel
from utils.errors import NoiseError

STREAM_W = "W"
STREAM_V = "V"


def bm_stream(path_index: int) -> str:
    return f"B/{path_index}"


# --- GRID ---
@dataclass(frozen=True)
class GridSpec:
    """Time grid t_i = i*dt on [0, t_max]; spatial cells of width dy on [x_min, x_max] with centres y_j."""
    t_max: float
    n_t: int
    x_min: float
    x_max: float
    n_x: int

    def __post_init__(self):
        if not (self.t_max > 0 and math.isfinite(self.t_max)):
            raise NoiseError("invalid-argument", f"t_max must be positive, got {self.t_max}")
        if self.n_t < 1 or self.n_x < 1:
            raise NoiseError("invalid-argument", f"n_t and n_x must be positive, got {self.n_t}, {self.n_x}")
        if not self.x_max > self.x_min:
            raise NoiseError("invalid-argument", f"x_max must exceed x_min, got [{self.x_min}, {self.x_max}]")

    @property
    def dt(self) -> float:
        return self.t_max / self.n_t

    @property
    def dy(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @property
    def half_width(self) -> float:
        return 0.5 * (self.x_max - self.x_min)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_t + 1) * self.dt

    @property
    def y(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_x) + 0.5) * self.dy

    @property
    def center_index(self) -> int:
        return self.n_x // 2

    def time_index(self, t: float) -> int:
        """Grid index of time t; t must sit on the grid up to round-off."""
        idx = int(round(t / self.dt))
        if idx < 0 or idx > self.n_t or abs(idx * self.dt - t) > 1e-9 * max(1.0, self.t_max):
            raise NoiseError("invalid-argument", f"time {t} is not on the grid (dt={self.dt})")
        return idx

    def space_index(self, y: float) -> int:
        """Index of the cell whose centre is nearest to y."""
        idx = int(round((y - self.x_min) / self.dy - 0.5))
        return min(max(idx, 0), self.n_x - 1)


@dataclass(frozen=True)
class SheetSample:
    """Brownian-sheet increments dW[i][j] ~ N(0, dt*dy), one row per time cell."""
    grid: GridSpec
    increments: np.ndarray = field(repr=False)
    seed_id: int = 0
    stream: str = STREAM_W

    @property
    def is_zero(self) -> bool:
        return not np.any(self.increments)


@dataclass(frozen=True)
class BrownianPath:
    grid: GridSpec
    increments: np.ndarray = field(repr=False)
    seed_id: int = 0
    stream: str = "B/0"

    @property
    def values(self) -> np.ndarray:
        """Partial sums B_{t_0} = 0, B_{t_{i+1}} = B_{t_i} + dB[i]."""
        out = np.zeros(len(self.increments) + 1)
        np.cumsum(self.increments, out=out[1:])
        return out


# --- COUNTER-BASED GENERATION ---
def stream_key(seed: int, stream: str) -> int:
    """128-bit Philox key for a (seed, stream) pair."""
    digest = hashlib.blake2b(f"{int(seed)}|{stream}".encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def _row_generator(key: int, row: int) -> np.random.Generator:
    # The row index occupies the top counter word, so rows never share counter space
    # and any row can be produced without generating the ones before it.
    counter = np.array([0, 0, 0, row], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def standard_normal_rows(seed: int, stream: str, n_rows: int, n_cols: int) -> np.ndarray:
    key = stream_key(seed, stream)
    out = np.empty((n_rows, n_cols))
    for i in range(n_rows):
        out[i] = _row_generator(key, i).standard_normal(n_cols)
    return out


def sample_sheet(grid: GridSpec, seed: int, stream: str = STREAM_W) -> SheetSample:
    scale = math.sqrt(grid.dt * grid.dy)
    increments = scale * standard_normal_rows(seed, stream, grid.n_t, grid.n_x)
    increments.setflags(write=False)

    n_cells = grid.n_t * grid.n_x
    ratio = float(np.mean(increments ** 2)) / (grid.dt * grid.dy)
    band = 5.0 / math.sqrt(n_cells)
    if abs(ratio - 1.0) > band:
        logger.warning(f"NOISE: sheet '{stream}' seed {seed} has normalized second moment {ratio:.4f} "
                       f"outside 1 +/- {band:.4f}.")
    return SheetSample(grid=grid, increments=increments, seed_id=int(seed), stream=stream)


def zero_sheet(grid: GridSpec, stream: str = STREAM_V) -> SheetSample:
    increments = np.zeros((grid.n_t, grid.n_x))
    increments.setflags(write=False)
    return SheetSample(grid=grid, increments=increments, seed_id=-1, stream=stream)


def sample_bm(grid: GridSpec, seed: int, stream: str = "B/0") -> BrownianPath:
    increments = math.sqrt(grid.dt) * _row_generator(stream_key(seed, stream), 0).standard_normal(grid.n_t)
    increments.setflags(write=False)
    return BrownianPath(grid=grid, increments=increments, seed_id=int(seed), stream=stream)


def sample_bm_increments(grid: GridSpec, seed: int, path_indices) -> np.ndarray:
    """Increments of the paths 'B/<k>' for every k in path_indices, stacked as rows."""
    path_indices = list(path_indices)
    out = np.empty((len(path_indices), grid.n_t))
    scale = math.sqrt(grid.dt)
    for row, k in enumerate(path_indices):
        out[row] = scale * _row_generator(stream_key(seed, bm_stream(k)), 0).standard_normal(grid.n_t)
    return out


def aggregate_blocks(sheet: SheetSample) -> SheetSample:
    """Sum 2x2 blocks of a (2n_t, 2n_x) sheet into a sheet on the (n_t, n_x) grid."""
    g = sheet.grid
    if g.n_t % 2 or g.n_x % 2:
        raise NoiseError("shape-error", f"cannot halve a {g.n_t}x{g.n_x} sheet")
    coarse = GridSpec(t_max=g.t_max, n_t=g.n_t // 2, x_min=g.x_min, x_max=g.x_max, n_x=g.n_x // 2)
    blocks = sheet.increments.reshape(coarse.n_t, 2, coarse.n_x, 2).sum(axis=(1, 3))
    blocks.setflags(write=False)
    return SheetSample(grid=coarse, increments=blocks, seed_id=sheet.seed_id, stream=sheet.stream)


# --- SHEET INTEGRALS ---
def _window_offsets(grid: GridSpec, radius: float) -> np.ndarray:
    return np.arange(int(math.ceil(2.0 * radius / grid.dy)) + 2)


def kernel_window(grid: GridSpec, kernel: SmoothingKernel, orders, centers) -> tuple[dict, np.ndarray]:
    """
    Kernel derivatives h^(k)(y_j - c) on the cells within the support radius of each centre.
    Returns ({order: values (P, K)}, cell indices (P, K)); cells outside the radius or the grid carry 0.
    """
    centers = np.atleast_1d(np.asarray(centers, dtype=float))
    radius = kernel.support_radius
    offsets = _window_offsets(grid, radius)
    j_start = np.floor((centers - radius - grid.x_min) / grid.dy).astype(np.int64)
    js = j_start[:, None] + offsets[None, :]
    valid = (js >= 0) & (js < grid.n_x)
    js_clipped = np.clip(js, 0, grid.n_x - 1)
    dist = grid.x_min + (js_clipped + 0.5) * grid.dy - centers[:, None]
    valid &= np.abs(dist) <= radius
    values = {k: np.where(valid, kernel.eval(k, dist), 0.0) for k in orders}
    return values, js_clipped


def slice_integrals(sheet: SheetSample, kernel: SmoothingKernel, order: int, i: int, centers) -> np.ndarray:
    """sum_j h^(order)(y_j - c) dW[i][j] for every centre c; cells farther than the support radius are skipped."""
    centers = np.atleast_1d(np.asarray(centers, dtype=float))
    grid = sheet.grid
    if not 0 <= i < grid.n_t:
        raise NoiseError("invalid-argument", f"time index {i} outside [0, {grid.n_t})")
    if kernel.is_zero or kernel.support_radius <= 0:
        return np.zeros_like(centers)

    values, js = kernel_window(grid, kernel, (order,), centers)
    return np.sum(values[order] * sheet.increments[i][js], axis=1)


def sheet_line_integral(sheet: SheetSample, kernel: SmoothingKernel, order: int, i: int,
                        center: float, weight: float = 1.0) -> float:
    """One time slice of I_r^t(f): w * sum_j h^(order)(y_j - center) dW[i][j]."""
    if not math.isfinite(center):
        raise NoiseError("invalid-argument", f"non-finite centre {center}")
    if weight == 0.0:
        return 0.0
    return float(weight * slice_integrals(sheet, kernel, order, i, [center])[0])


def path_integral(sheet: SheetSample, kernel: SmoothingKernel, positions, start_index: int = 0) -> float:
    """sum_i h(y - x_i) dW over consecutive slices starting at start_index, along a given path."""
    positions = np.asarray(positions, dtype=float)
    return float(sum(slice_integrals(sheet, kernel, 0, start_index + k, [x])[0] for k, x in enumerate(positions)))


def discrete_norm_sq(grid: GridSpec, kernel: SmoothingKernel, order: int, center: float) -> float:
    """sum_j h^(order)(y_j - center)^2 dy, the grid counterpart of ||h^(order)||^2."""
    if kernel.is_zero:
        return 0.0
    vals = kernel.eval(order, grid.y - center)
    return float(np.sum(vals * vals) * grid.dy)


def replica_seed(seed: int, replica: int) -> int:
    """Seed of the replica-th independent (W, V, B) environment derived from a run seed."""
    digest = hashlib.blake2b(f"{int(seed)}|replica|{int(replica)}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def grid_from_config(section) -> GridSpec:
    return GridSpec(t_max=float(section.t_max), n_t=int(section.n_t), x_min=float(section.x_min),
                    x_max=float(section.x_max), n_x=int(section.n_x))

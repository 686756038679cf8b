# /superlab/particle.py

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from config import logger, MAX_SECOND_DERIVATIVE_STEPS
from kernel import SmoothingKernel
from noise import GridSpec, SheetSample, BrownianPath, kernel_window, sample_bm_increments
from utils.errors import ParticleError, MalliavinError

SCHEME_EXPONENTIAL = "exponential"
SCHEME_EULER = "euler"
DERIVATIVE_SCHEMES = (SCHEME_EXPONENTIAL, SCHEME_EULER)

# Upper bound on floats held by one batched triangle/second-derivative array.
BATCH_FLOAT_BUDGET = 4_000_000


# --- PATH TYPES ---
@dataclass
class PathBatch:
    """
    P paths of the typical particle started at (r_index, x) in one shared environment.

    Step k of a path is the time cell r_index + k. Per-step arrays have shape (P, m), m = t_index - r_index:
      drift[k] = sum_j h(y_j - xi_k) dW          (the sheet term of the Euler step)
      g[k]     = -sum_j h'(y_j - xi_k) dW        (martingale increment, the chain-rule sign of d/dxi h(y - xi))
      q[k]     = sum_j h'(y_j - xi_k)^2 dy       (its conditional variance per unit time)
      s[k]     = sum_j h''(y_j - xi_k) dW        (derivative of g[k] with respect to xi_k)
    """
    grid: GridSpec
    r_index: int
    t_index: int
    positions: np.ndarray = field(repr=False)
    bm_increments: np.ndarray = field(repr=False)
    drift: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    s: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def n_steps(self) -> int:
        return self.t_index - self.r_index

    def local_end(self, at_index: Optional[int]) -> int:
        end = self.t_index if at_index is None else at_index
        if not self.r_index < end <= self.t_index:
            raise ParticleError("invalid-argument", f"end index {end} outside ({self.r_index}, {self.t_index}]")
        return end - self.r_index

    def endpoint(self, at_index: Optional[int] = None) -> np.ndarray:
        return self.positions[:, self.local_end(at_index)]


@dataclass
class ParticlePath:
    """A single realized trajectory with its suffix-summed martingale M_suffix[k] = sum_{j >= k} g[j]."""
    r_index: int
    t_index: int
    x: float
    positions: np.ndarray = field(repr=False)
    m_suffix: np.ndarray = field(repr=False)
    env_ref: SheetSample = field(repr=False)
    bm_ref: Optional[BrownianPath] = field(default=None, repr=False)
    batch: Optional[PathBatch] = field(default=None, repr=False)

    @property
    def grid(self) -> GridSpec:
        return self.env_ref.grid

    def xi(self, i: int) -> float:
        """xi at global time index i, r_index <= i <= t_index."""
        return float(self.positions[i - self.r_index])


@dataclass
class MalliavinState:
    """
    Malliavin quantities of xi at one end time, all on the global time-cell grid (zero outside [r, t)).
    D2[eta][theta] = D_eta D_theta xi_t and Du[eta][theta] = D_eta u_t(theta).
    """
    end_index: int
    D1: np.ndarray = field(repr=False)
    D2: np.ndarray = field(repr=False)
    h_norm_sq: float = 0.0
    u: np.ndarray = field(default=None, repr=False)
    Du: np.ndarray = field(default=None, repr=False)
    d_norm: np.ndarray = field(default=None, repr=False)
    divergence: float = 0.0
    adapted_sum: float = 0.0
    trace: float = 0.0


# --- EULER-MARUYAMA ---
def _interior_bounds(grid: GridSpec, kernel: SmoothingKernel) -> tuple[float, float]:
    return grid.x_min + kernel.support_radius, grid.x_max - kernel.support_radius


def simulate_paths(kernel: SmoothingKernel, sheet: SheetSample, increments: np.ndarray,
                   r_index: int, x, t_index: int) -> PathBatch:
    """
    Euler-Maruyama in the frozen environment, one path per row of `increments` (shape (P, n_t)):
    xi[k+1] = xi[k] + dB[r+k] + sum_j h(y_j - xi[k]) dW[r+k][j].
    """
    grid = sheet.grid
    increments = np.atleast_2d(np.asarray(increments, dtype=float))
    if increments.shape[1] != grid.n_t:
        raise ParticleError("shape-error", f"increments have {increments.shape[1]} columns, grid has {grid.n_t} steps")
    if not 0 <= r_index < t_index <= grid.n_t:
        raise ParticleError("invalid-argument", f"need 0 <= r < t <= n_t, got r={r_index}, t={t_index}")

    n_paths, m = increments.shape[0], t_index - r_index
    lo, hi = _interior_bounds(grid, kernel)
    x0 = np.broadcast_to(np.asarray(x, dtype=float), (n_paths,))
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ParticleError("invalid-argument", f"start {x} outside the interior [{lo:.3f}, {hi:.3f}]")

    dB = increments[:, r_index:t_index]
    positions = np.empty((n_paths, m + 1))
    positions[:, 0] = x0
    drift = np.zeros((n_paths, m))
    g = np.zeros((n_paths, m))
    q = np.zeros((n_paths, m))
    s = np.zeros((n_paths, m))
    active = not kernel.is_zero and kernel.support_radius > 0

    for k in range(m):
        xi = positions[:, k]
        if active:
            vals, js = kernel_window(grid, kernel, (0, 1, 2), xi)
            dW = sheet.increments[r_index + k][js]
            drift[:, k] = np.sum(vals[0] * dW, axis=1)
            g[:, k] = -np.sum(vals[1] * dW, axis=1)
            s[:, k] = np.sum(vals[2] * dW, axis=1)
            q[:, k] = np.sum(vals[1] * vals[1], axis=1) * grid.dy
        positions[:, k + 1] = xi + dB[:, k] + drift[:, k]

    if np.any(positions < lo) or np.any(positions > hi):
        worst = float(np.max(np.abs(positions)))
        raise ParticleError("domain-exit", f"a path reached |xi| = {worst:.3f}; the interior is [{lo:.3f}, {hi:.3f}], enlarge the domain")

    return PathBatch(grid=grid, r_index=r_index, t_index=t_index, positions=positions,
                     bm_increments=increments, drift=drift, g=g, q=q, s=s)


def simulate_path(kernel: SmoothingKernel, sheet: SheetSample, bm: BrownianPath,
                  r_index: int, x: float, t_index: int) -> ParticlePath:
    batch = simulate_paths(kernel, sheet, bm.increments[None, :], r_index, x, t_index)
    m_suffix = np.zeros(batch.n_steps + 1)
    # Backward pass: M_suffix[k] = M_suffix[k+1] + g[k], M_suffix[m] = 0.
    m_suffix[:-1] = np.cumsum(batch.g[0, ::-1])[::-1]
    return ParticlePath(r_index=r_index, t_index=t_index, x=float(x), positions=batch.positions[0],
                        m_suffix=m_suffix, env_ref=sheet, bm_ref=bm, batch=batch)


@dataclass
class SystemSnapshot:
    positions: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)


def simulate_system(kernel: SmoothingKernel, sheet: SheetSample, starts, seed: int, t_index: int,
                    r_index: int = 0) -> SystemSnapshot:
    """Independent motions B^a for every particle, one shared environment W; empirical density on the grid at t."""
    grid = sheet.grid
    starts = np.asarray(starts, dtype=float)
    increments = sample_bm_increments(grid, seed, range(len(starts)))
    batch = simulate_paths(kernel, sheet, increments, r_index, starts, t_index)
    final = batch.endpoint()
    edges = grid.x_min + np.arange(grid.n_x + 1) * grid.dy
    counts, _ = np.histogram(final, bins=edges)
    density = counts / (len(starts) * grid.dy)
    logger.debug(f"PARTICLE: system of {len(starts)} particles advanced to t={t_index * grid.dt:.4f}.")
    return SystemSnapshot(positions=final, density=density)


# --- DERIVATIVES (BATCHED) ---
def derivative_triangle(batch: PathBatch, end: int, scheme: str = SCHEME_EXPONENTIAL,
                        rows: slice = slice(None)) -> np.ndarray:
    """
    T[p, eta, i] = D_eta xi_i for local cells eta < end and local positions i <= end (zero for i <= eta).
    Exponential form: exp(sum_{eta<k<i} (g_k - q_k dt / 2)). Euler form: prod_{eta<k<i} (1 + g_k).
    """
    if scheme not in DERIVATIVE_SCHEMES:
        raise ParticleError("invalid-argument", f"unknown derivative scheme '{scheme}'")
    g = batch.g[rows, :end]
    n = g.shape[0]
    if scheme == SCHEME_EXPONENTIAL:
        dt = batch.grid.dt
        logp = np.zeros((n, end + 1))
        np.cumsum(g - 0.5 * dt * batch.q[rows, :end], axis=1, out=logp[:, 1:])
        diff = logp[:, None, :] - logp[:, 1:, None]
        mask = np.arange(end + 1)[None, :] >= (np.arange(end)[:, None] + 1)
        return np.where(mask, np.exp(np.where(mask, diff, 0.0)), 0.0)

    tri = np.zeros((n, end, end + 1))
    factors = 1.0 + g
    for eta in range(end):
        tri[:, eta, eta + 1] = 1.0
        if eta + 2 <= end:
            tri[:, eta, eta + 2:] = np.cumprod(factors[:, eta + 1:end], axis=1)
    return tri


def first_derivative_batch(batch: PathBatch, end: int, scheme: str = SCHEME_EXPONENTIAL) -> np.ndarray:
    """D_theta xi_end for every path and local cell theta < end, without building the triangle."""
    g = batch.g[:, :end]
    n = g.shape[0]
    out = np.ones((n, end))
    if end < 2:
        return out
    if scheme == SCHEME_EXPONENTIAL:
        G = g - 0.5 * batch.grid.dt * batch.q[:, :end]
        out[:, :-1] = np.exp(np.cumsum(G[:, :0:-1], axis=1)[:, ::-1])
    elif scheme == SCHEME_EULER:
        out[:, :-1] = np.cumprod(1.0 + g[:, :0:-1], axis=1)[:, ::-1]
    else:
        raise ParticleError("invalid-argument", f"unknown derivative scheme '{scheme}'")
    return out


def second_derivative_batch(batch: PathBatch, tri: np.ndarray, end: int, rows: slice = slice(None),
                            scheme: str = SCHEME_EXPONENTIAL) -> np.ndarray:
    """
    D2[p, eta, theta] = D_theta xi_end * sum_{max(theta, eta) < i < end} a_i D_eta xi_i, with a_i = s_i for the
    exponential form and a_i = s_i / (1 + g_i) for the Euler product, whose log-derivative carries that factor.
    """
    s = batch.s[rows, :end]
    n = s.shape[0]
    if scheme == SCHEME_EULER:
        factors = 1.0 + batch.g[rows, :end]
        # A vanishing factor zeroes D_theta xi_end for every theta before it; that set has probability zero.
        s = np.divide(s, factors, out=np.zeros_like(s), where=factors != 0)
    elif scheme != SCHEME_EXPONENTIAL:
        raise ParticleError("invalid-argument", f"unknown derivative scheme '{scheme}'")
    contrib = tri[:, :, :end] * s[:, None, :]
    tails = np.zeros((n, end, end + 1))
    tails[:, :, :end] = np.flip(np.cumsum(np.flip(contrib, axis=2), axis=2), axis=2)
    ar = np.arange(end)
    idx = np.broadcast_to(np.maximum(ar[:, None], ar[None, :]) + 1, (n, end, end))
    dm = np.take_along_axis(tails, idx, axis=2)
    return tri[:, None, :, end] * dm


def batch_rows(batch: PathBatch, end: int):
    """Row slices sized so one triangle of every slice fits the float budget."""
    per_path = max(end * (end + 1), 1)
    step = max(1, BATCH_FLOAT_BUDGET // per_path)
    for start in range(0, batch.size, step):
        yield slice(start, min(start + step, batch.size))


# --- SINGLE-PATH OPERATIONS ---
def _embed(path: ParticlePath, local: np.ndarray) -> np.ndarray:
    out = np.zeros(path.grid.n_t)
    out[path.r_index:path.r_index + len(local)] = local
    return out


def triangular_derivatives(path: ParticlePath, at_index: Optional[int] = None,
                           scheme: str = SCHEME_EXPONENTIAL) -> np.ndarray:
    """The local array D_eta xi_u for all eta < u <= end, indexed [eta - r, u - r]."""
    end = path.batch.local_end(at_index)
    return derivative_triangle(path.batch, end, scheme)[0]


def first_derivative(path: ParticlePath, at_index: Optional[int] = None,
                     scheme: str = SCHEME_EXPONENTIAL) -> np.ndarray:
    """D_theta xi_end for every time cell theta; positive on [r, end), zero elsewhere."""
    end = path.batch.local_end(at_index)
    if scheme == SCHEME_EXPONENTIAL:
        # exp(M_{theta,end} - <M>_{theta,end} / 2) from suffix sums.
        dt = path.grid.dt
        q_suffix = np.zeros(path.batch.n_steps + 1)
        q_suffix[:-1] = np.cumsum(path.batch.q[0, ::-1])[::-1] * dt
        m_part = path.m_suffix[1:end + 1] - path.m_suffix[end]
        q_part = q_suffix[1:end + 1] - q_suffix[end]
        return _embed(path, np.exp(m_part - 0.5 * q_part))
    return _embed(path, derivative_triangle(path.batch, end, scheme)[0, :, end])


def second_derivative(kernel: SmoothingKernel, sheet: SheetSample, path: ParticlePath,
                      D1_all: Optional[np.ndarray] = None, at_index: Optional[int] = None,
                      scheme: str = SCHEME_EXPONENTIAL) -> np.ndarray:
    """D_eta D_theta xi_end on the global grid, dense n_t x n_t."""
    end = path.batch.local_end(at_index)
    if end > MAX_SECOND_DERIVATIVE_STEPS:
        raise ParticleError("invalid-argument", f"{end} steps exceeds the dense second-derivative cap of {MAX_SECOND_DERIVATIVE_STEPS}")
    n_t = sheet.grid.n_t
    out = np.zeros((n_t, n_t))
    if kernel.is_zero:
        return out
    tri = derivative_triangle(path.batch, end, scheme) if D1_all is None else np.asarray(D1_all)[None, :end, :end + 1]
    local = second_derivative_batch(path.batch, tri, end, scheme=scheme)[0]
    r = path.r_index
    out[r:r + end, r:r + end] = local
    return out


def malliavin_state(kernel: SmoothingKernel, path: ParticlePath, at_index: Optional[int] = None,
                    scheme: str = SCHEME_EXPONENTIAL) -> MalliavinState:
    from malliavin import discrete_divergence

    grid = path.grid
    end = path.batch.local_end(at_index)
    tri = derivative_triangle(path.batch, end, scheme)
    D1 = _embed(path, tri[0, :, end])
    D2 = second_derivative(kernel, path.env_ref, path, D1_all=tri[0], at_index=at_index, scheme=scheme)

    dt = grid.dt
    norm_sq = float(np.sum(D1 * D1) * dt)
    if not norm_sq > 0:
        raise MalliavinError("degenerate-derivative", "||D xi_t||_H^2 = 0")
    d_norm = 2.0 * dt * (D2 @ D1)
    u = D1 / norm_sq
    Du = D2 / norm_sq - np.outer(d_norm, D1) / norm_sq ** 2

    sample = discrete_divergence(u, Du, path.batch.bm_increments[0], dt)
    return MalliavinState(end_index=path.r_index + end, D1=D1, D2=D2, h_norm_sq=norm_sq, u=u, Du=Du, d_norm=d_norm,
                          divergence=sample.delta_u_t, adapted_sum=sample.adapted_sum, trace=sample.trace)


def finite_difference_gradient(kernel: SmoothingKernel, sheet: SheetSample, bm: BrownianPath,
                               r_index: int, x: float, t_index: int, bump: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of xi_t with respect to each Brownian increment; a check on first_derivative."""
    base = np.array(bm.increments, dtype=float)
    grad = np.zeros(sheet.grid.n_t)
    for theta in range(r_index, t_index):
        up, down = base.copy(), base.copy()
        up[theta] += bump
        down[theta] -= bump
        hi = simulate_paths(kernel, sheet, up[None, :], r_index, x, t_index).endpoint()[0]
        lo = simulate_paths(kernel, sheet, down[None, :], r_index, x, t_index).endpoint()[0]
        grad[theta] = (hi - lo) / (2.0 * bump)
    return grad


def h_norm_sq_batch(D1: np.ndarray, dt: float) -> np.ndarray:
    return np.sum(D1 * D1, axis=-1) * dt


def exit_margin(grid: GridSpec, kernel: SmoothingKernel) -> float:
    """Distance from the grid centre to the nearest wall of the interior region."""
    lo, hi = _interior_bounds(grid, kernel)
    centre = 0.5 * (grid.x_min + grid.x_max)
    return max(0.0, min(centre - lo, hi - centre))


def diffusion_span(kernel: SmoothingKernel, t: float) -> float:
    return math.sqrt(2.0 * (1.0 + kernel.norm_sq) * t)

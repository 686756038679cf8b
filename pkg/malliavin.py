# /superlab/malliavin.py

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from config import logger, PATH_CHUNK_SIZE
from kernel import SmoothingKernel
from noise import SheetSample, sample_bm_increments
from particle import (
    SCHEME_EULER, PathBatch, ParticlePath, simulate_paths, malliavin_state,
    derivative_triangle, second_derivative_batch, first_derivative_batch, batch_rows,
)
from utils.errors import MalliavinError
from utils.parallel import chunk_indices, ordered_map


# --- RESULT TYPES ---
@dataclass
class DensityEstimate:
    value: float
    std_err: float
    n_paths: int
    r: float
    x: float
    t: float
    y: float
    env_seed: int


@dataclass
class DivergenceSample:
    """delta = adapted_sum - trace."""
    delta_u_t: float
    adapted_sum: float
    trace: float
    delta_u_diff: Optional[float] = None
    split: Optional[dict] = None


@dataclass
class WeightSample:
    """Per-path endpoints and divergence weights. With antithetic pairing, rows 2k and 2k+1 are a +/- pair."""
    xi: np.ndarray = field(repr=False)
    delta: np.ndarray = field(repr=False)
    antithetic: bool = True
    h_norm_sq: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_paths(self) -> int:
        return len(self.xi)


# --- DIVERGENCE ---
def discrete_divergence(u, Du, dB, dt: float) -> DivergenceSample:
    """
    delta(u) = sum_i u_i dB_i - dt * sum_i D_i u_i, the adjoint of the gradient with respect to the
    Gaussian increments dB_i ~ N(0, dt). Du[eta][theta] is the derivative of u_theta with respect to dB_eta.
    """
    u = np.asarray(u, dtype=float)
    Du = np.asarray(Du, dtype=float)
    dB = np.asarray(dB, dtype=float)
    if u.ndim != 1 or dB.shape != u.shape or Du.shape != (len(u), len(u)):
        raise MalliavinError("shape-error", f"u {u.shape}, Du {Du.shape}, dB {dB.shape}")
    adapted = float(np.dot(u, dB))
    trace = float(dt * np.trace(Du))
    return DivergenceSample(delta_u_t=adapted - trace, adapted_sum=adapted, trace=trace)


def divergence_batch(D1: np.ndarray, D2: Optional[np.ndarray], dB: np.ndarray, dt: float) -> np.ndarray:
    """delta(D xi / ||D xi||^2) for every row; D2 = None means the second derivative vanishes."""
    norm_sq = np.sum(D1 * D1, axis=1) * dt
    if np.any(norm_sq <= 0):
        raise MalliavinError("degenerate-derivative", "||D xi_t||_H^2 = 0 on some path")
    adapted = np.sum(D1 * dB, axis=1) / norm_sq
    if D2 is None:
        return adapted
    d_norm = 2.0 * dt * np.einsum("pes,ps->pe", D2, D1)
    diag = np.diagonal(D2, axis1=1, axis2=2) / norm_sq[:, None] - D1 * d_norm / norm_sq[:, None] ** 2
    return adapted - dt * np.sum(diag, axis=1)


def weights_for_batch(batch: PathBatch, at_index: Optional[int] = None,
                      scheme: str = SCHEME_EULER) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(xi_end, delta(u_end), ||D xi_end||_H^2) for every path of the batch."""
    end = batch.local_end(at_index)
    r = batch.r_index
    dt = batch.grid.dt
    dB = batch.bm_increments[:, r:r + end]
    delta = np.empty(batch.size)
    norm_sq = np.empty(batch.size)

    if not np.any(batch.s[:, :end]):
        # D2 = D1 * sum(s * D xi) vanishes identically.
        D1 = first_derivative_batch(batch, end, scheme)
        delta[:] = divergence_batch(D1, None, dB, dt)
        norm_sq[:] = np.sum(D1 * D1, axis=1) * dt
    else:
        for rows in batch_rows(batch, end):
            tri = derivative_triangle(batch, end, scheme, rows)
            D1 = tri[:, :, end]
            D2 = second_derivative_batch(batch, tri, end, rows, scheme)
            delta[rows] = divergence_batch(D1, D2, dB[rows], dt)
            norm_sq[rows] = np.sum(D1 * D1, axis=1) * dt
    return batch.endpoint(at_index), delta, norm_sq


def antithetic_increments(grid, seed: int, pair_indices: range, antithetic: bool) -> np.ndarray:
    base = sample_bm_increments(grid, seed, pair_indices)
    if not antithetic:
        return base
    out = np.empty((2 * base.shape[0], base.shape[1]))
    out[0::2] = base
    out[1::2] = -base
    return out


def _weight_task(task: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    kernel, sheet, r_index, x, t_index, seed, indices, antithetic, scheme, at_index = task
    increments = antithetic_increments(sheet.grid, seed, indices, antithetic)
    batch = simulate_paths(kernel, sheet, increments, r_index, x, t_index)
    return weights_for_batch(batch, at_index, scheme)


def simulate_weights(kernel: SmoothingKernel, sheet: SheetSample, r_index: int, x: float, t_index: int,
                     n_paths: int, seed: int, antithetic: bool = True, scheme: str = SCHEME_EULER,
                     workers: int = 1, at_index: Optional[int] = None) -> WeightSample:
    """Endpoints and Malliavin weights over n_paths B-streams 'B/<k>' with W frozen."""
    if n_paths < 2:
        raise MalliavinError("invalid-argument", f"need at least 2 paths, got {n_paths}")
    if antithetic and n_paths % 2:
        raise MalliavinError("invalid-argument", f"antithetic sampling needs an even path count, got {n_paths}")
    n_streams = n_paths // 2 if antithetic else n_paths
    chunk = PATH_CHUNK_SIZE // 2 if antithetic else PATH_CHUNK_SIZE
    tasks = [(kernel, sheet, r_index, x, t_index, seed, idx, antithetic, scheme, at_index)
             for idx in chunk_indices(0, n_streams, chunk)]
    results = ordered_map(_weight_task, tasks, workers)
    xi = np.concatenate([res[0] for res in results])
    delta = np.concatenate([res[1] for res in results])
    norm_sq = np.concatenate([res[2] for res in results])
    return WeightSample(xi=xi, delta=delta, antithetic=antithetic, h_norm_sq=norm_sq)


def pooled_mean(values: np.ndarray, antithetic: bool) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error along the last axis; antithetic pairs are averaged first."""
    values = np.asarray(values, dtype=float)
    if antithetic:
        values = values.reshape(values.shape[:-1] + (-1, 2)).mean(axis=-1)
    n = values.shape[-1]
    mean = values.mean(axis=-1)
    se = values.std(axis=-1, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


# --- DENSITY ---
def density_profile(kernel: SmoothingKernel, sheet: SheetSample, r: float, x: float, t: float, ys,
                    n_paths: int, seed: int, antithetic: bool = True, scheme: str = SCHEME_EULER,
                    workers: int = 1, weights: Optional[WeightSample] = None) -> list[DensityEstimate]:
    """p^W(r, x; t, y) = E^B[1{xi_t > y} delta(u_t)] at every y from one shared B-ensemble."""
    grid = sheet.grid
    r_index, t_index = grid.time_index(r), grid.time_index(t)
    if weights is None:
        weights = simulate_weights(kernel, sheet, r_index, x, t_index, n_paths, seed, antithetic, scheme, workers)
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    contributions = (weights.xi[None, :] > ys[:, None]) * weights.delta[None, :]
    means, ses = pooled_mean(contributions, weights.antithetic)
    return [DensityEstimate(value=float(m), std_err=float(e), n_paths=weights.n_paths, r=float(r), x=float(x),
                            t=float(t), y=float(y), env_seed=sheet.seed_id)
            for y, m, e in zip(ys, means, ses)]


def _tensor_task(task: tuple) -> np.ndarray:
    kernel, sheet, r_index, x, end_indices, ys, seed, indices, antithetic, scheme = task
    increments = antithetic_increments(sheet.grid, seed, indices, antithetic)
    batch = simulate_paths(kernel, sheet, increments, r_index, x, max(end_indices))
    # (n_end, n_y, P) per-path contributions for this chunk
    out = np.empty((len(end_indices), len(ys), batch.size))
    for n, end in enumerate(end_indices):
        xi, delta, _ = weights_for_batch(batch, end, scheme)
        out[n] = (xi[None, :] > ys[:, None]) * delta[None, :]
    return out


def density_tensor(kernel: SmoothingKernel, sheet: SheetSample, r_index: int, x: float, end_indices, ys,
                   n_paths: int, seed: int, antithetic: bool = True, scheme: str = SCHEME_EULER,
                   workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """
    p^W(r, x; t_e, y) for every end index e and every y from one B-ensemble simulated up to the last end.
    Returns (means, std_errs), both shaped (len(end_indices), len(ys)).
    """
    end_indices = [int(e) for e in end_indices]
    if not end_indices or min(end_indices) <= r_index:
        raise MalliavinError("invalid-argument", f"end indices must all exceed r={r_index}")
    if antithetic and n_paths % 2:
        raise MalliavinError("invalid-argument", f"antithetic sampling needs an even path count, got {n_paths}")
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    n_streams = n_paths // 2 if antithetic else n_paths
    chunk = PATH_CHUNK_SIZE // 2 if antithetic else PATH_CHUNK_SIZE
    tasks = [(kernel, sheet, r_index, x, end_indices, ys, seed, idx, antithetic, scheme)
             for idx in chunk_indices(0, n_streams, chunk)]
    contributions = np.concatenate(ordered_map(_tensor_task, tasks, workers), axis=2)
    return pooled_mean(contributions, antithetic)


def density_estimate(kernel: SmoothingKernel, sheet: SheetSample, r: float, x: float, t: float, y: float,
                     n_paths: int, seed: int, antithetic: bool = True, scheme: str = SCHEME_EULER,
                     workers: int = 1) -> DensityEstimate:
    estimate = density_profile(kernel, sheet, r, x, t, [y], n_paths, seed, antithetic, scheme, workers)[0]
    logger.debug(f"DENSITY: p^W({r}, {x}; {t}, {y}) = {estimate.value:.5f} +/- {estimate.std_err:.5f}")
    return estimate


# --- DUALITY ---
@dataclass
class DualityReport:
    label: str
    lhs: float
    rhs: float
    gap: float
    gap_se: float

    @property
    def within_3se(self) -> bool:
        return abs(self.gap) <= 3.0 * self.gap_se + 1e-12


FUNCTIONALS: dict[str, tuple[Callable, Callable]] = {
    "xi": (lambda z: z, lambda z: np.ones_like(z)),
    "xi^2": (lambda z: z * z, lambda z: 2.0 * z),
    "exp(0.1 xi)": (lambda z: np.exp(0.1 * z), lambda z: 0.1 * np.exp(0.1 * z)),
    "1": (lambda z: np.ones_like(z), lambda z: np.zeros_like(z)),
}


def duality_check(weights: WeightSample, label: str) -> DualityReport:
    """E^B[F delta(u_t)] against E^B[<DF, u_t>_H] = E^B[f'(xi_t)] for F = f(xi_t), with common random numbers."""
    f, df = FUNCTIONALS[label]
    lhs = f(weights.xi) * weights.delta
    rhs = df(weights.xi)
    lhs_mean, _ = pooled_mean(lhs, weights.antithetic)
    rhs_mean, _ = pooled_mean(rhs, weights.antithetic)
    gap, gap_se = pooled_mean(lhs - rhs, weights.antithetic)
    return DualityReport(label=label, lhs=float(lhs_mean), rhs=float(rhs_mean), gap=float(gap), gap_se=float(gap_se))


# --- TIME DIFFERENCE ---
def _split_terms(state_s, state_t, s_index: int, t_index: int) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    n_s, n_t = state_s.h_norm_sq, state_t.h_norm_sq
    dinv_s = -state_s.d_norm / n_s ** 2
    dinv_t = -state_t.d_norm / n_t ** 2
    c = np.zeros_like(state_t.D1)
    c[s_index:t_index] = 1.0

    a1 = state_s.D1 * (1.0 / n_t - 1.0 / n_s)
    da1 = state_s.D2 * (1.0 / n_t - 1.0 / n_s) + np.outer(dinv_t - dinv_s, state_s.D1)
    a2 = c / n_t
    da2 = np.outer(dinv_t, c)
    rest = state_t.D1 - state_s.D1 - c
    a3 = rest / n_t
    da3 = (state_t.D2 - state_s.D2) / n_t + np.outer(dinv_t, rest)
    return {"A1": (a1, da1), "A2": (a2, da2), "A3": (a3, da3)}


def divergence_time_diff(kernel: SmoothingKernel, path: ParticlePath, s_index: int, t_index: Optional[int] = None,
                         split: bool = False, scheme: str = SCHEME_EULER) -> DivergenceSample:
    """delta(u_t - u_s) for one (B, W) realization; both fields come from the same path."""
    t_index = path.t_index if t_index is None else t_index
    if not path.r_index < s_index <= t_index <= path.t_index:
        raise MalliavinError("invalid-argument", f"need r < s <= t on the path, got r={path.r_index}, s={s_index}, t={t_index}")
    dt = path.grid.dt
    dB = path.batch.bm_increments[0]
    state_t = malliavin_state(kernel, path, t_index, scheme)
    if s_index == t_index:
        zeros = {name: 0.0 for name in ("A1", "A2", "A3")} if split else None
        return DivergenceSample(delta_u_t=state_t.divergence, adapted_sum=state_t.adapted_sum, trace=state_t.trace,
                                delta_u_diff=0.0, split=zeros)

    state_s = malliavin_state(kernel, path, s_index, scheme)
    diff = discrete_divergence(state_t.u - state_s.u, state_t.Du - state_s.Du, dB, dt)
    by_linearity = state_t.divergence - state_s.divergence
    if not math.isclose(diff.delta_u_t, by_linearity, rel_tol=1e-8, abs_tol=1e-9 * (1.0 + abs(by_linearity))):
        logger.warning(f"MALLIAVIN: delta(u_t - u_s) = {diff.delta_u_t} but delta(u_t) - delta(u_s) = {by_linearity}.")

    parts = None
    if split:
        parts = {name: discrete_divergence(a, da, dB, dt).delta_u_t
                 for name, (a, da) in _split_terms(state_s, state_t, s_index, t_index).items()}
        total = sum(parts.values())
        if not math.isclose(total, diff.delta_u_t, rel_tol=1e-8, abs_tol=1e-9 * (1.0 + abs(total))):
            logger.warning(f"MALLIAVIN: A1+A2+A3 split sums to {total}, expected {diff.delta_u_t}.")

    return DivergenceSample(delta_u_t=state_t.divergence, adapted_sum=state_t.adapted_sum, trace=state_t.trace,
                            delta_u_diff=diff.delta_u_t, split=parts)

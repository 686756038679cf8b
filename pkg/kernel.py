# /superlab/kernel.py

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from config import logger, KERNEL_TAIL_TOL
from utils.errors import KernelError

MIN_TABLE_SAMPLES = 8
REFINEMENT_RTOL = 1e-6


class KernelFamily(str, enum.Enum):
    ZERO = "zero"
    GAUSSIAN_BUMP = "gaussian_bump"
    TABULATED = "tabulated"


# --- SMOOTHING KERNEL ---
@dataclass(frozen=True)
class SmoothingKernel:
    """
    The environment kernel h together with h', h'' and their L2(R) norms.
    Immutable, so one instance can be shared by every worker.
    """
    family: KernelFamily
    amplitude: float = 0.0
    sigma: float = 1.0
    table_x: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    table_values: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    norms: tuple[float, float, float] = (0.0, 0.0, 0.0)
    support_radius: float = 0.0
    _spline: Optional[CubicSpline] = field(default=None, repr=False, compare=False)

    @property
    def is_zero(self) -> bool:
        return self.family == KernelFamily.ZERO

    @property
    def norm_sq(self) -> float:
        return self.norms[0] ** 2

    @property
    def sobolev_12(self) -> float:
        """||h||_{1,2}; recorded in reports so runs near ||h||_{1,2}^2 = 2 can be compared."""
        return math.sqrt(self.norms[0] ** 2 + self.norms[1] ** 2)

    def eval(self, order: int, x):
        """h^(order)(x). Accepts scalars or arrays; the result has the shape of x."""
        if order not in (0, 1, 2):
            raise KernelError("invalid-argument", f"derivative order must be 0, 1 or 2, got {order}")
        x_arr = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x_arr)):
            raise KernelError("invalid-argument", "non-finite evaluation point")

        if self.family == KernelFamily.ZERO:
            out = np.zeros_like(x_arr)
        elif self.family == KernelFamily.GAUSSIAN_BUMP:
            out = _gaussian_derivative(self.amplitude, self.sigma, order, x_arr)
        else:
            out = self._spline(x_arr, order)
            inside = (x_arr >= self.table_x[0]) & (x_arr <= self.table_x[-1])
            out = np.where(inside, out, 0.0)

        if np.ndim(x) == 0:
            return float(out)
        return out


def _gaussian_derivative(a: float, sigma: float, order: int, x: np.ndarray) -> np.ndarray:
    # h(x) = a exp(-x^2 / (2 sigma^2))
    s2 = sigma * sigma
    h = a * np.exp(-x * x / (2.0 * s2))
    if order == 0:
        return h
    if order == 1:
        return -(x / s2) * h
    return (x * x / (s2 * s2) - 1.0 / s2) * h


def _gaussian_norms(a: float, sigma: float) -> tuple[float, float, float]:
    root_pi = math.sqrt(math.pi)
    n0 = a * a * sigma * root_pi
    n1 = a * a * root_pi / (2.0 * sigma)
    n2 = 3.0 * a * a * root_pi / (4.0 * sigma ** 3)
    return (math.sqrt(n0), math.sqrt(n1), math.sqrt(n2))


def _gaussian_support_radius(a: float, sigma: float, tol: float = KERNEL_TAIL_TOL) -> float:
    if abs(a) <= tol:
        return 0.0

    def log_excess(x: float) -> float:
        vals = [abs(_gaussian_derivative(a, sigma, k, np.array(x))) for k in (0, 1, 2)]
        return math.log(max(max(vals), 1e-300)) - math.log(tol)

    lo, hi = 3.0 * sigma, 80.0 * sigma
    if log_excess(lo) <= 0:
        return lo
    return float(brentq(log_excess, lo, hi))


# --- CONSTRUCTORS ---
def zero_kernel() -> SmoothingKernel:
    return SmoothingKernel(family=KernelFamily.ZERO)


def gaussian_bump(amplitude: float, sigma: float) -> SmoothingKernel:
    if not sigma > 0 or not math.isfinite(sigma):
        raise KernelError("invalid-argument", f"sigma must be positive and finite, got {sigma}")
    if not math.isfinite(amplitude):
        raise KernelError("invalid-argument", f"amplitude must be finite, got {amplitude}")
    return SmoothingKernel(
        family=KernelFamily.GAUSSIAN_BUMP,
        amplitude=float(amplitude),
        sigma=float(sigma),
        norms=_gaussian_norms(amplitude, sigma),
        support_radius=_gaussian_support_radius(amplitude, sigma),
    )


def _table_norms(spline: CubicSpline, xs: np.ndarray) -> tuple[float, float, float]:
    return tuple(math.sqrt(max(simpson(spline(xs, k) ** 2, x=xs), 0.0)) for k in (0, 1, 2))


def tabulated(xs, values) -> SmoothingKernel:
    """Kernel from uniformly spaced samples, interpolated by a clamped cubic spline."""
    xs = np.asarray(xs, dtype=float)
    values = np.asarray(values, dtype=float)
    if xs.shape != values.shape or xs.ndim != 1:
        raise KernelError("invalid-argument", "table abscissae and values must be 1-d and of equal length")
    if len(xs) < MIN_TABLE_SAMPLES:
        raise KernelError("under-resolved-kernel", f"{len(xs)} samples, need at least {MIN_TABLE_SAMPLES}")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(values))):
        raise KernelError("invalid-argument", "table contains non-finite entries")
    spacing = np.diff(xs)
    if np.any(spacing <= 0) or not np.allclose(spacing, spacing[0], rtol=1e-9, atol=0.0):
        raise KernelError("invalid-argument", "table abscissae must be strictly increasing with uniform spacing")

    spline = CubicSpline(xs, values, bc_type="clamped")
    norms = _table_norms(spline, xs)

    fine = np.linspace(xs[0], xs[-1], 2 * len(xs) - 1)
    refined = _table_norms(spline, fine)
    for k, (coarse, half) in enumerate(zip(norms, refined)):
        if half > 0 and abs(coarse - half) / half > REFINEMENT_RTOL:
            logger.warning(f"KERNEL: tabulated ||h^({k})|| changes by {abs(coarse - half) / half:.2e} "
                           f"under half-spacing refinement; the table may be under-resolved.")

    above = np.zeros_like(fine, dtype=bool)
    for k in (0, 1, 2):
        above |= np.abs(spline(fine, k)) >= KERNEL_TAIL_TOL
    support = float(np.max(np.abs(fine[above]))) if np.any(above) else 0.0

    return SmoothingKernel(
        family=KernelFamily.TABULATED,
        table_x=xs,
        table_values=values,
        norms=norms,
        support_radius=support,
        _spline=spline,
    )


def load_table(path: str) -> SmoothingKernel:
    """Two-column plain-text samples: x h(x)."""
    try:
        data = np.loadtxt(path, dtype=float, ndmin=2)
    except (OSError, ValueError) as e:
        raise KernelError("invalid-argument", f"could not read kernel table {path}: {e}") from e
    if data.shape[1] != 2:
        raise KernelError("invalid-argument", f"kernel table {path} must have exactly two columns")
    return tabulated(data[:, 0], data[:, 1])


def l2_norms(kernel: SmoothingKernel) -> tuple[float, float, float]:
    """(||h||, ||h'||, ||h''||) in L2(R)."""
    if kernel.family == KernelFamily.TABULATED and (kernel.table_x is None or len(kernel.table_x) < MIN_TABLE_SAMPLES):
        raise KernelError("under-resolved-kernel", "tabulated kernel has too few samples")
    return kernel.norms


def from_config(section) -> SmoothingKernel:
    family = KernelFamily(section.family)
    if family == KernelFamily.ZERO:
        return zero_kernel()
    if family == KernelFamily.GAUSSIAN_BUMP:
        return gaussian_bump(section.amplitude, section.sigma)
    if not section.table_path:
        raise KernelError("invalid-argument", "kernel.table_path is required for the tabulated family")
    return load_table(section.table_path)

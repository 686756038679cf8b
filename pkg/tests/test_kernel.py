# /superlab/tests/test_kernel.py

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from kernel import KernelFamily, gaussian_bump, zero_kernel, tabulated, load_table, l2_norms
from utils.errors import KernelError


def test_zero_kernel_is_identically_zero():
    h = zero_kernel()
    assert h.is_zero
    assert h.norms == (0.0, 0.0, 0.0)
    assert h.eval(0, 1.3) == 0.0
    assert np.all(h.eval(2, np.linspace(-3, 3, 7)) == 0.0)


def test_gaussian_norms_match_quadrature(bump):
    for order, norm in enumerate(l2_norms(bump)):
        numeric, _ = quad(lambda x: bump.eval(order, x) ** 2, -20, 20, limit=200)
        assert norm == pytest.approx(math.sqrt(numeric), rel=1e-8)


def test_gaussian_derivatives_match_finite_differences(bump):
    xs = np.linspace(-2.0, 2.0, 9)
    step = 1e-5
    for order in (1, 2):
        fd = (bump.eval(order - 1, xs + step) - bump.eval(order - 1, xs - step)) / (2 * step)
        assert np.allclose(bump.eval(order, xs), fd, atol=1e-7)


def test_support_radius_bounds_the_tail(bump):
    r = bump.support_radius
    assert r > 0
    for order in (0, 1, 2):
        assert abs(bump.eval(order, r * 1.01)) < 1e-12


def test_invalid_arguments():
    with pytest.raises(KernelError) as err:
        gaussian_bump(1.0, 0.0)
    assert err.value.code == "invalid-argument"
    with pytest.raises(KernelError):
        gaussian_bump(1.0, 0.5).eval(3, 0.0)
    with pytest.raises(KernelError):
        gaussian_bump(1.0, 0.5).eval(0, math.nan)


def test_tabulated_reproduces_bump(bump):
    xs = np.linspace(-5, 5, 401)
    table = tabulated(xs, bump.eval(0, xs))
    assert table.family == KernelFamily.TABULATED
    probe = np.linspace(-2, 2, 13)
    assert np.allclose(table.eval(0, probe), bump.eval(0, probe), atol=1e-5)
    assert table.norms[0] == pytest.approx(bump.norms[0], rel=1e-4)
    assert table.eval(0, 6.0) == 0.0


def test_tabulated_rejects_short_or_uneven_tables():
    with pytest.raises(KernelError) as err:
        tabulated(np.arange(4.0), np.zeros(4))
    assert err.value.code == "under-resolved-kernel"
    xs = np.array([0.0, 1.0, 2.0, 3.5, 4.0, 5.0, 6.0, 7.0])
    with pytest.raises(KernelError) as err:
        tabulated(xs, np.zeros_like(xs))
    assert err.value.code == "invalid-argument"


def test_load_table(tmp_path, bump):
    xs = np.linspace(-4, 4, 161)
    path = tmp_path / "h.txt"
    np.savetxt(path, np.column_stack([xs, bump.eval(0, xs)]))
    table = load_table(str(path))
    assert table.eval(0, 0.0) == pytest.approx(0.5, abs=1e-6)
    with pytest.raises(KernelError):
        load_table(str(tmp_path / "missing.txt"))


@given(st.floats(min_value=0.05, max_value=3.0), st.floats(min_value=0.1, max_value=2.0),
       st.floats(min_value=0.1, max_value=4.0))
@settings(max_examples=50, deadline=None)
def test_norms_scale_linearly_in_amplitude(amplitude, sigma, factor):
    base = gaussian_bump(amplitude, sigma)
    scaled = gaussian_bump(amplitude * factor, sigma)
    for a, b in zip(base.norms, scaled.norms):
        assert b == pytest.approx(a * factor, rel=1e-12)

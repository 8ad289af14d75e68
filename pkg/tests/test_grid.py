import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lagreg.field import ImageField, VelocityField
from lagreg.grid import (
    Grid,
    cell_centers,
    interp_matrix,
    prolong_array,
    prolong_velocity,
    restrict_array,
    restrict_image,
)

dims = st.integers(1, 3)


@st.composite
def grids(draw, even=False, max_m=8):
    d = draw(dims)
    m = [draw(st.integers(1, max_m // 2)) * 2 if even else draw(st.integers(1, max_m)) for _ in range(d)]
    omega = []
    for _ in range(d):
        lo = draw(st.floats(-5, 5))
        omega += [lo, lo + draw(st.floats(0.1, 10))]
    return Grid(tuple(omega), tuple(m))


def test_centers_1d():
    np.testing.assert_allclose(cell_centers(Grid((0, 1), (2,)))[:, 0], [0.25, 0.75])


def test_centers_2d_first_axis_fastest():
    x = cell_centers(Grid((0, 1, 0, 1), (2, 2)))
    np.testing.assert_allclose(x, [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])


def test_spacing_128():
    g = Grid((0, 1), (128,))
    assert g.h[0] == pytest.approx(1 / 128)
    np.testing.assert_allclose(np.diff(cell_centers(g)[:, 0]), 1 / 128)


def test_anisotropic_cellvol():
    g = Grid((0, 2, -1, 1, 0, 3), (4, 8, 3))
    np.testing.assert_allclose(g.h, [0.5, 0.25, 1.0])
    assert g.cellvol == pytest.approx(0.125)
    assert g.ncells == 96


@pytest.mark.parametrize(
    "omega,m",
    [((0, 1), (0,)), ((1, 0), (4,)), ((0, 1, 0), (2, 2)), ((0, 1) * 4, (2,) * 4)],
)
def test_invalid_grids(omega, m):
    with pytest.raises(ValueError):
        Grid(omega, m)


def test_coarsen_odd_raises():
    with pytest.raises(ValueError):
        Grid((0, 1), (3,)).coarsen()


@given(grids())
def test_centers_monotone_and_symmetric(g):
    x = cell_centers(g)
    assert x.shape == (g.ncells, g.d)
    for a in range(g.d):
        c = g.centers_1d(a)
        assert np.all(np.diff(c) > 0)
        mid = 0.5 * (g.lo[a] + g.hi[a])
        np.testing.assert_allclose(c + c[::-1], 2 * mid, atol=1e-12)
        # first axis fastest: axis a repeats with stride
        np.testing.assert_allclose(x[:: g.strides[a], a][: g.m[a]], c)


def test_restrict_pairs():
    g = Grid((0, 1), (4,))
    np.testing.assert_allclose(restrict_array(np.array([1.0, 3, 5, 7]), g), [2, 6])


def test_restrict_odd_raises():
    with pytest.raises(ValueError):
        restrict_image(ImageField(Grid((0, 1), (3,)), np.ones(3)))


def test_restrict_2d_children():
    g = Grid((0, 1, 0, 1), (4, 2))
    data = np.arange(8.0)  # rows (x2) [0..3], [4..7]
    # coarse cell 0 = children (0,1) in x1 times both x2 rows
    np.testing.assert_allclose(restrict_array(data, g), [(0 + 1 + 4 + 5) / 4, (2 + 3 + 6 + 7) / 4])


def test_restrict_mass_random_4x4(rng):
    g = Grid((0, 1, 0, 1), (4, 4))
    f = ImageField(g, rng.standard_normal(16))
    c = restrict_image(f)
    assert abs(c.grid.cellvol * c.data.sum() - g.cellvol * f.data.sum()) <= 1e-14


@given(grids(even=True), st.floats(-100, 100))
def test_restrict_prolong_constants(g, c):
    const = np.full(g.ncells, c)
    coarse = restrict_array(const, g)
    np.testing.assert_allclose(coarse, c, rtol=1e-13, atol=1e-12)
    np.testing.assert_allclose(prolong_array(coarse, g.coarsen(), g), c, rtol=1e-13, atol=1e-12)


@given(grids(even=True))
def test_restrict_preserves_mass(g):
    data = np.random.default_rng(g.ncells).standard_normal(g.ncells)
    coarse = restrict_array(data, g)
    assert coarse.sum() * g.coarsen().cellvol == pytest.approx(data.sum() * g.cellvol, abs=1e-10)


def test_prolong_velocity_constant():
    g = Grid((0, 1, 0, 1), (4, 4))
    v = VelocityField(g, 1, np.full((2, 2, 16), 3.5))
    w = prolong_velocity(v, g.refine())
    assert w.nt == 1 and w.grid == g.refine()
    np.testing.assert_allclose(w.data, 3.5)


def test_prolong_velocity_linear_interior():
    g = Grid((0, 1, 0, 1), (4, 4))
    v = VelocityField.from_function(g, lambda x, t: x.copy())
    fine = g.refine()
    w = prolong_velocity(v, fine)
    x = cell_centers(fine)
    inside = np.all((x > g.h / 2) & (x < 1 - g.h / 2), axis=1)
    np.testing.assert_allclose(w.data[:, 0, inside].T, x[inside], atol=1e-14)


def test_prolong_velocity_within_neighbor_bounds(rng):
    g = Grid((0, 1, 0, 1), (4, 4))
    v = VelocityField(g, 0, rng.standard_normal((2, 1, 16)))
    w = prolong_velocity(v, g.refine())
    # oracle: each fine value is bracketed by the coarse values of its 2x2 neighborhood
    P = interp_matrix(g, cell_centers(g.refine()), boundary="clamp")
    for c in range(2):
        coarse = v.data[c, 0]
        for i in range(P.shape[0]):
            nb = coarse[P[i].indices]
            assert nb.min() - 1e-14 <= w.data[c, 0, i] <= nb.max() + 1e-14


def test_prolong_velocity_grid_mismatch():
    g = Grid((0, 1, 0, 1), (4, 4))
    with pytest.raises(ValueError):
        prolong_velocity(VelocityField.zeros(g), Grid((0, 1, 0, 1), (16, 16)))


@given(grids(), st.integers(1, 30))
def test_interp_matrix_partition_of_unity_inside(g, n):
    rng = np.random.default_rng(n)
    # points inside the hull of the centers
    lo, hi = g.lo + g.h / 2, g.hi - g.h / 2
    pts = lo + rng.uniform(0, 1, (n, g.d)) * (hi - lo)
    Q = interp_matrix(g, pts)
    np.testing.assert_allclose(np.asarray(Q.sum(axis=1)).ravel(), 1.0, atol=1e-12)

import numpy as np
import pytest

from bodyflock import so3
from bodyflock.so3grid import So3Grid, weighted_divergence


@pytest.fixture(scope="module")
def grid():
    return So3Grid(48, 24, 48)


class TestGrid:
    def test_measure_normalized(self, grid):
        assert grid.integrate(np.ones(grid.shape)) == pytest.approx(1.0, abs=2e-3)

    def test_rotations_valid(self, grid):
        R = grid.rotations().reshape(-1, 3, 3)[::97]
        assert so3.is_rotation(R, tol=1e-12)

    def test_antipodal_slice_is_involution(self, grid):
        values = np.random.default_rng(0).standard_normal(grid.shape[1:])
        twice = grid.antipodal_slice(grid.antipodal_slice(values))
        assert np.array_equal(twice, values)

    def test_antipodal_slice_maps_axes(self, grid):
        flipped = np.stack(
            [grid.antipodal_slice(grid.axes[..., i]) for i in range(3)], axis=-1
        )
        assert np.max(np.abs(flipped + grid.axes)) < 1e-13

    def test_evaluate_matches_loop(self, grid):
        B = np.random.default_rng(1).standard_normal((3, 3))
        f = lambda A: so3.inner(A, B)
        vec = grid.evaluate(lambda R: so3.inner(R, B), vectorized=True)
        direct = grid.evaluate(f)
        assert np.allclose(vec, direct)

    def test_odd_parity_requirement(self):
        with pytest.raises(ValueError):
            So3Grid(16, 8, 15)
        with pytest.raises(ValueError):
            So3Grid(16, 9, 16)


class TestWeightedDivergence:
    def _operator(self, grid, h, weight_fn):
        return weighted_divergence(
            grid, h, weight_fn(grid.theta), weight_fn(grid.theta_faces)
        )

    def test_constant_in_kernel(self, grid):
        w = lambda t: np.exp(0.5 * np.cos(t))
        out = self._operator(grid, np.full(grid.shape, 3.7), w)
        assert np.max(np.abs(out)) == 0.0

    def test_mass_conservation_exact(self, grid):
        rng = np.random.default_rng(2)
        B = rng.standard_normal((3, 3))
        h = grid.evaluate(lambda R: np.exp(so3.inner(R, B)), vectorized=True)
        w = lambda t: np.exp(0.5 * np.cos(t))
        out = self._operator(grid, h, w)
        assert abs(grid.integrate(out)) < 1e-14 * float(np.max(np.abs(out)))

    def test_self_adjoint_and_dissipative(self, grid):
        rng = np.random.default_rng(3)
        B1, B2 = rng.standard_normal((2, 3, 3))
        u = grid.evaluate(lambda R: np.exp(so3.inner(R, B1)), vectorized=True)
        v = grid.evaluate(lambda R: so3.inner(R, B2) ** 2, vectorized=True)
        w = lambda t: np.exp(0.3 * np.cos(t))
        Lu = self._operator(grid, u, w)
        Lv = self._operator(grid, v, w)
        lhs = grid.integrate(Lu * v)
        rhs = grid.integrate(u * Lv)
        scale = abs(lhs) + abs(rhs)
        assert abs(lhs - rhs) < 1e-12 * scale
        assert grid.integrate(Lu * u) < 0.0

    def test_converges_to_laplacian(self):
        # unit weight makes the operator the Laplace-Beltrami operator; on a
        # linear matrix function the analytic value is lap(A . B) = -2 (A . B)
        # (the sum of squared generators is -2 Id)
        rng = np.random.default_rng(4)
        B = rng.standard_normal((3, 3))

        errors = []
        for shape in [(24, 12, 24), (48, 24, 48), (96, 48, 96)]:
            g = So3Grid(*shape)
            h = g.evaluate(lambda R: so3.inner(R, B), vectorized=True)
            out = weighted_divergence(
                g, h, np.ones_like(g.theta), np.ones(g.n_theta + 1)
            )
            errors.append(g.norm(out + 2.0 * h))
        assert errors[0] / errors[1] > 3.0
        assert errors[1] / errors[2] > 3.0

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from bodyflock import so3
from bodyflock.errors import (
    DomainError,
    NegativeDeterminantError,
    NotAntisymmetricError,
    SingularMatrixError,
)

from conftest import haar_angles_independent

E1, E2, E3 = np.eye(3)


def series_exponential(m, terms=30):
    out = np.eye(3)
    term = np.eye(3)
    for k in range(1, terms):
        term = term @ m / k
        out = out + term
    return out


unit_vectors = st.builds(
    lambda seed: so3.sphere_sample(np.random.default_rng(seed)),
    st.integers(0, 10**6),
)


class TestHatVee:
    def test_canonical_cross_product(self):
        assert np.allclose(so3.hat(E1) @ E2, E3)

    def test_zero(self):
        assert np.array_equal(so3.hat(np.zeros(3)), np.zeros((3, 3)))
        assert np.array_equal(so3.vee(np.zeros((3, 3))), np.zeros(3))

    def test_matches_cross_product(self):
        rng = np.random.default_rng(0)
        u = np.array([1.0, 2.0, 3.0])
        m = so3.hat(u)
        for _ in range(10):
            v = rng.standard_normal(3)
            assert np.allclose(m @ v, np.cross(u, v), atol=1e-14)

    def test_vee_round_trip(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            u = rng.standard_normal(3)
            assert np.allclose(so3.vee(so3.hat(u)), u)

    def test_vee_rejects_symmetric(self):
        with pytest.raises(NotAntisymmetricError):
            so3.vee(np.diag([1.0, 2.0, 3.0]))

    @given(seed=st.integers(0, 10**6))
    @settings(max_examples=30, deadline=None)
    def test_inner_of_hats_is_dot(self, seed):
        rng = np.random.default_rng(seed)
        u, v = rng.standard_normal(3), rng.standard_normal(3)
        assert so3.inner(so3.hat(u), so3.hat(v)) == pytest.approx(np.dot(u, v), abs=1e-13)

    @given(n=unit_vectors)
    @settings(max_examples=30, deadline=None)
    def test_hat_squared_is_projector_shift(self, n):
        m = so3.hat(n)
        assert np.max(np.abs(m @ m - (np.outer(n, n) - np.eye(3)))) <= 1e-14


class TestAxisAngle:
    def test_zero_angle_gives_identity(self):
        assert np.allclose(so3.from_axis_angle(0.0, [0.3, 0.4, 0.5]), np.eye(3))

    def test_quarter_turn(self):
        A = so3.from_axis_angle(np.pi / 2, E3)
        assert np.allclose(A @ E1, E2, atol=1e-15)
        assert np.allclose(A @ E2, -E1, atol=1e-15)
        assert np.allclose(A @ E3, E3, atol=1e-15)

    def test_matches_series_exponential(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            theta = rng.uniform(0.0, np.pi)
            axis = so3.sphere_sample(rng)
            A = so3.from_axis_angle(theta, axis)
            assert np.max(np.abs(A - series_exponential(theta * so3.hat(axis)))) < 1e-12

    def test_recover_identity(self):
        aa = so3.to_axis_angle(np.eye(3))
        assert aa.theta == 0.0
        assert np.allclose(aa.axis, E1)

    def test_recover_quarter_turn(self):
        aa = so3.to_axis_angle(so3.from_axis_angle(np.pi / 2, E3))
        assert aa.theta == pytest.approx(np.pi / 2, abs=1e-12)
        assert np.allclose(aa.axis, E3, atol=1e-12)

    def test_half_turn_about_e1(self):
        aa = so3.to_axis_angle(np.diag([1.0, -1.0, -1.0]))
        assert aa.theta == pytest.approx(np.pi, abs=1e-12)
        assert np.allclose(np.abs(aa.axis), E1, atol=1e-12)

    @given(seed=st.integers(0, 10**6), theta=st.floats(1e-6, np.pi - 1e-6))
    @settings(max_examples=60, deadline=None)
    def test_round_trip(self, seed, theta):
        axis = so3.sphere_sample(np.random.default_rng(seed))
        A = so3.from_axis_angle(theta, axis)
        aa = so3.to_axis_angle(A)
        assert np.max(np.abs(so3.from_axis_angle(aa.theta, aa.axis) - A)) < 1e-9

    def test_exp_body_small_angles_smooth(self):
        v = np.array([1e-9, -2e-9, 1e-10])
        assert np.allclose(so3.exp_body(v), np.eye(3) + so3.hat(v), atol=1e-15)


class TestInnerAndProjection:
    def test_identity_norm(self):
        assert so3.inner(np.eye(3), np.eye(3)) == pytest.approx(1.5)

    def test_rotation_norm(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            A = so3.haar_sample(rng)
            assert so3.inner(A, A) == pytest.approx(1.5, abs=1e-13)

    def test_projection_kills_symmetric_at_identity(self):
        rng = np.random.default_rng(4)
        s = rng.standard_normal((3, 3))
        s = s + s.T
        assert np.max(np.abs(so3.project_tangent(np.eye(3), s))) < 1e-15

    def test_projection_fixes_antisymmetric_at_identity(self):
        p = so3.hat([0.3, -1.0, 0.8])
        assert np.allclose(so3.project_tangent(np.eye(3), p), p)

    def test_projection_orthogonal_to_normal_space(self):
        rng = np.random.default_rng(5)
        A = so3.haar_sample(rng)
        M = rng.standard_normal((3, 3))
        proj = so3.project_tangent(A, M)
        for _ in range(10):
            s = rng.standard_normal((3, 3))
            s = s + s.T
            assert so3.inner(proj, A @ s) == pytest.approx(0.0, abs=1e-13)

    def test_projection_idempotent_and_self_adjoint(self):
        rng = np.random.default_rng(6)
        A = so3.haar_sample(rng)
        M, N = rng.standard_normal((2, 3, 3))
        proj = so3.project_tangent(A, M)
        assert np.allclose(so3.project_tangent(A, proj), proj, atol=1e-14)
        lhs = so3.inner(so3.project_tangent(A, M), N)
        rhs = so3.inner(M, so3.project_tangent(A, N))
        assert lhs == pytest.approx(rhs, abs=1e-13)
        # image and kernel are orthogonal
        assert so3.inner(proj, M - proj) == pytest.approx(0.0, abs=1e-13)


class TestPolar:
    def test_removes_dilation(self):
        R = so3.haar_sample(np.random.default_rng(7))
        assert np.allclose(so3.polar_rotation(2.5 * R), R, atol=1e-12)

    def test_two_matrix_average_is_geodesic_midpoint(self):
        rng = np.random.default_rng(8)
        A1, A2 = so3.haar_sample(rng, 2)
        aa = so3.to_axis_angle(A2.T @ A1)
        midpoint = A2 @ so3.from_axis_angle(0.5 * aa.theta, aa.axis)
        assert np.allclose(so3.polar_rotation(0.5 * (A1 + A2)), midpoint, atol=1e-12)

    def test_three_matrix_average_rejected(self):
        with pytest.raises(NegativeDeterminantError):
            so3.polar_rotation(-np.eye(3) / 3.0)

    def test_singular_rejected(self):
        with pytest.raises(SingularMatrixError):
            so3.polar_rotation(np.diag([1.0, 1.0, 0.0]))

    def test_maximizes_alignment(self):
        rng = np.random.default_rng(9)
        M = rng.standard_normal((3, 3))
        if np.linalg.det(M) < 0:
            M[0] = -M[0]
        R = so3.polar_rotation(M)
        best = so3.inner(R, M)
        for _ in range(100):
            xi = 0.3 * rng.standard_normal(3)
            assert so3.inner(R @ so3.exp_body(xi), M) <= best + 1e-12

    def test_outputs_are_rotations(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            M = rng.standard_normal((3, 3))
            if abs(np.linalg.det(M)) < 1e-3:
                continue
            if np.linalg.det(M) < 0:
                M[0] = -M[0]
            assert so3.is_rotation(so3.polar_rotation(M), tol=1e-10)


class TestHaarMeasure:
    def test_weight_endpoints(self):
        assert so3.haar_weight(0.0) == 0.0
        assert so3.haar_weight(np.pi) == pytest.approx(2.0 / np.pi)

    def test_weight_normalized(self):
        theta = np.linspace(0.0, np.pi, 4096)
        assert np.trapezoid(so3.haar_weight(theta), theta) == pytest.approx(1.0, abs=1e-10)

    def test_quadrature_normalization(self, quad):
        assert quad.integrate(lambda A: 1.0) == pytest.approx(1.0, abs=1e-10)

    def test_quadrature_mean_rotation_vanishes(self, quad):
        mean = quad.integrate(lambda A: A)
        assert np.max(np.abs(mean)) < 1e-8

    def test_quadrature_against_independent_monte_carlo(self, quad):
        # statistic depends on the angle alone, so quaternion angles suffice
        value = quad.integrate(lambda A: so3.inner(A, np.eye(3)) ** 2)
        rng = np.random.default_rng(11)
        total, total_sq, n = 0.0, 0.0, 10**7
        for _ in range(10):
            theta = haar_angles_independent(rng, n // 10)
            x = (0.5 + np.cos(theta)) ** 2
            total += x.sum()
            total_sq += (x**2).sum()
        mean = total / n
        se = np.sqrt((total_sq / n - mean**2) / n)
        assert abs(value - mean) < 3.0 * se

    def test_quadrature_left_invariant(self, quad):
        rng = np.random.default_rng(12)
        shift = so3.haar_sample(rng)
        f = lambda A: np.exp(so3.inner(A, np.eye(3)))
        v1 = quad.integrate(f)
        v2 = quad.integrate(lambda A: f(shift.T @ A))
        assert abs(v1 - v2) / abs(v1) < 1e-10

    def test_sampler_mean_trace(self):
        rng = np.random.default_rng(13)
        samples = so3.haar_sample(rng, 10**6)
        tr = np.einsum("nii->n", samples)
        se = tr.std() / np.sqrt(len(tr))
        assert abs(tr.mean()) < 3.0 * se

    def test_sampler_angle_fraction(self):
        expected, _ = integrate.quad(so3.haar_weight, 0.0, np.pi / 2)
        rng = np.random.default_rng(14)
        theta = so3.rotation_angle(so3.haar_sample(rng, 10**6))
        frac = np.mean(theta < np.pi / 2)
        se = np.sqrt(expected * (1.0 - expected) / len(theta))
        assert abs(frac - expected) < 3.0 * se

    def test_sampler_deterministic(self):
        a = so3.haar_sample(np.random.default_rng(99), 100)
        b = so3.haar_sample(np.random.default_rng(99), 100)
        assert np.array_equal(a, b)

    def test_samples_are_rotations(self):
        samples = so3.haar_sample(np.random.default_rng(15), 1000)
        gram = np.swapaxes(samples, -1, -2) @ samples
        assert np.max(np.abs(gram - np.eye(3))) <= 1e-10
        assert np.max(np.abs(np.linalg.det(samples) - 1.0)) <= 1e-10


class TestDifferentialOperators:
    def test_gradient_of_linear_function_is_projection(self):
        rng = np.random.default_rng(16)
        B = rng.standard_normal((3, 3))
        fbar = lambda t, n: so3.inner(so3.from_axis_angle(t, n), B)
        grad = so3.grad_axis_angle(fbar)
        for _ in range(5):
            theta = rng.uniform(0.3, np.pi - 0.3)
            axis = so3.sphere_sample(rng)
            g = grad(theta, axis)
            expected = so3.project_tangent(so3.from_axis_angle(theta, axis), B)
            assert np.max(np.abs(g.matrix - expected)) < 1e-8

    def test_gradient_of_constant_vanishes(self):
        grad = so3.grad_axis_angle(lambda t, n: 4.2)
        g = grad(1.0, np.array([0.0, 0.0, 1.0]))
        assert np.max(np.abs(g.matrix)) < 1e-10

    def test_gradient_against_curve_derivative(self):
        rng = np.random.default_rng(17)
        B1, B2 = rng.standard_normal((2, 3, 3))

        def f_of_rotation(A):
            return np.sin(so3.inner(A, B1)) + 0.5 * so3.inner(A, B2) ** 2

        grad = so3.grad_axis_angle(
            lambda t, n: f_of_rotation(so3.from_axis_angle(t, n))
        )
        for _ in range(5):
            theta = rng.uniform(0.4, np.pi - 0.4)
            axis = so3.sphere_sample(rng)
            A = so3.from_axis_angle(theta, axis)
            xi = rng.standard_normal(3)
            direction = A @ so3.hat(xi)
            h = 1e-6
            plus = so3.to_axis_angle(A @ so3.exp_body(h * xi))
            minus = so3.to_axis_angle(A @ so3.exp_body(-h * xi))
            fd = (
                f_of_rotation(so3.from_axis_angle(plus.theta, plus.axis))
                - f_of_rotation(so3.from_axis_angle(minus.theta, minus.axis))
            ) / (2.0 * h)
            value = so3.inner(grad(theta, axis).matrix, direction)
            assert value == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_gradient_domain_guard(self):
        grad = so3.grad_axis_angle(lambda t, n: t)
        with pytest.raises(DomainError):
            grad(1e-9, np.array([0.0, 0.0, 1.0]))
        with pytest.raises(DomainError):
            grad(np.pi, np.array([0.0, 0.0, 1.0]))

    def test_laplacian_of_first_harmonic(self):
        p = np.array([0.4, -0.2, 0.6])
        lap = so3.laplacian_axis_angle(lambda t, n: np.dot(p, n))
        rng = np.random.default_rng(18)
        for _ in range(5):
            theta = rng.uniform(0.5, np.pi - 0.5)
            axis = so3.sphere_sample(rng)
            expected = -np.dot(p, axis) / (2.0 * np.sin(theta / 2.0) ** 2)
            assert lap(theta, axis) == pytest.approx(expected, rel=1e-5, abs=1e-7)

    def test_laplacian_of_constant(self):
        lap = so3.laplacian_axis_angle(lambda t, n: -3.0)
        assert lap(1.2, np.array([1.0, 0.0, 0.0])) == pytest.approx(0.0, abs=1e-8)

    def test_green_identity(self):
        # chart functions must descend to the group: induce them from
        # matrix functions (the chart identifies (theta, n) ~ (theta, -n)
        # at theta = pi, which would otherwise break integration by parts)
        rng = np.random.default_rng(22)
        B1, B2, B3 = rng.standard_normal((3, 3, 3))
        F = lambda A: np.exp(0.4 * so3.inner(A, B1))
        G = lambda A: so3.inner(A, B2) + 0.3 * so3.inner(A, B3) ** 2
        fbar = lambda t, n: F(so3.from_axis_angle(t, n))
        gbar = lambda t, n: G(so3.from_axis_angle(t, n))
        grad_f = so3.grad_axis_angle(fbar)
        grad_g = so3.grad_axis_angle(gbar)
        lap_g = so3.laplacian_axis_angle(gbar)
        quad = so3.So3Quadrature(64, 128)

        lhs = 0.0
        rhs = 0.0
        for (t_w, A) in zip(quad.weights, quad.rotations):
            aa = so3.to_axis_angle(A)
            lhs += t_w * fbar(aa.theta, aa.axis) * lap_g(aa.theta, aa.axis)
            rhs -= t_w * np.dot(
                grad_f(aa.theta, aa.axis).body, grad_g(aa.theta, aa.axis).body
            )
        assert lhs == pytest.approx(rhs, rel=1e-4)


class TestGeodesicRelaxation:
    def test_fixed_point_at_target(self):
        B = so3.haar_sample(np.random.default_rng(19))
        _, traj = so3.geodesic_relax(B, B, lambda mu: 1.0, t_end=1.0, dt=0.05)
        assert np.max(np.abs(traj - B)) < 1e-13

    def test_antipodal_angle_is_stationary(self):
        rng = np.random.default_rng(20)
        B = so3.haar_sample(rng)
        axis = so3.sphere_sample(rng)
        A0 = B @ so3.from_axis_angle(np.pi, axis)
        _, traj = so3.geodesic_relax(A0, B, lambda mu: 1.0, t_end=1.0, dt=0.05)
        assert np.max(np.abs(traj - A0)) < 1e-12

    def test_stays_on_geodesic_and_decays(self):
        rng = np.random.default_rng(21)
        B, A0 = so3.haar_sample(rng, 2)
        times, traj = so3.geodesic_relax(A0, B, lambda mu: 1.0, t_end=8.0, dt=0.01)
        rel = B.T @ traj
        theta = so3.rotation_angle(rel)
        axis0 = so3.to_axis_angle(rel[0]).axis
        for R in rel[::50]:
            aa = so3.to_axis_angle(R)
            if aa.theta > 1e-9:
                assert np.max(np.abs(aa.axis - axis0)) < 1e-8
        assert np.all(np.diff(theta) < 0.0)
        # bounded rescaled angle: decay at least at the asymptotic rate
        rate = 1.0  # alignment rate at full overlap
        rescaled = theta * np.exp(rate * times)
        assert np.max(rescaled) <= theta[0] * np.exp(rate * times[-1]) + 1e-9
        assert rescaled[-1] <= 1.2 * np.max(rescaled[: len(rescaled) // 2])

import numpy as np
import pytest

from bodyflock import pde, so3
from bodyflock.pde import FrameField, SohbCoeffs, SohbParams

COEFFS = SohbCoeffs(c1=0.436263, c2=0.449645, c3=0.5, c4=0.183452)


def sine_density_field(n, amplitude=0.3, frame=None):
    field = FrameField.uniform((n,), dx=1.0 / n, rho0=1.0, frame=frame)
    x = np.arange(n) / n
    field.rho = 1.0 + amplitude * np.sin(2.0 * np.pi * x)
    return field


class TestFrameField:
    def test_uniform_construction(self):
        R = so3.haar_sample(np.random.default_rng(70))
        field = FrameField.uniform((8, 4), dx=0.1, rho0=2.0, frame=R)
        assert field.orthonormality_defect() < 1e-14
        assert field.min_handedness() == pytest.approx(1.0, abs=1e-12)
        assert field.total_mass() == pytest.approx(2.0 * 32 * 0.01)

    def test_twist_construction(self):
        field = FrameField.from_twist(
            (16,),
            1.0 / 16,
            rho=1.0,
            twist=lambda x: np.stack(
                [0.3 * np.sin(2 * np.pi * x), np.zeros_like(x), np.zeros_like(x)],
                axis=-1,
            ),
        )
        assert field.orthonormality_defect() < 1e-14
        assert field.min_handedness() > 0.0


class TestFrameDerivatives:
    def test_constant_frame_gives_zero(self):
        field = FrameField.uniform((32,), dx=1.0 / 32, rho0=1.0)
        delta, r = pde.frame_derivatives(field)
        assert np.max(np.abs(delta)) == 0.0
        assert np.max(np.abs(r)) == 0.0

    def test_divergence_case(self):
        # twist along the first axis varying in the first coordinate:
        # at the zero of the twist, delta = div b and r = 0
        eps = 0.4
        n = 128
        field = FrameField.from_twist(
            (n,),
            1.0 / n,
            rho=1.0,
            twist=lambda x: np.stack(
                [
                    eps / (2 * np.pi) * np.sin(2 * np.pi * x),
                    np.zeros_like(x),
                    np.zeros_like(x),
                ],
                axis=-1,
            ),
        )
        delta, r = pde.frame_derivatives(field)
        assert delta[0] == pytest.approx(eps, rel=5e-4)
        assert np.max(np.abs(r[0])) < 1e-12

    def test_curl_case(self):
        eps = 0.4
        n = 128
        field = FrameField.from_twist(
            (4, n),
            1.0 / n,
            rho=1.0,
            twist=lambda x, y: np.stack(
                [
                    np.zeros_like(y),
                    np.zeros_like(y),
                    eps / (2 * np.pi) * np.sin(2 * np.pi * y),
                ],
                axis=-1,
            ),
        )
        delta, r = pde.frame_derivatives(field)
        assert np.allclose(r[0, 0], [eps, 0.0, 0.0], atol=eps * 5e-4)
        assert abs(delta[0, 0]) < 1e-12


class TestStep:
    def test_uniform_state_stationary(self):
        R = so3.haar_sample(np.random.default_rng(71))
        field = FrameField.uniform((64,), dx=1.0 / 64, rho0=1.3, frame=R)
        params = SohbParams(coeffs=COEFFS, dx=1.0 / 64)
        new, info = pde.step(field, params)
        assert np.max(np.abs(new.rho - field.rho)) == 0.0
        assert np.max(np.abs(new.omega - field.omega)) < 1e-14
        assert info.vacuum_count == 0

    def test_mass_conserved_per_step(self):
        field = sine_density_field(128)
        params = SohbParams(coeffs=COEFFS, dx=1.0 / 128)
        record = pde.run(field, params, t_end=0.5)
        drift = np.max(np.abs(np.diff(record.mass))) / record.mass[0]
        assert drift <= 1e-12

    def test_frame_quality_preserved(self):
        field = sine_density_field(96, frame=so3.haar_sample(np.random.default_rng(72)))
        params = SohbParams(coeffs=COEFFS, dx=1.0 / 96)
        record = pde.run(field, params, t_end=0.3)
        assert record.max_defect <= 1e-9
        assert record.min_handedness > 0.0

    def test_heading_tilts_against_density_gradient(self):
        # heading perpendicular to the gradient so the projected force acts
        frame = so3.from_axis_angle(np.pi / 2, np.array([0.0, 0.0, 1.0]))
        field = sine_density_field(128, amplitude=0.2, frame=frame)
        params = SohbParams(coeffs=COEFFS, dx=1.0 / 128)
        new, _ = pde.step(field, params)
        grad = (np.roll(field.rho, -1) - np.roll(field.rho, 1)) * 128 / 2.0
        cell = int(np.argmax(np.abs(grad)))
        tilt = (new.omega[cell] - field.omega[cell])[0] * grad[cell]
        assert tilt < 0.0

    def test_body_axes_rotate_at_c4_delta(self):
        eps = 0.5
        n = 256
        dx = 1.0 / n
        field = FrameField.from_twist(
            (1, 1, n),
            dx,
            rho=1.0,
            twist=lambda x, y, z: np.stack(
                [
                    np.zeros_like(z),
                    np.zeros_like(z),
                    eps / (2 * np.pi) * np.sin(2 * np.pi * z),
                ],
                axis=-1,
            ),
        )
        u0 = field.u[0, 0, 0].copy()
        om0 = field.omega[0, 0, 0].copy()
        params = SohbParams(coeffs=COEFFS, dx=dx)
        record = pde.run(field, params, t_end=0.1)
        uT = record.final.u[0, 0, 0]
        angle = np.arctan2(np.dot(uT, np.cross(om0, u0)), np.dot(uT, u0))
        expected = -COEFFS.c4 * eps * record.final.time
        assert angle == pytest.approx(expected, rel=2e-2)
        assert np.max(np.abs(record.final.omega[0, 0, 0] - om0)) < 1e-12

    def test_vacuum_cells_freeze_frame(self):
        field = sine_density_field(64)
        field.rho[10] = 1e-12  # far below the floor
        frame_before = field.frame_matrices()[10].copy()
        params = SohbParams(coeffs=COEFFS, dx=1.0 / 64)
        new, info = pde.step(field, params)
        assert info.vacuum_count >= 1
        assert np.allclose(new.frame_matrices()[10], frame_before, atol=1e-12)

    def test_gram_schmidt_flag(self):
        field = sine_density_field(64)
        params = SohbParams(coeffs=COEFFS, dx=1.0 / 64, reorthonormalize="gram-schmidt")
        record = pde.run(field, params, t_end=0.1)
        assert record.max_defect <= 1e-9

    def test_cfl_guard(self):
        with pytest.raises(ValueError):
            SohbParams(coeffs=COEFFS, dx=1.0 / 64, dt=1.0)


class TestRun:
    def test_small_3d_grid(self):
        rng = np.random.default_rng(73)
        field = FrameField.uniform((16, 8, 8), dx=1.0 / 16, rho0=1.0,
                                   frame=so3.haar_sample(rng))
        x = np.arange(16) / 16.0
        field.rho = (1.0 + 0.2 * np.sin(2 * np.pi * x))[:, None, None] * np.ones((16, 8, 8))
        params = SohbParams(coeffs=COEFFS, dx=1.0 / 16)
        record = pde.run(field, params, t_end=0.1)
        assert np.max(np.abs(np.diff(record.mass))) / record.mass[0] <= 1e-12
        assert record.max_defect <= 1e-9
        assert record.min_handedness > 0.0

    def test_zero_horizon(self):
        field = sine_density_field(32)
        params = SohbParams(coeffs=COEFFS, dx=1.0 / 32)
        record = pde.run(field, params, t_end=0.0)
        assert len(record.times) == 1
        assert record.final.time == 0.0

    def test_distinct_propagation_speeds(self):
        # with c3 = c4 = 0 a density pulse moves at c1 while a twist of the
        # body axes moves at c2
        coeffs = SohbCoeffs(c1=0.8, c2=0.4, c3=0.0, c4=0.0)
        n = 512
        dx = 1.0 / n
        x = np.arange(n) * dx
        pulse = np.exp(-0.5 * ((x - 0.3) % 1.0 - 0.5) ** 2 / 0.03**2)

        field = FrameField.uniform((n,), dx=dx, rho0=1.0)
        field.rho = 1.0 + 0.1 * np.roll(pulse, n // 5)
        params = SohbParams(coeffs=coeffs, dx=dx)
        record = pde.run(field, params, t_end=0.25)
        peak0 = x[np.argmax(field.rho)]
        peak1 = x[np.argmax(record.final.rho)]
        speed_rho = ((peak1 - peak0) % 1.0) / record.final.time

        twist_field = FrameField.from_twist(
            (n,),
            dx,
            rho=1.0,
            twist=lambda xx: np.stack(
                [
                    0.3 * np.exp(-0.5 * ((xx - 0.1) % 1.0 - 0.5) ** 2 / 0.03**2),
                    np.zeros_like(xx),
                    np.zeros_like(xx),
                ],
                axis=-1,
            ),
        )
        twist_record = pde.run(twist_field, params, t_end=0.25)
        angle = lambda f: np.arctan2(f.u[:, 2], f.u[:, 1])
        peak0 = x[np.argmax(angle(twist_field))]
        peak1 = x[np.argmax(angle(twist_record.final))]
        speed_twist = ((peak1 - peak0) % 1.0) / twist_record.final.time

        assert speed_rho == pytest.approx(coeffs.c1, abs=0.02)
        assert speed_twist == pytest.approx(coeffs.c2, abs=0.02)
        assert abs(speed_rho - speed_twist) > 0.2

    def test_first_order_self_convergence_of_step(self):
        # smooth initial data; one step at matched dt, nested grids
        coeffs = COEFFS
        dt = 1e-4

        def initial(n):
            field = FrameField.from_twist(
                (n,),
                1.0 / n,
                rho=lambda x: 1.0 + 0.2 * np.sin(2 * np.pi * x),
                twist=lambda x: np.stack(
                    [
                        0.2 * np.sin(2 * np.pi * x),
                        0.1 * np.cos(2 * np.pi * x),
                        np.zeros_like(x),
                    ],
                    axis=-1,
                ),
            )
            return field

        results = {}
        for n in (64, 128, 256):
            params = SohbParams(coeffs=coeffs, dx=1.0 / n, dt=dt)
            stepped, _ = pde.step(initial(n), params)
            results[n] = stepped
        # compare on the shared coarse nodes
        def misfit(fine, coarse, stride):
            return np.max(np.abs(fine.omega[::stride] - coarse.omega))

        d1 = misfit(results[128], results[64], 2)
        d2 = misfit(results[256], results[128], 2)
        assert d1 / d2 >= 1.7  # first order, upwind-limited

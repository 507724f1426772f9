import numpy as np
import pytest

from bodyflock import equilibria as eq
from bodyflock import ibm, so3

NU1 = eq.NuSpec.constant(1.0)


def make_params(**kw):
    base = dict(
        n_agents=50,
        box_length=1.0,
        v0=0.0,
        nu=NU1,
        noise=0.1,
        dt=0.01,
        seed=1,
    )
    base.update(kw)
    return ibm.IbmParams(**base)


class TestKernels:
    def test_normalization_on_box(self):
        for kernel in (
            ibm.KernelSpec.global_(),
            ibm.KernelSpec.tophat(0.2),
            ibm.KernelSpec.gaussian(0.15),
        ):
            assert kernel.box_integral(1.0) == pytest.approx(1.0, abs=1e-6)

    def test_tophat_radius_guard(self):
        with pytest.raises(ValueError):
            ibm.KernelSpec.tophat(0.6).normalization(1.0)

    def test_dt_stability_guard(self):
        with pytest.raises(ValueError):
            make_params(nu=eq.NuSpec.constant(30.0), dt=0.01)

    def test_cell_list_matches_dense_reference(self):
        rng = np.random.default_rng(60)
        kernel = ibm.KernelSpec.tophat(0.22)
        positions = rng.random((300, 3))
        attitudes = so3.haar_sample(rng, 300)
        ens = ibm.ParticleEnsemble(positions, attitudes)
        fast = ibm.local_averages(ens, kernel, 1.0)
        for k in range(0, 300, 37):
            reference = ibm.local_average(ens, k, kernel, 1.0)
            assert np.allclose(fast[k], reference, atol=1e-14)

    def test_gaussian_dense_path(self):
        rng = np.random.default_rng(61)
        kernel = ibm.KernelSpec.gaussian(0.2)
        ens = ibm.ParticleEnsemble(rng.random((40, 3)), so3.haar_sample(rng, 40))
        averages = ibm.local_averages(ens, kernel, 1.0)
        for k in (0, 17, 39):
            assert np.allclose(averages[k], ibm.local_average(ens, k, kernel, 1.0))


class TestLocalAverage:
    def test_identical_attitudes_give_scaled_copy(self):
        rng = np.random.default_rng(62)
        A = so3.haar_sample(rng)
        ens = ibm.ParticleEnsemble(
            rng.random((20, 3)), np.broadcast_to(A, (20, 3, 3)).copy()
        )
        M = ibm.local_average(ens, 3, ibm.KernelSpec.global_(), 1.0)
        assert np.allclose(M, A * 1.0, atol=1e-14)  # weight 1/L^3 = 1

    def test_two_agents_give_geodesic_midpoint(self):
        rng = np.random.default_rng(63)
        A1, A2 = so3.haar_sample(rng, 2)
        ens = ibm.ParticleEnsemble(rng.random((2, 3)), np.stack([A1, A2]))
        M = ibm.local_average(ens, 0, ibm.KernelSpec.global_(), 1.0)
        assert np.allclose(M, 0.5 * (A1 + A2))
        aa = so3.to_axis_angle(A2.T @ A1)
        midpoint = A2 @ so3.from_axis_angle(0.5 * aa.theta, aa.axis)
        assert np.allclose(so3.polar_rotation(M), midpoint, atol=1e-12)

    def test_three_half_turns_average_is_degenerate(self):
        attitudes = np.stack(
            [np.diag(d) for d in ([1.0, -1, -1], [-1.0, 1, -1], [-1.0, -1, 1])]
        )
        ens = ibm.ParticleEnsemble(np.random.default_rng(0).random((3, 3)), attitudes)
        M = ibm.local_average(ens, 0, ibm.KernelSpec.global_(), 1.0)
        assert np.allclose(M, -np.eye(3) / 3.0)
        params = make_params(n_agents=3, noise=0.0)
        new, info = ibm.step(ens, params)
        assert info.fallback_count == 3
        assert np.allclose(new.attitudes, attitudes)  # drift skipped, no noise


class TestStep:
    def test_two_agents_relax_to_midpoint(self):
        rng = np.random.default_rng(64)
        A1, A2 = so3.haar_sample(rng, 2)
        aa = so3.to_axis_angle(A2.T @ A1)
        midpoint = A2 @ so3.from_axis_angle(0.5 * aa.theta, aa.axis)
        params = make_params(n_agents=2, noise=0.0, dt=0.05)
        ens = ibm.ParticleEnsemble(rng.random((2, 3)), np.stack([A1, A2]))
        for _ in range(700):
            ens, _ = ibm.step(ens, params)
        assert np.max(np.abs(ens.attitudes - midpoint)) < 1e-10

    def test_midpoint_state_is_stationary(self):
        rng = np.random.default_rng(65)
        A = so3.haar_sample(rng)
        params = make_params(n_agents=2, noise=0.0)
        ens = ibm.ParticleEnsemble(rng.random((2, 3)), np.stack([A, A]))
        new, _ = ibm.step(ens, params)
        assert np.max(np.abs(new.attitudes - A)) < 1e-14

    def test_attitudes_stay_orthonormal(self):
        params = make_params(n_agents=200, noise=0.4, v0=1.0)
        ens = ibm.initial_ensemble(params, "haar")
        for _ in range(150):
            ens, _ = ibm.step(ens, params)
            assert ens.attitude_defect() <= 1e-10

    def test_positions_wrap_and_preserve_separation(self):
        params = make_params(n_agents=2, noise=0.0, v0=1.0, dt=0.01)
        positions = np.array([[0.98, 0.5, 0.5], [0.02, 0.5, 0.5]])
        attitudes = np.broadcast_to(np.eye(3), (2, 3, 3)).copy()
        ens = ibm.ParticleEnsemble(positions, attitudes)
        d0 = np.linalg.norm(
            ibm._min_image(ens.positions[0] - ens.positions[1], 1.0)
        )
        for _ in range(20):
            ens, _ = ibm.step(ens, params)
            assert np.all(ens.positions >= 0.0) and np.all(ens.positions < 1.0)
            d = np.linalg.norm(
                ibm._min_image(ens.positions[0] - ens.positions[1], 1.0)
            )
            assert d == pytest.approx(d0, abs=1e-12)

    def test_explicit_rng_stream_supported(self):
        params = make_params(n_agents=10)
        ens = ibm.initial_ensemble(params, "haar")
        a, _ = ibm.step(ens, params, rng=np.random.default_rng(5))
        b, _ = ibm.step(ens, params, rng=np.random.default_rng(5))
        assert np.array_equal(a.attitudes, b.attitudes)

    def test_keep_previous_fallback(self):
        attitudes = np.stack(
            [np.diag(d) for d in ([1.0, -1, -1], [-1.0, 1, -1], [-1.0, -1, 1])]
        )
        ens = ibm.ParticleEnsemble(np.random.default_rng(0).random((3, 3)), attitudes)
        params = make_params(n_agents=3, noise=0.0, det_fallback="keep_previous")
        # a generic previous target (the identity would be antipodal to all
        # three half-turns and the drift would vanish)
        target = so3.from_axis_angle(0.7, np.array([0.6, 0.8, 0.0]))
        prev = np.broadcast_to(target, (3, 3, 3)).copy()
        new, info = ibm.step(ens, params, prev_targets=prev)
        assert info.fallback_count == 3
        # drift now pulls toward the previous target instead of idling
        assert np.max(np.abs(new.attitudes - attitudes)) > 1e-6

    def test_matrix_mean_target_variant(self):
        rng = np.random.default_rng(66)
        params = make_params(n_agents=20, noise=0.0, target="matrix-mean")
        ens = ibm.ParticleEnsemble(rng.random((20, 3)), so3.haar_sample(rng, 20))
        new, _ = ibm.step(ens, params)
        assert new.attitude_defect() <= 1e-12


class TestOrderParameters:
    def test_fully_aligned(self):
        rng = np.random.default_rng(67)
        A = so3.haar_sample(rng)
        ens = ibm.ParticleEnsemble(
            rng.random((30, 3)), np.broadcast_to(A, (30, 3, 3)).copy()
        )
        op = ibm.order_parameters(ens)
        assert op.c1_hat == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(op.direction, A[:, 0])

    def test_haar_ensemble_is_disordered(self):
        rng = np.random.default_rng(68)
        ens = ibm.ParticleEnsemble(
            rng.random((10**6, 3)), so3.haar_sample(rng, 10**6)
        )
        op = ibm.order_parameters(ens)
        assert abs(op.c1_hat) < 0.01


class TestRun:
    def test_deterministic_given_seed(self):
        params = make_params(n_agents=40, v0=0.5, noise=0.3, seed=11)
        a = ibm.run(params, init="haar", t_end=0.5, sample_every=10)
        b = ibm.run(params, init="haar", t_end=0.5, sample_every=10)
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.c1_hat, b.c1_hat)
        assert np.array_equal(a.final.positions, b.final.positions)
        assert np.array_equal(a.final.attitudes, b.final.attitudes)

    def test_zero_horizon_keeps_initial_state(self):
        params = make_params(n_agents=10)
        record = ibm.run(params, init="haar", t_end=0.0, snapshot_every=5)
        assert len(record.times) == 1
        assert record.final.time == 0.0
        assert len(record.snapshots) == 1

    def test_aligned_no_noise_stays_aligned(self):
        params = make_params(n_agents=25, noise=0.0, v0=0.7)
        record = ibm.run(params, init="aligned", t_end=0.3, sample_every=3)
        assert np.allclose(record.c1_hat, 1.0, atol=1e-12)

    def test_custom_init_roundtrip(self, tmp_path):
        from bodyflock import io

        params = make_params(n_agents=15)
        ens = ibm.initial_ensemble(params, "haar")
        path = tmp_path / "snapshot.json"
        io.write_json(path, io.ensemble_to_payload(ens))
        loaded = ibm.initial_ensemble(params, "custom", path=path)
        assert np.allclose(loaded.positions, ens.positions)
        assert np.allclose(loaded.attitudes, ens.attitudes)

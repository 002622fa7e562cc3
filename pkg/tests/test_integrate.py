import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from brusselator.bounds import vz_energy_integral
from brusselator.integrate import (BlowUpError, GalerkinStepper, IntegratorConfig, Trajectory, fd_grid,
                                   fd_reference_simulate, galerkin_rhs, mode_blocks,
                                   random_initial_state, simulate, step)
from brusselator.model import Parameters, linear_reaction_matrix, swap
from brusselator.spectral import DomainSpec, ModalState, build_basis, nonlinear_galerkin

ZERO_FEED = Parameters(a=0.0, allow_zero_feed=True)


def smooth_state(basis, rho=3.0, seed=1, keep=8):
    q = random_initial_state(basis, rho, np.random.default_rng(seed), exact_norm=True).coeffs
    q[:, keep:] = 0.0
    return ModalState(q)


def vz_only(basis, v0):
    """State with only v populated (u = w = phi = psi = z = 0)."""
    q = np.zeros((6, basis.size))
    q[1] = v0
    return q


class TestConfig:
    @pytest.mark.parametrize("kw", [{"dt": 0}, {"dt": -1}, {"t_end": 0}, {"sample_every": 0},
                                    {"scheme": "rk4"}, {"tol": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            IntegratorConfig(**kw)

    def test_step_count(self):
        assert IntegratorConfig(dt=0.01, t_end=0.5).n_steps == 50


class TestRhs:
    def test_zero_is_equilibrium_without_feed(self, basis8):
        assert not galerkin_rhs(np.zeros((6, 8)), basis8, ZERO_FEED).any()

    def test_zero_state_gives_feed_projection(self, basis8, prm):
        np.testing.assert_allclose(galerkin_rhs(np.zeros((6, 8)), basis8, prm),
                                   nonlinear_galerkin(np.zeros((6, 8)), basis8, prm),
                                   atol=1e-15)

    def test_diffusion_plus_nonlinear(self, basis8, prm, rng):
        q = rng.standard_normal((6, 8))
        expected = (-prm.diffusivities[:, None] * basis8.eigenvalues * q
                    + nonlinear_galerkin(q, basis8, prm))
        np.testing.assert_allclose(galerkin_rhs(q, basis8, prm), expected, atol=1e-11)

    def test_accepts_modal_state(self, basis8, prm, rng):
        q = rng.standard_normal((6, 8))
        np.testing.assert_array_equal(galerkin_rhs(ModalState(q), basis8, prm),
                                      galerkin_rhs(q, basis8, prm))

    def test_blocks(self, basis8, prm):
        blocks = mode_blocks(basis8, prm)
        assert blocks.shape == (8, 6, 6)
        j0 = linear_reaction_matrix(prm)
        for j in (0, 5):
            np.testing.assert_allclose(
                blocks[j], j0 - np.diag(prm.diffusivities) * basis8.eigenvalues[j])

    @given(st.floats(-3, 3), st.integers(0, 2**32 - 1))
    def test_linear_without_cubic_terms(self, alpha, seed):
        # with u = w = 0 the cubic terms vanish and the rhs is affine
        basis = build_basis(DomainSpec((math.pi,)), 8)
        q = np.random.default_rng(seed).standard_normal((6, 8))
        q[[0, 3]] = 0.0
        r0 = galerkin_rhs(np.zeros((6, 8)), basis, ZERO_FEED)
        lhs = galerkin_rhs(alpha * q, basis, ZERO_FEED) - r0
        rhs = alpha * (galerkin_rhs(q, basis, ZERO_FEED) - r0)
        np.testing.assert_allclose(lhs, rhs, atol=1e-11)


class TestStep:
    def test_linear_subsystem_is_exact(self, basis8):
        # v' = d2 lap v + D2 (z - v), z' = d2 lap z + D2 (v - z) with z(0) = 0
        prm = ZERO_FEED
        v0 = np.linspace(1.0, 0.2, 8)
        cfg = IntegratorConfig(dt=0.05, t_end=1.0)
        q = vz_only(basis8, v0)
        for _ in range(cfg.n_steps):
            q = step(q, basis8, prm, cfg)
        t = cfg.n_steps * cfg.dt
        decay = np.exp(-prm.d2 * basis8.eigenvalues * t)
        mix = np.exp(-2 * prm.D2 * t)
        np.testing.assert_allclose(q[1], decay * v0 * (1 + mix) / 2, rtol=1e-10)
        np.testing.assert_allclose(q[4], decay * v0 * (1 - mix) / 2, rtol=1e-10)
        assert not q[[0, 2, 3, 5]].any()

    def test_modal_state_time_advances(self, basis8, prm):
        cfg = IntegratorConfig(dt=0.02)
        out = step(ModalState(np.zeros((6, 8)), t=1.0), basis8, prm, cfg)
        assert out.t == pytest.approx(1.02)

    def test_rk2_self_convergence(self, basis32, prm):
        g0 = smooth_state(basis32)
        finals = {}
        for dt in (1e-3, 5e-4, 2.5e-4, 1.25e-4):
            cfg = IntegratorConfig(dt=dt, t_end=0.5)
            finals[dt] = simulate(g0, basis32, prm, cfg).final.coeffs
        e1 = np.linalg.norm(finals[1e-3] - finals[5e-4])
        e2 = np.linalg.norm(finals[5e-4] - finals[2.5e-4])
        e3 = np.linalg.norm(finals[2.5e-4] - finals[1.25e-4])
        assert abs(e1 / e2 - 4) < 0.3
        assert abs(e2 / e3 - 4) < 0.2

    def test_euler_is_first_order(self, basis32, prm):
        g0 = smooth_state(basis32)
        finals = [simulate(g0, basis32, prm, IntegratorConfig(dt=dt, scheme="if_euler",
                                                              t_end=0.5)).final.coeffs
                  for dt in (1e-3, 5e-4, 2.5e-4)]
        ratio = np.linalg.norm(finals[0] - finals[1]) / np.linalg.norm(finals[1] - finals[2])
        assert abs(ratio - 2) < 0.2

    def test_swap_subspace_preserved(self, basis8, prm, rng):
        half = rng.standard_normal((3, 8)) / np.arange(1, 9) ** 2
        q = np.vstack([half, half])
        cfg = IntegratorConfig(dt=0.01)
        stepper = GalerkinStepper(basis8, prm, cfg)
        for i in range(10_000):
            q, _ = stepper.advance(q, i * cfg.dt)
        assert np.max(np.abs(q[:3] - q[3:])) <= 1e-10

    def test_blow_up_reported(self, basis8, prm):
        q = np.zeros((6, 8))
        q[[0, 1, 3, 4], 0] = 50.0
        with pytest.raises(BlowUpError) as info:
            simulate(ModalState(q), basis8, prm, IntegratorConfig(dt=1.0, t_end=50.0))
        assert 0 <= info.value.t < 50 and info.value.max_norm > 0
        assert "reduce the time step" in str(info.value)

    def test_adaptive_recovers(self, basis8, prm):
        q = np.zeros((6, 8))
        q[[0, 1, 3, 4], 0] = 2.0
        out = step(q, basis8, prm, IntegratorConfig(dt=0.5, adaptive=True))
        assert np.all(np.isfinite(out))


class TestSimulate:
    def test_zero_run_without_feed(self, basis8):
        traj = simulate(ModalState(np.zeros((6, 8))), basis8, ZERO_FEED,
                        IntegratorConfig(dt=0.01, t_end=0.5, sample_every=5))
        assert len(traj) == 11
        assert not traj.table()[:, 1:].any()

    def test_sampling_and_storage(self, basis8, prm):
        g0 = smooth_state(basis8, rho=1.0)
        traj = simulate(g0, basis8, prm, IntegratorConfig(dt=0.01, t_end=0.2, sample_every=4),
                        store_every=10)
        np.testing.assert_allclose(traj.times, np.arange(6) * 0.04)
        assert traj.states.shape == (3, 6, 8)
        np.testing.assert_allclose(traj.state_times, [0, 0.1, 0.2])
        np.testing.assert_array_equal(traj.states[-1], traj.final.coeffs)
        assert traj.final.t == pytest.approx(0.2)
        assert traj.table().shape == (6, 10)

    def test_deterministic(self, basis32, prm):
        g0 = random_initial_state(basis32, 5.0, np.random.default_rng(3))
        cfg = IntegratorConfig(dt=0.01, t_end=1.0, adaptive=True)
        a, b = simulate(g0, basis32, prm, cfg), simulate(g0, basis32, prm, cfg)
        assert a.table().tobytes() == b.table().tobytes()
        assert a.final.coeffs.tobytes() == b.final.coeffs.tobytes()

    def test_shape_mismatch(self, basis8, prm):
        with pytest.raises(ValueError):
            simulate(ModalState(np.zeros((6, 4))), basis8, prm, IntegratorConfig())

    def test_trajectory_validation(self):
        with pytest.raises(ValueError):
            Trajectory(times=[0.1, 0.2], reports=[None, None], g0=None)
        with pytest.raises(ValueError):
            Trajectory(times=[0.0, 0.2, 0.2], reports=[None] * 3, g0=None)

    def test_energy_identity_from_samples(self, basis32, prm):
        g0 = smooth_state(basis32)
        dt = 1e-3
        traj = simulate(g0, basis32, prm, IntegratorConfig(dt=dt, t_end=0.2), store_every=1)
        vz2 = traj.observable("norm_v2z2")
        fd = (vz2[2:] - vz2[:-2]) / (2 * dt)
        for i in (10, 100, 190):
            q = traj.states[i]
            lam = basis32.eigenvalues
            rhs = 2 * (vz_energy_integral(q, basis32, prm)
                       - prm.d2 * float((q[1] ** 2 + q[4] ** 2) @ lam))
            assert fd[i - 1] == pytest.approx(rhs, rel=1e-3, abs=1e-6)

    def test_random_initial_state_in_ball(self, basis8):
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert np.linalg.norm(random_initial_state(basis8, 2.0, rng).coeffs) <= 2.0
        exact = random_initial_state(basis8, 2.0, rng, exact_norm=True)
        assert np.linalg.norm(exact.coeffs) == pytest.approx(2.0)


class TestFiniteDifference:
    def test_grid(self, line_domain):
        x = fd_grid(line_domain, 5)[0]
        np.testing.assert_allclose(x, [np.pi / 4, np.pi / 2, 3 * np.pi / 4])

    def test_diffusion_rate_second_order(self, line_domain):
        prm = ZERO_FEED
        T = 0.5
        errs = []
        for nodes in (17, 33, 65):
            x = fd_grid(line_domain, nodes)[0]
            g = np.zeros((6, x.size))
            g[1] = g[4] = np.sin(x)
            traj = fd_reference_simulate(g, line_domain, prm, IntegratorConfig(dt=0.05, t_end=T))
            vz = traj.observable("norm_v2z2")
            rate = -np.log(vz[-1] / vz[0]) / (2 * T)
            errs.append(abs(rate - prm.d2))
        assert errs[-1] < 1e-3
        assert abs(errs[0] / errs[1] - 4) < 0.1
        assert abs(errs[1] / errs[2] - 4) < 0.1

    def test_rejects_bad_shape(self, line_domain, prm):
        with pytest.raises(ValueError):
            fd_reference_simulate(np.zeros((5, 10)), line_domain, prm, IntegratorConfig())

    def test_swap_preserved(self, line_domain, prm):
        x = fd_grid(line_domain, 65)[0]
        half = np.array([np.sin(x), 0.5 * np.sin(2 * x), np.sin(3 * x)])
        traj = fd_reference_simulate(np.vstack([half, half]), line_domain, prm,
                                     IntegratorConfig(dt=0.01, t_end=1.0))
        assert np.max(np.abs(traj.final[:3] - traj.final[3:])) <= 1e-12

    def test_agrees_with_spectral(self, basis32, line_domain, prm):
        g0 = smooth_state(basis32)
        nodes = 257
        x = fd_grid(line_domain, nodes)[0]
        np.testing.assert_allclose(basis32.grid(nodes - 2)[0], x, atol=1e-14)
        cfg = IntegratorConfig(dt=1e-3, t_end=1.0, sample_every=100)
        spec = simulate(g0, basis32, prm, cfg)
        fd = fd_reference_simulate(basis32.to_grid(g0.coeffs, nodes - 2), line_domain, prm, cfg)
        u_spec = basis32.to_grid(spec.final.coeffs[0], nodes - 2)
        u_fd = fd.final[0]
        assert np.linalg.norm(u_fd - u_spec) / np.linalg.norm(u_spec) <= 1e-3
        np.testing.assert_allclose(fd.observable("norm_v2z2"), spec.observable("norm_v2z2"),
                                   rtol=1e-3)


def test_synchronized_data_stays_synchronized_under_swap(basis8, prm, rng):
    q = rng.standard_normal((6, 8)) / np.arange(1, 9) ** 2
    cfg = IntegratorConfig(dt=0.01)
    np.testing.assert_allclose(step(swap(q), basis8, prm, cfg), swap(step(q, basis8, prm, cfg)),
                               atol=1e-13)

import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import linalg

from brusselator.bounds import Constant, compute_bound_set
from brusselator.integrate import (GalerkinStepper, IntegratorConfig, galerkin_rhs,
                                   mode_blocks, random_initial_state, simulate)
from brusselator.model import Parameters, reaction_jacobian_pointwise
from brusselator.spectral import DomainSpec, ModalState, build_basis
from brusselator.tangent import (analytic_dimension_bound, dimension_from_B, evolve_tangents,
                                 kaplan_yorke, q3_constant, q3_numeric, qm_average,
                                 rayleigh_quotients, tangent_rhs, tangent_step, trace_qm)

ZERO_FEED = Parameters(a=0.0, allow_zero_feed=True)


def dense_spectrum(basis, prm):
    """All eigenvalues of the per-mode linear blocks, sorted by real part."""
    ev = np.concatenate([linalg.eigvals(B) for B in mode_blocks(basis, prm)])
    return np.sort(ev.real)[::-1]


def orthonormal_set(rng, m, shape):
    flat = rng.standard_normal((int(np.prod(shape)), m))
    Q, _ = np.linalg.qr(flat)
    return Q.T.reshape((m,) + shape)


@pytest.fixture(scope="module")
def attractor_state(basis32):
    prm = Parameters()
    g0 = random_initial_state(basis32, 3.0, np.random.default_rng(11))
    cfg = IntegratorConfig(dt=0.01, t_end=20.0, sample_every=100, adaptive=True)
    return simulate(g0, basis32, prm, cfg).final


class TestTangentRhs:
    def test_zero_base_is_block_linear(self, basis8, prm, rng):
        G = rng.standard_normal((6, 8))
        expected = np.einsum("jab,bj->aj", mode_blocks(basis8, prm), G)
        np.testing.assert_allclose(tangent_rhs(np.zeros((6, 8)), G, basis8, prm), expected,
                                   atol=1e-13)
        j0 = reaction_jacobian_pointwise(np.zeros(6), prm)
        np.testing.assert_allclose(expected[:, 0], (j0 - np.diag(prm.diffusivities)) @ G[:, 0])

    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
    def test_linearity(self, alpha, beta_, seed):
        basis = build_basis(DomainSpec((math.pi,)), 8)
        rng = np.random.default_rng(seed)
        q, G1, G2 = rng.standard_normal((3, 6, 8))
        prm = Parameters()
        lhs = tangent_rhs(q, alpha * G1 + beta_ * G2, basis, prm)
        rhs = alpha * tangent_rhs(q, G1, basis, prm) + beta_ * tangent_rhs(q, G2, basis, prm)
        scale = np.max(np.abs(lhs)) + 1
        assert np.max(np.abs(lhs - rhs)) <= 1e-13 * scale

    def test_matches_rhs_derivative(self, basis8, prm, rng):
        q = rng.standard_normal((6, 8)) / np.arange(1, 9)
        G = rng.standard_normal((6, 8))
        eps = 1e-6
        fd = (galerkin_rhs(q + eps * G, basis8, prm)
              - galerkin_rhs(q - eps * G, basis8, prm)) / (2 * eps)
        np.testing.assert_allclose(tangent_rhs(q, G, basis8, prm), fd, rtol=1e-7, atol=1e-7)

    def test_modal_state_in_and_out(self, basis8, prm):
        out = tangent_rhs(ModalState(np.zeros((6, 8))), ModalState(np.ones((6, 8)), 2.0),
                          basis8, prm)
        assert isinstance(out, ModalState) and out.t == 2.0


class TestTangentStep:
    @pytest.mark.parametrize("scheme", ["if_rk2", "if_euler"])
    def test_directional_derivative(self, basis32, attractor_state, scheme, rng):
        prm = Parameters()
        cfg = IntegratorConfig(dt=0.01, scheme=scheme)
        q = attractor_state.coeffs
        G = rng.standard_normal(q.shape) / np.arange(1, 33)
        G /= np.linalg.norm(G)
        eps = 1e-5
        stepper = GalerkinStepper(basis32, prm, cfg)

        def flow(x):
            for i in range(10):
                x, _ = stepper.advance(x, i * cfg.dt)
            return x

        fd = (flow(q + eps * G) - flow(q)) / eps
        _, tan = tangent_step(q, G, basis32, prm, cfg, n_steps=10)
        assert np.linalg.norm(fd - tan) / np.linalg.norm(tan) <= 1e-4

    def test_base_follows_flow(self, basis8, prm, rng):
        cfg = IntegratorConfig(dt=0.01)
        q = rng.standard_normal((6, 8)) / np.arange(1, 9) ** 2
        qt, _ = tangent_step(q, np.zeros((6, 8)), basis8, prm, cfg, n_steps=5)
        stepper = GalerkinStepper(basis8, prm, cfg)
        x = q
        for i in range(5):
            x, _ = stepper.advance(x, i * cfg.dt)
        np.testing.assert_array_equal(qt, x)


class TestLyapunov:
    def test_zero_base_matches_dense_oracle(self, basis8):
        prm = ZERO_FEED
        cfg = IntegratorConfig(dt=0.01, t_end=60.0)
        rep = evolve_tangents(ModalState(np.zeros((6, 8))), 3, basis8, prm, cfg, discard=0.5)
        oracle = dense_spectrum(basis8, prm)[:3]
        np.testing.assert_allclose(rep.exponents, oracle, atol=1e-6)
        np.testing.assert_allclose(rep.qm, np.cumsum(oracle), atol=1e-6)
        assert rep.kaplan_yorke == 0.0
        assert not rep.final.coeffs.any()

    def test_renorm_interval_insensitive(self, basis8):
        cfg = IntegratorConfig(dt=0.01, t_end=30.0)
        prm = ZERO_FEED
        z = ModalState(np.zeros((6, 8)))
        a = evolve_tangents(z, 3, basis8, prm, cfg, renorm_every=10, discard=0.5)
        b = evolve_tangents(z, 3, basis8, prm, cfg, renorm_every=5, discard=0.5)
        assert np.max(np.abs(a.exponents - b.exponents)) <= 1e-3

    def test_renorm_interval_on_attractor(self, line_domain):
        basis = build_basis(line_domain, 16)
        prm = Parameters()
        g0 = random_initial_state(basis, 3.0, np.random.default_rng(5))
        base = simulate(g0, basis, prm, IntegratorConfig(dt=0.01, t_end=20.0,
                                                         sample_every=100)).final
        cfg = IntegratorConfig(dt=0.01, t_end=20.0)
        a = evolve_tangents(base, 4, basis, prm, cfg, renorm_every=10)
        b = evolve_tangents(base, 4, basis, prm, cfg, renorm_every=5)
        assert np.max(np.abs(a.exponents - b.exponents)) <= 1e-3
        assert a.history.shape == (200, 4) and b.history.shape == (400, 4)

    def test_frame_stays_orthonormal(self, basis8, prm):
        rep = evolve_tangents(ModalState(np.zeros((6, 8))), 4, basis8, prm,
                              IntegratorConfig(dt=0.01, t_end=1.0))
        flat = rep.frame.reshape(4, -1)
        np.testing.assert_allclose(flat @ flat.T, np.eye(4), atol=1e-10)

    def test_bad_arguments(self, basis8, prm):
        z = ModalState(np.zeros((6, 8)))
        cfg = IntegratorConfig(dt=0.01, t_end=1.0)
        for kw in ({"m": 0}, {"m": 49}, {"m": 2, "discard": 1.0}, {"m": 2, "renorm_every": 0}):
            with pytest.raises(ValueError):
                evolve_tangents(z, basis=basis8, prm=prm, cfg=cfg, **kw)

    def test_report_serializes(self, basis8, prm):
        rep = evolve_tangents(ModalState(np.zeros((6, 8))), 2, basis8, prm,
                              IntegratorConfig(dt=0.01, t_end=1.0))
        d = json.loads(json.dumps(rep.to_dict()))
        assert len(d["exponents"]) == 2 and d["renorm_every"] == 10


class TestTrace:
    def test_single_mode_example(self, basis8, prm):
        zeta = np.zeros((6, 8))
        zeta[0, 0] = 1.0
        assert trace_qm(np.zeros((6, 8)), zeta, basis8, prm) == pytest.approx(-4.1, rel=1e-14)

    def test_rotation_invariance(self, basis8, prm, rng):
        q = rng.standard_normal((6, 8)) / np.arange(1, 9)
        Z = orthonormal_set(rng, 5, (6, 8))
        R, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        rotated = np.einsum("ab,bij->aij", R, Z)
        t0 = trace_qm(q, Z, basis8, prm)
        assert abs(trace_qm(q, rotated, basis8, prm) - t0) <= 1e-10 * abs(t0)

    def test_additivity(self, basis8, prm, rng):
        q = rng.standard_normal((6, 8)) / np.arange(1, 9)
        Z = orthonormal_set(rng, 6, (6, 8))
        whole = trace_qm(q, Z, basis8, prm)
        parts = trace_qm(q, Z[:2], basis8, prm) + trace_qm(q, Z[2:], basis8, prm)
        assert whole == pytest.approx(parts, rel=1e-12)

    def test_zero_base_matches_dense_rayleigh(self, basis8, prm, rng):
        Z = orthonormal_set(rng, 4, (6, 8))
        blocks = mode_blocks(basis8, prm)
        dense = sum(np.einsum("aj,jab,bj->", z, blocks, z) for z in Z)
        assert trace_qm(np.zeros((6, 8)), Z, basis8, prm) == pytest.approx(dense, abs=1e-8)

    def test_quadratic_form_definition(self, basis8, prm, rng):
        # -sum_i d_i ||grad zeta^i||^2 + int zeta . f'(base) zeta, by quadrature
        q = rng.standard_normal((6, 8)) / np.arange(1, 9) ** 2
        zeta = orthonormal_set(rng, 1, (6, 8))[0]
        x, w = np.polynomial.legendre.leggauss(200)
        x = (x + 1) * np.pi / 2
        w = w * np.pi / 2
        E = np.sqrt(2 / np.pi) * np.sin(np.outer(np.arange(1, 9), x))
        g, zg = q @ E, zeta @ E
        jac = np.moveaxis(reaction_jacobian_pointwise(g, prm), -1, 0)
        reaction = float(np.einsum("ai,iab,bi,i->", zg, jac, zg, w))
        diffusion = -float(prm.diffusivities @ ((zeta**2) @ basis8.eigenvalues))
        assert trace_qm(q, zeta, basis8, prm) == pytest.approx(diffusion + reaction, rel=1e-10)

    def test_rejects_non_orthonormal(self, basis8, prm):
        Z = np.zeros((2, 6, 8))
        Z[0, 0, 0] = Z[1, 0, 0] = 1.0
        with pytest.raises(ValueError, match="Gram defect"):
            trace_qm(np.zeros((6, 8)), Z, basis8, prm)

    def test_list_input(self, basis8, prm):
        a, b = np.zeros((2, 6, 8))
        a[0, 0] = b[1, 0] = 1.0
        t = trace_qm(np.zeros((6, 8)), [ModalState(a), b], basis8, prm)
        assert t == pytest.approx(float(np.sum(rayleigh_quotients(
            np.zeros((6, 8)), np.array([a, b]), basis8, prm))))


class TestQm:
    def test_zero_base_stable_regime(self, basis8):
        cfg = IntegratorConfig(dt=0.01, t_end=100.0)
        res = qm_average(ModalState(np.zeros((6, 8))), basis8, ZERO_FEED, cfg, m_max=4,
                         discard=0.5)
        np.testing.assert_allclose(res.qm, np.cumsum(dense_spectrum(basis8, ZERO_FEED)[:4]),
                                   atol=1e-6)
        assert res.m_star == 1

    def test_default_scenario(self, line_domain):
        basis = build_basis(line_domain, 16)
        prm = Parameters()
        g0 = random_initial_state(basis, 3.0, np.random.default_rng(9))
        base = simulate(g0, basis, prm, IntegratorConfig(dt=0.01, t_end=20.0, sample_every=100,
                                                         adaptive=True))
        cfg = IntegratorConfig(dt=0.01, t_end=20.0, adaptive=True)
        res = qm_average(base, basis, prm, cfg, m_max=8)
        assert res.m_star is not None and res.m_star <= 8
        after = res.qm[res.m_star - 1:]
        assert np.all(np.diff(after) <= 1e-6 * np.abs(after[:-1]).max())
        assert res.stationarity_gap <= 0.1
        assert res.windows.shape == (2, 8)

    def test_ensemble_takes_maximum(self, basis8, prm):
        cfg = IntegratorConfig(dt=0.01, t_end=2.0)
        rng = np.random.default_rng(0)
        bases = [random_initial_state(basis8, 1.0, rng) for _ in range(2)]
        res = qm_average(bases, basis8, prm, cfg, m_max=3)
        np.testing.assert_array_equal(res.qm, res.per_run.max(axis=0))
        assert "lower witness" in res.note

    def test_warns_without_discard(self, basis8, prm):
        with pytest.warns(RuntimeWarning, match="no transient discarded"):
            qm_average(ModalState(np.zeros((6, 8))), basis8, prm,
                       IntegratorConfig(dt=0.01, t_end=1.0), m_max=2, discard=0.0)


class TestKaplanYorke:
    def test_all_negative(self):
        assert kaplan_yorke([-0.1, -1.0, -2.0]) == 0.0

    def test_example(self):
        assert kaplan_yorke([0.5, 0.0, -1.0]) == pytest.approx(2.5)

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=12))
    def test_bracket(self, lam):
        lam = np.sort(np.array(lam))[::-1]
        dky = kaplan_yorke(lam)
        if lam[0] < 0:
            assert dky == 0
            return
        sums = np.cumsum(lam)
        j = int(np.nonzero(sums >= 0)[0][-1]) + 1
        assert j <= dky <= len(lam)
        if j < len(lam):
            assert dky < j + 1

    def test_order_independent(self):
        assert kaplan_yorke([-1.0, 0.5, 0.0]) == kaplan_yorke([0.5, 0.0, -1.0])


class TestQ3:
    def test_zero_k(self):
        assert q3_constant(2, 1.0, 1.0, 0.0, 1.0).value == 0.0
        assert q3_numeric(2, 1.0, 1.0, 0.0, 1.0) == 0.0

    def test_n2_closed_form(self):
        K = 5 * 0.3 * 2.0 * 0.8**2
        d0 = 0.7
        assert q3_constant(2, 0.3, 0.8, 2.0, d0).value == pytest.approx(K**2 / (2 * d0),
                                                                       rel=1e-14)
        s = np.linspace(0, 4 * (K / d0) ** 2, 400001)
        grid = np.max(K * np.sqrt(s) - 0.5 * d0 * s)
        assert grid == pytest.approx(K**2 / (2 * d0), rel=1e-8)

    @given(st.sampled_from([1, 2, 3]), st.floats(0.05, 3), st.floats(0.05, 3),
           st.floats(0.01, 50), st.floats(0.05, 3))
    def test_matches_numeric(self, n, delta, C, q_sum, d0):
        closed = q3_constant(n, delta, C, q_sum, d0).value
        assert q3_numeric(n, delta, C, q_sum, d0) == pytest.approx(closed, rel=1e-8)

    def test_log_space(self):
        huge = Constant("Q", mpmath.mpf(1e6), "")
        q3 = q3_constant(1, 0.7, 0.9, huge, 1.0)
        assert math.isinf(q3.value)
        # n = 1: Q3 = d0 s* 3/2 with s* = (K/(2 d0))^(4/3)
        expected = mpmath.log(1.5) + mpmath.mpf(4) / 3 * (mpmath.log(5 * 0.7 * 0.81 / 2) + 1e6)
        assert abs(q3.log - expected) < 1e-20 * expected

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            q3_constant(4, 1.0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            q3_constant(2, -1.0, 1.0, 1.0, 1.0)


class TestAnalyticBound:
    def test_integer_boundary(self):
        assert dimension_from_B(10.0) == 11
        assert dimension_from_B(10.5) == 11
        assert dimension_from_B(0.0) == 1

    def test_exact_ten(self):
        prm = Parameters()
        bs = compute_bound_set(prm, 1.0, 1.0, 0.7, 0.65, n=2)
        db = analytic_dimension_bound(prm, bs, Qstar=1.0, Q3=2.0)
        assert db.B == 10.0
        assert (db.m, db.d_H, db.d_F) == (11, 11, 22)
        assert db.admits(11) and not db.admits(12)

    def test_monotone(self):
        def m_of(prm, volume):
            bs = compute_bound_set(prm, 1.0, volume, 0.7, 0.65, n=1)
            return analytic_dimension_bound(prm, bs, Q3=3.0).m
        base = Parameters()
        assert m_of(base.replace(b=2.5), math.pi) >= m_of(base, math.pi)
        assert m_of(base.replace(k=4.0), math.pi) >= m_of(base, math.pi)
        assert m_of(base, 10 * math.pi) >= m_of(base, math.pi)
        assert m_of(base, 10 * math.pi) > m_of(base, math.pi)

    def test_default_scenario_is_astronomical(self):
        prm = Parameters()
        bs = compute_bound_set(prm, 1.0, math.pi, 0.70141, 0.65522)
        db = analytic_dimension_bound(prm, bs, C_gn=0.87169)
        assert db.m is None and math.isinf(db.B)
        assert db.log_B > 1e6
        assert db.admits(24)
        d = db.to_dict()
        assert d["m"] is None and float(d["log10_B"]) > 1e5 and d["Qstar"] == 1.0

    def test_requires_inputs(self):
        prm = Parameters()
        bs = compute_bound_set(prm, 1.0, math.pi, 0.7, 0.65)
        with pytest.raises(ValueError):
            analytic_dimension_bound(prm, bs)
        with pytest.raises(ValueError):
            analytic_dimension_bound(prm, bs, Qstar=0.0, Q3=1.0)

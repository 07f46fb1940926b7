import copy
import math

import numpy as np
import pytest
from scipy.integrate import quad

import wildflow.operators as ops
from wildflow.ansatz import (
    AnsatzError,
    BandLimitedField,
    ChiInfeasible,
    PressureLaw,
    SourceMatrix,
    beta_of,
    build_perturbed_density,
    build_piecewise_constant,
    build_piecewise_lipschitz,
    energy_production,
    solve_chi,
    transition_bump,
)
from wildflow.operators import DeviatorField, ScalarField, TorusGrid, VectorField
from wildflow.statespace import StatePoint, hull_margin

J = np.array([[0.0, 1.0], [-1.0, 0.0]])
PLAW = PressureLaw(0.5, 2.0)
GRID = TorusGrid(64, 1.0)


class TestBeta:
    def test_rotation_zero(self):
        assert beta_of(J) == 0.0

    def test_unit_damping(self):
        assert abs(beta_of(-np.eye(2)) - 1.0) < 1e-14

    def test_mixed(self):
        assert abs(beta_of(np.diag([1.0, -3.0])) - 3.0) < 1e-14

    def test_antisymmetric_source_term_vanishes(self):
        rng = np.random.default_rng(0)
        m = rng.normal(size=(2, 100))
        vals = m[0] * (J[0, 0] * m[0] + J[0, 1] * m[1]) + \
            m[1] * (J[1, 0] * m[0] + J[1, 1] * m[1])
        assert np.max(np.abs(vals)) < 1e-14 * np.max(m ** 2)


class TestPressureLaw:
    def test_internal_energy_matches_quadrature(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            a, g = rng.uniform(0.1, 2.0), rng.uniform(1.2, 2.8)
            rho = rng.uniform(0.2, 3.0)
            law = PressureLaw(a, g)
            oracle = rho * quad(lambda r: law.p(r) / r ** 2, 1e-12, rho,
                                limit=200)[0]
            assert abs(law.internal_energy(rho) - oracle) < 1e-8 * max(1, oracle)

    def test_p_zero_at_zero(self):
        assert PLAW.p(0.0) == 0.0
        assert PLAW.dp(1.0) > 0


class TestTransitionBump:
    def test_shape(self):
        h = transition_bump()
        s = np.linspace(-1.3, 1.3, 5001)
        v = h(s)
        assert abs(float(h(np.asarray(0.0))) - 1.0) < 1e-12
        assert np.all(v >= -1e-15) and np.all(v <= 1.0 + 1e-12)
        assert np.max(np.abs(h.derivative()(s))) <= 2.0
        assert v[0] == 0.0 and v[-1] == 0.0

    def test_c6_at_junctions(self):
        h = transition_bump()
        d = h
        for _ in range(6):
            d = d.derivative()
            for t0 in (-1.0, 0.0, 1.0):
                left = float(d(np.asarray(t0 - 1e-9)))
                right = float(d(np.asarray(t0 + 1e-9)))
                assert abs(left - right) < 1e-3 * max(1.0, d.sup_norm())


class TestSolveChi:
    def test_constant_when_rhs_zero(self):
        c = solve_chi("general_source", beta=0.0, eps=0.0, c0=10.0, chi0=0.1)
        assert np.max(np.abs(c.chi - 0.1)) < 1e-14

    def test_monotone_decreasing(self):
        c = solve_chi("general_source", beta=1.0, eps=1e-3, c0=10.0, chi0=0.1)
        assert np.all(np.diff(c.chi) <= 1e-15)
        assert np.all(c.chi > 0)

    def test_richardson(self):
        c1 = solve_chi("general_source", beta=1.0, eps=1e-3, c0=10.0, chi0=0.1)
        c2 = solve_chi("general_source", beta=1.0, eps=1e-3, c0=10.0, chi0=0.1,
                       dt=5e-4)
        assert abs(c1.chi_end - c2.chi_end) < 1e-8

    def test_feasibility_boundary(self):
        solve_chi("general_source", beta=1.0, eps=1e-3, c0=10.0, chi0=0.1)
        with pytest.raises(ChiInfeasible) as e:
            solve_chi("general_source", beta=1.0, eps=1.0, c0=10.0, chi0=0.1)
        assert e.value.blow_down is not None
        assert 0.0 <= e.value.blow_down <= 1.0

    def test_lipschitz_blowdown_reported(self):
        with pytest.raises(ChiInfeasible) as e:
            solve_chi("lipschitz", varrho=1.0, C_coeffs=(2.0, 2.0, 2.0, 2.0),
                      T=3.0, chi0=1.0, p_hat=0.2)
        assert e.value.blow_down is not None

    def test_lipschitz_extends_constant(self):
        c = solve_chi("lipschitz", varrho=0.2, C_coeffs=(0.05, 0.2, 0.5, 0.2),
                      T=0.25, chi0=2.0, p_hat=1.0)
        assert c.chi_end > 1.0
        assert abs(float(c(np.asarray(5.0))) - c.chi_end) < 1e-14

    def test_general_source_exponential_tail(self):
        c = solve_chi("general_source", beta=1.0, eps=1e-4, c0=10.0, chi0=0.1)
        v2 = float(c(np.asarray(2.0)))
        assert abs(v2 - c.chi_end * math.exp(-2.0)) < 1e-12


def two_region_state(seed=5, times=None):
    times = times if times is not None else np.linspace(0, 1, 9)
    return build_piecewise_constant(
        [{"x1": (0.0, 0.5), "rho": 1.0}, {"x1": (0.5, 1.0), "rho": 2.0}],
        2.0, PLAW, SourceMatrix(J), GRID, times, seed=seed)


class TestPiecewiseConstant:
    def test_single_region_equality_case(self):
        # rho = 1, p = rho^2, chi = 1 -> q = 0: the whole domain is inert
        st = build_piecewise_constant([{"x1": (0.0, 1.0), "rho": 1.0}], 1.0,
                                      PressureLaw(1.0, 2.0), SourceMatrix(J),
                                      GRID, np.linspace(0, 1, 5))
        assert st.regions[0].kind == "inert"
        assert st.regions[0].q_bar == 0.0

    def test_two_regions(self):
        st = two_region_state()
        kinds = {r.label: r.kind for r in st.regions}
        assert kinds == {0: "finite", 1: "inert"}
        qs = {r.label: r.q_bar for r in st.regions}
        assert abs(qs[0] - 1.5) < 1e-14 and qs[1] == 0.0
        assert len(st.regions[0].decomp.vertices) == 5

    def test_strictness_is_rho_q(self):
        st = two_region_state()
        assert abs(st.diagnostics["strictness_margin"][0] - 1.5) < 1e-14
        assert abs(hull_margin(StatePoint.zero(2),
                               st.regions[0].params()) - 1.5) < 1e-14

    def test_chi_below_pressure_rejected(self):
        with pytest.raises(AnsatzError):
            build_piecewise_constant([{"x1": (0.0, 1.0), "rho": 2.0}], 1.0,
                                     PLAW, SourceMatrix(J), GRID,
                                     np.linspace(0, 1, 5))

    def test_stationary_production_zero(self):
        st = two_region_state()
        worst, _ = energy_production(st)
        assert abs(worst) < 1e-8


def perturbed_state(eps=1e-3, beta_damping=True, times=None):
    entries = [(1, 0, 4e-5, 0.0), (0, 1, 3e-5, 0.5)]
    rho0 = BandLimitedField.from_real_modes(entries, 1.0)
    rho0.modes[(0, 0)] = 1.0
    src = SourceMatrix(-np.eye(2)) if beta_damping else SourceMatrix(J)
    times = times if times is not None else np.linspace(-0.2, 1.5, 18)
    return build_perturbed_density(rho0, PLAW, src, eps, GRID, times)


class TestPerturbedDensity:
    def test_constant_density_reduces(self):
        rho0 = BandLimitedField({(0, 0): 1.0}, 1.0)
        st = build_perturbed_density(rho0, PLAW, SourceMatrix(-np.eye(2)),
                                     1e-3, GRID, np.linspace(-0.2, 1.5, 10))
        rho, m, U, q = st.snapshot(0.4)
        assert np.max(np.abs(m)) == 0.0
        # q = chi(t) = delta0 e^{-2 beta t} structure after the ODE with eps=0
        assert np.max(np.abs(q - q.flat[0])) < 1e-14

    def test_single_mode_fields(self):
        st = perturbed_state()
        assert st.diagnostics["strictness_margin"] > 0
        assert st.diagnostics["continuity_residual"] < 1e-12

    def test_momentum_residual(self):
        st = perturbed_state()
        t, dt = 0.3, 1e-5
        X, Y = GRID.nodes()
        dtm = (st.base_m_at(t + dt, X, Y) - st.base_m_at(t - dt, X, Y)) / (2 * dt)
        U = st.base_U_at(t, X, Y)
        divU = ops.divergence_of_deviator(DeviatorField(GRID, U)).samples
        rho, m, _, q = st.snapshot(t)
        gpq = ops.spectral_gradient(ScalarField(GRID, PLAW.p(rho) + q)).samples
        B = st.source.B
        Bm = np.stack([B[0, 0] * m[0] + B[0, 1] * m[1],
                       B[1, 0] * m[0] + B[1, 1] * m[1]])
        res = dtm + divU + gpq - Bm
        assert np.max(np.abs(res)) < 1e-8 * max(1.0, float(np.max(np.abs(m))))

    def test_smallness_violation_rejected(self):
        entries = [(1, 0, 0.5, 0.0)]
        rho0 = BandLimitedField.from_real_modes(entries, 1.0)
        rho0.modes[(0, 0)] = 1.0
        with pytest.raises(AnsatzError):
            build_perturbed_density(rho0, PLAW, SourceMatrix(-np.eye(2)),
                                    1e-3, GRID, np.linspace(-0.2, 1.0, 8))

    def test_decay_envelope(self):
        st = perturbed_state()
        kappa = st.diagnostics["decay_kappa"]
        beta = st.source.beta
        X, Y = GRID.nodes()
        rs = st.data["rho_sharp"]
        for t in st.times:
            if t < 0:
                continue
            rho, m, _, _ = st.snapshot(float(t))
            sup = max(float(np.max(np.abs(rho - rs))),
                      float(np.max(np.hypot(m[0], m[1]))))
            assert sup <= kappa * math.exp(-beta * float(t)) + 1e-15

    def test_production_nonpositive_and_ablation(self):
        st = perturbed_state()
        worst, _ = energy_production(st)
        assert worst <= 1e-6
        bad = copy.deepcopy(st)
        bad.chi.chi = bad.chi.chi[::-1].copy()
        bad.chi.dchi = -bad.chi.dchi[::-1].copy()
        worst_bad, _ = energy_production(bad)
        assert worst_bad > 1e-6


class TestPiecewiseLipschitz:
    @pytest.fixture(scope="class")
    def state(self):
        return build_piecewise_lipschitz(
            [{"x1": (0.0, 0.5), "rho": 1.0, "slope": (0.2, 0.1)},
             {"x1": (0.5, 1.0), "rho": 1.5, "slope": (-0.1, 0.05)}],
            PLAW, SourceMatrix(J), T=0.25, vartheta=0.1, grid=GRID,
            times=np.linspace(-0.1, 0.5, 9), cube_cells=16)

    def test_continuity_residual(self, state):
        assert state.diagnostics["continuity_residual"] < 1e-8

    def test_mean_residual_reported(self, state):
        assert state.diagnostics["mean_residual"] < 1e-2

    def test_after_T_piecewise_constant(self, state):
        rho, m, U, q = state.snapshot(0.3)
        assert np.max(np.abs(m)) == 0.0
        assert np.max(np.abs(U)) == 0.0
        # per-cube constants: 16-cell blocks are flat
        assert np.max(np.abs(rho[:16, :16] - rho[0, 0])) < 1e-12

    def test_chi_dominates_pressure(self, state):
        assert state.chi.chi_end > PLAW.p(np.max(state.data["rho_proj"]))

    def test_requires_antisymmetric(self):
        with pytest.raises(AnsatzError):
            build_piecewise_lipschitz(
                [{"x1": (0.0, 1.0), "rho": 1.0, "slope": (0.1, 0.0)}],
                PLAW, SourceMatrix(-np.eye(2)), T=0.25, vartheta=0.1,
                grid=GRID, times=np.linspace(0, 0.5, 5))

    def test_constant_density_reduces_to_piecewise_constant(self):
        st = build_piecewise_lipschitz(
            [{"x1": (0.0, 1.0), "rho": 1.3, "slope": (0.0, 0.0)}],
            PLAW, SourceMatrix(J), T=0.25, vartheta=0.1, grid=GRID,
            times=np.linspace(-0.1, 0.5, 7), cube_cells=16)
        rho, m, U, q = st.snapshot(0.1)
        assert np.max(np.abs(m)) < 1e-12
        assert np.max(np.abs(rho - 1.3)) < 1e-12

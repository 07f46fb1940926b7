import numpy as np
import pytest
from scipy.integrate import quad

from wildflow.profiles import (
    PeriodicProfile,
    PiecewisePoly,
    antiderivative_tower,
    build_cutoff,
    build_square_profile,
    plateau_bump,
    ramp_poly,
    smootherstep_coeffs,
)

RNG = np.random.default_rng(42)


def test_smootherstep_endpoints_and_symmetry():
    c = smootherstep_coeffs(6)
    p = PiecewisePoly(np.array([0.0, 1.0]), [c])
    u = RNG.uniform(0, 1, 200)
    assert abs(p(np.array([1.0]))[0] - 1.0) < 1e-12
    assert np.max(np.abs(p(u) + p(1 - u) - 1.0)) < 5e-12
    d = p
    for j in range(1, 7):
        d = d.derivative()
        assert abs(d(np.array([0.0]))[0]) < 1e-9
        assert abs(d(np.array([1.0]))[0]) < 1e-9


def test_square_profile_bounds_mean_measure():
    h0 = build_square_profile(0.7, 0.3, 0.01)
    s = np.linspace(0, 1, 20001)
    vals = h0(s)
    assert np.all(vals <= 0.7 + 1e-12)
    assert np.all(vals >= -0.3 - 1e-12)
    assert abs(h0.mean()) < 1e-15
    # differs from the square wave only on the ramp measure < delta
    square = np.where((s > 0) & (s <= 0.7), -0.3, 0.7)
    frac_diff = np.mean(np.abs(vals - square) > 1e-9)
    assert frac_diff < 0.01 + 2e-4  # breakpoint arithmetic: 4*delta/5 = 0.008


def test_square_profile_symmetric_case_odd():
    h0 = build_square_profile(0.5, 0.5, 0.02)
    s = RNG.uniform(0, 0.5, 300)
    # odd symmetry about s = 1/2 up to the sign convention of the plateaus
    assert np.max(np.abs(h0(0.5 + s) + h0(0.5 - s))) < 1e-12
    assert abs(h0.mean()) < 1e-15


def test_square_profile_infeasible_delta():
    with pytest.raises(ValueError):
        build_square_profile(0.7, 0.3, 0.3)


def test_tower_means_derivatives_sup():
    h0 = build_square_profile(0.6, 0.4, 0.02)
    tower = antiderivative_tower(h0, depth=6)
    sup0 = h0.sup_norm()
    prev = h0
    for hk in tower:
        assert abs(hk.mean()) < 1e-15
        assert hk.sup_norm() <= sup0 + 1e-12
        s = RNG.uniform(0, 1, 1000)
        mask = np.ones_like(s, dtype=bool)
        for b in hk.breakpoints:
            mask &= np.abs(s - b) > 1e-6
        dv = hk.derivative()(s[mask])
        ref = prev(s[mask])
        denom = max(1.0, np.max(np.abs(ref)))
        assert np.max(np.abs(dv - ref)) / denom < 1e-12
        prev = hk


def test_h6_matches_quadrature_of_h5():
    h0 = build_square_profile(0.5, 0.5, 0.02)
    tower = antiderivative_tower(h0, depth=6)
    h5, h6 = tower[4], tower[5]
    c0 = quad(lambda t: h5(t), 0, 1, limit=400)[0]
    pts = RNG.uniform(0, 1, 50)
    offset = h6(0.0)
    for s in pts:
        ref = quad(lambda t: h5(t), 0, s, limit=400, points=h5.breakpoints[1:-1])[0]
        assert abs((h6(s) - offset) - ref) < 1e-12


def test_cutoff_support_plateau_and_measure():
    box = [(-1.0, 1.0), (0.0, 2.0), (0.5, 1.5)]
    phi = build_cutoff(box, inner_fraction=0.8)
    inner = phi.inner_box()
    z_in = np.array([[np.mean(b) for b in inner]])
    assert abs(phi(z_in)[0] - 1.0) < 1e-15
    z_out = np.array([[-1.2, 1.0, 1.0], [0.0, 2.3, 1.0], [0.0, 1.0, 0.2]])
    assert np.max(np.abs(phi(z_out))) == 0.0
    vol = 2.0 * 2.0 * 1.0
    assert abs(phi.measure_not_one() - vol * (1 - 0.8 ** 3)) < 1e-14
    # all partials of total order <= 7 vanish on the plateau
    assert abs(phi.eval_deriv((6, 0, 0), z_in)[0]) == 0.0
    assert abs(phi.eval_deriv((2, 3, 2), z_in)[0]) == 0.0


def test_cutoff_derivative_vs_finite_differences():
    phi = build_cutoff([(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)], inner_fraction=0.6)
    z0 = np.array([[0.08, 0.5, 0.5]])  # inside the time ramp
    analytic = phi.eval_deriv((1, 0, 0), z0)[0]
    # order-8 central differences at shrinking h
    w = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        zs = np.repeat(z0, 9, axis=0)
        zs[:, 0] += h * np.arange(-4, 5)
        fd = float(w @ phi(zs)) / h
        errs.append(abs(fd - analytic))
    assert errs[-1] < 1e-9 * max(1.0, abs(analytic))


def test_cutoff_inner_fraction_limit():
    base = [(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)]
    m1 = build_cutoff(base, 0.99).measure_not_one()
    m2 = build_cutoff(base, 0.9).measure_not_one()
    assert m1 < m2


def test_profile_json_roundtrip():
    h0 = build_square_profile(0.6, 0.4, 0.02)
    h0b = PeriodicProfile.from_json(h0.to_json())
    s = RNG.uniform(0, 1, 100)
    assert np.max(np.abs(h0(s) - h0b(s))) == 0.0


def test_plateau_intervals_exact():
    h0 = build_square_profile(0.7, 0.3, 0.01)
    ivals = h0.plateau_intervals()
    vals = sorted(v for _, _, v in ivals)
    assert len(ivals) == 2
    assert abs(vals[0] + 0.3) < 1e-14 and abs(vals[1] - 0.7) < 1e-14
    total = sum(b - a for a, b, _ in ivals)
    assert abs(total - (1 - 4 * 0.01 / 5)) < 1e-12

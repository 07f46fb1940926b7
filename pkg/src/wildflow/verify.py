"""Independent verification from field dumps.

Consumes only the dump directory (raw nodal fields + JSON sidecars), never
builder internals: weak-form residuals of the mass/momentum system including
the Cauchy pairing, the admissibility (energy) inequality with the
q-saturated energy density, and nodal constraint-distance / hull-margin maps.
Test functions are tensor products of plateau ramps in time and trigonometric
polynomials in space, with analytic derivatives; space quadrature is the
torus trapezoid rule (spectrally accurate for resolved fields), time
quadrature is Gauss-Legendre against piecewise-cubic field interpolants.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .operators import TorusGrid, load_field
from .profiles import PiecewisePoly, plateau_bump
from .statespace import ConstraintParams, StatePoint, dist_to_K

__all__ = [
    "VerifyError",
    "TestFunction",
    "TestFunctionFamily",
    "FieldDump",
    "weak_residual",
    "admissibility_residual",
    "constraint_field",
    "write_report",
]


class VerifyError(RuntimeError):
    pass


@dataclass
class TestFunction:
    """psi(x, t) = time_poly(t) * spatial trig mode; analytic derivatives."""

    time_poly: PiecewisePoly
    kx: int
    ky: int
    parity: str           # 'cos' | 'sin'
    length: float
    name: str = ""
    vector_axis: int = None   # None: scalar; 0/1: e_axis * psi

    def _trig(self, X, Y, dx=0, dy=0):
        w = 2 * np.pi / self.length
        phase = w * (self.kx * X + self.ky * Y)
        order = dx + dy
        coef = (w * self.kx) ** 0 if dx == 0 else (w * self.kx) ** dx
        coef = coef * ((w * self.ky) ** dy if dy else 1.0)
        if self.parity == "cos":
            fn = [np.cos, lambda z: -np.sin(z), lambda z: -np.cos(z),
                  np.sin][order % 4]
        else:
            fn = [np.sin, np.cos, lambda z: -np.sin(z),
                  lambda z: -np.cos(z)][order % 4]
        return coef * fn(phase)

    def value(self, t, X, Y):
        return float(self.time_poly(np.asarray(t))) * self._trig(X, Y)

    def dt(self, t, X, Y):
        return float(self.time_poly.derivative()(np.asarray(t))) * self._trig(X, Y)

    def grad(self, t, X, Y):
        tp = float(self.time_poly(np.asarray(t)))
        return tp * self._trig(X, Y, dx=1), tp * self._trig(X, Y, dy=1)

    def c2_norm(self, grid: TorusGrid) -> float:
        w = 2 * np.pi / self.length
        tp = self.time_poly
        sup_t = max(tp.sup_norm(), tp.derivative().sup_norm())
        k = math.hypot(self.kx, self.ky) * w
        return sup_t * max(1.0, k, k * k)

    def time_at(self, t) -> float:
        return float(self.time_poly(np.asarray(t)))

    def supported_at(self, t) -> bool:
        return (self.time_poly.breaks[0] <= t <= self.time_poly.breaks[-1])


@dataclass
class TestFunctionFamily:
    members: list

    @classmethod
    def default(cls, length: float, t0: float, t1: float, modes=None,
                interior_only: bool = False):
        """3 spatial modes x 2 temporal ramps x 2 parities (12 members).

        Temporal parts: a plateau touching t = 0 (Cauchy pairing active) and
        one compactly inside (0, t1) (interior tests); interior_only keeps
        just the latter (used by the admissibility equality case).
        """
        modes = modes or [(1, 0), (0, 1), (1, 1)]
        members = []
        span = t1 - max(t0, 0.0)
        cauchy = _time_plateau_touching_zero(max(t0, 0.0), t1)
        interior = plateau_bump(max(t0, 0.0) + 0.15 * span, t1 - 0.15 * span,
                                0.25 * span)
        time_parts = [("interior", interior)] if interior_only else \
            [("cauchy", cauchy), ("interior", interior)]
        for kx, ky in modes:
            for tname, tp in time_parts:
                for parity in ("cos", "sin"):
                    members.append(TestFunction(
                        tp, kx, ky, parity, length,
                        name=f"{tname}_k{kx}{ky}_{parity}"))
        return cls(members)

    @classmethod
    def nonnegative(cls, length: float, t0: float, t1: float, modes=None,
                    interior_only: bool = False):
        """Non-negative family: 1 + 0.9 cos/sin modes, same time parts."""
        base = cls.default(length, t0, t1, modes, interior_only)
        out = []
        for m in base.members:
            out.append(NonnegativeTest(m))
        return cls(out)


@dataclass
class NonnegativeTest:
    """phi = time_poly * (1 + 0.9 * trig): non-negative, compact support."""

    inner: TestFunction

    @property
    def name(self):
        return "nn_" + self.inner.name

    def value(self, t, X, Y):
        tp = float(self.inner.time_poly(np.asarray(t)))
        return tp * (1.0 + 0.9 * self.inner._trig(X, Y))

    def dt(self, t, X, Y):
        tp = float(self.inner.time_poly.derivative()(np.asarray(t)))
        return tp * (1.0 + 0.9 * self.inner._trig(X, Y))

    def grad(self, t, X, Y):
        tp = float(self.inner.time_poly(np.asarray(t)))
        return (tp * 0.9 * self.inner._trig(X, Y, dx=1),
                tp * 0.9 * self.inner._trig(X, Y, dy=1))

    def c2_norm(self, grid):
        return 2.0 * self.inner.c2_norm(grid)

    def time_at(self, t) -> float:
        return self.inner.time_at(t)

    def supported_at(self, t):
        return self.inner.supported_at(t)


def _time_plateau_touching_zero(t0: float, t1: float) -> PiecewisePoly:
    """1 on [t0, ~60%], C^6 descent to 0 before t1 (phi(0) = 1)."""
    ramp = plateau_bump(t0 - (t1 - t0), t1 - 0.05 * (t1 - t0),
                        0.35 * (t1 - t0))
    # restrict: definition already 1 at t0 (inside its plateau)
    return ramp


@dataclass
class FieldDump:
    """Nodal (rho, m, U, q) time series loaded from a dump directory."""

    directory: str
    grid: TorusGrid
    times: np.ndarray
    rho: np.ndarray       # (T, N, N)
    m: np.ndarray         # (T, 2, N, N)
    U: np.ndarray         # (T, 2, N, N) deviator (U11, U12)
    q: np.ndarray
    meta: dict

    @classmethod
    def load(cls, directory: str):
        with open(os.path.join(directory, "fields.json")) as fh:
            meta = json.load(fh)
        grid = TorusGrid(meta["resolution"], meta["length"])
        times = np.asarray(meta["times"], dtype=float)
        T, N = len(times), grid.resolution
        rho = np.empty((T, N, N))
        m = np.empty((T, 2, N, N))
        U = np.empty((T, 2, N, N))
        q = np.empty((T, N, N))
        for i in range(T):
            rho[i], rmeta = load_field(directory, f"rho_t{i:04d}")
            if abs(rmeta["time"] - times[i]) > 1e-12:
                raise VerifyError(
                    f"metadata mismatch: slice {i} sidecar time {rmeta['time']}"
                    f" != {times[i]}")
            marr, _ = load_field(directory, f"m_t{i:04d}")
            m[i] = marr
            uarr, _ = load_field(directory, f"U_t{i:04d}")
            U[i] = uarr
            q[i], _ = load_field(directory, f"q_t{i:04d}")
        return cls(directory, grid, times, rho, m, U, q, meta)

    def at(self, i: int):
        return self.rho[i], self.m[i], self.U[i], self.q[i]

    def interp(self, arrs, t: float):
        """Piecewise-cubic (Catmull-Rom) interpolation of a field stack."""
        ts = self.times
        i = int(np.clip(np.searchsorted(ts, t) - 1, 0, len(ts) - 2))
        t0, t1 = ts[i], ts[i + 1]
        s = (t - t0) / (t1 - t0)
        p1, p2 = arrs[i], arrs[i + 1]
        p0 = arrs[max(i - 1, 0)]
        p3 = arrs[min(i + 2, len(ts) - 1)]
        return (p1 + 0.5 * s * (p2 - p0 + s * (2 * p0 - 5 * p1 + 4 * p2 - p3
                + s * (3 * (p1 - p2) + p3 - p0))))


def _space_integral(grid: TorusGrid, values: np.ndarray) -> float:
    return float(np.sum(values) * grid.cell_measure)


def _time_quadrature(fn, t_lo, t_hi, n_intervals, order=4):
    glx, glw = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(t_lo, t_hi, n_intervals + 1)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        for x, w in zip(glx, glw):
            total += half * w * fn(mid + half * x)
    return total


def weak_residual(dump: FieldDump, family: TestFunctionFamily, plaw, B,
                  refine: int = 1):
    """Weak-form residuals (continuity, momentum) per test function.

    The dumped quadruple solves the relaxed linear system, so the momentum
    flux is U + (p(rho) + q) I; for a saturated output this coincides with
    the m x m / rho + p I form of the weak-solution definition.  Values are
    normalized by the test's C2 norm times the field scale.
    """
    grid = dump.grid
    X, Y = grid.nodes()
    B = np.asarray(B, dtype=float)
    t0, t1 = float(dump.times[0]), float(dump.times[-1])
    results = []
    n_int = max(24, 6 * (len(dump.times) - 1)) * refine
    for tf in family.members:
        def cont_integrand(t):
            rho = dump.interp(dump.rho, t)
            m = dump.interp(dump.m, t)
            dphi = tf.dt(t, X, Y)
            gx, gy = tf.grad(t, X, Y)
            return _space_integral(grid, rho * dphi + m[0] * gx + m[1] * gy)

        def mom_integrand(t, axis):
            m = dump.interp(dump.m, t)
            U = dump.interp(dump.U, t)
            q = dump.interp(dump.q, t)
            rho = dump.interp(dump.rho, t)
            dphi = tf.dt(t, X, Y)
            gx, gy = tf.grad(t, X, Y)
            phi = tf.value(t, X, Y)
            p_tot = plaw.p(rho) + q
            U_full = (np.stack([np.stack([U[0], U[1]]),
                                np.stack([U[1], -U[0]])]))
            row0 = U_full[axis, 0] + (p_tot if axis == 0 else 0)
            row1 = U_full[axis, 1] + (p_tot if axis == 1 else 0)
            Bm = B[axis, 0] * m[0] + B[axis, 1] * m[1]
            return _space_integral(
                grid, m[axis] * dphi + row0 * gx + row1 * gy + phi * Bm)

        lo = max(t0, 0.0)
        cont = _time_quadrature(cont_integrand, lo, t1, n_int)
        mom0 = _time_quadrature(lambda t: mom_integrand(t, 0), lo, t1, n_int)
        mom1 = _time_quadrature(lambda t: mom_integrand(t, 1), lo, t1, n_int)
        # Cauchy pairing at t = 0 (or the window start)
        i0 = int(np.argmin(np.abs(dump.times - max(0.0, t0))))
        rho0 = dump.rho[i0]
        m0 = dump.m[i0]
        tt0 = float(dump.times[i0])
        cont += _space_integral(grid, rho0 * tf.value(tt0, X, Y))
        mom0 += _space_integral(grid, m0[0] * tf.value(tt0, X, Y))
        mom1 += _space_integral(grid, m0[1] * tf.value(tt0, X, Y))
        scale = (tf.c2_norm(grid) *
                 max(1.0, float(np.max(np.abs(dump.rho))),
                     float(np.max(np.abs(dump.m)))))
        results.append({
            "test": tf.name,
            "continuity": abs(cont) / scale,
            "momentum": math.hypot(mom0, mom1) / scale,
        })
    return results


def admissibility_residual(dump: FieldDump, family: TestFunctionFamily, plaw,
                           B, refine: int = 1):
    """Left side of the energy inequality per non-negative test function.

    Uses the q-saturated energy density E = I(rho) + n q / 2 (the regime the
    scheme's outputs inhabit); admissible iff every value >= -tolerance.
    """
    grid = dump.grid
    X, Y = grid.nodes()
    B = np.asarray(B, dtype=float)
    t0, t1 = float(dump.times[0]), float(dump.times[-1])
    n = 2
    results = []
    n_int = max(24, 6 * (len(dump.times) - 1)) * refine
    for tf in family.members:
        def integrand(t):
            rho = dump.interp(dump.rho, t)
            m = dump.interp(dump.m, t)
            q = dump.interp(dump.q, t)
            E = plaw.internal_energy(rho) + n * q / 2.0
            dphi = tf.dt(t, X, Y)
            gx, gy = tf.grad(t, X, Y)
            phi = tf.value(t, X, Y)
            fscale = (E + plaw.p(rho)) / rho
            Bm0 = B[0, 0] * m[0] + B[0, 1] * m[1]
            Bm1 = B[1, 0] * m[0] + B[1, 1] * m[1]
            src = (m[0] * Bm0 + m[1] * Bm1) / rho
            return _space_integral(
                grid, E * dphi + fscale * (m[0] * gx + m[1] * gy) + src * phi)

        lo = max(0.0, t0)
        val = _time_quadrature(integrand, lo, t1, n_int)
        i0 = int(np.argmin(np.abs(dump.times - lo)))
        rho0 = dump.rho[i0]
        m0 = dump.m[i0]
        E0 = plaw.internal_energy(rho0) + (m0[0] ** 2 + m0[1] ** 2) / (2 * rho0)
        tt0 = float(dump.times[i0])
        phi0 = tf.value(tt0, X, Y)
        initial = _space_integral(grid, E0 * phi0)
        scale = tf.c2_norm(grid) * max(1.0, float(np.max(np.abs(dump.q))),
                                       float(np.max(np.abs(dump.rho))))
        results.append({
            "test": tf.name,
            "value": (val + initial) / scale,
            "interior": abs(tf.time_at(tt0)) < 1e-14,
        })
    return results


def constraint_field(dump: FieldDump, slice_index: int):
    """Nodal dist-to-K and hull-margin maps for one time slice."""
    rho, m, U, q = dump.at(slice_index)
    N = dump.grid.resolution
    a, b = m
    u11, u12 = U
    A11 = rho * q + rho * u11 - a * a
    A12 = rho * u12 - a * b
    A22 = rho * q - rho * u11 - b * b
    tr = A11 + A22
    det = A11 * A22 - A12 * A12
    margin = 0.5 * (tr - np.sqrt(np.maximum(tr * tr - 4 * det, 0.0)))
    dist = np.zeros((N, N))
    stride = max(1, N // 64)
    for i in range(0, N, stride):
        for j in range(0, N, stride):
            w = StatePoint(np.array([a[i, j], b[i, j]]),
                           np.array([[u11[i, j], u12[i, j]],
                                     [u12[i, j], -u11[i, j]]]))
            params = ConstraintParams(max(rho[i, j], 1e-12),
                                      max(q[i, j], 0.0))
            dist[i:i + stride, j:j + stride] = dist_to_K(w, params, coarse=256)
    return {
        "margin_min": float(np.min(margin)),
        "margin_mean": float(np.mean(margin)),
        "dist_max": float(np.max(dist)),
        "dist_mean": float(np.mean(dist)),
        "margin": margin,
        "dist": dist,
    }


def write_report(path: str, weak, admis, tolerances: dict, cauchy=None):
    """JSON verification report with per-test residuals and pass flags."""
    report = {
        "tolerances": tolerances,
        "weak": weak,
        "admissibility": admis,
        "admissibility_cauchy": cauchy or [],
        "pass": {
            "weak": all(max(r["continuity"], r["momentum"])
                        <= tolerances["weak"] for r in weak),
            "admissibility": all(r["value"] >= -tolerances["admissibility"]
                                 for r in admis),
        },
    }
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1)
    return report

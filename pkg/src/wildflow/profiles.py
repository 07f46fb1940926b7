"""Exact piecewise-polynomial oscillation profiles and plateau cutoffs.

Everything the wave construction consumes (the square-wave smoothing h0, its
antiderivative tower h1..h6, and the space-time plateau cutoffs) is stored as
piecewise polynomials with closed-form coefficients so that derivatives and
integrals are exact up to rounding, never discretization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PiecewisePoly",
    "PeriodicProfile",
    "PlateauCutoff",
    "smootherstep_coeffs",
    "ramp_poly",
    "plateau_bump",
    "build_square_profile",
    "antiderivative_tower",
    "build_cutoff",
]


def smootherstep_coeffs(order: int) -> np.ndarray:
    """Coefficients (ascending powers) of the C^order monotone ramp on [0,1].

    S_N(u) = sum_k (-1)^k C(N+k,k) C(2N+1,N-k) u^(N+k+1); degree 2N+1,
    S(0)=0, S(1)=1, with N vanishing derivatives at both ends and
    S(u) + S(1-u) = 1.
    """
    n = order
    c = np.zeros(2 * n + 2)
    for k in range(n + 1):
        c[n + k + 1] = (-1) ** k * math.comb(n + k, k) * math.comb(2 * n + 1, n - k)
    return c


def _poly_eval(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=float)
    for c in coeffs[::-1]:
        out = out * x + c
    return out


def _poly_affine(coeffs: np.ndarray, a: float, b: float) -> np.ndarray:
    """Coefficients of p(a*t + b) in ascending powers of t."""
    out = np.zeros(len(coeffs))
    # Horner in the polynomial ring: out = out*(a t + b) + c_k
    for c in coeffs[::-1]:
        shifted = np.zeros(len(coeffs))
        shifted[1:] = out[:-1] * a
        shifted += out * b
        shifted[0] += c
        out = shifted
    return out


@dataclass
class PiecewisePoly:
    """Piecewise polynomial; piece i covers [breaks[i], breaks[i+1]).

    Coefficients are ascending powers of the local variable s - breaks[i].
    Periodic polys live on [0, 1); non-periodic ones evaluate to 0 outside
    their breakpoint range.
    """

    breaks: np.ndarray
    coeffs: list = field(default_factory=list)
    periodic: bool = False

    def __post_init__(self):
        self.breaks = np.asarray(self.breaks, dtype=float)
        self.coeffs = [np.asarray(c, dtype=float) for c in self.coeffs]

    @property
    def degree(self) -> int:
        return max(len(c) - 1 for c in self.coeffs)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        scalar = s.ndim == 0
        s = np.atleast_1d(s)
        if self.periodic:
            period = self.breaks[-1] - self.breaks[0]
            s = self.breaks[0] + np.mod(s - self.breaks[0], period)
        idx = np.searchsorted(self.breaks, s, side="right") - 1
        idx = np.clip(idx, 0, len(self.coeffs) - 1)
        out = np.zeros_like(s)
        for i, c in enumerate(self.coeffs):
            sel = idx == i
            if np.any(sel):
                out[sel] = _poly_eval(c, s[sel] - self.breaks[i])
        if not self.periodic:
            out[(s < self.breaks[0]) | (s > self.breaks[-1])] = 0.0
        return out[0] if scalar else out

    def derivative(self) -> "PiecewisePoly":
        dc = []
        for c in self.coeffs:
            if len(c) == 1:
                dc.append(np.zeros(1))
            else:
                dc.append(c[1:] * np.arange(1, len(c)))
        return PiecewisePoly(self.breaks.copy(), dc, self.periodic)

    def antiderivative(self) -> "PiecewisePoly":
        """Continuous antiderivative vanishing at breaks[0]."""
        ac = []
        acc = 0.0
        for i, c in enumerate(self.coeffs):
            a = np.zeros(len(c) + 1)
            a[1:] = c / np.arange(1, len(c) + 1)
            a[0] = acc
            width = self.breaks[i + 1] - self.breaks[i]
            acc = _poly_eval(a, np.asarray(width)).item()
            ac.append(a)
        return PiecewisePoly(self.breaks.copy(), ac, self.periodic)

    def integral(self) -> float:
        total = 0.0
        for i, c in enumerate(self.coeffs):
            width = self.breaks[i + 1] - self.breaks[i]
            p = width
            for k, ck in enumerate(c):
                total += ck * p / (k + 1)
                p *= width
        return total

    def shifted(self, const: float) -> "PiecewisePoly":
        cc = [c.copy() for c in self.coeffs]
        for c in cc:
            c[0] += const
        return PiecewisePoly(self.breaks.copy(), cc, self.periodic)

    def sup_norm(self, samples_per_piece: int = 64) -> float:
        vals = []
        for i in range(len(self.coeffs)):
            s = np.linspace(self.breaks[i], self.breaks[i + 1], samples_per_piece)
            vals.append(np.max(np.abs(self(s))))
        return float(max(vals))

    def to_dict(self) -> dict:
        return {
            "breaks": self.breaks.tolist(),
            "coeffs": [c.tolist() for c in self.coeffs],
            "periodic": self.periodic,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewisePoly":
        return cls(np.asarray(d["breaks"]), [np.asarray(c) for c in d["coeffs"]],
                   d["periodic"])


def ramp_poly(order: int = 6) -> PiecewisePoly:
    """Monotone C^order ramp: 0 for s<=0, smootherstep on [0,1], 1 for s>=1."""
    return PiecewisePoly(
        np.array([0.0, 1.0]), [smootherstep_coeffs(order)], periodic=False
    )


def plateau_bump(lo: float, hi: float, ramp_width: float, order: int = 6) -> PiecewisePoly:
    """1-D plateau: 0 outside [lo,hi], 1 on [lo+w, hi-w], C^order ramps."""
    w = ramp_width
    if not (0 < 2 * w < hi - lo):
        raise ValueError("ramp width must satisfy 0 < 2w < hi - lo")
    S = smootherstep_coeffs(order)
    up = _poly_affine(S, 1.0 / w, 0.0)            # local var t = s - lo
    down = _poly_affine(S, -1.0 / w, 1.0)         # local var t = s - (hi - w)
    return PiecewisePoly(
        np.array([lo, lo + w, hi - w, hi]),
        [up, np.array([1.0]), down],
        periodic=False,
    )


@dataclass
class PeriodicProfile:
    """1-periodic oscillation profile with exact polynomial pieces."""

    poly: PiecewisePoly
    mu1: float = 0.5
    mu2: float = 0.5
    delta: float = 0.0

    def __call__(self, s):
        return self.poly(s)

    @property
    def breakpoints(self) -> np.ndarray:
        return self.poly.breaks

    @property
    def degree(self) -> int:
        return self.poly.degree

    def mean(self) -> float:
        return self.poly.integral()

    def derivative(self) -> "PeriodicProfile":
        return PeriodicProfile(self.poly.derivative(), self.mu1, self.mu2, self.delta)

    def sup_norm(self) -> float:
        return self.poly.sup_norm()

    def plateau_intervals(self, shrink: float = 0.0):
        """Phase intervals where the profile is exactly constant.

        Returns [(a, b, value), ...] with a,b in [0,1); shrink trims each end.
        """
        out = []
        for i, c in enumerate(self.poly.coeffs):
            if len(c) == 1 or np.all(c[1:] == 0.0):
                a, b = self.poly.breaks[i], self.poly.breaks[i + 1]
                a2, b2 = a + shrink * (b - a), b - shrink * (b - a)
                if b2 > a2:
                    out.append((a2, b2, float(c[0])))
        return out

    def to_json(self) -> str:
        return json.dumps({"poly": self.poly.to_dict(), "mu1": self.mu1,
                           "mu2": self.mu2, "delta": self.delta})

    @classmethod
    def from_json(cls, s: str) -> "PeriodicProfile":
        d = json.loads(s)
        return cls(PiecewisePoly.from_dict(d["poly"]), d["mu1"], d["mu2"], d["delta"])


def build_square_profile(mu1: float, mu2: float, delta: float, order: int = 6) -> PeriodicProfile:
    """Smooth the mean-zero square wave (-mu2 on (0,mu1], mu1 on (mu1,1]).

    The two jumps are replaced by symmetric C^order ramps of half-width
    delta/5, so the profile differs from the square wave on measure 4*delta/5
    < delta, keeps -mu2 <= h0 <= mu1, and has exact zero mean (the symmetric
    ramps preserve the piecewise means; the rounding residue is removed by a
    constant shift at machine level).
    """
    if not (0 < mu1 < 1 and 0 < mu2 < 1):
        raise ValueError("mu1, mu2 must lie in (0,1)")
    if abs(mu1 + mu2 - 1.0) > 1e-12:
        raise ValueError("mu1 + mu2 must equal 1")
    if not (0 < delta < min(mu1, mu2) / 2):
        raise ValueError("delta must lie in (0, min(mu1,mu2)/2)")
    w = delta / 5.0
    amp = mu1 + mu2
    S = smootherstep_coeffs(order)

    # Descending ramp centered at the 0/1 jump, ascending at the mu1 jump.
    # Piece-local polynomials via affine composition of the smootherstep.
    def _affine_ramp(base, sign, a, b):
        comp = _poly_affine(S, a, b)
        out = -amp * comp if sign < 0 else amp * comp
        out[0] += base
        return out

    pieces = [
        _affine_ramp(mu1, -1, 1.0 / (2 * w), 0.5),        # [0, w]
        np.array([-mu2]),                                  # [w, mu1-w]
        _affine_ramp(-mu2, +1, 1.0 / (2 * w), 0.0),        # [mu1-w, mu1+w]
        np.array([mu1]),                                   # [mu1+w, 1-w]
        _affine_ramp(mu1, -1, 1.0 / (2 * w), 0.0),         # [1-w, 1]
    ]
    breaks = np.array([0.0, w, mu1 - w, mu1 + w, 1.0 - w, 1.0])
    poly = PiecewisePoly(breaks, pieces, periodic=True)
    poly = poly.shifted(-poly.integral())
    poly = poly.shifted(-poly.integral())  # second pass kills the rounding residue
    return PeriodicProfile(poly, mu1=mu1, mu2=mu2, delta=delta)


def antiderivative_tower(h0: PeriodicProfile, depth: int = 6) -> list:
    """h1..h_depth with h_{k+1}(s) = int_0^s h_k - mean, all mean-zero."""
    if abs(h0.mean()) > 1e-13 * max(1.0, h0.sup_norm()):
        raise ValueError("h0 must have zero mean")
    tower = []
    cur = h0.poly
    for _ in range(depth):
        anti = cur.antiderivative()
        anti = anti.shifted(-anti.integral())
        tower.append(PeriodicProfile(anti, h0.mu1, h0.mu2, h0.delta))
        cur = anti
    return tower


@dataclass
class PlateauCutoff:
    """Tensor-product space-time plateau cutoff on an axis-aligned box.

    phi = prod_d eta_d(z_d) with each eta_d a 1-D C^order plateau; phi == 1 on
    the inner box (per-axis fraction inner_fraction), 0 outside the box, and
    all partials through total order 7 are continuous and exactly evaluable.
    """

    box: list                      # [(lo, hi)] per axis, axis 0 = time
    inner_fraction: float
    order: int = 6
    factors: list = field(default_factory=list)
    _derivs: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not (0 < self.inner_fraction < 1):
            raise ValueError("inner_fraction must lie in (0,1)")
        if not self.factors:
            self.factors = []
            for (lo, hi) in self.box:
                w = (1.0 - self.inner_fraction) * (hi - lo) / 2.0
                self.factors.append(plateau_bump(lo, hi, w, self.order))

    def _factor_deriv(self, axis: int, k: int) -> PiecewisePoly:
        key = (axis, k)
        if key not in self._derivs:
            p = self.factors[axis]
            for _ in range(k):
                p = p.derivative()
            self._derivs[key] = p
        return self._derivs[key]

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.eval_deriv((0,) * len(self.box), z)

    def eval_deriv(self, orders, z: np.ndarray) -> np.ndarray:
        """Evaluate D^orders phi at points z of shape (m, ndim)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.ones(z.shape[0])
        for axis, k in enumerate(orders):
            out = out * self._factor_deriv(axis, k)(z[:, axis])
        return out

    def measure_not_one(self) -> float:
        vol = 1.0
        for (lo, hi) in self.box:
            vol *= hi - lo
        n1 = len(self.box)
        return vol * (1.0 - self.inner_fraction ** n1)

    def inner_box(self):
        out = []
        for (lo, hi) in self.box:
            w = (1.0 - self.inner_fraction) * (hi - lo) / 2.0
            out.append((lo + w, hi - w))
        return out

    def to_json(self) -> str:
        return json.dumps({"box": self.box, "inner_fraction": self.inner_fraction,
                           "order": self.order})

    @classmethod
    def from_json(cls, s: str) -> "PlateauCutoff":
        d = json.loads(s)
        return cls([tuple(b) for b in d["box"]], d["inner_fraction"], d["order"])


def build_cutoff(box, inner_fraction: float, order: int = 6) -> PlateauCutoff:
    """Plateau cutoff on the space-time box; measure{phi != 1} is exact."""
    return PlateauCutoff([tuple(b) for b in box], inner_fraction, order)

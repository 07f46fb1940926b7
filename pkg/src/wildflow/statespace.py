"""State-space geometry of the differential inclusion.

Points w = (m, U) live in R^n x S0^(nxn) (momentum, trace-free symmetric
momentum-flux deviator).  The constraint manifold

    K_{rho,q} = { (m, U) : |m|^2 = n rho q,  U = m (x) m / rho - q I }

is parametrized by unit vectors xi; its convex hull is characterized by the
matrix inequality  m (x) m - rho U <= rho q I.  This module provides the hull
margin, distances to K, finite extreme-point selections with LP-certified
interiority, plane-wave directions, and the one-step Lambda-segment split the
iteration scheme uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize

__all__ = [
    "StatePoint",
    "ConstraintParams",
    "WaveDirection",
    "SimplexDecomposition",
    "GeometryError",
    "n_star",
    "k_point",
    "hull_margin",
    "dist_to_K",
    "sample_k",
    "select_extreme_points",
    "lp_membership",
    "wave_direction",
    "plan_wave_step",
]


class GeometryError(ValueError):
    pass


def n_star(n: int) -> int:
    """Number of states in the finite-states solutions: n(n+3)/2."""
    return n * (n + 3) // 2


def state_dim(n: int) -> int:
    return n_star(n) - 1


def _deviator_basis(n: int) -> list:
    """Orthonormal (Frobenius) basis of trace-free symmetric n x n matrices."""
    basis = []
    for i in range(n):
        for j in range(i + 1, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0 / math.sqrt(2.0)
            basis.append(E)
    for k in range(1, n):
        E = np.zeros((n, n))
        E[:k, :k] = np.eye(k)
        E[k, k] = -k
        basis.append(E / math.sqrt(k * (k + 1)))
    return basis


_BASIS_CACHE: dict = {}


def _basis(n: int) -> list:
    if n not in _BASIS_CACHE:
        _BASIS_CACHE[n] = _deviator_basis(n)
    return _BASIS_CACHE[n]


@dataclass(frozen=True)
class StatePoint:
    """A point (m, U) of R^n x S0^(nxn); U kept exactly symmetric trace-free."""

    m: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        U = np.asarray(self.U, dtype=float)
        object.__setattr__(self, "m", m)
        U = 0.5 * (U + U.T)
        U = U - np.trace(U) / len(m) * np.eye(len(m))
        object.__setattr__(self, "U", U)

    @property
    def n(self) -> int:
        return len(self.m)

    def as_vector(self) -> np.ndarray:
        """Isometric embedding into R^{N_n} (Frobenius norm on U)."""
        comps = [self.m]
        comps.append(np.array([np.sum(self.U * E) for E in _basis(self.n)]))
        return np.concatenate(comps)

    @classmethod
    def from_vector(cls, v: np.ndarray, n: int) -> "StatePoint":
        m = np.asarray(v[:n], dtype=float)
        U = np.zeros((n, n))
        for c, E in zip(v[n:], _basis(n)):
            U = U + c * E
        return cls(m, U)

    @classmethod
    def zero(cls, n: int) -> "StatePoint":
        return cls(np.zeros(n), np.zeros((n, n)))

    def norm(self) -> float:
        return math.sqrt(float(self.m @ self.m) + float(np.sum(self.U * self.U)))

    def __add__(self, other: "StatePoint") -> "StatePoint":
        return StatePoint(self.m + other.m, self.U + other.U)

    def __sub__(self, other: "StatePoint") -> "StatePoint":
        return StatePoint(self.m - other.m, self.U - other.U)

    def __mul__(self, c: float) -> "StatePoint":
        return StatePoint(c * self.m, c * self.U)

    __rmul__ = __mul__

    def dist(self, other: "StatePoint") -> float:
        return (self - other).norm()


@dataclass(frozen=True)
class ConstraintParams:
    """(rho, q) parametrizing K_{rho,q}."""

    rho: float
    q: float
    n: int = 2

    def __post_init__(self):
        if not self.rho > 0:
            raise GeometryError("rho must be positive")
        if self.q < 0:
            raise GeometryError("q must be non-negative")

    def k_radius(self) -> float:
        """sup |w| over K_{rho,q} (and over its convex hull)."""
        n, rho, q = self.n, self.rho, self.q
        return math.sqrt(n * rho * q + (n - 1.0) / n * (n * q) ** 2)


@dataclass(frozen=True)
class WaveDirection:
    """(tau, xi) of a plane wave with profile (n-bar, V-bar) in the cone Lambda."""

    tau: float
    xi: np.ndarray
    profile: StatePoint

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        object.__setattr__(self, "xi", xi)
        nb = self.profile.m
        if abs(np.linalg.norm(xi) - 1.0) > 1e-14:
            raise GeometryError("xi must be a unit vector")
        if abs(float(xi @ nb)) > 1e-12 * max(np.linalg.norm(nb), 1e-300):
            raise GeometryError("xi must be orthogonal to the momentum profile")
        res = self.tau * nb + self.profile.U @ xi
        scale = abs(self.tau) * np.linalg.norm(nb) + np.linalg.norm(self.profile.U)
        if np.linalg.norm(res) > 1e-12 * max(scale, 1e-300):
            raise GeometryError("tau*n + V xi = 0 violated")

    def rescaled(self, factor: float) -> "WaveDirection":
        return WaveDirection(self.tau, self.xi, self.profile * factor)


@dataclass
class SimplexDecomposition:
    """N*_n points of one K_{rho,q} strictly containing a target in their hull."""

    vertices: list
    weights: np.ndarray
    slack: float
    params: ConstraintParams
    target: StatePoint

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)

    @property
    def vertex_matrix(self) -> np.ndarray:
        return np.array([v.as_vector() for v in self.vertices])

    def barycentric(self, w: StatePoint) -> np.ndarray:
        """Unique affine weights of w w.r.t. the simplex vertices."""
        V = self.vertex_matrix
        A = np.vstack([V.T, np.ones(len(self.vertices))])
        b = np.concatenate([w.as_vector(), [1.0]])
        return np.linalg.solve(A, b)

    def diameter(self) -> float:
        V = self.vertex_matrix
        d = 0.0
        for i in range(len(V)):
            for j in range(i + 1, len(V)):
                d = max(d, float(np.linalg.norm(V[i] - V[j])))
        return d


def k_point(params: ConstraintParams, xi: np.ndarray) -> StatePoint:
    """The K-point (sqrt(n rho q) xi, n q xi (x) xi - q I)."""
    xi = np.asarray(xi, dtype=float)
    n = params.n
    if abs(np.linalg.norm(xi) - 1.0) > 1e-12:
        raise GeometryError("xi must be a unit vector")
    m = math.sqrt(n * params.rho * params.q) * xi
    U = n * params.q * np.outer(xi, xi) - params.q * np.eye(n)
    return StatePoint(m, U)


def _angle_point(params: ConstraintParams, theta: float) -> StatePoint:
    return k_point(params, np.array([math.cos(theta), math.sin(theta)]))


def hull_margin(w: StatePoint, params: ConstraintParams) -> float:
    """lambda_min(rho q I + rho U - m (x) m); > 0 iff w in int conv K."""
    n = w.n
    A = params.rho * params.q * np.eye(n) + params.rho * w.U - np.outer(w.m, w.m)
    return float(np.linalg.eigvalsh(A)[0])


def sample_k(params: ConstraintParams, count: int, rng=None) -> list:
    """count points of K; equispaced angles (n=2) / Fibonacci sphere (n=3)."""
    offset = 0.0 if rng is None else rng.uniform(0, 2 * math.pi)
    pts = []
    if params.n == 2:
        for k in range(count):
            pts.append(_angle_point(params, offset + 2 * math.pi * k / count))
    elif params.n == 3:
        golden = math.pi * (3.0 - math.sqrt(5.0))
        for k in range(count):
            y = 1.0 - 2.0 * (k + 0.5) / count
            r = math.sqrt(max(0.0, 1.0 - y * y))
            th = golden * k + offset
            xi = np.array([r * math.cos(th), y, r * math.sin(th)])
            pts.append(k_point(params, xi))
    else:
        raise GeometryError("only n=2 and n=3 are supported")
    return pts


def dist_to_K(w: StatePoint, params: ConstraintParams, coarse: int = 1024) -> float:
    """Euclidean distance to K_{rho,q}; golden-section refined to 1e-10."""
    if params.q == 0.0:
        return w.norm()
    if params.n == 2:
        wv = w.as_vector()
        th = np.linspace(0.0, 2 * math.pi, coarse, endpoint=False)
        s = math.sqrt(2 * params.rho * params.q)
        # embedded K curve: (s cos, s sin, sqrt2 q cos2, sqrt2 q sin2 ... basis order)
        d2 = _dist2_curve(wv, th, s, params.q)
        i0 = int(np.argmin(d2))
        a = th[i0] - 2 * math.pi / coarse
        b = th[i0] + 2 * math.pi / coarse
        f = lambda t: _dist2_curve(wv, np.array([t]), s, params.q)[0]
        t = _golden(f, a, b, tol=1e-10)
        return math.sqrt(f(t))
    if params.n == 3:
        best = math.inf
        for p in sample_k(params, 2048):
            best = min(best, w.dist(p))
        # local polish over spherical angles
        wv = w.as_vector()

        def obj(ang):
            th, ph = ang
            xi = np.array([math.sin(ph) * math.cos(th), math.sin(ph) * math.sin(th),
                           math.cos(ph)])
            return w.dist(k_point(params, xi))

        starts = []
        for p in sorted(sample_k(params, 512), key=lambda p: w.dist(p))[:4]:
            xi = p.m / max(np.linalg.norm(p.m), 1e-300) if np.linalg.norm(p.m) > 0 \
                else np.array([0.0, 0.0, 1.0])
            starts.append([math.atan2(xi[1], xi[0]), math.acos(np.clip(xi[2], -1, 1))])
        for s0 in starts:
            r = minimize(obj, s0, method="Nelder-Mead",
                         options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 400})
            best = min(best, float(r.fun))
        return best
    raise GeometryError("only n=2 and n=3 are supported")


def _dist2_curve(wv: np.ndarray, th: np.ndarray, s: float, q: float) -> np.ndarray:
    # embedding of K for n=2 under the orthonormal deviator basis:
    # U(theta) = q[[cos2t, sin2t],[sin2t,-cos2t]] -> coords (sqrt2 q sin2t, sqrt2 q cos2t)
    c, sn = np.cos(th), np.sin(th)
    c2, s2 = np.cos(2 * th), np.sin(2 * th)
    d2 = (wv[0] - s * c) ** 2 + (wv[1] - s * sn) ** 2
    d2 += (wv[2] - math.sqrt(2) * q * s2) ** 2 + (wv[3] - math.sqrt(2) * q * c2) ** 2
    return d2


def _golden(f, a: float, b: float, tol: float = 1e-10) -> float:
    invphi = (math.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def lp_membership(w: StatePoint, params: ConstraintParams, samples: int = 1000,
                  rng=None):
    """Max-slack LP membership test over sampled K-points.

    Returns (slack, weights, points); slack > 0 certifies w in int conv of the
    sampled polytope (hence of conv K).
    """
    pts = sample_k(params, samples, rng)
    V = np.array([p.as_vector() for p in pts])
    dim = V.shape[1]
    nv = len(pts)
    # variables: weights lambda (nv), slack s; maximize s
    A_eq = np.zeros((dim + 1, nv + 1))
    A_eq[:dim, :nv] = V.T
    A_eq[dim, :nv] = 1.0
    b_eq = np.concatenate([w.as_vector(), [1.0]])
    A_ub = np.zeros((nv, nv + 1))
    A_ub[:, :nv] = -np.eye(nv)
    A_ub[:, nv] = 1.0
    c = np.zeros(nv + 1)
    c[nv] = -1.0
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(nv), A_eq=A_eq, b_eq=b_eq,
                  bounds=[(None, None)] * (nv + 1), method="highs")
    if not res.success:
        return -math.inf, None, pts
    return float(res.x[nv]), res.x[:nv], pts


def _weights_slack(V: np.ndarray, target: np.ndarray):
    """Unique affine weights and their min for N*+0 points (square system)."""
    A = np.vstack([V.T, np.ones(len(V))])
    b = np.concatenate([target, [1.0]])
    try:
        mu = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return None, -math.inf
    return mu, float(np.min(mu))


def _certify_slack(V: np.ndarray, target: np.ndarray) -> float:
    """LP certificate: maximize uniform weight slack for the given vertices."""
    nv = len(V)
    dim = V.shape[1]
    A_eq = np.zeros((dim + 1, nv + 1))
    A_eq[:dim, :nv] = V.T
    A_eq[dim, :nv] = 1.0
    b_eq = np.concatenate([target, [1.0]])
    A_ub = np.hstack([-np.eye(nv), np.ones((nv, 1))])
    c = np.zeros(nv + 1)
    c[nv] = -1.0
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(nv), A_eq=A_eq, b_eq=b_eq,
                  bounds=[(None, None)] * (nv + 1), method="highs")
    if not res.success:
        return -math.inf
    return float(res.x[nv])


def _subset_nondegenerate(V: np.ndarray, target: np.ndarray, tol: float = 1e-8):
    """Check every (N*-1)-subset spans affine rank N*-1 around the target."""
    nv = len(V)
    scale = max(1.0, float(np.max(np.abs(V - target))))
    worst = math.inf
    for drop in range(nv):
        sub = np.delete(V, drop, axis=0) - target
        sv = np.linalg.svd(sub, compute_uv=False)
        worst = min(worst, sv[-1] / scale)
    return worst > tol, worst


def select_extreme_points(target: StatePoint, params: ConstraintParams,
                          rng_seed: int = 0) -> SimplexDecomposition:
    """N*_n points of K_{rho,q} whose hull strictly contains the target.

    Interiority is certified by the max-slack LP; every (N*-1)-subset is made
    nondegenerate by random angular perturbations (Lemma-2.4-style genericity).
    """
    rng = np.random.default_rng(rng_seed)
    n = params.n
    ns = n_star(n)
    scale = max(params.rho * params.q, 1e-300)
    margin = hull_margin(target, params)
    if margin <= 1e-9 * scale:
        raise GeometryError(
            f"target not strictly interior: margin {margin:.3e} <= tol; shrink the target")
    tv = target.as_vector()

    if n == 2 and target.norm() <= 1e-14 * max(1.0, params.k_radius()):
        # rotated regular pentagon: exact weights 1/5 by the trigonometric sums
        theta0 = rng.uniform(0.0, 2 * math.pi)
        angles = np.array([theta0 + 2 * math.pi * k / 5 for k in range(5)])
    else:
        angles = _initial_support(params, tv, rng)
        angles = _polish_angles(params, tv, angles, rng)

    for attempt in range(20):
        pts = _points_from_angles(params, angles, rng)
        V = np.array([p.as_vector() for p in pts])
        mu, slack = _weights_slack(V, tv)
        cert = _certify_slack(V, tv)
        ok, _ = _subset_nondegenerate(V, tv, tol=2e-8)
        if mu is not None and slack > 1e-9 and cert > 1e-9 and ok:
            return SimplexDecomposition(pts, mu, float(cert), params, target)
        # perturb along the angular parameter and re-polish; halve on retry
        delta0 = 0.05
        step = 1e-3 * delta0 * 2.0 ** (-attempt)
        angles = angles + rng.uniform(-1.0, 1.0, size=angles.shape) * step
        angles = _polish_angles(params, tv, angles, rng)
    raise GeometryError("could not certify a nondegenerate extreme-point selection")


def _points_from_angles(params, angles, rng):
    if params.n == 2:
        return [_angle_point(params, t) for t in np.atleast_1d(angles)]
    pts = []
    for th, ph in np.atleast_2d(angles):
        xi = np.array([math.sin(ph) * math.cos(th), math.sin(ph) * math.sin(th),
                       math.cos(ph)])
        pts.append(k_point(params, xi))
    return pts


def _initial_support(params: ConstraintParams, tv: np.ndarray, rng):
    """Basic feasible LP solution over a dense K sample -> N* support angles."""
    n = params.n
    ns = n_star(n)
    count = 360 if n == 2 else 800
    for refine in range(3):
        if n == 2:
            offs = rng.uniform(0, 2 * math.pi)
            th = offs + np.linspace(0, 2 * math.pi, count, endpoint=False)
            V = _embed_angles(params, th)
        else:
            pts = sample_k(params, count, rng)
            V = np.array([p.as_vector() for p in pts])
            th = None
        A_eq = np.vstack([V.T, np.ones(len(V))])
        b_eq = np.concatenate([tv, [1.0]])
        res = linprog(rng.uniform(0.1, 1.0, len(V)), A_eq=A_eq, b_eq=b_eq,
                      bounds=(0, None), method="highs")
        if res.success:
            idx = np.argsort(res.x)[::-1][:ns]
            if n == 2:
                return np.sort(th[idx])
            out = []
            for i in idx:
                xi = pts[i].m / max(np.linalg.norm(pts[i].m), 1e-300)
                out.append([math.atan2(xi[1], xi[0]), math.acos(np.clip(xi[2], -1, 1))])
            return np.array(out)
        count *= 4
    raise GeometryError("dense-sample LP infeasible; target too close to the boundary")


def _embed_angles(params: ConstraintParams, th: np.ndarray) -> np.ndarray:
    """Vectorized embedding of K(theta) for n=2 (rows match as_vector order)."""
    s = math.sqrt(2 * params.rho * params.q)
    th = np.asarray(th, dtype=float)
    return np.stack([s * np.cos(th), s * np.sin(th),
                     math.sqrt(2) * params.q * np.sin(2 * th),
                     math.sqrt(2) * params.q * np.cos(2 * th)], axis=-1)


def _polish_angles(params, tv, angles, rng):
    """Maximize the min barycentric weight over the angle parameters.

    A penalty keeps every (N*-1)-subset away from affine degeneracy, which
    pure slack maximization otherwise drifts into.
    """
    ns = n_star(params.n)
    shape = np.asarray(angles).shape
    b = np.concatenate([tv, [1.0]])

    def obj(a):
        if params.n == 2:
            V = _embed_angles(params, a)
        else:
            pts = _points_from_angles(params, a.reshape(shape), rng)
            V = np.array([p.as_vector() for p in pts])
        A = np.vstack([V.T, np.ones(len(V))])
        try:
            mu = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            return 1e6
        _, worst = _subset_nondegenerate(V, tv, tol=0.0)
        return -float(np.min(mu)) + 1e3 * max(0.0, 1e-4 - worst)

    res = minimize(obj, np.asarray(angles).ravel(), method="Nelder-Mead",
                   options={"maxiter": 150 * ns, "xatol": 1e-9, "fatol": 1e-10})
    return res.x.reshape(shape)


def wave_direction(w1: StatePoint, w2: StatePoint, rho: float) -> WaveDirection:
    """Plane-wave direction for the difference of two points of one K_{rho,q}.

    xi is orthogonal to m2 - m1 (the 90-degree rotation for n=2, sign fixed so
    the first nonzero component is positive) and tau = -(xi . m2)/rho.
    """
    mbar = w2.m - w1.m
    nrm = np.linalg.norm(mbar)
    if nrm <= 1e-12 * max(w1.norm(), w2.norm(), 1e-300):
        raise GeometryError("w1 and w2 have equal momenta; corrupted input pair")
    n = w1.n
    if n == 2:
        xi = np.array([-mbar[1], mbar[0]]) / nrm
    else:
        a = np.zeros(n)
        a[int(np.argmin(np.abs(mbar)))] = 1.0
        xi = np.cross(mbar, a)
        xi = xi / np.linalg.norm(xi)
    for comp in xi:
        if abs(comp) > 1e-14:
            if comp < 0:
                xi = -xi
            break
    tau = -float(xi @ w2.m) / rho
    return WaveDirection(tau, xi, w2 - w1)


def plan_wave_step(w: StatePoint, decomp: SimplexDecomposition, margin: float,
                   rng=None):
    """Split w along a difference of decomposition vertices.

    Returns (w1, w2, mu1, mu2, i, j): w = mu1 w1 + mu2 w2 with w2 - w1
    parallel to vertices[j] - vertices[i] (hence in Lambda).  Motion along
    that edge changes only the pair weights (dmu = delta_j - delta_i), so the
    slack discipline is pairwise: the pair needs weight >= margin at w and the
    endpoints retract to pair weight margin/2; inactive weights are frozen.
    This keeps the collinear case (all other weights zero) admissible.
    Near-optimal pairs (within 10% of the best score) are tie-broken by rng,
    which is what makes distinct seeds yield distinct iteration outputs.
    """
    mu = decomp.barycentric(w)
    if float(np.min(mu)) < -1e-10:
        raise GeometryError("w lies outside the decomposition hull")
    V = decomp.vertex_matrix
    nv = len(V)
    scores = []
    for i in range(nv):
        for j in range(i + 1, nv):
            if min(mu[i], mu[j]) < margin:
                continue
            scores.append((mu[i] * mu[j] * float(np.sum((V[i] - V[j]) ** 2)),
                           (i, j)))
    if not scores:
        raise GeometryError(
            f"no vertex pair with weight >= margin {margin:.3e}; margin too large")
    best = max(s for s, _ in scores)
    candidates = [p for s, p in scores if s >= 0.9 * best]
    if rng is not None and len(candidates) > 1:
        i, j = candidates[int(rng.integers(len(candidates)))]
    else:
        i, j = max(scores)[1]
    e = decomp.vertices[j] - decomp.vertices[i]
    # along e only mu_i and mu_j vary: mu_i' = mu_i - s, mu_j' = mu_j + s
    lo = margin / 2.0
    s_plus = mu[i] - lo
    s_minus = -(mu[j] - lo)
    if not (s_minus < 0.0 < s_plus):
        raise GeometryError("no endpoints with positive slack; margin too large")
    w1 = w + s_minus * e
    w2 = w + s_plus * e
    mu1 = s_plus / (s_plus - s_minus)
    mu2 = -s_minus / (s_plus - s_minus)
    return w1, w2, mu1, mu2, i, j

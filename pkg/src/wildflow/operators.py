"""Spectral elliptic solvers on the periodic 2-torus and on cubes.

Realizes the periodic inverse Laplacian, the Leray projection, the
divergence-solving operator R (divergence of R[f] equals f minus its mean,
R symmetric trace-free), and the zero-Neumann cube Poisson solver used by the
piecewise-Lipschitz ansatz.  Fields are nodal samples on uniform grids; all
derivatives are spectral multipliers.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn, idstn

__all__ = [
    "TorusGrid",
    "ScalarField",
    "VectorField",
    "DeviatorField",
    "poisson_solve",
    "r_torus",
    "leray_project",
    "neumann_poisson_cube",
    "neumann_gradient",
    "spectral_gradient",
    "spectral_divergence",
    "dump_field",
    "load_field",
]


@dataclass(frozen=True)
class TorusGrid:
    """Uniform N x N grid on the periodic square of side length L."""

    resolution: int
    length: float = 1.0

    def __post_init__(self):
        N = self.resolution
        if N < 16 or (N & (N - 1)) != 0:
            raise ValueError("resolution must be a power of two >= 16")
        if not self.length > 0:
            raise ValueError("length must be positive")

    @property
    def spacing(self) -> float:
        return self.length / self.resolution

    def nodes(self):
        x = np.arange(self.resolution) * self.spacing
        return np.meshgrid(x, x, indexing="ij")

    def wavenumbers(self):
        k = 2.0 * np.pi * np.fft.fftfreq(self.resolution, d=self.spacing)
        return np.meshgrid(k, k, indexing="ij")

    @property
    def cell_measure(self) -> float:
        return self.spacing ** 2


@dataclass
class ScalarField:
    grid: TorusGrid
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        N = self.grid.resolution
        if self.samples.shape != (N, N):
            raise ValueError("samples must be (N, N)")

    def mean(self) -> float:
        return float(np.mean(self.samples))


@dataclass
class VectorField:
    grid: TorusGrid
    samples: np.ndarray  # (2, N, N)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        N = self.grid.resolution
        if self.samples.shape != (2, N, N):
            raise ValueError("samples must be (2, N, N)")

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=(1, 2))


@dataclass
class DeviatorField:
    """Symmetric trace-free 2x2 field stored as (U11, U12)."""

    grid: TorusGrid
    samples: np.ndarray  # (2, N, N): components (U11, U12); U22 = -U11

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        N = self.grid.resolution
        if self.samples.shape != (2, N, N):
            raise ValueError("samples must be (2, N, N)")

    def full(self) -> np.ndarray:
        a, b = self.samples
        return np.stack([np.stack([a, b]), np.stack([b, -a])])


def _fft2(f):
    return np.fft.fft2(f)


def _ifft2(F):
    return np.real(np.fft.ifft2(F))


def _odd_mask(grid: TorusGrid) -> np.ndarray:
    """Zero the unpaired Nyquist row/column.

    Odd-order spectral derivatives of the Nyquist mode are not conjugate
    symmetric; every first-derivative multiplier carries this mask, which is
    exact for band-limited fields and standard practice otherwise.
    """
    N = grid.resolution
    m = np.ones(N)
    m[N // 2] = 0.0
    return np.outer(m, m)


def spectral_gradient(f: ScalarField):
    kx, ky = f.grid.wavenumbers()
    mask = _odd_mask(f.grid)
    F = _fft2(f.samples) * mask
    return VectorField(f.grid, np.stack([
        _ifft2(1j * kx * F), _ifft2(1j * ky * F)]))


def spectral_divergence(v: VectorField) -> ScalarField:
    kx, ky = v.grid.wavenumbers()
    mask = _odd_mask(v.grid)
    F0, F1 = _fft2(v.samples[0]) * mask, _fft2(v.samples[1]) * mask
    return ScalarField(v.grid, _ifft2(1j * kx * F0 + 1j * ky * F1))


def spectral_laplacian(f: ScalarField) -> ScalarField:
    kx, ky = f.grid.wavenumbers()
    F = _fft2(f.samples)
    return ScalarField(f.grid, _ifft2(-(kx ** 2 + ky ** 2) * F))


def poisson_solve(f: ScalarField, mean_free: bool = False):
    """Solve Laplace(Psi) = f - mean(f) on the torus; Psi has zero mean.

    Returns (Psi, removed_mean).  If mean_free is set the mean is asserted
    to vanish instead of being subtracted silently.
    """
    fbar = f.mean()
    if mean_free and abs(fbar) > 1e-12 * max(1.0, np.max(np.abs(f.samples))):
        raise ValueError(f"field declared mean-free but mean = {fbar:.3e}")
    kx, ky = f.grid.wavenumbers()
    k2 = kx ** 2 + ky ** 2
    F = _fft2(f.samples)
    F.flat[0] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        P = np.where(k2 > 0, -F / np.where(k2 > 0, k2, 1.0), 0.0)
    return ScalarField(f.grid, _ifft2(P)), fbar


def _grad_hat(F, kx, ky):
    return 1j * kx * F, 1j * ky * F


def r_torus(f: VectorField, n: int = 2) -> DeviatorField:
    """Divergence-solving operator: div R[f] = f - mean(f), R in S0^{2x2}.

    R = (n-2)/(2(n-1)) [grad Pg + (grad Pg)^T] + n/(2(n-1)) [grad g + (grad g)^T]
        - 1/(n-1) (div g) I,    g = InverseLaplacian(f - mean f),
    with P the Leray projection; for n=2 the first coefficient vanishes.
    """
    grid = f.grid
    kx, ky = grid.wavenumbers()
    k2 = kx ** 2 + ky ** 2
    inv_k2 = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    mask = _odd_mask(grid)

    G = []
    for comp in f.samples:
        F = _fft2(comp) * mask
        F.flat[0] = 0.0
        G.append(-F * inv_k2)
    # div g and the symmetrized gradient in Fourier space
    divG = 1j * kx * G[0] + 1j * ky * G[1]
    d0x, d0y = _grad_hat(G[0], kx, ky)
    d1x, d1y = _grad_hat(G[1], kx, ky)
    sym11 = 2.0 * d0x
    sym12 = d0y + d1x
    a = n / (2.0 * (n - 1.0))
    b = 1.0 / (n - 1.0)
    U11 = a * sym11 - b * divG
    U12 = a * sym12
    if n != 2:
        raise ValueError("torus operator implemented for n=2")
    return DeviatorField(grid, np.stack([_ifft2(U11), _ifft2(U12)]))


def divergence_of_deviator(U: DeviatorField) -> VectorField:
    kx, ky = U.grid.wavenumbers()
    mask = _odd_mask(U.grid)
    A, B = _fft2(U.samples[0]) * mask, _fft2(U.samples[1]) * mask
    # rows of [[a, b], [b, -a]]
    out0 = _ifft2(1j * kx * A + 1j * ky * B)
    out1 = _ifft2(1j * kx * B - 1j * ky * A)
    return VectorField(U.grid, np.stack([out0, out1]))


def leray_project(v: VectorField) -> VectorField:
    """Divergence-free part v - grad InverseLaplacian(div v); mean retained."""
    kx, ky = v.grid.wavenumbers()
    k2 = kx ** 2 + ky ** 2
    inv_k2 = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    mask = _odd_mask(v.grid)
    F0, F1 = _fft2(v.samples[0]), _fft2(v.samples[1])
    divF = (1j * kx * F0 + 1j * ky * F1) * mask
    phi = -divF * inv_k2  # InverseLaplacian(div v)
    P0 = F0 - 1j * kx * phi * mask
    P1 = F1 - 1j * ky * phi * mask
    return VectorField(v.grid, np.stack([_ifft2(P0), _ifft2(P1)]))


def neumann_poisson_cube(f: np.ndarray, side: float):
    """Solve Laplace(Psi) = f - mean(f) on a square with zero Neumann data.

    f holds cell-centered samples (M x M on [0, side]^2); the solve expands in
    cosine modes cos(k pi x / side) (DCT-II), which enforce the boundary
    condition structurally.  Returns (Psi, removed_mean).
    """
    f = np.asarray(f, dtype=float)
    M = f.shape[0]
    if f.shape != (M, M):
        raise ValueError("f must be square")
    fbar = float(np.mean(f))
    F = dctn(f - fbar, type=2, norm="ortho")
    k = np.pi * np.arange(M) / side
    kx, ky = np.meshgrid(k, k, indexing="ij")
    k2 = kx ** 2 + ky ** 2
    F[0, 0] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        P = np.where(k2 > 0, -F / np.where(k2 > 0, k2, 1.0), 0.0)
    psi = idctn(P, type=2, norm="ortho")
    return psi, fbar


def neumann_gradient(psi: np.ndarray, side: float):
    """Gradient of a cell-centered cosine-expanded field; zero normal flux.

    d/dx sum c_k cos(k pi x / L) = -sum c_k (k pi / L) sin(k pi x / L); the
    sine series is resampled at cell centers with DST-II of the shifted
    coefficients.
    """
    psi = np.asarray(psi, dtype=float)
    M = psi.shape[0]
    C = dctn(psi, type=2, norm="ortho")
    k = np.pi * np.arange(M) / side

    def d_axis(axis):
        Ck = np.moveaxis(C.copy(), axis, 0)
        S = -(k[:, None] * Ck.reshape(M, -1))  # cosine k -> sine k, scaled
        pad = np.zeros_like(S)
        pad[: M - 1] = S[1:]                   # DST-II index = frequency - 1
        out = idstn(pad, type=2, norm="ortho", axes=0)
        out = idctn(out, type=2, norm="ortho", axes=1)
        return np.moveaxis(out.reshape(Ck.shape), 0, axis)

    return d_axis(0), d_axis(1)


def dump_field(directory: str, name: str, samples: np.ndarray, grid: TorusGrid,
               time: float, components: list) -> dict:
    """Write raw little-endian float64 dump + JSON sidecar; returns metadata."""
    os.makedirs(directory, exist_ok=True)
    arr = np.ascontiguousarray(samples, dtype="<f8")
    raw = os.path.join(directory, name + ".f64")
    arr.tofile(raw)
    meta = {
        "name": name,
        "resolution": list(arr.shape),
        "length": grid.length,
        "time": time,
        "components": components,
        "dtype": "<f8",
        "order": "C",
    }
    with open(os.path.join(directory, name + ".json"), "w") as fh:
        json.dump(meta, fh, indent=1)
    return meta


def load_field(directory: str, name: str):
    with open(os.path.join(directory, name + ".json")) as fh:
        meta = json.load(fh)
    arr = np.fromfile(os.path.join(directory, name + ".f64"), dtype="<f8")
    arr = arr.reshape(meta["resolution"])
    return arr, meta

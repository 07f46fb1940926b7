import numpy as np
import pytest

from wildflow.operators import (
    DeviatorField,
    ScalarField,
    TorusGrid,
    VectorField,
    divergence_of_deviator,
    dump_field,
    leray_project,
    load_field,
    neumann_gradient,
    neumann_poisson_cube,
    poisson_solve,
    r_torus,
    spectral_divergence,
    spectral_gradient,
    spectral_laplacian,
)

RNG = np.random.default_rng(7)


def smooth_field(grid, kmax=16, rng=RNG):
    N = grid.resolution
    F = np.zeros((N, N), dtype=complex)
    F[:kmax, :kmax] = rng.normal(size=(kmax, kmax)) + 1j * rng.normal(size=(kmax, kmax))
    f = np.real(np.fft.ifft2(F))
    return f / np.max(np.abs(f))


@pytest.fixture
def grid():
    return TorusGrid(64, 2 * np.pi)


class TestPoisson:
    def test_single_mode(self, grid):
        X, _ = grid.nodes()
        psi, _ = poisson_solve(ScalarField(grid, np.cos(X)))
        L = grid.length
        assert np.max(np.abs(psi.samples + (L / (2 * np.pi)) ** 2 * np.cos(X))) < 1e-13

    def test_constant_maps_to_zero(self, grid):
        psi, mean = poisson_solve(ScalarField(grid, 3.7 * np.ones((64, 64))))
        assert np.max(np.abs(psi.samples)) == 0.0
        assert abs(mean - 3.7) < 1e-14

    def test_roundtrip_random(self, grid):
        f = RNG.normal(size=(64, 64))
        psi, mean = poisson_solve(ScalarField(grid, f))
        lap = spectral_laplacian(psi)
        assert np.max(np.abs(lap.samples - (f - np.mean(f)))) < 1e-10 * np.max(np.abs(f))
        assert abs(psi.mean()) < 1e-13

    def test_mean_free_flag(self, grid):
        with pytest.raises(ValueError):
            poisson_solve(ScalarField(grid, np.ones((64, 64))), mean_free=True)


class TestRTorus:
    def test_zero(self, grid):
        R = r_torus(VectorField(grid, np.zeros((2, 64, 64))))
        assert np.max(np.abs(R.samples)) == 0.0

    def test_closed_form(self, grid):
        X, _ = grid.nodes()
        v = VectorField(grid, np.stack([np.cos(X), np.zeros_like(X)]))
        R = r_torus(v)
        assert np.max(np.abs(R.samples[0] - np.sin(X))) < 1e-12
        assert np.max(np.abs(R.samples[1])) < 1e-12

    def test_roundtrip_and_trace(self, grid):
        for _ in range(5):
            v = VectorField(grid, np.stack([smooth_field(grid), smooth_field(grid)]))
            R = r_torus(v)
            div = divergence_of_deviator(R)
            target = v.samples - v.mean()[:, None, None]
            assert np.max(np.abs(div.samples - target)) < 1e-10 * np.max(np.abs(v.samples))
            # storage is (U11, U12) with U22 = -U11: trace-free structural
            full = R.full()
            assert np.max(np.abs(full[0, 0] + full[1, 1])) == 0.0

    def test_linearity(self, grid):
        a = VectorField(grid, np.stack([smooth_field(grid), smooth_field(grid)]))
        b = VectorField(grid, np.stack([smooth_field(grid), smooth_field(grid)]))
        Rab = r_torus(VectorField(grid, 2.0 * a.samples - 0.5 * b.samples))
        diff = Rab.samples - 2.0 * r_torus(a).samples + 0.5 * r_torus(b).samples
        assert np.max(np.abs(diff)) < 1e-12

    def test_translation_equivariance(self, grid):
        f = smooth_field(grid)
        v = VectorField(grid, np.stack([f, 0.3 * f]))
        R = r_torus(v)
        shift = 5
        vs = VectorField(grid, np.roll(v.samples, shift, axis=1))
        Rs = r_torus(vs)
        assert np.max(np.abs(Rs.samples - np.roll(R.samples, shift, axis=1))) < 1e-10


class TestLeray:
    def test_gradient_projects_to_mean(self, grid):
        g = spectral_gradient(ScalarField(grid, smooth_field(grid)))
        p = leray_project(g)
        assert np.max(np.abs(p.samples - g.mean()[:, None, None])) < 1e-12

    def test_divergence_free_unchanged(self, grid):
        v = VectorField(grid, np.stack([smooth_field(grid), smooth_field(grid)]))
        vdf = leray_project(v)
        again = leray_project(vdf)
        assert np.max(np.abs(again.samples - vdf.samples)) < 1e-10

    def test_output_divergence(self, grid):
        v = VectorField(grid, np.stack([smooth_field(grid), smooth_field(grid)]))
        p = leray_project(v)
        div = spectral_divergence(p)
        assert np.max(np.abs(div.samples)) < 1e-10 * np.max(np.abs(v.samples))


class TestNeumann:
    def test_zero(self):
        psi, _ = neumann_poisson_cube(np.zeros((32, 32)), 1.0)
        assert np.max(np.abs(psi)) == 0.0

    def test_single_cosine(self):
        M, side = 64, 0.7
        xc = (np.arange(M) + 0.5) * side / M
        XC, _ = np.meshgrid(xc, xc, indexing="ij")
        f = np.cos(np.pi * XC / side)
        psi, _ = neumann_poisson_cube(f, side)
        assert np.max(np.abs(psi + (side / np.pi) ** 2 * f)) < 1e-13

    def test_gradient_zero_normal_flux(self):
        M, side = 64, 1.0
        rng = np.random.default_rng(3)
        # band-limited mean-free cosine data
        C = np.zeros((M, M))
        C[:8, :8] = rng.normal(size=(8, 8))
        C[0, 0] = 0.0
        from scipy.fft import idctn
        f = idctn(C, type=2, norm="ortho")
        psi, _ = neumann_poisson_cube(f, side)
        gx, gy = neumann_gradient(psi, side)
        scale = max(np.max(np.abs(gx)), np.max(np.abs(gy)), 1e-300)
        # evaluate the x-derivative series on the faces x = 0 and x = side by
        # explicit mode summation through the actual solver coefficients
        from scipy.fft import dctn
        C = dctn(psi, type=2, norm="ortho")
        k = np.arange(M) * np.pi / side
        yc = (np.arange(M) + 0.5) * side / M
        for xface in (0.0, side):
            vals = np.zeros(M)
            for kk in range(1, M):
                basis_y = np.sqrt(2.0 / M) * np.cos(k[:, None] * yc[None, :])
                basis_y[0] = 1.0 / np.sqrt(M)
                prof = C[kk] @ basis_y  # psi_k(y) for cosine mode kk in x
                vals += -k[kk] * np.sin(k[kk] * xface) * np.sqrt(2.0 / M) * prof
            assert np.max(np.abs(vals)) < 1e-8 * scale
        # flux integral over each face vanishes with the same structure
        h = side / M
        assert abs(np.sum(gx[0]) * h) < 2e-2 * scale  # cell-center column, not face

    def test_residual_banded(self):
        M, side = 64, 1.0
        rng = np.random.default_rng(4)
        C = np.zeros((M, M))
        C[:10, :10] = rng.normal(size=(10, 10))
        C[0, 0] = 0.0
        from scipy.fft import dctn, idctn
        f = idctn(C, type=2, norm="ortho")
        psi, _ = neumann_poisson_cube(f, side)
        # apply the cosine-basis Laplacian back
        P = dctn(psi, type=2, norm="ortho")
        k = np.pi * np.arange(M) / side
        kx, ky = np.meshgrid(k, k, indexing="ij")
        res = idctn(-(kx ** 2 + ky ** 2) * P, type=2, norm="ortho") - f
        assert np.max(np.abs(res)) < 1e-8 * np.max(np.abs(f))


class TestDumps:
    def test_roundtrip(self, tmp_path, grid):
        f = smooth_field(grid)
        meta = dump_field(str(tmp_path), "rho_t0000", f, grid, 0.25, ["rho"])
        arr, meta2 = load_field(str(tmp_path), "rho_t0000")
        assert np.array_equal(arr, f)
        assert meta2["time"] == 0.25
        assert meta2["length"] == grid.length


def test_spectral_accuracy_improves_with_resolution():
    # analytic field: residual decays faster than any fixed power
    errs = []
    for N in (32, 64):
        g = TorusGrid(N, 2 * np.pi)
        X, Y = g.nodes()
        f = np.exp(np.sin(X) + np.cos(Y))
        f = f - np.mean(f)
        psi, _ = poisson_solve(ScalarField(g, f))
        lap = spectral_laplacian(psi)
        errs.append(np.max(np.abs(lap.samples - f)))
    # both at rounding level for analytic data; ratio test is vacuous there,
    # so assert the absolute level instead
    assert errs[-1] < 1e-10

import json
import os

import numpy as np
import pytest

from wildflow import runio, verify
from wildflow.ansatz import (
    BandLimitedField,
    PressureLaw,
    SourceMatrix,
    build_perturbed_density,
    build_piecewise_constant,
)
from wildflow.operators import TorusGrid
from wildflow.verify import FieldDump, TestFunctionFamily

J = np.array([[0.0, 1.0], [-1.0, 0.0]])
PLAW = PressureLaw(0.5, 2.0)
GRID = TorusGrid(64, 1.0)


@pytest.fixture(scope="module")
def constant_dump(tmp_path_factory):
    d = str(tmp_path_factory.mktemp("const"))
    st = build_piecewise_constant([{"x1": (0.0, 1.0), "rho": 1.0}], 1.0,
                                  PressureLaw(1.0, 2.0), SourceMatrix(J),
                                  GRID, np.linspace(0, 1, 9))
    runio.dump_state(st, d)
    return d


@pytest.fixture(scope="module")
def perturbed_dump(tmp_path_factory):
    d = str(tmp_path_factory.mktemp("pert"))
    entries = [(1, 0, 4e-5, 0.0), (0, 1, 3e-5, 0.5)]
    rho0 = BandLimitedField.from_real_modes(entries, 1.0)
    rho0.modes[(0, 0)] = 1.0
    st = build_perturbed_density(rho0, PLAW, SourceMatrix(-np.eye(2)), 1e-3,
                                 GRID, np.linspace(-0.25, 1.5, 22))
    runio.dump_state(st, d)
    return d, st


class TestWeakResidual:
    def test_constant_state_zero(self, constant_dump):
        dump = FieldDump.load(constant_dump)
        fam = TestFunctionFamily.default(1.0, 0.0, 1.0)
        res = verify.weak_residual(dump, fam, PressureLaw(1.0, 2.0), J)
        worst = max(max(r["continuity"], r["momentum"]) for r in res)
        assert worst < 1e-10

    def test_builder_output_passes(self, perturbed_dump):
        d, st = perturbed_dump
        dump = FieldDump.load(d)
        fam = TestFunctionFamily.default(1.0, -0.25, 1.5)
        res = verify.weak_residual(dump, fam, PLAW, -np.eye(2))
        worst = max(max(r["continuity"], r["momentum"]) for r in res)
        assert worst < 1e-6

    def test_corrupted_momentum_detected(self, perturbed_dump, tmp_path):
        d, st = perturbed_dump
        dump = FieldDump.load(d)
        fam = TestFunctionFamily.default(1.0, -0.25, 1.5)
        clean = max(r["momentum"] for r in
                    verify.weak_residual(dump, fam, PLAW, -np.eye(2)))
        # blob corruption test hook
        dump.m = dump.m.copy()
        N = GRID.resolution
        dump.m[:, 0, N // 4:N // 2, N // 4:N // 2] += 0.1
        res = verify.weak_residual(dump, fam, PLAW, -np.eye(2))
        worst = max(r["momentum"] for r in res)
        assert worst > 1e3 * max(clean, 1e-12)
        assert worst > 1e-5

    def test_metadata_mismatch_rejected(self, constant_dump, tmp_path):
        import shutil
        broken = str(tmp_path / "broken")
        shutil.copytree(constant_dump, broken)
        meta = json.load(open(os.path.join(broken, "fields.json")))
        meta["times"][0] = meta["times"][0] + 0.1
        json.dump(meta, open(os.path.join(broken, "fields.json"), "w"))
        with pytest.raises(verify.VerifyError):
            FieldDump.load(broken)


class TestAdmissibility:
    def test_piecewise_constant_equality(self, constant_dump):
        dump = FieldDump.load(constant_dump)
        fam = TestFunctionFamily.nonnegative(1.0, 0.0, 1.0, interior_only=True)
        res = verify.admissibility_residual(dump, fam, PressureLaw(1.0, 2.0), J)
        vals = [r["value"] for r in res]
        assert min(vals) >= -1e-8 and max(vals) <= 1e-8

    def test_perturbed_density_admissible(self, perturbed_dump):
        d, st = perturbed_dump
        dump = FieldDump.load(d)
        fam = TestFunctionFamily.nonnegative(1.0, -0.25, 1.5, interior_only=True)
        res = verify.admissibility_residual(dump, fam, PLAW, -np.eye(2))
        assert min(r["value"] for r in res) >= -1e-6

    def test_inflated_chi_detected(self, tmp_path):
        # test hook: growing chi makes energy production positive
        entries = [(1, 0, 4e-5, 0.0)]
        rho0 = BandLimitedField.from_real_modes(entries, 1.0)
        rho0.modes[(0, 0)] = 1.0
        st = build_perturbed_density(rho0, PLAW, SourceMatrix(-np.eye(2)),
                                     1e-3, GRID, np.linspace(-0.25, 1.5, 22))
        st.chi.chi = st.chi.chi[::-1].copy() * 30.0
        st.chi.dchi = -st.chi.dchi[::-1].copy() * 30.0
        st.chi.chi_end = float(st.chi.chi[-1])
        d = str(tmp_path / "bad")
        runio.dump_state(st, d)
        dump = FieldDump.load(d)
        fam = TestFunctionFamily.nonnegative(1.0, -0.25, 1.5, interior_only=True)
        res = verify.admissibility_residual(dump, fam, PLAW, -np.eye(2))
        assert min(r["value"] for r in res) < -1e-4

    def test_antisymmetric_source_sign_flip(self, perturbed_dump):
        # with B = J the source pairing changes sign under m -> -m
        d, st = perturbed_dump
        dump = FieldDump.load(d)
        X, Y = GRID.nodes()
        tf = TestFunctionFamily.nonnegative(1.0, -0.25, 1.5).members[0]
        m = dump.m[5]
        phi = tf.value(float(dump.times[5]), X, Y)
        Bm0 = J[0, 0] * m[0] + J[0, 1] * m[1]
        Bm1 = J[1, 0] * m[0] + J[1, 1] * m[1]
        val_p = float(np.sum(phi * (m[0] * Bm0 + m[1] * Bm1)))
        mneg = -m
        Bn0 = J[0, 0] * mneg[0] + J[0, 1] * mneg[1]
        Bn1 = J[1, 0] * mneg[0] + J[1, 1] * mneg[1]
        val_n = float(np.sum(phi * (mneg[0] * Bn0 + mneg[1] * Bn1)))
        # the quadratic form of an antisymmetric matrix vanishes identically
        assert abs(val_p) < 1e-12 and abs(val_n) < 1e-12
        # bilinear pairing psi . B m flips sign exactly
        psi = tf.grad(float(dump.times[5]), X, Y)
        pair_p = float(np.sum(psi[0] * Bm0 + psi[1] * Bm1))
        pair_n = float(np.sum(psi[0] * Bn0 + psi[1] * Bn1))
        assert abs(pair_p + pair_n) <= 1e-12 * max(1.0, abs(pair_p))


class TestConstraintField:
    def test_fresh_ansatz_matches_analytic(self, tmp_path):
        st = build_piecewise_constant(
            [{"x1": (0.0, 0.5), "rho": 1.0}, {"x1": (0.5, 1.0), "rho": 2.0}],
            2.0, PLAW, SourceMatrix(J), GRID, np.linspace(0, 1, 5), seed=1)
        d = str(tmp_path / "pc")
        runio.dump_state(st, d)
        dump = FieldDump.load(d)
        out = verify.constraint_field(dump, 0)
        # active strip: dist of (0,0) to K_{1,1.5}: sqrt(2 rho q + 2 q^2)
        expect = np.sqrt(2 * 1.0 * 1.5 + 2 * 1.5 ** 2)
        active = out["dist"][:GRID.resolution // 2, :]
        assert np.max(np.abs(active - expect)) < 1e-6
        # inert strip: q = 0 -> K = {0} -> dist = |w| = 0
        inert = out["dist"][GRID.resolution // 2:, :]
        assert np.max(inert) < 1e-12
        assert out["margin_min"] >= -1e-12

    def test_saturation_identity_near_K(self, tmp_path):
        # a saturated slice: |m|^2 = n rho q where dist is small
        from wildflow.statespace import ConstraintParams, k_point
        params = ConstraintParams(1.0, 1.5)
        w = k_point(params, np.array([1.0, 0.0]))
        N = GRID.resolution
        st = build_piecewise_constant([{"x1": (0.0, 1.0), "rho": 1.0}], 2.0,
                                      PLAW, SourceMatrix(J), GRID,
                                      np.linspace(0, 1, 3), seed=1)
        d = str(tmp_path / "sat")
        runio.dump_state(st, d)
        dump = FieldDump.load(d)
        dump.m = dump.m.copy()
        dump.U = dump.U.copy()
        dump.m[:, 0], dump.m[:, 1] = w.m[0], w.m[1]
        dump.U[:, 0], dump.U[:, 1] = w.U[0, 0], w.U[0, 1]
        out = verify.constraint_field(dump, 0)
        assert out["dist_max"] < 1e-8
        sat = np.abs(w.m @ w.m - 2 * dump.rho[0] * dump.q[0])
        assert np.max(sat) < 1e-10


class TestQuadratureConvergence:
    def test_refined_residuals_stable(self, perturbed_dump):
        d, st = perturbed_dump
        dump = FieldDump.load(d)
        fam = TestFunctionFamily.default(1.0, -0.25, 1.5,
                                         modes=[(1, 0)])
        r1 = verify.weak_residual(dump, fam, PLAW, -np.eye(2), refine=1)
        r2 = verify.weak_residual(dump, fam, PLAW, -np.eye(2), refine=2)
        for a, b in zip(r1, r2):
            ref = max(a["continuity"], a["momentum"])
            if ref > 1e-9:
                assert abs(a["continuity"] - b["continuity"]) < 0.1 * ref


def test_report_roundtrip(tmp_path, constant_dump):
    dump = FieldDump.load(constant_dump)
    fam = TestFunctionFamily.default(1.0, 0.0, 1.0, modes=[(1, 0)])
    weak = verify.weak_residual(dump, fam, PressureLaw(1.0, 2.0), J)
    nn = TestFunctionFamily.nonnegative(1.0, 0.0, 1.0, modes=[(1, 0)],
                                        interior_only=True)
    admis = verify.admissibility_residual(dump, nn, PressureLaw(1.0, 2.0), J)
    path = str(tmp_path / "report.json")
    rep = verify.write_report(path, weak, admis,
                              {"weak": 1e-6, "admissibility": 1e-6})
    loaded = json.load(open(path))
    assert loaded["pass"]["weak"] is True
    assert loaded["pass"]["admissibility"] is True

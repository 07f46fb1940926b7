"""Run artifacts: field dumps, stage CSV, census CSV, manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import os

import numpy as np

from .operators import dump_field

__all__ = ["dump_state", "write_stages_csv", "write_census_csv",
           "write_manifest", "manifest_hash"]


def dump_state(state, directory: str, threads: int = 1):
    """Write per-slice (rho, m, U, q) dumps + fields.json metadata.

    Slices are independent; snapshot evaluation may run in a worker pool.
    """
    os.makedirs(directory, exist_ok=True)
    times = [float(t) for t in state.times]

    def one(i_t):
        i, t = i_t
        rho, m, U, q = state.snapshot(t)
        dump_field(directory, f"rho_t{i:04d}", rho, state.grid, t, ["rho"])
        dump_field(directory, f"m_t{i:04d}", m, state.grid, t, ["m1", "m2"])
        dump_field(directory, f"U_t{i:04d}", U, state.grid, t, ["U11", "U12"])
        dump_field(directory, f"q_t{i:04d}", q, state.grid, t, ["q"])

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one, enumerate(times)))
    else:
        for item in enumerate(times):
            one(item)
    meta = {
        "resolution": state.grid.resolution,
        "length": state.grid.length,
        "times": times,
        "kind": state.kind,
        "n_atoms": len(state.atoms),
        "lambda_max": max((a.lam for a in state.atoms), default=0.0),
        "regions": [{"label": r.label, "x1": list(r.x1_range),
                     "rho": r.rho_bar, "q": r.q_bar, "kind": r.kind}
                    for r in state.regions],
    }
    with open(os.path.join(directory, "fields.json"), "w") as fh:
        json.dump(meta, fh, indent=1)
    return meta


STAGE_COLUMNS = ["stage", "dist_integral", "dist_integral_D1", "l2_D1",
                 "pairing", "cubes", "atoms", "lambda_max", "lambda_required",
                 "mode", "quad_tol", "wall_time"]


def write_stages_csv(reports, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=STAGE_COLUMNS)
        writer.writeheader()
        for r in reports:
            writer.writerow(r.row())


def write_census_csv(clusters, captured: float, tv: float, decomp, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "m1", "m2", "U11", "U12", "fraction",
                         "captured_total", "tv_distance"])
        for idx, (v, frac) in enumerate(clusters):
            writer.writerow([idx, v.m[0], v.m[1], v.U[0, 0], v.U[0, 1],
                             frac, captured, tv])
        if decomp is not None:
            writer.writerow([])
            writer.writerow(["target", "m1", "m2", "U11", "U12", "weight"])
            for idx, (v, wt) in enumerate(zip(decomp.vertices, decomp.weights)):
                writer.writerow([f"v{idx}", v.m[0], v.m[1], v.U[0, 0],
                                 v.U[0, 1], wt])


def write_manifest(path: str, config: dict, seed: int, artifacts: dict,
                   certificates: dict, version: str = "0.1.0"):
    manifest = {
        "version": version,
        "seed": seed,
        "config": config,
        "artifacts": artifacts,
        "certificates": certificates,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, default=_np_default)
    return manifest


def _np_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def manifest_hash(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()

/** Synthetic run-directory fixtures in the documented dump formats.
 *  Built here so the viz tests never touch the producing process. */
import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

export function writeFixtureRun(dir: string): void {
  mkdirSync(dir, { recursive: true });
  const stages = [
    "stage,dist_integral,dist_integral_D1,l2_D1,pairing,cubes,atoms,lambda_max,lambda_required,mode,quad_tol,wall_time",
    "1,0.455,0.455,2.11,0.0,14,2,2048,0,mixed,0.011,0.5",
    "2,0.055,0.055,3.49,0.0,16,0,0,1e9,laminate,0.011,0.1",
    "3,0.017,0.017,3.67,0.0,32,0,0,1e10,laminate,0.011,0.1",
    "4,0.0078,0.0078,3.72,0.0,36,0,0,1e11,laminate,0.011,0.1",
  ].join("\n");
  writeFileSync(join(dir, "stages.csv"), stages + "\n");

  const census = [
    "cluster,m1,m2,U11,U12,fraction,captured_total,tv_distance",
    "0,1.55,0.95,0.51,0.86,0.199,0.994,0.006",
    "1,-0.59,1.73,-0.62,-0.57,0.199,0.994,0.006",
    "2,-1.81,0.12,0.49,0.21,0.199,0.994,0.006",
    "3,-0.52,-1.75,-0.38,0.81,0.199,0.994,0.006",
    "4,1.37,-1.05,0.02,-1.3,0.198,0.994,0.006",
    "",
    "target,m1,m2,U11,U12,weight",
    "v0,1.57,0.97,0.52,0.87,0.2",
    "v1,-0.6,1.75,-0.63,-0.58,0.2",
    "v2,-1.83,0.13,0.5,0.22,0.2",
    "v3,-0.53,-1.77,-0.39,0.82,0.2",
    "v4,1.39,-1.07,0.03,-1.32,0.2",
  ].join("\n");
  writeFileSync(join(dir, "census.csv"), census + "\n");

  const N = 16;
  const times = [0.0, 0.5, 1.0];
  writeFileSync(join(dir, "fields.json"), JSON.stringify({
    resolution: N, length: 1.0, times, kind: "piecewise_constant",
    n_atoms: 1, lambda_max: 8.0, regions: [],
  }));
  for (let s = 0; s < times.length; s++) {
    const tag = `t${String(s).padStart(4, "0")}`;
    writeScalar(dir, `rho_${tag}`, N, times[s], (i, j) => (i < N / 2 ? 1.0 : 2.0), 1);
    writeScalar(dir, `q_${tag}`, N, times[s], (i, j) => (i < N / 2 ? 1.5 : 0.0), 1);
    writeScalar(dir, `m_${tag}`, N, times[s],
      (i, j, comp) => comp === 0
        ? 0.3 * Math.sin((2 * Math.PI * (i + 0.13 * s)) / N)
        : 0.2 * Math.cos((2 * Math.PI * j) / N), 2);
    writeScalar(dir, `U_${tag}`, N, times[s],
      (i, j, comp) => (comp === 0 ? 0.1 : -0.05) * Math.cos((2 * Math.PI * (i + j)) / N), 2);
  }
}

function writeScalar(dir: string, name: string, N: number, time: number,
                     fn: (i: number, j: number, comp: number) => number,
                     comps: number): void {
  const arr = new Float64Array(comps * N * N);
  for (let c = 0; c < comps; c++)
    for (let i = 0; i < N; i++)
      for (let j = 0; j < N; j++)
        arr[c * N * N + i * N + j] = fn(i, j, c);
  writeFileSync(join(dir, `${name}.f64`), Buffer.from(arr.buffer));
  const resolution = comps === 1 ? [N, N] : [comps, N, N];
  writeFileSync(join(dir, `${name}.json`), JSON.stringify({
    name, resolution, length: 1.0, time, components:
      comps === 1 ? [name.split("_")[0]] : ["c1", "c2"],
    dtype: "<f8", order: "C",
  }));
}

/** Figure builders: contraction/L2 curves, census scatter, field heatmaps,
 *  and nodal dist-to-K maps, all from dump files alone. */
import { Canvas, Color, colormap, fmt } from "./canvas.js";
import { readCensus, readField, readFieldsMeta, readStages } from "./data.js";
import { join } from "node:path";

const AXIS: Color = [40, 40, 40];
const GRID_C: Color = [220, 220, 220];
const CURVE: Color = [31, 119, 180];
const CURVE2: Color = [214, 39, 40];
const SCHED: Color = [120, 120, 120];

interface Frame {
  x0: number;
  y0: number;
  w: number;
  h: number;
  xmap: (v: number) => number;
  ymap: (v: number) => number;
}

function frame(c: Canvas, xmin: number, xmax: number, ymin: number,
               ymax: number): Frame {
  const x0 = 52, y0 = 16;
  const w = c.width - x0 - 14, h = c.height - y0 - 34;
  const xmap = (v: number) => x0 + ((v - xmin) / (xmax - xmin || 1)) * w;
  const ymap = (v: number) => y0 + h - ((v - ymin) / (ymax - ymin || 1)) * h;
  c.line(x0, y0, x0, y0 + h, AXIS);
  c.line(x0, y0 + h, x0 + w, y0 + h, AXIS);
  return { x0, y0, w, h, xmap, ymap };
}

export function plotContraction(dumpDir: string, width = 480, height = 320): Canvas {
  const rows = readStages(join(dumpDir, "stages.csv"));
  const c = new Canvas(width, height);
  const logd = rows.map((r) => Math.log10(Math.max(r.dist_integral, 1e-16)));
  const ymin = Math.floor(Math.min(...logd)) - 0.2;
  const ymax = Math.ceil(Math.max(...logd)) + 0.2;
  const f = frame(c, 1, Math.max(rows.length, 2), ymin, ymax);
  for (let e = Math.ceil(ymin); e <= ymax; e++) {
    const y = f.ymap(e);
    c.line(f.x0, y, f.x0 + f.w, y, GRID_C);
    c.text(4, y - 3, `1e${e}`, AXIS);
  }
  // dyadic schedule min(2^-(k-1), d_{k-1}/2) reference
  for (let i = 1; i < rows.length; i++) {
    const bound = Math.min(2 ** -(rows[i].stage - 1),
                           rows[i - 1].dist_integral / 2);
    const y = f.ymap(Math.log10(bound + rows[i].quad_tol));
    const x = f.xmap(rows[i].stage);
    c.line(x - 4, y, x + 4, y, SCHED);
  }
  for (let i = 1; i < rows.length; i++) {
    c.line(f.xmap(rows[i - 1].stage), f.ymap(logd[i - 1]),
           f.xmap(rows[i].stage), f.ymap(logd[i]), CURVE);
  }
  rows.forEach((r, i) => {
    c.disc(Math.round(f.xmap(r.stage)), Math.round(f.ymap(logd[i])), 2, CURVE);
    c.text(f.xmap(r.stage) - 2, f.y0 + f.h + 4, String(r.stage), AXIS);
  });
  c.text(f.x0 + 4, f.y0 + 2, "dist integral vs stage", AXIS);
  c.text(f.x0 + Math.floor(f.w / 2) - 15, c.height - 12, "stage", AXIS);
  return c;
}

export function plotL2(dumpDir: string, width = 480, height = 320): Canvas {
  const rows = readStages(join(dumpDir, "stages.csv"));
  const c = new Canvas(width, height);
  const vals = rows.map((r) => r.l2_D1);
  const ymin = Math.min(...vals), ymax = Math.max(...vals);
  const pad = (ymax - ymin || 1) * 0.1;
  const f = frame(c, 1, Math.max(rows.length, 2), ymin - pad, ymax + pad);
  for (let i = 1; i < rows.length; i++)
    c.line(f.xmap(rows[i - 1].stage), f.ymap(vals[i - 1]),
           f.xmap(rows[i].stage), f.ymap(vals[i]), CURVE2);
  rows.forEach((r, i) => {
    c.disc(Math.round(f.xmap(r.stage)), Math.round(f.ymap(vals[i])), 2, CURVE2);
    c.text(f.xmap(r.stage) - 2, f.y0 + f.h + 4, String(r.stage), AXIS);
  });
  c.text(4, f.y0 - 2 + 6, fmt(ymax), AXIS);
  c.text(4, f.ymap(ymin) - 3, fmt(ymin), AXIS);
  c.text(f.x0 + 4, f.y0 + 2, "l2 norm vs stage (nondecreasing)", AXIS);
  c.text(f.x0 + Math.floor(f.w / 2) - 15, c.height - 12, "stage", AXIS);
  return c;
}

export function plotCensus(dumpDir: string, width = 420, height = 420): Canvas {
  const census = readCensus(join(dumpDir, "census.csv"));
  const c = new Canvas(width, height);
  const all = [...census.clusters, ...census.targets];
  if (all.length === 0) throw new Error("census CSV has no rows");
  const r = Math.max(...all.map((p) => Math.hypot(p.m1, p.m2))) * 1.25 || 1;
  const f = frame(c, -r, r, -r, r);
  c.line(f.xmap(0), f.y0, f.xmap(0), f.y0 + f.h, GRID_C);
  c.line(f.x0, f.ymap(0), f.x0 + f.w, f.ymap(0), GRID_C);
  for (const t of census.targets)
    c.cross(Math.round(f.xmap(t.m1)), Math.round(f.ymap(t.m2)), 5, CURVE2);
  for (const p of census.clusters) {
    const rad = Math.max(2, Math.round(12 * Math.sqrt(p.fraction)));
    c.disc(Math.round(f.xmap(p.m1)), Math.round(f.ymap(p.m2)), rad, CURVE);
  }
  c.text(f.x0 + 4, f.y0 + 2,
         `census (m1,m2)  captured=${fmt(census.captured)}`, AXIS);
  c.text(f.x0 + Math.floor(f.w / 2) - 6, c.height - 12, "m1", AXIS);
  c.text(4, f.y0 + Math.floor(f.h / 2), "m2", AXIS);
  return c;
}

export function plotHeatmap(dumpDir: string, field: string, slice: number,
                            width = 420, height = 460): Canvas {
  const meta = readFieldsMeta(dumpDir);
  if (slice < 0 || slice >= meta.times.length)
    throw new Error(`slice ${slice} out of range (0..${meta.times.length - 1})`);
  const tag = `t${String(slice).padStart(4, "0")}`;
  let values: Float64Array;
  let label = field;
  const N = meta.resolution;
  if (field === "speed") {
    const { data } = readField(dumpDir, `m_${tag}`);
    values = new Float64Array(N * N);
    for (let i = 0; i < N * N; i++)
      values[i] = Math.hypot(data[i], data[N * N + i]);
    label = "m magnitude";
  } else {
    const { data } = readField(dumpDir, `${field}_${tag}`);
    values = new Float64Array(data.subarray(0, N * N));
  }
  return heatmapCanvas(values, N, meta.length, meta.times[slice], label,
                       width, height);
}

/** nodal distance to K_{rho,q} for an (m, U) slice: brute scan + refine */
export function plotDistMap(dumpDir: string, slice: number,
                            width = 420, height = 460): Canvas {
  const meta = readFieldsMeta(dumpDir);
  const tag = `t${String(slice).padStart(4, "0")}`;
  const N = meta.resolution;
  const rho = readField(dumpDir, `rho_${tag}`).data;
  const q = readField(dumpDir, `q_${tag}`).data;
  const m = readField(dumpDir, `m_${tag}`).data;
  const U = readField(dumpDir, `U_${tag}`).data;
  const M = 96;
  const cs = new Float64Array(M), sn = new Float64Array(M);
  const c2 = new Float64Array(M), s2 = new Float64Array(M);
  for (let k = 0; k < M; k++) {
    const th = (2 * Math.PI * k) / M;
    cs[k] = Math.cos(th);
    sn[k] = Math.sin(th);
    c2[k] = Math.cos(2 * th);
    s2[k] = Math.sin(2 * th);
  }
  const dist = new Float64Array(N * N);
  for (let i = 0; i < N * N; i++) {
    const s = Math.sqrt(Math.max(2 * rho[i] * q[i], 0));
    const qq = Math.max(q[i], 0);
    let best = Infinity;
    for (let k = 0; k < M; k++) {
      const d0 = m[i] - s * cs[k];
      const d1 = m[N * N + i] - s * sn[k];
      const d2 = U[i] - qq * c2[k];
      const d3 = U[N * N + i] - qq * s2[k];
      const d = d0 * d0 + d1 * d1 + 2 * (d2 * d2 + d3 * d3);
      if (d < best) best = d;
    }
    dist[i] = Math.sqrt(best);
  }
  return heatmapCanvas(dist, N, meta.length, meta.times[slice], "dist to K",
                       width, height);
}

function heatmapCanvas(values: Float64Array, N: number, L: number, t: number,
                       label: string, width: number, height: number): Canvas {
  const c = new Canvas(width, height);
  let lo = Infinity, hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (!(hi > lo)) hi = lo + 1;
  const x0 = 40, y0 = 30;
  const side = Math.min(width - x0 - 16, height - y0 - 56);
  for (let py = 0; py < side; py++) {
    for (let px = 0; px < side; px++) {
      const i = Math.min(N - 1, Math.floor((px / side) * N));
      const j = Math.min(N - 1, Math.floor(((side - 1 - py) / side) * N));
      c.set(x0 + px, y0 + py, colormap((values[i * N + j] - lo) / (hi - lo)));
    }
  }
  c.text(x0, 8, `${label}  t=${fmt(t)}`, AXIS);
  c.text(x0, 18, `min=${fmt(lo)} max=${fmt(hi)}`, AXIS);
  c.text(x0 + Math.floor(side / 2) - 6, y0 + side + 6, `x1 (0..${fmt(L)})`, AXIS);
  c.text(2, y0 + Math.floor(side / 2), "x2", AXIS);
  // colorbar
  const cbY = y0 + side + 20;
  for (let px = 0; px < side; px++)
    for (let yy = 0; yy < 8; yy++)
      c.set(x0 + px, cbY + yy, colormap(px / side));
  return c;
}

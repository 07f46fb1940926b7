/** Readers for the wildflow dump interfaces: stage CSV, census CSV,
 *  raw little-endian float64 field dumps with JSON sidecars. */
import { readFileSync, existsSync } from "node:fs";
import { join } from "node:path";

export interface StageRow {
  stage: number;
  dist_integral: number;
  dist_integral_D1: number;
  l2_D1: number;
  pairing: number;
  quad_tol: number;
  mode: string;
}

export interface CensusPoint {
  cluster: string;
  m1: number;
  m2: number;
  U11: number;
  U12: number;
  fraction: number;
}

export interface FieldsMeta {
  resolution: number;
  length: number;
  times: number[];
  kind: string;
  lambda_max: number;
}

export function parseCsv(text: string): Record<string, string>[] {
  const lines = text.trim().split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length === 0) throw new Error("empty CSV");
  const header = lines[0].split(",");
  return lines.slice(1).map((line) => {
    const cells = line.split(",");
    const row: Record<string, string> = {};
    header.forEach((h, i) => (row[h] = cells[i] ?? ""));
    return row;
  });
}

export function readStages(path: string): StageRow[] {
  if (!existsSync(path)) throw new Error(`missing stage CSV: ${path}`);
  const rows = parseCsv(readFileSync(path, "utf8"));
  if (rows.length === 0) throw new Error(`empty stage CSV: ${path}`);
  return rows.map((r) => ({
    stage: Number(r.stage),
    dist_integral: Number(r.dist_integral),
    dist_integral_D1: Number(r.dist_integral_D1),
    l2_D1: Number(r.l2_D1),
    pairing: Number(r.pairing),
    quad_tol: Number(r.quad_tol),
    mode: r.mode,
  }));
}

export interface Census {
  clusters: CensusPoint[];
  targets: CensusPoint[];
  captured: number;
  tv: number;
}

export function readCensus(path: string): Census {
  if (!existsSync(path)) throw new Error(`missing census CSV: ${path}`);
  const text = readFileSync(path, "utf8");
  const blocks = text.trim().split(/\r?\n\r?\n/);
  const main = parseCsv(blocks[0]);
  const clusters = main.map((r) => ({
    cluster: r.cluster,
    m1: Number(r.m1),
    m2: Number(r.m2),
    U11: Number(r.U11),
    U12: Number(r.U12),
    fraction: Number(r.fraction),
  }));
  const captured = main.length ? Number(main[0].captured_total) : 0;
  const tv = main.length ? Number(main[0].tv_distance) : 1;
  const targets: CensusPoint[] = [];
  if (blocks.length > 1) {
    for (const r of parseCsv(blocks[1])) {
      targets.push({
        cluster: r.target,
        m1: Number(r.m1),
        m2: Number(r.m2),
        U11: Number(r.U11),
        U12: Number(r.U12),
        fraction: Number(r.weight),
      });
    }
  }
  return { clusters, targets, captured, tv };
}

export function readFieldsMeta(dir: string): FieldsMeta {
  const p = join(dir, "fields.json");
  if (!existsSync(p)) throw new Error(`missing fields.json in ${dir}`);
  const meta = JSON.parse(readFileSync(p, "utf8"));
  if (!Array.isArray(meta.times) || !meta.resolution)
    throw new Error(`corrupt fields.json in ${dir}`);
  return meta as FieldsMeta;
}

export function readField(dir: string, name: string): {
  data: Float64Array;
  meta: { resolution: number[]; time: number; length: number };
} {
  const metaPath = join(dir, `${name}.json`);
  const rawPath = join(dir, `${name}.f64`);
  if (!existsSync(metaPath) || !existsSync(rawPath))
    throw new Error(`missing dump ${name} in ${dir}`);
  const meta = JSON.parse(readFileSync(metaPath, "utf8"));
  const buf = readFileSync(rawPath);
  const data = new Float64Array(buf.buffer, buf.byteOffset, buf.byteLength / 8);
  const expect = (meta.resolution as number[]).reduce((a, b) => a * b, 1);
  if (data.length !== expect)
    throw new Error(`corrupt dump ${name}: ${data.length} values, expected ${expect}`);
  return { data, meta };
}

#!/usr/bin/env node
/**
 * Render figures from a wildflow run directory.
 *
 *   node dist/cli.js contraction --dump RUN_DIR --out fig.png
 *   node dist/cli.js l2          --dump RUN_DIR --out fig.png
 *   node dist/cli.js census      --dump RUN_DIR --out fig.png
 *   node dist/cli.js heatmap     --dump RUN_DIR --out fig.png [--field rho|q|speed] [--slice N]
 *   node dist/cli.js distmap     --dump RUN_DIR --out fig.png [--slice N]
 */
import { writeFileSync } from "node:fs";
import { plotCensus, plotContraction, plotDistMap, plotHeatmap, plotL2 } from "./plots.js";

function parseArgs(argv: string[]) {
  const kind = argv[0];
  const opts: Record<string, string> = {};
  for (let i = 1; i < argv.length; i += 2) {
    if (!argv[i].startsWith("--") || argv[i + 1] === undefined) {
      throw new Error(`bad argument pair at '${argv[i]}'`);
    }
    opts[argv[i].slice(2)] = argv[i + 1];
  }
  return { kind, opts };
}

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs(argv);
  } catch (e) {
    console.error(String(e));
    return 2;
  }
  const { kind, opts } = parsed;
  const dump = opts.dump;
  const out = opts.out;
  if (!kind || !dump || !out) {
    console.error("usage: cli.js <contraction|l2|census|heatmap|distmap> --dump DIR --out PNG");
    return 2;
  }
  try {
    let canvas;
    switch (kind) {
      case "contraction":
        canvas = plotContraction(dump);
        break;
      case "l2":
        canvas = plotL2(dump);
        break;
      case "census":
        canvas = plotCensus(dump);
        break;
      case "heatmap":
        canvas = plotHeatmap(dump, opts.field ?? "rho", Number(opts.slice ?? 0));
        break;
      case "distmap":
        canvas = plotDistMap(dump, Number(opts.slice ?? 0));
        break;
      default:
        console.error(`unknown figure kind '${kind}'`);
        return 2;
    }
    writeFileSync(out, canvas.png());
    console.log(`wrote ${out}`);
    return 0;
  } catch (e) {
    console.error(String(e));
    return 1;
  }
}

const isMain = process.argv[1] && process.argv[1].endsWith("cli.js");
if (isMain) {
  process.exit(main(process.argv.slice(2)));
}

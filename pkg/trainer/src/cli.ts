#!/usr/bin/env node
import * as fs from "node:fs";
import * as path from "node:path";
import { parseArgs } from "node:util";

import { fineTuneAndEvaluate } from "./train.js";
import { configFrom, TrainerError } from "./types.js";

const USAGE = `usage: babelgen-trainer --train train.jsonl --dev dev.jsonl --test test.jsonl [--config config.json] --out result.json

Trains a small text classifier per seed with early stopping on dev macro-F1
and writes {"per_seed_f1": [...], "mean_f1": x, "epochs_run": [...], "config": {...}}.`;

export function runCli(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        train: { type: "string" },
        dev: { type: "string" },
        test: { type: "string" },
        config: { type: "string" },
        out: { type: "string" },
        help: { type: "boolean", short: "h" },
      },
      allowPositionals: false,
    });
  } catch (err) {
    console.error(String(err));
    console.error(USAGE);
    return 2;
  }
  const values = parsed.values;
  if (values.help) {
    console.log(USAGE);
    return 0;
  }
  for (const key of ["train", "dev", "test", "out"] as const) {
    if (!values[key]) {
      console.error(`missing required flag --${key}`);
      console.error(USAGE);
      return 2;
    }
  }
  try {
    let raw: Record<string, unknown> = {};
    if (values.config) {
      raw = JSON.parse(fs.readFileSync(values.config, "utf-8"));
    }
    const cfg = configFrom(raw);
    const result = fineTuneAndEvaluate(
      values.train as string,
      values.dev as string,
      values.test as string,
      cfg,
    );
    const outPath = values.out as string;
    fs.mkdirSync(path.dirname(path.resolve(outPath)), { recursive: true });
    fs.writeFileSync(outPath, JSON.stringify(result, null, 2) + "\n", "utf-8");
    console.log(outPath);
    return 0;
  } catch (err) {
    if (err instanceof TrainerError) {
      console.error(`error: ${err.message}`);
      return 2;
    }
    console.error(String(err));
    return 1;
  }
}

const entry = process.argv[1] ? path.resolve(process.argv[1]) : "";
if (entry && import.meta.url.endsWith(path.basename(entry))) {
  process.exit(runCli(process.argv.slice(2)));
}

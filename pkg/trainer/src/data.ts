import * as fs from "node:fs";

import { CorpusRecord, TrainerError } from "./types.js";

export function readCorpusJsonl(path: string): CorpusRecord[] {
  if (!fs.existsSync(path)) {
    throw new TrainerError(`corpus file not found: ${path}`);
  }
  const records: CorpusRecord[] = [];
  const lines = fs.readFileSync(path, "utf-8").split("\n");
  lines.forEach((line, index) => {
    if (!line.trim()) return;
    let parsed: unknown;
    try {
      parsed = JSON.parse(line);
    } catch (err) {
      throw new TrainerError(`${path}:${index + 1}: invalid JSON (${err})`);
    }
    const row = parsed as Record<string, unknown>;
    for (const key of ["id", "text", "label", "language"]) {
      if (typeof row[key] !== "string") {
        throw new TrainerError(`${path}:${index + 1}: missing string field "${key}"`);
      }
    }
    records.push({
      id: row.id as string,
      text: row.text as string,
      label: row.label as string,
      language: row.language as string,
      split: typeof row.split === "string" ? row.split : "train",
      source: typeof row.source === "string" ? row.source : "generated",
      meta: (row.meta as Record<string, string>) ?? {},
    });
  });
  if (records.length === 0) {
    throw new TrainerError(`corpus file holds no records: ${path}`);
  }
  return records;
}

export function labelList(records: CorpusRecord[]): string[] {
  const labels: string[] = [];
  for (const record of records) {
    if (!labels.includes(record.label)) labels.push(record.label);
  }
  return labels;
}

/** Train and test must agree on the label set; dev may be a subset. */
export function checkLabelSets(
  train: CorpusRecord[],
  dev: CorpusRecord[],
  test: CorpusRecord[],
): string[] {
  const trainLabels = new Set(labelList(train));
  const testLabels = new Set(labelList(test));
  const onlyTrain = [...trainLabels].filter((l) => !testLabels.has(l)).sort();
  const onlyTest = [...testLabels].filter((l) => !trainLabels.has(l)).sort();
  if (onlyTrain.length || onlyTest.length) {
    throw new TrainerError(
      `label mismatch between train and test: train-only=${JSON.stringify(onlyTrain)} ` +
        `test-only=${JSON.stringify(onlyTest)}`,
    );
  }
  const devStray = labelList(dev).filter((l) => !trainLabels.has(l)).sort();
  if (devStray.length) {
    throw new TrainerError(`dev labels missing from train: ${JSON.stringify(devStray)}`);
  }
  return labelList(train);
}

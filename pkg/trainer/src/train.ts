import { checkLabelSets, readCorpusJsonl } from "./data.js";
import { featurize } from "./features.js";
import { macroF1 } from "./metrics.js";
import { AdamW, Classifier, crossEntropy, trainBatch } from "./model.js";
import { Rng } from "./rng.js";
import {
  configEcho,
  CorpusRecord,
  TrainConfig,
  TrainerError,
  TrainResult,
} from "./types.js";

const KNOWN_ENCODERS = ["hashing-mlp", "hashing-linear"];

interface Encoded {
  xs: Float64Array[];
  ys: number[];
  labels: string[];
}

function encode(records: CorpusRecord[], labels: string[], dim: number): Encoded {
  const index = new Map(labels.map((label, i) => [label, i]));
  return {
    xs: records.map((r) => featurize(r.text, dim)),
    ys: records.map((r) => index.get(r.label) as number),
    labels,
  };
}

function evaluateF1(model: Classifier, data: Encoded): number {
  const predictions = data.xs.map((x) => data.labels[model.predict(x)]);
  const gold = data.ys.map((y) => data.labels[y]);
  return macroF1(predictions, gold, data.labels);
}

interface SeedOutcome {
  testF1: number;
  epochsRun: number;
}

export function trainOneSeed(
  train: Encoded,
  dev: Encoded,
  test: Encoded,
  cfg: TrainConfig,
  seed: number,
): SeedOutcome {
  const hidden = cfg.encoderId === "hashing-linear" ? 0 : cfg.hiddenDim;
  const rng = new Rng(seed * 2654435761 + 1);
  const model = new Classifier(cfg.featureDim, train.labels.length, hidden, rng);
  const optimizer = new AdamW(cfg.learningRate, cfg.weightDecay);
  const slots = model.registerWith(optimizer);

  // early stopping: keep the best dev-metric weights, stop after `patience`
  // epochs without improvement
  let best = -Infinity;
  let bestWeights = model.snapshot();
  let stale = 0;
  let epochsRun = 0;

  const order = train.xs.map((_, i) => i);
  for (let epoch = 1; epoch <= cfg.epochs; epoch++) {
    epochsRun = epoch;
    rng.shuffle(order);
    for (let start = 0; start < order.length; start += cfg.batchSize) {
      const batchIdx = order.slice(start, start + cfg.batchSize);
      trainBatch(
        model,
        batchIdx.map((i) => train.xs[i]),
        batchIdx.map((i) => train.ys[i]),
        optimizer,
        slots,
      );
    }
    const metric =
      cfg.earlyStopMetric === "loss"
        ? -crossEntropy(model, dev.xs, dev.ys)
        : evaluateF1(model, dev);
    if (metric > best) {
      best = metric;
      bestWeights = model.snapshot();
      stale = 0;
    } else {
      stale += 1;
      if (stale >= cfg.patience) break;
    }
  }

  model.restore(bestWeights);
  return { testF1: evaluateF1(model, test), epochsRun };
}

export function fineTuneAndEvaluate(
  trainPath: string,
  devPath: string,
  testPath: string,
  cfg: TrainConfig,
): TrainResult {
  if (!KNOWN_ENCODERS.includes(cfg.encoderId)) {
    throw new TrainerError(
      `unknown encoder "${cfg.encoderId}"; this trainer ships ${JSON.stringify(KNOWN_ENCODERS)} ` +
        "(pretrained checkpoints are not available offline)",
    );
  }
  const trainRecords = readCorpusJsonl(trainPath);
  const devRecords = readCorpusJsonl(devPath);
  const testRecords = readCorpusJsonl(testPath);
  const labels = checkLabelSets(trainRecords, devRecords, testRecords);

  const train = encode(trainRecords, labels, cfg.featureDim);
  const dev = encode(devRecords, labels, cfg.featureDim);
  const test = encode(testRecords, labels, cfg.featureDim);

  const perSeedF1: number[] = [];
  const epochsRun: number[] = [];
  for (const seed of cfg.seeds) {
    const outcome = trainOneSeed(train, dev, test, cfg, seed);
    perSeedF1.push(outcome.testF1);
    epochsRun.push(outcome.epochsRun);
  }
  const mean = perSeedF1.reduce((a, b) => a + b, 0) / perSeedF1.length;
  return {
    per_seed_f1: perSeedF1,
    mean_f1: mean,
    epochs_run: epochsRun,
    config: configEcho(cfg),
  };
}

/** One line of the corpus-schema JSONL the generation pipeline exports. */
export interface CorpusRecord {
  id: string;
  text: string;
  label: string;
  language: string;
  split: string;
  source: string;
  meta: Record<string, string>;
}

export type EarlyStopMetric = "f1" | "loss";

export interface TrainConfig {
  epochs: number;
  batchSize: number;
  learningRate: number;
  weightDecay: number;
  patience: number;
  seeds: number[];
  encoderId: string;
  featureDim: number;
  hiddenDim: number;
  earlyStopMetric: EarlyStopMetric;
}

export const DEFAULT_CONFIG: TrainConfig = {
  epochs: 50,
  batchSize: 16,
  learningRate: 1e-5,
  weightDecay: 0.01,
  patience: 5,
  seeds: [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
  encoderId: "hashing-mlp",
  featureDim: 2048,
  hiddenDim: 64,
  earlyStopMetric: "f1",
};

/** Result file schema the reporter ingests unchanged. */
export interface TrainResult {
  per_seed_f1: number[];
  mean_f1: number;
  epochs_run: number[];
  config: Record<string, unknown>;
}

export class TrainerError extends Error {}

/** Accepts the snake_case config file keys used across the pipeline. */
export function configFrom(raw: Record<string, unknown>): TrainConfig {
  const cfg: TrainConfig = { ...DEFAULT_CONFIG, seeds: [...DEFAULT_CONFIG.seeds] };
  const num = (key: string, fallback: number): number => {
    const value = raw[key];
    if (value === undefined) return fallback;
    if (typeof value !== "number" || !Number.isFinite(value)) {
      throw new TrainerError(`config key ${key} must be a finite number`);
    }
    return value;
  };
  cfg.epochs = num("epochs", cfg.epochs);
  cfg.batchSize = num("batch_size", cfg.batchSize);
  cfg.learningRate = num("learning_rate", cfg.learningRate);
  cfg.weightDecay = num("weight_decay", cfg.weightDecay);
  cfg.patience = num("patience", cfg.patience);
  cfg.featureDim = num("feature_dim", cfg.featureDim);
  cfg.hiddenDim = num("hidden_dim", cfg.hiddenDim);
  if (raw["seeds"] !== undefined) {
    if (!Array.isArray(raw["seeds"]) || raw["seeds"].length === 0) {
      throw new TrainerError("config key seeds must be a non-empty array");
    }
    cfg.seeds = raw["seeds"].map((s) => Number(s));
  }
  if (raw["encoder_id"] !== undefined) cfg.encoderId = String(raw["encoder_id"]);
  if (raw["early_stop_metric"] !== undefined) {
    const metric = String(raw["early_stop_metric"]);
    if (metric !== "f1" && metric !== "loss") {
      throw new TrainerError(`early_stop_metric must be "f1" or "loss", got ${metric}`);
    }
    cfg.earlyStopMetric = metric;
  }
  if (cfg.patience >= cfg.epochs) {
    throw new TrainerError(`patience (${cfg.patience}) must be smaller than epochs (${cfg.epochs})`);
  }
  return cfg;
}

export function configEcho(cfg: TrainConfig): Record<string, unknown> {
  return {
    epochs: cfg.epochs,
    batch_size: cfg.batchSize,
    learning_rate: cfg.learningRate,
    weight_decay: cfg.weightDecay,
    patience: cfg.patience,
    seeds: cfg.seeds,
    encoder_id: cfg.encoderId,
    feature_dim: cfg.featureDim,
    hidden_dim: cfg.hiddenDim,
    early_stop_metric: cfg.earlyStopMetric,
  };
}

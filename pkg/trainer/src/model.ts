import { Rng } from "./rng.js";
import { TrainerError } from "./types.js";

/** AdamW state for one parameter array (decoupled weight decay). */
class AdamSlot {
  m: Float64Array;
  v: Float64Array;

  constructor(size: number) {
    this.m = new Float64Array(size);
    this.v = new Float64Array(size);
  }
}

export class AdamW {
  private slots: AdamSlot[] = [];
  private step = 0;
  private readonly beta1 = 0.9;
  private readonly beta2 = 0.999;
  private readonly eps = 1e-8;

  constructor(
    private readonly learningRate: number,
    private readonly weightDecay: number,
  ) {}

  register(size: number): number {
    this.slots.push(new AdamSlot(size));
    return this.slots.length - 1;
  }

  beginStep(): void {
    this.step += 1;
  }

  update(slot: number, params: Float64Array, grads: Float64Array, decay: boolean): void {
    const { m, v } = this.slots[slot];
    const correction1 = 1 - Math.pow(this.beta1, this.step);
    const correction2 = 1 - Math.pow(this.beta2, this.step);
    for (let i = 0; i < params.length; i++) {
      const g = grads[i];
      m[i] = this.beta1 * m[i] + (1 - this.beta1) * g;
      v[i] = this.beta2 * v[i] + (1 - this.beta2) * g * g;
      const mHat = m[i] / correction1;
      const vHat = v[i] / correction2;
      let delta = mHat / (Math.sqrt(vHat) + this.eps);
      if (decay) delta += this.weightDecay * params[i];
      params[i] -= this.learningRate * delta;
    }
  }
}

/** Softmax classifier over hashed features with an optional ReLU hidden layer. */
export class Classifier {
  readonly hidden: number;
  w1: Float64Array; // hidden x dim (or classes x dim when hidden == 0)
  b1: Float64Array;
  w2: Float64Array; // classes x hidden (empty when hidden == 0)
  b2: Float64Array;

  constructor(
    readonly dim: number,
    readonly classes: number,
    hidden: number,
    rng: Rng,
  ) {
    if (classes < 2) throw new TrainerError(`need at least 2 classes, got ${classes}`);
    this.hidden = hidden;
    if (hidden > 0) {
      this.w1 = new Float64Array(hidden * dim);
      this.b1 = new Float64Array(hidden);
      this.w2 = new Float64Array(classes * hidden);
      this.b2 = new Float64Array(classes);
      const scale1 = Math.sqrt(2.0 / dim);
      for (let i = 0; i < this.w1.length; i++) this.w1[i] = rng.gauss() * scale1;
      const scale2 = Math.sqrt(2.0 / hidden);
      for (let i = 0; i < this.w2.length; i++) this.w2[i] = rng.gauss() * scale2;
    } else {
      this.w1 = new Float64Array(classes * dim);
      this.b1 = new Float64Array(classes);
      this.w2 = new Float64Array(0);
      this.b2 = new Float64Array(0);
      const scale = Math.sqrt(1.0 / dim);
      for (let i = 0; i < this.w1.length; i++) this.w1[i] = rng.gauss() * scale;
    }
  }

  registerWith(optimizer: AdamW): number[] {
    return [
      optimizer.register(this.w1.length),
      optimizer.register(this.b1.length),
      optimizer.register(this.w2.length),
      optimizer.register(this.b2.length),
    ];
  }

  logits(x: Float64Array, hiddenOut?: Float64Array): Float64Array {
    if (this.hidden === 0) {
      const out = new Float64Array(this.classes);
      for (let c = 0; c < this.classes; c++) {
        let sum = this.b1[c];
        const row = c * this.dim;
        for (let i = 0; i < this.dim; i++) sum += this.w1[row + i] * x[i];
        out[c] = sum;
      }
      return out;
    }
    const h = hiddenOut ?? new Float64Array(this.hidden);
    for (let j = 0; j < this.hidden; j++) {
      let sum = this.b1[j];
      const row = j * this.dim;
      for (let i = 0; i < this.dim; i++) sum += this.w1[row + i] * x[i];
      h[j] = sum > 0 ? sum : 0;
    }
    const out = new Float64Array(this.classes);
    for (let c = 0; c < this.classes; c++) {
      let sum = this.b2[c];
      const row = c * this.hidden;
      for (let j = 0; j < this.hidden; j++) sum += this.w2[row + j] * h[j];
      out[c] = sum;
    }
    return out;
  }

  predict(x: Float64Array): number {
    const scores = this.logits(x);
    let best = 0;
    for (let c = 1; c < this.classes; c++) {
      if (scores[c] > scores[best]) best = c;
    }
    return best;
  }

  snapshot(): Float64Array[] {
    return [this.w1.slice(), this.b1.slice(), this.w2.slice(), this.b2.slice()];
  }

  restore(weights: Float64Array[]): void {
    [this.w1, this.b1, this.w2, this.b2] = weights.map((w) => w.slice()) as [
      Float64Array, Float64Array, Float64Array, Float64Array,
    ];
  }
}

function softmaxInPlace(logits: Float64Array): void {
  let max = -Infinity;
  for (const value of logits) max = Math.max(max, value);
  let total = 0;
  for (let i = 0; i < logits.length; i++) {
    logits[i] = Math.exp(logits[i] - max);
    total += logits[i];
  }
  for (let i = 0; i < logits.length; i++) logits[i] /= total;
}

export function crossEntropy(model: Classifier, xs: Float64Array[], ys: number[]): number {
  let loss = 0;
  for (let n = 0; n < xs.length; n++) {
    const p = model.logits(xs[n]);
    softmaxInPlace(p);
    loss += -Math.log(Math.max(p[ys[n]], 1e-12));
  }
  return loss / xs.length;
}

/** One AdamW step on a minibatch; returns the mean cross-entropy loss. */
export function trainBatch(
  model: Classifier,
  xs: Float64Array[],
  ys: number[],
  optimizer: AdamW,
  slots: number[],
): number {
  const batch = xs.length;
  const gW1 = new Float64Array(model.w1.length);
  const gB1 = new Float64Array(model.b1.length);
  const gW2 = new Float64Array(model.w2.length);
  const gB2 = new Float64Array(model.b2.length);
  let loss = 0;

  const hiddenBuf = model.hidden > 0 ? new Float64Array(model.hidden) : undefined;
  for (let n = 0; n < batch; n++) {
    const x = xs[n];
    const y = ys[n];
    const p = model.logits(x, hiddenBuf);
    softmaxInPlace(p);
    loss += -Math.log(Math.max(p[y], 1e-12));
    p[y] -= 1; // now p is dLoss/dLogits

    if (model.hidden === 0) {
      for (let c = 0; c < model.classes; c++) {
        const g = p[c] / batch;
        gB1[c] += g;
        const row = c * model.dim;
        for (let i = 0; i < model.dim; i++) gW1[row + i] += g * x[i];
      }
      continue;
    }
    const h = hiddenBuf as Float64Array;
    for (let c = 0; c < model.classes; c++) {
      const g = p[c] / batch;
      gB2[c] += g;
      const row = c * model.hidden;
      for (let j = 0; j < model.hidden; j++) gW2[row + j] += g * h[j];
    }
    for (let j = 0; j < model.hidden; j++) {
      if (h[j] <= 0) continue; // ReLU gate
      let upstream = 0;
      for (let c = 0; c < model.classes; c++) {
        upstream += (p[c] / batch) * model.w2[c * model.hidden + j];
      }
      gB1[j] += upstream;
      const row = j * model.dim;
      for (let i = 0; i < model.dim; i++) {
        if (x[i] !== 0) gW1[row + i] += upstream * x[i];
      }
    }
  }

  optimizer.beginStep();
  optimizer.update(slots[0], model.w1, gW1, true);
  optimizer.update(slots[1], model.b1, gB1, false);
  if (model.hidden > 0) {
    optimizer.update(slots[2], model.w2, gW2, true);
    optimizer.update(slots[3], model.b2, gB2, false);
  }
  return loss / batch;
}

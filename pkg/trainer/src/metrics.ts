/** Unweighted mean of per-label F1 scores. */
export function macroF1(predictions: string[], gold: string[], labels: string[]): number {
  if (predictions.length !== gold.length) {
    throw new Error(`length mismatch: ${predictions.length} vs ${gold.length}`);
  }
  let total = 0;
  for (const label of labels) {
    let tp = 0;
    let fp = 0;
    let fn = 0;
    for (let i = 0; i < gold.length; i++) {
      const predicted = predictions[i] === label;
      const actual = gold[i] === label;
      if (predicted && actual) tp++;
      else if (predicted) fp++;
      else if (actual) fn++;
    }
    total += tp + fp + fn === 0 ? 0 : (2 * tp) / (2 * tp + fp + fn);
  }
  return total / labels.length;
}

/** Hashing-trick text encoder: word unigrams plus character trigrams.
 *
 * Character trigrams keep the encoder usable for languages without word
 * boundaries; the hashing trick keeps the vocabulary fixed-size with no
 * fitted state to ship.
 */

function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193);
  }
  return hash >>> 0;
}

export function featurize(text: string, dim: number): Float64Array {
  const vector = new Float64Array(dim);
  const lowered = text.toLowerCase();
  for (const word of lowered.split(/\s+/)) {
    if (!word) continue;
    vector[fnv1a(`w:${word}`) % dim] += 1.0;
  }
  const padded = `${lowered}`;
  for (let i = 0; i + 3 <= padded.length; i++) {
    vector[fnv1a(`c:${padded.slice(i, i + 3)}`) % dim] += 1.0;
  }
  let norm = 0;
  for (let i = 0; i < dim; i++) norm += vector[i] * vector[i];
  norm = Math.sqrt(norm);
  if (norm > 0) {
    for (let i = 0; i < dim; i++) vector[i] /= norm;
  }
  return vector;
}

"""Evaluation metrics: similarity to gold, diversity, macro-F1, aggregation.

TF-IDF variant is fixed and recorded in reports: raw term counts, smoothed
idf log((1+N)/(1+df)) + 1, L2-normalized vectors. Tokenization everywhere is
whitespace splitting after casefold (a known limitation for unsegmented
scripts such as Thai; surfaced in reports, not silently patched).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from babelgen.corpus import Dataset

logger = logging.getLogger(__name__)

TFIDF_VARIANT = "tf=raw idf=log((1+N)/(1+df))+1 norm=L2"


class MetricError(Exception):
    """Raised when a metric's preconditions do not hold."""


@dataclass
class MetricConfig:
    ngram_max: int = 4
    embed_batch: int = 64
    ci_level: float = 0.95
    pair_mode: str = "cross"  # cross: generated vs gold; within: generated pairs

    def __post_init__(self):
        if self.ngram_max < 1:
            raise ValueError("ngram_max must be >= 1")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must be in (0, 1)")
        if self.pair_mode not in ("cross", "within"):
            raise ValueError("pair_mode must be 'cross' or 'within'")


def tokenize(text: str) -> list[str]:
    return text.casefold().split()


def _label_texts(dataset: Dataset, labels: list[str]) -> dict[str, list[str]]:
    buckets: dict[str, list[str]] = {name: [] for name in labels}
    for ex in dataset.examples:
        if ex.label in buckets:
            buckets[ex.label].append(ex.text)
    return buckets


def _shared_labels(generated: Dataset, gold: Dataset) -> list[str]:
    gen_names, gold_names = set(generated.label_names()), set(gold.label_names())
    if gen_names != gold_names:
        raise MetricError(
            f"datasets do not share a label set: {sorted(gen_names ^ gold_names)} differ"
        )
    return gold.label_names()


def _tfidf_matrix(docs: list[list[str]]) -> np.ndarray:
    """Rows are L2-normalized tf-idf vectors over the fitted vocabulary."""
    vocab: dict[str, int] = {}
    for tokens in docs:
        for token in tokens:
            if token not in vocab:
                vocab[token] = len(vocab)
    n_docs = len(docs)
    matrix = np.zeros((n_docs, max(len(vocab), 1)))
    df = np.zeros(max(len(vocab), 1))
    for row, tokens in enumerate(docs):
        for token in tokens:
            matrix[row, vocab[token]] += 1.0
        for token in set(tokens):
            df[vocab[token]] += 1.0
    idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
    matrix *= idf
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return matrix / norms


def _mean_cross_cosine(rows_a: np.ndarray, rows_b: np.ndarray) -> float:
    # mean over all (a, b) pairs of unit-vector dot products
    return float(np.dot(rows_a.mean(axis=0), rows_b.mean(axis=0)))


def tfidf_cosine_to_gold(generated: Dataset, gold: Dataset, cfg: MetricConfig | None = None) -> float:
    """Mean per-label pairwise TF-IDF cosine between generated and gold texts.

    Vocabulary and idf are fitted on the union corpus; each label contributes
    the mean cosine over all its (generated, gold) cross pairs; labels are
    averaged unweighted.
    """
    cfg = cfg or MetricConfig()
    labels = _shared_labels(generated, gold)
    gen_texts = _label_texts(generated, labels)
    gold_texts = _label_texts(gold, labels)
    for name in labels:
        if not gen_texts[name]:
            raise MetricError(f"no generated examples for label {name!r}")
        if not gold_texts[name]:
            raise MetricError(f"no gold examples for label {name!r}")

    all_docs = [tokenize(t) for name in labels for t in gen_texts[name]] + [
        tokenize(t) for name in labels for t in gold_texts[name]
    ]
    matrix = _tfidf_matrix(all_docs)
    gen_total = sum(len(gen_texts[name]) for name in labels)

    per_label = []
    gen_offset, gold_offset = 0, gen_total
    for name in labels:
        n_gen, n_gold = len(gen_texts[name]), len(gold_texts[name])
        rows_gen = matrix[gen_offset : gen_offset + n_gen]
        rows_gold = matrix[gold_offset : gold_offset + n_gold]
        if cfg.pair_mode == "within":
            per_label.append(_mean_cross_cosine(rows_gen, rows_gen))
        else:
            per_label.append(_mean_cross_cosine(rows_gen, rows_gold))
        gen_offset += n_gen
        gold_offset += n_gold
    return float(np.mean(per_label))


def embedding_cosine_to_gold(
    generated: Dataset, gold: Dataset, backend, cfg: MetricConfig | None = None
) -> float:
    """Same pairing scheme as the TF-IDF similarity, over endpoint embeddings."""
    cfg = cfg or MetricConfig()
    labels = _shared_labels(generated, gold)
    gen_texts = _label_texts(generated, labels)
    gold_texts = _label_texts(gold, labels)
    for name in labels:
        if not gen_texts[name]:
            raise MetricError(f"no generated examples for label {name!r}")
        if not gold_texts[name]:
            raise MetricError(f"no gold examples for label {name!r}")

    flat = [t for name in labels for t in gen_texts[name]] + [
        t for name in labels for t in gold_texts[name]
    ]
    vectors = np.asarray(backend.embed(flat, batch_size=cfg.embed_batch), dtype=float)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    vectors = vectors / norms
    gen_total = sum(len(gen_texts[name]) for name in labels)

    per_label = []
    gen_offset, gold_offset = 0, gen_total
    for name in labels:
        n_gen, n_gold = len(gen_texts[name]), len(gold_texts[name])
        rows_gen = vectors[gen_offset : gen_offset + n_gen]
        rows_gold = vectors[gold_offset : gold_offset + n_gold]
        if cfg.pair_mode == "within":
            per_label.append(_mean_cross_cosine(rows_gen, rows_gen))
        else:
            per_label.append(_mean_cross_cosine(rows_gen, rows_gold))
        gen_offset += n_gen
        gold_offset += n_gold
    return float(np.mean(per_label))


def ngram_diversity(corpus: list[str], ngram_max: int = 4) -> float:
    """Sum over n=1..ngram_max of (unique n-grams / total n-grams).

    Documents contribute their n-gram multisets independently; n-grams never
    cross document boundaries.
    """
    if not corpus:
        raise MetricError("corpus must be non-empty")
    docs = [tokenize(text) for text in corpus]
    if all(len(tokens) == 0 for tokens in docs):
        raise MetricError("every document is shorter than one token")
    score = 0.0
    for n in range(1, ngram_max + 1):
        total = 0
        unique: set[tuple[str, ...]] = set()
        for tokens in docs:
            for i in range(len(tokens) - n + 1):
                unique.add(tuple(tokens[i : i + n]))
                total += 1
        if total:
            score += len(unique) / total
    return score


def macro_f1(predictions: list[str], gold: list[str], labels: list[str]) -> float:
    """Unweighted mean of per-label F1 scores.

    A label absent from both predictions and gold contributes F1 = 0 and is
    logged as a warning.
    """
    if len(predictions) != len(gold):
        raise MetricError(
            f"length mismatch: {len(predictions)} predictions vs {len(gold)} gold labels"
        )
    label_set = set(labels)
    missing = {g for g in gold if g not in label_set}
    if missing:
        raise MetricError(f"gold labels missing from the label set: {sorted(missing)}")
    scores = []
    for name in labels:
        tp = sum(1 for p, g in zip(predictions, gold) if p == name and g == name)
        fp = sum(1 for p, g in zip(predictions, gold) if p == name and g != name)
        fn = sum(1 for p, g in zip(predictions, gold) if p != name and g == name)
        if tp == fp == fn == 0:
            logger.warning("label %r absent from both predictions and gold; F1 = 0", name)
            scores.append(0.0)
        else:
            scores.append(2.0 * tp / (2.0 * tp + fp + fn))
    return sum(scores) / len(scores)


def pearson(xs: list[float], ys: list[float]) -> float:
    """Sample Pearson correlation coefficient."""
    if len(xs) != len(ys):
        raise MetricError("inputs must have equal lengths")
    if len(xs) < 2:
        raise MetricError("need at least two points")
    n = len(xs)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    var_x = sum((x - mean_x) ** 2 for x in xs)
    var_y = sum((y - mean_y) ** 2 for y in ys)
    if var_x == 0.0 or var_y == 0.0:
        raise MetricError("zero variance in at least one input")
    cov = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    return cov / math.sqrt(var_x * var_y)


def aggregate_seeds(scores: list[float], ci_level: float = 0.95) -> tuple[float, float, float]:
    """Mean with a Student-t confidence interval over per-seed scores.

    Returns the raw interval; callers clamp for display when the metric has
    natural bounds.
    """
    n = len(scores)
    if n < 2:
        raise MetricError("need at least two scores to aggregate")
    if all(s == scores[0] for s in scores):
        return (scores[0], scores[0], scores[0])
    mean = sum(scores) / n
    variance = sum((s - mean) ** 2 for s in scores) / (n - 1)
    half = float(stats.t.ppf((1.0 + ci_level) / 2.0, n - 1)) * math.sqrt(variance / n)
    return (mean, mean - half, mean + half)


def _round6(value: float | None) -> float | None:
    return None if value is None else round(float(value), 6)


@dataclass
class MetricReport:
    """Per-cell metric values feeding the reporter."""

    run_id: str
    f1_mean: float | None = None
    f1_ci_low: float | None = None
    f1_ci_high: float | None = None
    tfidf_sim: float | None = None
    embed_sim: float | None = None
    ngram_div: float | None = None
    rejection_rate: float | None = None
    per_seed_f1: list[float] = field(default_factory=list)
    tfidf_variant: str = TFIDF_VARIANT
    # whitespace tokenization undercounts for unsegmented scripts (e.g. Thai);
    # recorded here so reports carry the caveat
    tokenizer: str = "whitespace-casefold"

    def validate(self, ngram_max: int = 4) -> None:
        if self.f1_mean is not None and self.f1_ci_low is not None and self.f1_ci_high is not None:
            if not (self.f1_ci_low <= self.f1_mean <= self.f1_ci_high):
                raise MetricError("confidence interval does not bracket the mean")
        for name in ("tfidf_sim", "embed_sim"):
            value = getattr(self, name)
            if value is not None and not -1.0 - 1e-9 <= value <= 1.0 + 1e-9:
                raise MetricError(f"{name} outside [-1, 1]: {value}")
        if self.ngram_div is not None and not 0.0 <= self.ngram_div <= ngram_max:
            raise MetricError(f"ngram_div outside [0, {ngram_max}]: {self.ngram_div}")

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "f1_mean": _round6(self.f1_mean),
            "f1_ci_low": _round6(self.f1_ci_low),
            "f1_ci_high": _round6(self.f1_ci_high),
            "tfidf_sim": _round6(self.tfidf_sim),
            "embed_sim": _round6(self.embed_sim),
            "ngram_div": _round6(self.ngram_div),
            "rejection_rate": _round6(self.rejection_rate),
            "per_seed_f1": [round(float(v), 6) for v in self.per_seed_f1],
            "tfidf_variant": self.tfidf_variant,
            "tokenizer": self.tokenizer,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        return cls(
            run_id=data.get("run_id", ""),
            f1_mean=data.get("f1_mean"),
            f1_ci_low=data.get("f1_ci_low"),
            f1_ci_high=data.get("f1_ci_high"),
            tfidf_sim=data.get("tfidf_sim"),
            embed_sim=data.get("embed_sim"),
            ngram_div=data.get("ngram_div"),
            rejection_rate=data.get("rejection_rate"),
            per_seed_f1=list(data.get("per_seed_f1", [])),
            tfidf_variant=data.get("tfidf_variant", TFIDF_VARIANT),
            tokenizer=data.get("tokenizer", "whitespace-casefold"),
        )

"""Labeled datasets: ingestion, demonstration sampling, normalization, assembly.

The JSONL corpus schema (one object per line, UTF-8, LF endings):

    {"id": str, "text": str, "label": str, "language": str,
     "split": "train|dev|test", "source": "gold|generated", "meta": {..}}
"""

from __future__ import annotations

import csv
import json
import random
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

# Eleven language codes the pipeline is configured for by default.
LANGUAGES: dict[str, str] = {
    "az": "Azerbaijani",
    "cy": "Welsh",
    "de": "German",
    "en": "English",
    "he": "Hebrew",
    "id": "Indonesian",
    "ro": "Romanian",
    "sl": "Slovenian",
    "sw": "Swahili",
    "te": "Telugu",
    "th": "Thai",
}

TASKS = ("intent", "topic", "sentiment")

# Expected label-set sizes for the three canonical tasks.
TASK_LABEL_COUNTS = {"intent": 10, "topic": 7, "sentiment": 2}

SPLITS = ("train", "dev", "test")
SOURCES = ("gold", "generated")


class CorpusError(Exception):
    """Raised for malformed input files or datasets violating invariants."""


@dataclass
class LabelSpec:
    """A class label, optionally carrying a generated one-paragraph summary."""

    name: str
    summary: str | None = None


@dataclass
class LabeledExample:
    """One text with its label and provenance."""

    id: str
    text: str
    label: str
    language: str
    split: str = "train"
    source: str = "gold"
    meta: dict[str, str] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "label": self.label,
            "language": self.language,
            "split": self.split,
            "source": self.source,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_record(cls, record: dict) -> "LabeledExample":
        return cls(
            id=str(record["id"]),
            text=record["text"],
            label=record["label"],
            language=record["language"],
            split=record.get("split", "train"),
            source=record.get("source", "gold"),
            meta=dict(record.get("meta", {})),
        )


@dataclass
class Dataset:
    """A labeled dataset for one (task, language) cell."""

    task: str
    language: str
    labels: list[LabelSpec]
    examples: list[LabeledExample] = field(default_factory=list)

    def label_names(self) -> list[str]:
        return [spec.name for spec in self.labels]

    def by_label(self, split: str | None = None) -> dict[str, list[LabeledExample]]:
        buckets: dict[str, list[LabeledExample]] = {name: [] for name in self.label_names()}
        for ex in self.examples:
            if split is not None and ex.split != split:
                continue
            buckets.setdefault(ex.label, []).append(ex)
        return buckets

    def validate(self, allow_any_language: bool = False) -> None:
        """Check structural invariants; raises CorpusError on the first violation."""
        names = self.label_names()
        if len(set(names)) != len(names):
            raise CorpusError(f"duplicate label names in dataset: {names}")
        if not allow_any_language and self.language not in LANGUAGES:
            raise CorpusError(f"unknown language code {self.language!r}")
        for spec in self.labels:
            if spec.summary is not None and not spec.summary.strip():
                raise CorpusError(f"label {spec.name!r} has an empty summary")
        known = set(names)
        for ex in self.examples:
            if not ex.text.strip():
                raise CorpusError(f"example {ex.id!r} has empty text")
            if ex.label not in known:
                raise CorpusError(f"example {ex.id!r} carries unknown label {ex.label!r}")
            if ex.split not in SPLITS:
                raise CorpusError(f"example {ex.id!r} has invalid split {ex.split!r}")
            if ex.source not in SOURCES:
                raise CorpusError(f"example {ex.id!r} has invalid source {ex.source!r}")


@dataclass
class RejectedRow:
    line_no: int
    reason: str
    raw: str


@dataclass
class IngestResult:
    dataset: Dataset
    rejected: list[RejectedRow] = field(default_factory=list)


def _iter_rows(path: Path, fmt: str):
    """Yield (line_no, row_dict_or_None, raw, parse_error) per input row."""
    if fmt == "jsonl":
        with path.open(encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    yield line_no, json.loads(line), line.rstrip("\n"), None
                except json.JSONDecodeError as exc:
                    yield line_no, None, line.rstrip("\n"), str(exc)
    elif fmt in ("csv", "tsv"):
        delim = "," if fmt == "csv" else "\t"
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh, delimiter=delim)
            for line_no, row in enumerate(reader, start=2):  # header is line 1
                if None in row:
                    yield line_no, None, delim.join(str(v) for v in row.values()), "row has more fields than header"
                else:
                    yield line_no, dict(row), delim.join(str(v) for v in row.values() if v is not None), None
    else:
        raise CorpusError(f"unsupported format {fmt!r} (expected jsonl, csv or tsv)")


def ingest_dataset(
    path: str | Path,
    fmt: str,
    field_map: dict[str, str],
    *,
    task: str,
    language: str,
    labels: list[str] | None = None,
    split: str = "train",
    source: str = "gold",
    max_malformed: int = 0,
) -> IngestResult:
    """Parse a gold data file into a Dataset.

    ``field_map`` maps source columns to roles; the ``text`` and ``label``
    roles are required, ``id``/``language``/``split`` optional. Rows with
    empty text or (when ``labels`` is given) an unknown label are collected
    into the rejected-rows report rather than silently dropped. Rows that
    cannot be parsed at all count as malformed; more than ``max_malformed``
    of them aborts ingestion.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"input file not found: {path}")
    roles = {role: column for column, role in field_map.items()}
    for required in ("text", "label"):
        if required not in roles:
            raise CorpusError(f"field_map assigns no column to the {required!r} role")

    examples: list[LabeledExample] = []
    rejected: list[RejectedRow] = []
    malformed = 0
    allowed = set(labels) if labels is not None else None
    seen_labels: list[str] = []

    for line_no, row, raw, parse_error in _iter_rows(path, fmt):
        if parse_error is not None:
            malformed += 1
            rejected.append(RejectedRow(line_no, f"malformed: {parse_error}", raw))
            if malformed > max_malformed:
                raise CorpusError(
                    f"{path}: {malformed} malformed rows exceed tolerance {max_malformed} "
                    f"(line {line_no}: {parse_error})"
                )
            continue
        missing = [roles[r] for r in ("text", "label") if roles[r] not in row]
        if missing:
            malformed += 1
            rejected.append(RejectedRow(line_no, f"malformed: missing columns {missing}", raw))
            if malformed > max_malformed:
                raise CorpusError(f"{path}: row {line_no} missing mapped columns {missing}")
            continue
        text = str(row[roles["text"]])
        label = str(row[roles["label"]])
        if not text.strip():
            rejected.append(RejectedRow(line_no, "empty text", raw))
            continue
        if allowed is not None and label not in allowed:
            rejected.append(RejectedRow(line_no, f"unknown label {label!r}", raw))
            continue
        if label not in seen_labels:
            seen_labels.append(label)
        examples.append(
            LabeledExample(
                id=str(row[roles["id"]]) if "id" in roles and roles["id"] in row else f"{path.stem}-{line_no}",
                text=text,
                label=label,
                language=str(row[roles["language"]]) if "language" in roles and roles["language"] in row else language,
                split=str(row[roles["split"]]) if "split" in roles and roles["split"] in row else split,
                source=source,
            )
        )

    label_names = labels if labels is not None else seen_labels
    dataset = Dataset(
        task=task,
        language=language,
        labels=[LabelSpec(name) for name in label_names],
        examples=examples,
    )
    return IngestResult(dataset=dataset, rejected=rejected)


def sample_demonstrations(
    dataset: Dataset, label: str, k: int, seed: int
) -> list[LabeledExample]:
    """Select k distinct train-split examples of ``label``, uniformly, seeded.

    Identical seeds yield identical selections.
    """
    candidates = [ex for ex in dataset.examples if ex.split == "train" and ex.label == label]
    if len(candidates) < k:
        raise CorpusError(
            f"label {label!r} has only {len(candidates)} train examples, need {k}"
        )
    return random.Random(seed).sample(candidates, k)


def normalize_for_training(text: str) -> str:
    """Lowercase, strip Unicode punctuation (category P*), collapse whitespace."""
    lowered = text.lower()
    without_punct = "".join(
        ch for ch in lowered if not unicodedata.category(ch).startswith("P")
    )
    return " ".join(without_punct.split())


@dataclass
class BalancedAssembly:
    dataset: Dataset
    shortfalls: dict[str, int]

    @property
    def complete(self) -> bool:
        return not self.shortfalls


def assemble_balanced(pool: Dataset, per_label: int) -> BalancedAssembly:
    """Pick the first ``per_label`` examples of each label, in insertion order.

    Labels with fewer candidates contribute all they have and are recorded
    in the shortfall map; a shortfall marks the assembly incomplete rather
    than raising.
    """
    picked: list[LabeledExample] = []
    shortfalls: dict[str, int] = {}
    buckets = pool.by_label()
    for name in pool.label_names():
        bucket = buckets.get(name, [])
        picked.extend(bucket[:per_label])
        if len(bucket) < per_label:
            shortfalls[name] = per_label - len(bucket)
    dataset = Dataset(
        task=pool.task, language=pool.language, labels=list(pool.labels), examples=picked
    )
    return BalancedAssembly(dataset=dataset, shortfalls=shortfalls)


def split_train_dev(
    dataset: Dataset, dev_fraction: float = 0.1, seed: int = 0
) -> tuple[list[LabeledExample], list[LabeledExample]]:
    """Split examples into train/dev stratified by label, seeded.

    Examples are re-stamped with their split; roughly ``dev_fraction`` of
    each label bucket (at least one example when the bucket has two or more)
    goes to dev.
    """
    rng = random.Random(seed)
    train: list[LabeledExample] = []
    dev: list[LabeledExample] = []
    for name, bucket in dataset.by_label().items():
        if not bucket:
            continue
        n_dev = int(round(len(bucket) * dev_fraction))
        if len(bucket) >= 2:
            n_dev = min(max(n_dev, 1), len(bucket) - 1)
        else:
            n_dev = 0
        shuffled = list(bucket)
        rng.shuffle(shuffled)
        for ex in shuffled[:n_dev]:
            ex.split = "dev"
            dev.append(ex)
        for ex in shuffled[n_dev:]:
            ex.split = "train"
            train.append(ex)
    return train, dev


def read_corpus_jsonl(path: str | Path) -> list[LabeledExample]:
    examples = []
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                examples.append(LabeledExample.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise CorpusError(f"{path}:{line_no}: bad corpus record ({exc})") from exc
    return examples


def write_corpus_jsonl(examples: list[LabeledExample], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_record(), ensure_ascii=False) + "\n")


def dataset_from_examples(
    task: str, language: str, examples: list[LabeledExample], labels: list[str] | None = None
) -> Dataset:
    """Build a Dataset, inferring the label list from the examples if absent."""
    if labels is None:
        labels = []
        for ex in examples:
            if ex.label not in labels:
                labels.append(ex.label)
    return Dataset(
        task=task,
        language=language,
        labels=[LabelSpec(name) for name in labels],
        examples=list(examples),
    )

import json
from pathlib import Path

import pytest

from babelgen.corpus import Dataset, LabeledExample, dataset_from_examples

FIXTURES = Path(__file__).parent / "fixtures"

INTENT_LABELS = ["alarm_query", "weather_query", "cooking_recipe"]


def make_gold(
    language: str,
    labels=None,
    n_per_label: int = 15,
    task: str = "intent",
    split: str = "train",
) -> Dataset:
    labels = labels or INTENT_LABELS
    examples = []
    for label in labels:
        for i in range(n_per_label):
            examples.append(
                LabeledExample(
                    id=f"{language}-{label}-{i}",
                    text=f"{language} gold {label.replace('_', ' ')} sample number {i}",
                    label=label,
                    language=language,
                    split=split,
                    source="gold",
                )
            )
    return dataset_from_examples(task, language, examples, labels=labels)


class RecordingBackend:
    """Wraps a backend, capturing prompts and counting calls."""

    def __init__(self, inner):
        self.inner = inner
        self.chat_calls: list = []
        self.embed_calls: list = []

    @property
    def model_id(self):
        return self.inner.model_id

    def chat_complete(self, messages):
        self.chat_calls.append(messages)
        return self.inner.chat_complete(messages)

    def embed(self, texts, batch_size=64):
        self.embed_calls.append(list(texts))
        return self.inner.embed(texts, batch_size=batch_size)


class FailAfterBackend:
    """Raises after a fixed number of chat calls, to simulate a crash."""

    class Crash(RuntimeError):
        pass

    def __init__(self, inner, fail_after: int):
        self.inner = inner
        self.fail_after = fail_after
        self.calls = 0

    @property
    def model_id(self):
        return self.inner.model_id

    def chat_complete(self, messages):
        if self.calls >= self.fail_after:
            raise self.Crash(f"injected crash after {self.fail_after} calls")
        self.calls += 1
        return self.inner.chat_complete(messages)

    def embed(self, texts, batch_size=64):
        return self.inner.embed(texts, batch_size=batch_size)


@pytest.fixture
def gold_cy():
    return make_gold("cy")


@pytest.fixture
def gold_en():
    return make_gold("en")


def write_gold_tree(root: Path, tasks=("intent",), languages=("cy", "en"), labels=None, n_per_label=15):
    """Lay out gold files the way the CLI expects: {root}/{task}/{lang}.jsonl."""
    for task in tasks:
        for language in languages:
            dataset = make_gold(language, labels=labels, n_per_label=n_per_label, task=task)
            path = root / task / f"{language}.jsonl"
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("w", encoding="utf-8") as fh:
                for ex in dataset.examples:
                    fh.write(json.dumps(ex.to_record(), ensure_ascii=False) + "\n")
    return root

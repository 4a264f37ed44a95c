"""End-to-end execution of the seven generation strategies.

A strategy combines three ingredients: a label summary in the generation
prompt, demonstrations (English or target language), and a judge pass that
filters generated samples. Rejected samples are replaced by newly generated
ones until the per-label quota is met or the round cap is hit; a shortfall
is recorded rather than raised.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

from babelgen.corpus import Dataset, LabeledExample, LabelSpec, sample_demonstrations
from babelgen.prompting import (
    ACCEPT,
    PromptContext,
    TemplateSet,
    parse_generation_output,
    parse_revision_output,
    render_generation_prompt,
    render_revision_prompt,
    render_summary_prompt,
)

logger = logging.getLogger(__name__)


class StrategyError(Exception):
    """Raised for unknown strategies or unsatisfiable strategy inputs."""


@dataclass(frozen=True)
class StrategyKind:
    name: str
    demo_language: str | None  # None | "en" | "target"
    summary_in_prompt: bool
    revision: bool


# Ordered as reported: summary-only first, the full combination last.
STRATEGY_KINDS: dict[str, StrategyKind] = {
    kind.name: kind
    for kind in (
        StrategyKind("sl", None, True, False),
        StrategyKind("en-demos-sl", "en", True, False),
        StrategyKind("en-demos-rev", "en", False, True),
        StrategyKind("target-demos", "target", False, False),
        StrategyKind("target-demos-sl", "target", True, False),
        StrategyKind("target-demos-rev", "target", False, True),
        StrategyKind("target-demos-sl-rev", "target", True, True),
    )
}

ALL_STRATEGIES = list(STRATEGY_KINDS)


@dataclass
class StrategyConfig:
    kind: str
    per_label: int = 100
    demos_k: int = 10
    max_generation_rounds: int = 40
    revision_batch: int = 10
    samples_per_call: int = 10

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise StrategyError(
                f"unknown strategy {self.kind!r}; expected one of {ALL_STRATEGIES}"
            )
        if self.per_label < 1:
            raise StrategyError("per_label must be >= 1")

    @property
    def spec(self) -> StrategyKind:
        return STRATEGY_KINDS[self.kind]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "per_label": self.per_label,
            "demos_k": self.demos_k,
            "max_generation_rounds": self.max_generation_rounds,
            "revision_batch": self.revision_batch,
            "samples_per_call": self.samples_per_call,
        }


@dataclass
class RevisionVerdict:
    sample_id: str
    accepted: bool
    reason: str
    judge_model: str

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "accepted": self.accepted,
            "reason": self.reason,
            "judge_model": self.judge_model,
        }

    @classmethod
    def from_record(cls, record: dict) -> "RevisionVerdict":
        return cls(
            sample_id=record["sample_id"],
            accepted=bool(record["accepted"]),
            reason=record.get("reason", ""),
            judge_model=record.get("judge_model", ""),
        )


@dataclass
class LabelCounts:
    generated: int = 0
    accepted: int = 0
    rejected: int = 0
    duplicates_removed: int = 0
    rounds: int = 0

    def to_dict(self) -> dict:
        return {
            "generated": self.generated,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "duplicates_removed": self.duplicates_removed,
            "rounds": self.rounds,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LabelCounts":
        return cls(**{k: int(v) for k, v in data.items()})


@dataclass
class GenerationRun:
    """Everything one (task, language, model, strategy) execution produced."""

    run_id: str
    task: str
    language: str
    model_id: str
    strategy: StrategyConfig
    seed: int
    samples: list[LabeledExample] = field(default_factory=list)
    verdicts: list[RevisionVerdict] = field(default_factory=list)
    counts: dict[str, LabelCounts] = field(default_factory=dict)
    shortfalls: dict[str, int] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    status: str = "running"

    def verify_counts(self) -> None:
        """Check the per-label bookkeeping invariants."""
        for label, c in self.counts.items():
            if c.accepted > self.strategy.per_label:
                raise StrategyError(
                    f"label {label!r}: accepted {c.accepted} exceeds quota {self.strategy.per_label}"
                )
            if self.strategy.spec.revision:
                if c.accepted + c.rejected != c.generated - c.duplicates_removed:
                    raise StrategyError(
                        f"label {label!r}: accepted+rejected != generated-duplicates "
                        f"({c.accepted}+{c.rejected} != {c.generated}-{c.duplicates_removed})"
                    )
            elif c.rejected:
                raise StrategyError(f"label {label!r}: rejects recorded without revision")


def derive_seed(base: int, *parts: str) -> int:
    digest = hashlib.sha256(("\x1f".join([str(base), *parts])).encode()).digest()
    return int.from_bytes(digest[:8], "big")


def derive_run_id(task: str, language: str, model_id: str, kind: str, seed: int) -> str:
    digest = hashlib.sha256(f"{task}|{language}|{model_id}|{kind}|{seed}".encode())
    return digest.hexdigest()[:12]


def _single_paragraph(text: str) -> str:
    return " ".join(text.split())


def summarize_label(
    label_name: str,
    english_gold: Dataset,
    backend,
    k: int = 10,
    *,
    seed: int = 0,
    templates: TemplateSet | None = None,
    cache=None,
    task: str | None = None,
) -> LabelSpec:
    """Produce a LabelSpec whose summary describes the label from English demos.

    With a cache attached, the summary is stored under (task, label) so every
    language shares the single English-derived description; cache hits skip
    the backend call entirely.
    """
    cache_task = task if task is not None else english_gold.task
    if cache is not None:
        cached = cache.get(cache_task, label_name)
        if cached:
            return LabelSpec(label_name, cached)
    demos = sample_demonstrations(english_gold, label_name, k, derive_seed(seed, "summary", label_name))
    messages = render_summary_prompt(label_name, [d.text for d in demos], templates)
    completion = backend.chat_complete(messages)
    summary = _single_paragraph(completion)
    if not summary:
        raise StrategyError(f"backend returned an empty summary for label {label_name!r}")
    if cache is not None:
        cache.put(cache_task, label_name, summary)
    return LabelSpec(label_name, summary)


def revise_batch(
    samples: list[LabeledExample],
    label: LabelSpec,
    backend,
    batch: int,
    *,
    task: str | None = None,
    language: str | None = None,
    templates: TemplateSet | None = None,
    fail_open: bool = True,
) -> list[RevisionVerdict]:
    """Judge samples in groups of ``batch``; one verdict per sample, in order."""
    verdicts: list[RevisionVerdict] = []
    judge_model = getattr(backend, "model_id", "unknown")
    for start in range(0, len(samples), batch):
        chunk = samples[start : start + batch]
        messages = render_revision_prompt(
            label, [s.text for s in chunk], task=task, language=language, templates=templates
        )
        completion = backend.chat_complete(messages)
        parsed = parse_revision_output(completion, len(chunk), fail_open=fail_open)
        for warning in parsed.warnings:
            logger.warning("revision parse (%s): %s", label.name, warning)
        for sample, item in zip(chunk, parsed.verdicts):
            verdicts.append(
                RevisionVerdict(
                    sample_id=sample.id,
                    accepted=item.verdict == ACCEPT,
                    reason=item.reason,
                    judge_model=judge_model,
                )
            )
    return verdicts


def _run_label(
    run: GenerationRun,
    label: LabelSpec,
    demos: list[tuple[str, str]],
    backend,
    judge_backend,
    templates: TemplateSet | None,
) -> None:
    strategy = run.strategy
    kind = strategy.spec
    counts = LabelCounts()
    accepted: list[LabeledExample] = []
    label_verdicts: list[RevisionVerdict] = []
    seen: set[str] = set()
    seq = 0

    while len(accepted) < strategy.per_label and counts.rounds < strategy.max_generation_rounds:
        counts.rounds += 1
        n = min(strategy.samples_per_call, strategy.per_label - len(accepted))
        ctx = PromptContext(
            task=run.task,
            label=label,
            demos=demos,
            target_language=run.language,
            n_requested=n,
            include_summary=kind.summary_in_prompt,
            start_index=counts.generated + 1,
        )
        completion = backend.chat_complete(render_generation_prompt(ctx, templates))
        parsed = parse_generation_output(completion, n)
        counts.generated += len(parsed.samples)

        fresh: list[LabeledExample] = []
        for text in parsed.samples:
            key = text.strip().casefold()
            if key in seen:
                counts.duplicates_removed += 1
                continue
            seen.add(key)
            seq += 1
            fresh.append(
                LabeledExample(
                    id=f"{run.run_id}:{label.name}:{seq:05d}",
                    text=text,
                    label=label.name,
                    language=run.language,
                    split="train",
                    source="generated",
                    meta={
                        "strategy": strategy.kind,
                        "model": run.model_id,
                        "run_id": run.run_id,
                    },
                )
            )
        if not fresh:
            continue
        if kind.revision:
            verdicts = revise_batch(
                fresh,
                label,
                judge_backend,
                strategy.revision_batch,
                task=run.task,
                language=run.language,
                templates=templates,
            )
            for sample, verdict in zip(fresh, verdicts):
                if verdict.accepted:
                    counts.accepted += 1
                    accepted.append(sample)
                else:
                    counts.rejected += 1
                    sample.meta["revision_reason"] = verdict.reason
            label_verdicts.extend(verdicts)
        else:
            for sample in fresh:
                counts.accepted += 1
                accepted.append(sample)

    # committed only when the label finishes, so an interrupted label leaves
    # no partial state behind and resumes from a clean boundary
    run.samples.extend(accepted)
    run.verdicts.extend(label_verdicts)
    run.counts[label.name] = counts
    if len(accepted) < strategy.per_label:
        run.shortfalls[label.name] = strategy.per_label - len(accepted)


def generate_for_label(
    label: LabelSpec,
    task: str,
    language: str,
    demos: list[tuple[str, str]],
    strategy: StrategyConfig,
    backend,
    *,
    seed: int = 0,
    templates: TemplateSet | None = None,
    run_id: str | None = None,
) -> list[LabeledExample]:
    """Generate unique samples for one label up to the quota (no revision)."""
    if strategy.spec.revision:
        raise StrategyError("generate_for_label runs without revision; use run_strategy")
    run_id = run_id or derive_run_id(task, language, getattr(backend, "model_id", "?"), strategy.kind, seed)
    run = GenerationRun(
        run_id=run_id,
        task=task,
        language=language,
        model_id=getattr(backend, "model_id", "unknown"),
        strategy=strategy,
        seed=seed,
    )
    _run_label(run, label, demos, backend, None, templates)
    return run.samples


def _backend_snapshot(backend) -> dict:
    cfg = getattr(backend, "cfg", None)
    if cfg is not None:
        return {
            "model_id": cfg.model_id,
            "base_url": cfg.base_url,
            "temperature": cfg.temperature,
            "top_p": cfg.top_p,
            "max_tokens": cfg.max_tokens,
        }
    script = getattr(backend, "script", None)
    if script is not None:
        return {
            "model_id": getattr(backend, "model_id", "sim"),
            "sim_seed": script.seed,
            "embed_dim": script.embed_dim,
        }
    return {"model_id": getattr(backend, "model_id", "unknown")}


def _demos_for_label(
    kind: StrategyKind,
    label_name: str,
    gold: Dataset,
    english_gold: Dataset | None,
    demos_k: int,
    seed: int,
) -> list[tuple[str, str]]:
    if kind.demo_language is None:
        return []
    if kind.demo_language == "en":
        if english_gold is None:
            raise StrategyError(f"strategy {kind.name!r} needs English gold data for demos")
        source, lang = english_gold, "en"
    else:
        source, lang = gold, gold.language
    picked = sample_demonstrations(source, label_name, demos_k, derive_seed(seed, "demos", lang, label_name))
    return [(ex.text, lang) for ex in picked]


def run_strategy(
    task: str,
    language: str,
    model_id: str,
    strategy: StrategyConfig,
    gold: Dataset,
    backend,
    *,
    seed: int = 0,
    english_gold: Dataset | None = None,
    judge_backend=None,
    summaries: dict[str, str] | None = None,
    summary_cache=None,
    templates: TemplateSet | None = None,
    store=None,
    run_id: str | None = None,
    resume: "GenerationRun | None" = None,
) -> GenerationRun:
    """Execute the per-label pipeline for every label of the gold dataset.

    Summaries come from ``summaries``/``summary_cache`` or are produced on the
    fly from English gold when the strategy (or its judge) needs them. With a
    store attached the run is checkpointed after every label, so failures
    leave resumable partial state.
    """
    kind = strategy.spec
    judge_backend = judge_backend or backend
    run_id = run_id or derive_run_id(task, language, model_id, strategy.kind, seed)

    needs_summary = kind.summary_in_prompt or kind.revision
    label_specs: list[LabelSpec] = []
    for name in gold.label_names():
        summary = None
        if needs_summary:
            if summaries and name in summaries:
                summary = summaries[name]
            elif summary_cache is not None and summary_cache.get(task, name):
                summary = summary_cache.get(task, name)
            else:
                if english_gold is None:
                    raise StrategyError(
                        f"strategy {strategy.kind!r} needs label summaries; provide them "
                        "or pass English gold data to derive them"
                    )
                summary = summarize_label(
                    name,
                    english_gold,
                    backend,
                    strategy.demos_k,
                    seed=seed,
                    templates=templates,
                    cache=summary_cache,
                    task=task,
                ).summary
        label_specs.append(LabelSpec(name, summary))

    if resume is not None:
        run = resume
        run.status = "running"
    else:
        run = GenerationRun(
            run_id=run_id,
            task=task,
            language=language,
            model_id=model_id,
            strategy=strategy,
            seed=seed,
            config={
                "task": task,
                "language": language,
                "model_id": model_id,
                "seed": seed,
                "strategy": strategy.to_dict(),
                "backend": _backend_snapshot(backend),
                "judge_model": getattr(judge_backend, "model_id", "unknown"),
                "templates_version": (templates or TemplateSet.default()).version(),
            },
        )

    # labels are committed atomically, so anything already in counts is done
    # (quota reached or round cap hit) and resume picks up at the next label
    done_labels = set(run.counts)
    try:
        for spec in label_specs:
            if spec.name in done_labels:
                continue
            demos = _demos_for_label(kind, spec.name, gold, english_gold, strategy.demos_k, seed)
            _run_label(run, spec, demos, backend, judge_backend, templates)
            if store is not None:
                run.status = "partial"
                store.persist_run(run)
    except Exception:
        run.status = "failed"
        if store is not None:
            store.persist_run(run)
        raise

    run.status = "complete"
    run.verify_counts()
    if store is not None:
        store.persist_run(run)
    return run


@dataclass
class RejectionStats:
    per_label: dict[str, float]
    total: float


def rejection_stats(run: GenerationRun) -> RejectionStats:
    """Fractions of judged samples the judge rejected, to 4 decimal places."""
    if not run.strategy.spec.revision:
        raise StrategyError(f"run {run.run_id} used no revision; rejection stats undefined")
    per_label: dict[str, float] = {}
    total_judged = 0
    total_rejected = 0
    for label, c in run.counts.items():
        judged = c.accepted + c.rejected
        per_label[label] = round(c.rejected / judged, 4) if judged else 0.0
        total_judged += judged
        total_rejected += c.rejected
    total = round(total_rejected / total_judged, 4) if total_judged else 0.0
    return RejectionStats(per_label=per_label, total=total)

import random

import pytest

from babelgen.corpus import LabelSpec, LabeledExample
from babelgen.simulate import SimBackend, SimBehavior, SimScript
from babelgen.strategies import (
    ALL_STRATEGIES,
    GenerationRun,
    LabelCounts,
    StrategyConfig,
    StrategyError,
    generate_for_label,
    rejection_stats,
    revise_batch,
    run_strategy,
    summarize_label,
)
from tests.conftest import RecordingBackend


def sim(accept=1.0, duplicate=0.0, off_language=0.0, seed=1, model_id="sim-a"):
    script = SimScript(
        seed=seed,
        behaviors={("*", "*"): SimBehavior(
            accept_probability=accept, duplicate_rate=duplicate, off_language_rate=off_language
        )},
    )
    return SimBackend(script, model_id=model_id)


class DictCache:
    def __init__(self):
        self.data = {}

    def get(self, task, label):
        return self.data.get((task, label))

    def put(self, task, label, summary):
        self.data[(task, label)] = summary


class TestSummarizeLabel:
    def test_produces_single_paragraph(self, gold_en):
        spec = summarize_label("alarm_query", gold_en, sim(), k=10)
        assert spec.name == "alarm_query"
        assert spec.summary
        assert "\n" not in spec.summary

    def test_cache_hit_skips_backend(self, gold_en):
        cache = DictCache()
        backend = RecordingBackend(sim())
        summarize_label("alarm_query", gold_en, backend, cache=cache, task="intent")
        assert len(backend.chat_calls) == 1
        summarize_label("alarm_query", gold_en, backend, cache=cache, task="intent")
        assert len(backend.chat_calls) == 1  # served from cache

    def test_cache_shared_across_languages_by_task_label_key(self, gold_en):
        cache = DictCache()
        spec = summarize_label("alarm_query", gold_en, sim(), cache=cache, task="intent")
        assert cache.get("intent", "alarm_query") == spec.summary

    def test_empty_completion_errors_without_cache_write(self, gold_en):
        class EmptyBackend:
            model_id = "empty"

            def chat_complete(self, messages):
                return "   "

        cache = DictCache()
        with pytest.raises(StrategyError, match="empty summary"):
            summarize_label("alarm_query", gold_en, EmptyBackend(), cache=cache, task="intent")
        assert not cache.data

    def test_uses_k_demonstrations(self, gold_en):
        backend = RecordingBackend(sim())
        summarize_label("alarm_query", gold_en, backend, k=10)
        user = "\n".join(m.content for m in backend.chat_calls[0] if m.role == "user")
        assert user.count("- en gold alarm query sample") == 10


class TestGenerateForLabel:
    def test_reaches_quota_with_unique_samples(self):
        strategy = StrategyConfig("target-demos", per_label=100)
        samples = generate_for_label(
            LabelSpec("alarm_query"), "intent", "cy",
            [("set an alarm", "cy")], strategy, sim(), seed=0,
        )
        assert len(samples) == 100
        assert len({s.text.strip().casefold() for s in samples}) == 100
        assert all(s.source == "generated" for s in samples)
        assert all(s.meta["strategy"] == "target-demos" for s in samples)

    def test_duplicates_regenerated_until_quota(self):
        strategy = StrategyConfig("target-demos", per_label=100, max_generation_rounds=100)
        samples = generate_for_label(
            LabelSpec("alarm_query"), "intent", "cy",
            [("set an alarm", "cy")], strategy, sim(duplicate=0.5), seed=0,
        )
        assert len(samples) == 100
        assert len({s.text.strip().casefold() for s in samples}) == 100

    def test_round_cap_leaves_shortfall(self, gold_cy):
        strategy = StrategyConfig(
            "target-demos", per_label=100, max_generation_rounds=1, samples_per_call=10
        )
        samples = generate_for_label(
            LabelSpec("alarm_query"), "intent", "cy",
            [("set an alarm", "cy")], strategy, sim(), seed=0,
        )
        assert len(samples) == 10
        run = run_strategy("intent", "cy", "sim-a", strategy, gold_cy, sim(), seed=0)
        assert run.shortfalls == {label: 90 for label in gold_cy.label_names()}
        assert run.status == "complete"

    def test_rejects_revision_strategies(self):
        with pytest.raises(StrategyError, match="without revision"):
            generate_for_label(
                LabelSpec("x", "s"), "intent", "cy", [],
                StrategyConfig("target-demos-rev"), sim(),
            )


class TestReviseBatch:
    def _samples(self, n):
        return [
            LabeledExample(f"s{i}", f"sample text {i}", "travel", "cy", "train", "generated")
            for i in range(n)
        ]

    def test_ceiling_batch_calls_and_verdict_order(self):
        backend = RecordingBackend(sim(accept=0.5))
        verdicts = revise_batch(
            self._samples(25), LabelSpec("travel", "Trips."), backend, 10,
            task="topic", language="cy",
        )
        assert len(backend.chat_calls) == 3
        assert len(verdicts) == 25
        assert [v.sample_id for v in verdicts] == [f"s{i}" for i in range(25)]
        assert all(v.judge_model == "sim-a" for v in verdicts)

    def test_accept_all_zero_rejected(self):
        verdicts = revise_batch(
            self._samples(10), LabelSpec("travel", "Trips."), sim(accept=1.0), 10
        )
        assert sum(1 for v in verdicts if not v.accepted) == 0

    def test_rejects_carry_reasons(self):
        verdicts = revise_batch(
            self._samples(40), LabelSpec("travel", "Trips."), sim(accept=0.2), 10
        )
        rejected = [v for v in verdicts if not v.accepted]
        assert rejected
        assert all(v.reason for v in rejected)


class TestRunStrategy:
    def test_sl_kind_has_no_demos_and_summary_everywhere(self, gold_cy, gold_en):
        backend = RecordingBackend(sim())
        run = run_strategy(
            "intent", "cy", "sim-a", StrategyConfig("sl", per_label=10),
            gold_cy, backend, seed=1, english_gold=gold_en,
        )
        assert run.status == "complete"
        generation_calls = [
            msgs for msgs in backend.chat_calls
            if any("numbered list only" in m.content for m in msgs)
        ]
        assert generation_calls
        for msgs in generation_calls:
            user = "\n".join(m.content for m in msgs if m.role == "user")
            assert "Examples of this category" not in user
            assert "Category description:" in user

    def test_target_demos_kind_has_demos_no_judge_calls(self, gold_cy):
        backend = RecordingBackend(sim())
        run = run_strategy(
            "intent", "cy", "sim-a", StrategyConfig("target-demos", per_label=10),
            gold_cy, backend, seed=1,
        )
        assert run.verdicts == []
        assert all(c.rejected == 0 for c in run.counts.values())
        judge_calls = [
            msgs for msgs in backend.chat_calls
            if any("ACCEPT" in m.content for m in msgs if m.role == "user")
        ]
        assert not judge_calls
        for msgs in backend.chat_calls:
            user = "\n".join(m.content for m in msgs if m.role == "user")
            if "numbered list only" in user:
                assert "Examples of this category" in user

    def test_revision_kind_reaches_quota_despite_rejections(self, gold_cy, gold_en):
        run = run_strategy(
            "intent", "cy", "sim-a",
            StrategyConfig("target-demos-sl-rev", per_label=30, max_generation_rounds=60),
            gold_cy, sim(accept=0.5), seed=3, english_gold=gold_en,
        )
        assert not run.shortfalls
        for label, counts in run.counts.items():
            assert counts.accepted == 30
            assert counts.rejected > 0
            assert counts.accepted + counts.rejected == counts.generated - counts.duplicates_removed
        by_label = {label: 0 for label in gold_cy.label_names()}
        for sample in run.samples:
            by_label[sample.label] += 1
        assert set(by_label.values()) == {30}

    def test_en_demos_use_english_gold(self, gold_cy, gold_en):
        backend = RecordingBackend(sim())
        run_strategy(
            "intent", "cy", "sim-a", StrategyConfig("en-demos-sl", per_label=5),
            gold_cy, backend, seed=1, english_gold=gold_en,
        )
        generation_users = [
            "\n".join(m.content for m in msgs if m.role == "user")
            for msgs in backend.chat_calls
            if any("numbered list only" in m.content for m in msgs)
        ]
        assert all("en gold" in user for user in generation_users)
        assert all("cy gold" not in user for user in generation_users)

    def test_missing_english_gold_for_summary_strategies(self, gold_cy):
        with pytest.raises(StrategyError, match="summaries"):
            run_strategy(
                "intent", "cy", "sim-a", StrategyConfig("sl", per_label=5),
                gold_cy, sim(), seed=1,
            )

    def test_supplied_summaries_bypass_english_gold(self, gold_cy):
        summaries = {name: f"Description of {name}." for name in gold_cy.label_names()}
        run = run_strategy(
            "intent", "cy", "sim-a", StrategyConfig("sl", per_label=5),
            gold_cy, sim(), seed=1, summaries=summaries,
        )
        assert run.status == "complete"

    def test_reproducible_content(self, gold_cy, gold_en):
        kwargs = dict(seed=11, english_gold=gold_en)
        cfg = StrategyConfig("target-demos-sl-rev", per_label=15)
        one = run_strategy("intent", "cy", "sim-a", cfg, gold_cy, sim(accept=0.7), **kwargs)
        two = run_strategy("intent", "cy", "sim-a", cfg, gold_cy, sim(accept=0.7), **kwargs)
        assert [s.to_record() for s in one.samples] == [s.to_record() for s in two.samples]
        assert [v.to_record() for v in one.verdicts] == [v.to_record() for v in two.verdicts]

    def test_separate_judge_backend(self, gold_cy, gold_en):
        judge = RecordingBackend(sim(accept=1.0, model_id="judge-model"))
        run = run_strategy(
            "intent", "cy", "sim-a", StrategyConfig("target-demos-rev", per_label=5),
            gold_cy, sim(), seed=1, english_gold=gold_en, judge_backend=judge,
        )
        assert judge.chat_calls
        assert all(v.judge_model == "judge-model" for v in run.verdicts)

    def test_quota_invariant_randomized(self, gold_cy, gold_en):
        rng = random.Random(42)
        for _ in range(8):
            per_label = rng.randint(1, 200)
            kind = rng.choice(ALL_STRATEGIES)
            accept = rng.choice([0.4, 0.8, 1.0])
            duplicate = rng.choice([0.0, 0.3])
            cfg = StrategyConfig(kind, per_label=per_label, max_generation_rounds=8)
            run = run_strategy(
                "intent", "cy", "sim-a", cfg, gold_cy,
                sim(accept=accept, duplicate=duplicate, seed=rng.randint(0, 99)),
                seed=rng.randint(0, 99), english_gold=gold_en,
            )
            run.verify_counts()
            by_label = {}
            for sample in run.samples:
                by_label[sample.label] = by_label.get(sample.label, 0) + 1
            for label in gold_cy.label_names():
                got = by_label.get(label, 0)
                assert got <= per_label
                if got < per_label:
                    assert run.shortfalls[label] == per_label - got


class TestRejectionStats:
    def _run_with(self, counts: dict) -> GenerationRun:
        run = GenerationRun(
            run_id="r", task="topic", language="cy", model_id="m",
            strategy=StrategyConfig("target-demos-rev"), seed=0,
        )
        for label, (rejected, judged) in counts.items():
            run.counts[label] = LabelCounts(
                generated=judged, accepted=judged - rejected, rejected=rejected
            )
        return run

    def test_welsh_topic_arithmetic(self):
        run = self._run_with({"all": (458, 700)})
        assert rejection_stats(run).total == pytest.approx(0.6543, abs=1e-9)

    def test_zero_rejected(self):
        run = self._run_with({"a": (0, 100)})
        stats = rejection_stats(run)
        assert stats.total == 0.0
        assert stats.per_label == {"a": 0.0}

    def test_two_label_totals(self):
        run = self._run_with({"a": (10, 100), "b": (30, 100)})
        stats = rejection_stats(run)
        assert stats.total == pytest.approx(0.2, abs=1e-9)
        assert stats.per_label == {"a": 0.1, "b": 0.3}

    def test_non_revision_run_errors(self):
        run = GenerationRun(
            run_id="r", task="topic", language="cy", model_id="m",
            strategy=StrategyConfig("target-demos"), seed=0,
        )
        with pytest.raises(StrategyError, match="no revision"):
            rejection_stats(run)


class TestStrategyConfig:
    def test_unknown_kind(self):
        with pytest.raises(StrategyError, match="unknown strategy"):
            StrategyConfig("sl-rev")

    def test_kind_flags(self):
        table = {
            "sl": (None, True, False),
            "en-demos-sl": ("en", True, False),
            "en-demos-rev": ("en", False, True),
            "target-demos": ("target", False, False),
            "target-demos-sl": ("target", True, False),
            "target-demos-rev": ("target", False, True),
            "target-demos-sl-rev": ("target", True, True),
        }
        assert set(table) == set(ALL_STRATEGIES)
        for kind, (demo_language, summary, revision) in table.items():
            spec = StrategyConfig(kind).spec
            assert (spec.demo_language, spec.summary_in_prompt, spec.revision) == (
                demo_language, summary, revision,
            )

import json

import pytest

from babelgen.simulate import SimBackend, SimBehavior, SimScript
from babelgen.store import RunStore, StoreError, SummaryCache
from babelgen.strategies import StrategyConfig, run_strategy
from tests.conftest import FailAfterBackend, make_gold


def sim(accept=1.0, duplicate=0.0, seed=1):
    script = SimScript(
        seed=seed,
        behaviors={("*", "*"): SimBehavior(accept_probability=accept, duplicate_rate=duplicate)},
    )
    return SimBackend(script, model_id="sim-a")


def run_to_store(store, *, seed=5, accept=0.7, per_label=12, backend=None, transcript=True):
    gold_cy = make_gold("cy")
    gold_en = make_gold("en")
    backend = backend or sim(accept=accept)
    cfg = StrategyConfig("target-demos-sl-rev", per_label=per_label, max_generation_rounds=30)
    from babelgen.strategies import GenerationRun, derive_run_id

    run_id = derive_run_id("intent", "cy", "sim-a", cfg.kind, seed)
    shell = GenerationRun(
        run_id=run_id, task="intent", language="cy", model_id="sim-a", strategy=cfg, seed=seed
    )
    writer = store.transcript_writer(shell) if transcript else None
    if writer is not None and hasattr(backend, "inner"):
        backend.inner.on_event = writer
    elif writer is not None:
        backend.on_event = writer
    return run_strategy(
        "intent", "cy", "sim-a", cfg, gold_cy, backend,
        seed=seed, english_gold=gold_en, store=store, run_id=run_id,
    )


class TestPersist:
    def test_layout(self, tmp_path):
        store = RunStore(tmp_path)
        run = run_to_store(store)
        run_dir = store.run_dir(run)
        assert run_dir.name.startswith("intent_cy_sim-a_target-demos-sl-rev_")
        for name in ("manifest.json", "samples.jsonl", "verdicts.jsonl", "transcript.log"):
            assert (run_dir / name).exists(), name
        manifest = store.load_manifest(run_dir)
        assert manifest.status == "complete"
        assert set(manifest.hashes) == {"samples.jsonl", "verdicts.jsonl"}

    def test_idempotent_re_persist(self, tmp_path):
        store = RunStore(tmp_path)
        run = run_to_store(store)
        first = store.load_manifest(store.run_dir(run))
        again = store.persist_run(run)
        assert again.hashes == first.hashes
        assert again.created_at == first.created_at
        files = sorted(p.name for p in store.run_dir(run).iterdir())
        assert files == ["manifest.json", "samples.jsonl", "transcript.log", "verdicts.jsonl"]

    def test_no_temp_files_left(self, tmp_path):
        store = RunStore(tmp_path)
        run = run_to_store(store)
        leftovers = [p for p in store.run_dir(run).iterdir() if ".tmp-" in p.name]
        assert not leftovers

    def test_manifest_sorted_keys(self, tmp_path):
        store = RunStore(tmp_path)
        run = run_to_store(store)
        text = (store.run_dir(run) / "manifest.json").read_text(encoding="utf-8")
        data = json.loads(text)
        assert list(data) == sorted(data)

    def test_lock_conflict(self, tmp_path):
        store = RunStore(tmp_path)
        run = run_to_store(store)
        lock = store.run_dir(run) / ".lock"
        lock.write_text("9999", encoding="utf-8")
        other = RunStore(tmp_path)
        with pytest.raises(StoreError, match="another writer"):
            other.persist_run(run)
        lock.unlink()
        other.persist_run(run)


class TestLoadResume:
    def test_load_round_trip(self, tmp_path):
        store = RunStore(tmp_path)
        run = run_to_store(store)
        loaded, manifest = store.load_run(run.run_id)
        assert [s.to_record() for s in loaded.samples] == [s.to_record() for s in run.samples]
        assert [v.to_record() for v in loaded.verdicts] == [v.to_record() for v in run.verdicts]
        assert {k: c.to_dict() for k, c in loaded.counts.items()} == {
            k: c.to_dict() for k, c in run.counts.items()
        }

    def test_resume_complete_run_refused(self, tmp_path):
        store = RunStore(tmp_path)
        run = run_to_store(store)
        with pytest.raises(StoreError, match="complete"):
            store.resume_run(run.run_id)

    def test_corrupt_samples_hash_names_file(self, tmp_path):
        store = RunStore(tmp_path)
        run = run_to_store(store)
        samples_path = store.run_dir(run) / "samples.jsonl"
        samples_path.write_text(samples_path.read_text(encoding="utf-8") + "\n", encoding="utf-8")
        with pytest.raises(StoreError, match="samples.jsonl"):
            store.load_run(run.run_id)

    def test_missing_run(self, tmp_path):
        with pytest.raises(StoreError, match="no run directory"):
            RunStore(tmp_path).find_run_dir("deadbeef")

    def test_crash_resume_equals_uninterrupted(self, tmp_path):
        baseline_store = RunStore(tmp_path / "baseline")
        baseline = run_to_store(baseline_store, seed=5, accept=0.7, per_label=12)
        baseline_hashes = baseline_store.load_manifest(baseline_store.run_dir(baseline)).hashes

        crash_store = RunStore(tmp_path / "crash")
        failing = FailAfterBackend(sim(accept=0.7), fail_after=9)
        with pytest.raises(FailAfterBackend.Crash):
            run_to_store(crash_store, seed=5, accept=0.7, per_label=12, backend=failing)

        partial_dirs = list(crash_store.root.iterdir())
        assert len(partial_dirs) == 1
        manifest = crash_store.load_manifest(partial_dirs[0])
        assert manifest.status == "failed"

        resumed = crash_store.resume_run(manifest.run_id)
        gold_cy, gold_en = make_gold("cy"), make_gold("en")
        final = run_strategy(
            "intent", "cy", "sim-a", resumed.strategy, gold_cy, sim(accept=0.7),
            seed=resumed.seed, english_gold=gold_en, store=crash_store,
            run_id=resumed.run_id, resume=resumed,
        )
        final_hashes = crash_store.load_manifest(crash_store.run_dir(final)).hashes
        assert final_hashes == baseline_hashes

    def test_crash_at_various_points_still_converges(self, tmp_path):
        baseline_store = RunStore(tmp_path / "b")
        baseline = run_to_store(baseline_store, seed=2, accept=0.6, per_label=8)
        expected = baseline_store.load_manifest(baseline_store.run_dir(baseline)).hashes

        for fail_after in (3, 6, 14):
            crash_store = RunStore(tmp_path / f"c{fail_after}")
            failing = FailAfterBackend(sim(accept=0.6), fail_after=fail_after)
            with pytest.raises(FailAfterBackend.Crash):
                run_to_store(crash_store, seed=2, accept=0.6, per_label=8, backend=failing)
            manifest = crash_store.load_manifest(next(iter(crash_store.root.iterdir())))
            resumed = crash_store.resume_run(manifest.run_id)
            gold_cy, gold_en = make_gold("cy"), make_gold("en")
            final = run_strategy(
                "intent", "cy", "sim-a", resumed.strategy, gold_cy, sim(accept=0.6),
                seed=resumed.seed, english_gold=gold_en, store=crash_store,
                run_id=resumed.run_id, resume=resumed,
            )
            got = crash_store.load_manifest(crash_store.run_dir(final)).hashes
            assert got == expected, f"fail_after={fail_after}"


class TestTranscript:
    def test_monotone_and_exactly_once(self, tmp_path):
        store = RunStore(tmp_path)
        from tests.conftest import RecordingBackend

        backend = RecordingBackend(sim(accept=0.8))
        run = run_to_store(store, backend=backend)
        lines = [
            json.loads(line)
            for line in (store.run_dir(run) / "transcript.log").read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        assert lines, "transcript must not be empty"
        seqs = [entry["seq"] for entry in lines]
        assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)
        timestamps = [entry["ts"] for entry in lines]
        assert all(a <= b for a, b in zip(timestamps, timestamps[1:]))
        chat_events = [entry for entry in lines if entry["kind"] == "chat"]
        assert len(chat_events) == len(backend.chat_calls)


class TestSummaryCache:
    def test_round_trip_and_persistence(self, tmp_path):
        path = tmp_path / "summaries.json"
        cache = SummaryCache(path)
        assert cache.get("intent", "alarm_query") is None
        cache.put("intent", "alarm_query", "Checks alarms.")
        reloaded = SummaryCache(path)
        assert reloaded.get("intent", "alarm_query") == "Checks alarms."

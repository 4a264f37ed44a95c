"""Flat-file persistence for runs: manifests, samples, verdicts, transcripts.

Layout: one directory per run under the store root, named
``{task}_{lang}_{model}_{strategy}_{run_id}``, holding manifest.json
(stable key order), samples.jsonl, verdicts.jsonl and transcript.log.
All writes go through temp-file + rename, so a crash never leaves a
partially visible manifest. A lock file enforces one writer per run
directory; readers need no lock.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from babelgen.corpus import read_corpus_jsonl, write_corpus_jsonl
from babelgen.strategies import (
    GenerationRun,
    LabelCounts,
    RevisionVerdict,
    StrategyConfig,
)

RESUMABLE_STATUSES = ("running", "partial", "failed")


class StoreError(Exception):
    """Raised for missing runs, hash mismatches and writer conflicts."""


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _atomic_write(path: Path, data: str) -> None:
    tmp = path.with_name(f"{path.name}.tmp-{os.getpid()}")
    tmp.write_text(data, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def _sanitize(part: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "-", part).strip("-")


@dataclass
class RunManifest:
    run_id: str
    created_at: str
    status: str
    task: str
    language: str
    model_id: str
    strategy: dict
    seed: int
    counts: dict[str, dict]
    shortfalls: dict[str, int]
    hashes: dict[str, str]
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "created_at": self.created_at,
            "status": self.status,
            "task": self.task,
            "language": self.language,
            "model_id": self.model_id,
            "strategy": self.strategy,
            "seed": self.seed,
            "counts": self.counts,
            "shortfalls": self.shortfalls,
            "hashes": self.hashes,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        return cls(
            run_id=data["run_id"],
            created_at=data["created_at"],
            status=data["status"],
            task=data["task"],
            language=data["language"],
            model_id=data["model_id"],
            strategy=data["strategy"],
            seed=int(data.get("seed", 0)),
            counts=data.get("counts", {}),
            shortfalls=data.get("shortfalls", {}),
            hashes=data.get("hashes", {}),
            config=data.get("config", {}),
        )


class TranscriptWriter:
    """Append-only JSONL log of backend exchanges with monotone timestamps."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()
        self._seq = 0
        self._last_ts = 0.0
        if path.exists():
            with path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        self._seq += 1
                        self._last_ts = max(self._last_ts, json.loads(line).get("ts", 0.0))

    def __call__(self, event) -> None:
        with self._lock:
            self._seq += 1
            ts = max(time.time(), self._last_ts)
            self._last_ts = ts
            record = {"seq": self._seq, "ts": ts, "kind": event.kind, "payload": event.payload}
            with self.path.open("a", encoding="utf-8", newline="\n") as fh:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")


class RunStore:
    """Run directories under one root; one writer per directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._held_locks: set[Path] = set()

    def run_dir(self, run: GenerationRun) -> Path:
        name = "_".join(
            [
                _sanitize(run.task),
                _sanitize(run.language),
                _sanitize(run.model_id),
                _sanitize(run.strategy.kind),
                run.run_id,
            ]
        )
        return self.root / name

    def find_run_dir(self, run_id: str) -> Path:
        matches = [p for p in sorted(self.root.iterdir()) if p.is_dir() and p.name.endswith(f"_{run_id}")]
        if not matches:
            raise StoreError(f"no run directory for run_id {run_id!r} under {self.root}")
        if len(matches) > 1:
            raise StoreError(f"ambiguous run_id {run_id!r}: {[p.name for p in matches]}")
        return matches[0]

    def _acquire_lock(self, run_dir: Path):
        lock_path = run_dir / ".lock"
        if lock_path in self._held_locks:
            return None  # reentrant within this store instance
        try:
            fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StoreError(
                f"another writer holds {lock_path} (delete it if the owner is dead)"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        self._held_locks.add(lock_path)
        return lock_path

    def _release_lock(self, lock_path: Path | None) -> None:
        if lock_path is None:
            return
        self._held_locks.discard(lock_path)
        lock_path.unlink(missing_ok=True)

    def transcript_writer(self, run: GenerationRun) -> TranscriptWriter:
        run_dir = self.run_dir(run)
        run_dir.mkdir(parents=True, exist_ok=True)
        return TranscriptWriter(run_dir / "transcript.log")

    def persist_run(self, run: GenerationRun) -> RunManifest:
        """Atomically write manifest + samples + verdicts; idempotent on content."""
        run_dir = self.run_dir(run)
        run_dir.mkdir(parents=True, exist_ok=True)
        lock = self._acquire_lock(run_dir)
        try:
            samples_path = run_dir / "samples.jsonl"
            verdicts_path = run_dir / "verdicts.jsonl"
            write_corpus_jsonl(run.samples, samples_path)
            _atomic_write(
                verdicts_path,
                "".join(json.dumps(v.to_record(), ensure_ascii=False) + "\n" for v in run.verdicts),
            )
            (run_dir / "transcript.log").touch()
            hashes = {
                "samples.jsonl": _sha256_file(samples_path),
                "verdicts.jsonl": _sha256_file(verdicts_path),
            }

            created_at = datetime.now(timezone.utc).isoformat()
            manifest_path = run_dir / "manifest.json"
            if manifest_path.exists():
                previous = json.loads(manifest_path.read_text(encoding="utf-8"))
                if previous.get("hashes") == hashes:
                    created_at = previous.get("created_at", created_at)

            manifest = RunManifest(
                run_id=run.run_id,
                created_at=created_at,
                status=run.status,
                task=run.task,
                language=run.language,
                model_id=run.model_id,
                strategy=run.strategy.to_dict(),
                seed=run.seed,
                counts={label: c.to_dict() for label, c in run.counts.items()},
                shortfalls=dict(run.shortfalls),
                hashes=hashes,
                config=run.config,
            )
            _atomic_write(manifest_path, json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
            return manifest
        finally:
            self._release_lock(lock)

    def load_manifest(self, run_dir: Path) -> RunManifest:
        manifest_path = run_dir / "manifest.json"
        if not manifest_path.exists():
            raise StoreError(f"missing manifest: {manifest_path}")
        return RunManifest.from_dict(json.loads(manifest_path.read_text(encoding="utf-8")))

    def verify_hashes(self, run_dir: Path, manifest: RunManifest) -> None:
        for name, expected in manifest.hashes.items():
            path = run_dir / name
            if not path.exists():
                raise StoreError(f"missing file {path} listed in manifest")
            actual = _sha256_file(path)
            if actual != expected:
                raise StoreError(f"hash mismatch for {path}: {actual} != {expected}")

    def load_run(self, run_id: str) -> tuple[GenerationRun, RunManifest]:
        run_dir = self.find_run_dir(run_id)
        manifest = self.load_manifest(run_dir)
        self.verify_hashes(run_dir, manifest)
        samples = read_corpus_jsonl(run_dir / "samples.jsonl")
        verdicts = []
        verdicts_path = run_dir / "verdicts.jsonl"
        if verdicts_path.exists():
            with verdicts_path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        verdicts.append(RevisionVerdict.from_record(json.loads(line)))
        run = GenerationRun(
            run_id=manifest.run_id,
            task=manifest.task,
            language=manifest.language,
            model_id=manifest.model_id,
            strategy=StrategyConfig(**manifest.strategy),
            seed=manifest.seed,
            samples=samples,
            verdicts=verdicts,
            counts={label: LabelCounts.from_dict(c) for label, c in manifest.counts.items()},
            shortfalls={label: int(v) for label, v in manifest.shortfalls.items()},
            config=manifest.config,
            status=manifest.status,
        )
        return run, manifest

    def resume_run(self, run_id: str) -> GenerationRun:
        """Reload a non-complete run for continuation."""
        run, manifest = self.load_run(run_id)
        if manifest.status == "complete":
            raise StoreError(f"run {run_id} is complete; refusing to resume")
        if manifest.status not in RESUMABLE_STATUSES:
            raise StoreError(f"run {run_id} has unknown status {manifest.status!r}")
        return run


class SummaryCache:
    """Label summaries shared across languages, keyed by (task, label)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._data: dict[str, dict[str, str]] = {}
        if self.path.exists():
            self._data = json.loads(self.path.read_text(encoding="utf-8"))

    def get(self, task: str, label: str) -> str | None:
        return self._data.get(task, {}).get(label)

    def put(self, task: str, label: str, summary: str) -> None:
        self._data.setdefault(task, {})[label] = summary
        self.path.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write(self.path, json.dumps(self._data, indent=2, sort_keys=True, ensure_ascii=False) + "\n")

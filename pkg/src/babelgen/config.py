"""Layered pipeline configuration: YAML file, env interpolation, flag overrides.

Secrets enter through ``${ENV_VAR}`` interpolation so config files can be
committed and reproduced from run manifests.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from babelgen.corpus import LANGUAGES, TASKS
from babelgen.metrics import MetricConfig
from babelgen.strategies import ALL_STRATEGIES


class ConfigError(Exception):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


_ENV_PATTERN = re.compile(r"\$\{(\w+)\}")


def _interpolate(value, missing: list[str]):
    if isinstance(value, str):
        def repl(match):
            name = match.group(1)
            if name not in os.environ:
                missing.append(name)
                return match.group(0)
            return os.environ[name]

        return _ENV_PATTERN.sub(repl, value)
    if isinstance(value, list):
        return [_interpolate(v, missing) for v in value]
    if isinstance(value, dict):
        return {k: _interpolate(v, missing) for k, v in value.items()}
    return value


@dataclass
class BackendSpec:
    name: str
    kind: str  # sim | http
    model_id: str
    base_url: str = ""
    temperature: float = 1.0
    top_p: float = 0.95
    max_tokens: int = 1024
    timeout: float = 60.0
    max_retries: int = 3
    parallelism: int = 4
    api_key: str | None = None
    embed_batch: int = 64


@dataclass
class PipelineConfig:
    tasks: list[str] = field(default_factory=lambda: ["intent"])
    languages: list[str] = field(default_factory=lambda: ["en"])
    strategies: list[str] = field(default_factory=lambda: list(ALL_STRATEGIES))
    per_label: int = 100
    demos_k: int = 10
    samples_per_call: int = 10
    max_generation_rounds: int = 40
    revision_batch: int = 10
    seeds: list[int] = field(default_factory=lambda: [0])
    allow_any_language: bool = False
    gold_root: Path = Path("data/gold")
    run_root: Path = Path("runs")
    templates_dir: Path | None = None
    backends: list[BackendSpec] = field(default_factory=list)
    sim: dict = field(default_factory=dict)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    raw: dict = field(default_factory=dict)

    def gold_path(self, task: str, language: str) -> Path:
        return self.gold_root / task / f"{language}.jsonl"

    def backend_spec(self, name: str) -> BackendSpec:
        for spec in self.backends:
            if spec.name == name:
                return spec
        raise ConfigError([f"no backend named {name!r} in config"])


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and interpolate the YAML config; structural errors raise ConfigError."""
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"config is not valid YAML: {exc}"]) from exc
    missing_env: list[str] = []
    data = _interpolate(data, missing_env)
    if missing_env:
        raise ConfigError([f"undefined environment variable ${{{name}}}" for name in sorted(set(missing_env))])

    paths = data.get("paths", {})
    metrics_data = data.get("metrics", {})
    try:
        metrics = MetricConfig(
            ngram_max=int(metrics_data.get("ngram_max", 4)),
            embed_batch=int(metrics_data.get("embed_batch", 64)),
            ci_level=float(metrics_data.get("ci_level", 0.95)),
            pair_mode=str(metrics_data.get("pair_mode", "cross")),
        )
    except ValueError as exc:
        raise ConfigError([f"metrics: {exc}"]) from exc

    backends = []
    for entry in data.get("backends", []):
        if not isinstance(entry, dict) or "name" not in entry:
            raise ConfigError([f"backend entries need a name: {entry!r}"])
        backends.append(
            BackendSpec(
                name=str(entry["name"]),
                kind=str(entry.get("kind", "http")),
                model_id=str(entry.get("model_id", entry["name"])),
                base_url=str(entry.get("base_url", "")),
                temperature=float(entry.get("temperature", 1.0)),
                top_p=float(entry.get("top_p", 0.95)),
                max_tokens=int(entry.get("max_tokens", 1024)),
                timeout=float(entry.get("timeout", 60.0)),
                max_retries=int(entry.get("max_retries", 3)),
                parallelism=int(entry.get("parallelism", 4)),
                api_key=entry.get("api_key"),
                embed_batch=int(entry.get("embed_batch", 64)),
            )
        )
    if not backends:
        backends.append(BackendSpec(name="sim", kind="sim", model_id="sim"))

    cfg = PipelineConfig(
        tasks=list(data.get("tasks", ["intent"])),
        languages=list(data.get("languages", ["en"])),
        strategies=list(data.get("strategies", ALL_STRATEGIES)),
        per_label=int(data.get("per_label", 100)),
        demos_k=int(data.get("demos_k", 10)),
        samples_per_call=int(data.get("samples_per_call", 10)),
        max_generation_rounds=int(data.get("max_generation_rounds", 40)),
        revision_batch=int(data.get("revision_batch", 10)),
        seeds=[int(s) for s in data.get("seeds", [0])],
        allow_any_language=bool(data.get("allow_any_language", False)),
        gold_root=Path(paths.get("gold_root", "data/gold")),
        run_root=Path(paths.get("run_root", "runs")),
        templates_dir=Path(paths["templates"]) if paths.get("templates") else None,
        backends=backends,
        sim=dict(data.get("sim", {})),
        metrics=metrics,
        raw=data,
    )
    return cfg


def validate_config(cfg: PipelineConfig, check_gold_files: bool = True) -> list[str]:
    """Return every violation found (empty list means valid)."""
    violations: list[str] = []
    if not cfg.tasks:
        violations.append("tasks: must not be empty")
    for task in cfg.tasks:
        if task not in TASKS:
            violations.append(f"tasks: unknown task {task!r} (expected one of {list(TASKS)})")
    if not cfg.languages:
        violations.append("languages: must not be empty")
    if not cfg.allow_any_language:
        for code in cfg.languages:
            if code not in LANGUAGES:
                violations.append(
                    f"languages: {code!r} is not a configured code (set allow_any_language to override)"
                )
    for strategy in cfg.strategies:
        if strategy not in ALL_STRATEGIES:
            violations.append(f"strategies: unknown strategy {strategy!r}")
    if cfg.per_label < 1:
        violations.append("per_label: must be >= 1")
    if cfg.demos_k < 1:
        violations.append("demos_k: must be >= 1")
    if not cfg.seeds:
        violations.append("seeds: must not be empty")
    if not cfg.gold_root.exists():
        violations.append(f"paths.gold_root: {cfg.gold_root} does not exist")
    elif check_gold_files:
        for task in cfg.tasks:
            for language in cfg.languages:
                path = cfg.gold_path(task, language)
                if not path.exists():
                    violations.append(f"paths.gold_root: missing gold file {path}")
    if cfg.templates_dir is not None:
        if not cfg.templates_dir.is_dir():
            violations.append(f"paths.templates: {cfg.templates_dir} is not a directory")
        else:
            for name in ("generation", "revision", "summary"):
                if not (cfg.templates_dir / f"{name}.txt").exists():
                    violations.append(f"paths.templates: missing {name}.txt")
    for spec in cfg.backends:
        if spec.kind not in ("sim", "http"):
            violations.append(f"backends.{spec.name}: unknown kind {spec.kind!r}")
        if spec.kind == "http" and not spec.base_url:
            violations.append(f"backends.{spec.name}: http backend needs base_url")
        if spec.parallelism < 1:
            violations.append(f"backends.{spec.name}: parallelism must be >= 1")
    return violations

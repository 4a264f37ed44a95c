"""babelgen command line: the pipeline as subcommands over a layered config.

Exit codes: 0 success, 1 run failure, 2 config error. All randomness flows
from --seed (or the config's seeds list). Logs go to stderr; --log-json
switches them to line-delimited JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from itertools import product
from pathlib import Path

from babelgen.backend import BackendConfig, BackendError, HttpBackend
from babelgen.config import ConfigError, PipelineConfig, load_config, validate_config
from babelgen.corpus import (
    CorpusError,
    Dataset,
    LabeledExample,
    LabelSpec,
    dataset_from_examples,
    normalize_for_training,
    read_corpus_jsonl,
    split_train_dev,
    write_corpus_jsonl,
)
from babelgen.metrics import (
    MetricError,
    MetricReport,
    aggregate_seeds,
    embedding_cosine_to_gold,
    ngram_diversity,
    tfidf_cosine_to_gold,
)
from babelgen.prompting import PromptError, TemplateSet
from babelgen.reporting import (
    ChartRow,
    ReportError,
    ResultsGrid,
    best_strategies,
    chart_rows_from_diffs,
    diff_to_gold,
    emit_chart_data,
    metric_report_from_train_result,
    results_table,
)
from babelgen.simulate import SimBackend, SimError, SimScript, SimServer
from babelgen.store import RunStore, StoreError, SummaryCache
from babelgen.strategies import (
    ALL_STRATEGIES,
    GenerationRun,
    StrategyConfig,
    StrategyError,
    derive_run_id,
    rejection_stats,
    revise_batch,
    run_strategy,
    summarize_label,
)

logger = logging.getLogger("babelgen")

RUN_ERRORS = (
    BackendError,
    CorpusError,
    MetricError,
    PromptError,
    ReportError,
    SimError,
    StoreError,
    StrategyError,
    OSError,
)


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        payload = {
            "level": record.levelname.lower(),
            "logger": record.name,
            "message": record.getMessage(),
        }
        return json.dumps(payload, ensure_ascii=False)


def _setup_logging(log_json: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if log_json:
        handler.setFormatter(_JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO)


def _formatter(prog: str) -> argparse.HelpFormatter:
    return argparse.HelpFormatter(prog, width=96)


def expand_int_list(spec: str) -> list[int]:
    """Parse "10,20,30" or elided arithmetic runs like "10,20,...,100"."""
    parts = [p.strip() for p in spec.split(",") if p.strip()]
    values: list[int] = []
    for i, part in enumerate(parts):
        if part in ("...", ".."):
            if len(values) < 2 or i + 1 >= len(parts):
                raise ValueError(f"cannot expand ellipsis in {spec!r}")
            step = values[-1] - values[-2]
            if step == 0:
                raise ValueError(f"zero step in {spec!r}")
            stop = int(parts[i + 1])
            nxt = values[-1] + step
            while (step > 0 and nxt < stop) or (step < 0 and nxt > stop):
                values.append(nxt)
                nxt += step
        else:
            values.append(int(part))
    return values


def _load_cfg(args, check_gold: bool = True) -> PipelineConfig:
    cfg = load_config(args.config)
    if getattr(args, "task", None):
        cfg.tasks = [args.task]
    if getattr(args, "lang", None):
        cfg.languages = [args.lang]
    if getattr(args, "strategy", None):
        cfg.strategies = (
            list(ALL_STRATEGIES)
            if args.strategy == "all"
            else [s.strip() for s in args.strategy.split(",")]
        )
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "per_label", None) is not None:
        cfg.per_label = args.per_label
    if getattr(args, "demos_k", None) is not None:
        cfg.demos_k = args.demos_k
    violations = validate_config(cfg, check_gold_files=check_gold)
    if violations:
        raise ConfigError(violations)
    return cfg


def _templates(cfg: PipelineConfig) -> TemplateSet | None:
    if cfg.templates_dir is not None:
        return TemplateSet.from_dir(cfg.templates_dir)
    return None


def _build_backend(cfg: PipelineConfig, name: str, run_seed: int, on_event=None):
    spec = cfg.backend_spec(name)
    if spec.kind == "sim":
        sim_cfg = dict(cfg.sim)
        if sim_cfg.get("seed") is None:
            sim_cfg["seed"] = run_seed
        script = SimScript.from_config(sim_cfg)
        return SimBackend(script, model_id=spec.model_id, on_event=on_event)
    backend_cfg = BackendConfig(
        base_url=spec.base_url,
        model_id=spec.model_id,
        temperature=spec.temperature,
        top_p=spec.top_p,
        max_tokens=spec.max_tokens,
        timeout=spec.timeout,
        max_retries=spec.max_retries,
        parallelism=spec.parallelism,
        api_key=spec.api_key,
    )
    return HttpBackend(backend_cfg, on_event=on_event)


def _load_gold(cfg: PipelineConfig, task: str, language: str) -> Dataset:
    path = cfg.gold_path(task, language)
    examples = read_corpus_jsonl(path)
    if not examples:
        raise CorpusError(f"gold file {path} holds no examples")
    return dataset_from_examples(task, language, examples)


def _default_backend_name(cfg: PipelineConfig, args) -> str:
    if getattr(args, "backend", None):
        return args.backend
    return cfg.backends[0].name


# --- subcommand handlers -------------------------------------------------


def cmd_validate_config(args) -> int:
    cfg = load_config(args.config)
    violations = validate_config(cfg)
    if violations:
        for violation in violations:
            print(f"config error: {violation}", file=sys.stderr)
        return 2
    print(f"{args.config}: ok")
    return 0


def cmd_summarize_labels(args) -> int:
    cfg = _load_cfg(args, check_gold=False)
    backend_name = _default_backend_name(cfg, args)
    templates = _templates(cfg)
    cfg.run_root.mkdir(parents=True, exist_ok=True)
    cache = SummaryCache(cfg.run_root / "summaries.json")
    written = 0
    for task in cfg.tasks:
        gold_en = _load_gold(cfg, task, "en")
        backend = _build_backend(cfg, backend_name, cfg.seeds[0])
        for label in gold_en.label_names():
            spec = summarize_label(
                label,
                gold_en,
                backend,
                cfg.demos_k,
                seed=cfg.seeds[0],
                templates=templates,
                cache=cache,
                task=task,
            )
            written += 1
            print(f"{task}/{label}: {spec.summary[:80]}")
    print(f"cached {written} summaries under {cfg.run_root / 'summaries.json'}")
    return 0


def _one_generation_cell(cfg, store, templates, backend_name, task, language, kind, seed, resume_run_id=None):
    model_id = cfg.backend_spec(backend_name).model_id
    if resume_run_id is not None:
        resume = store.resume_run(resume_run_id)
        task, language, seed = resume.task, resume.language, resume.seed
        strategy = resume.strategy
        run_id = resume.run_id
        shell = resume
    else:
        resume = None
        strategy = StrategyConfig(
            kind=kind,
            per_label=cfg.per_label,
            demos_k=cfg.demos_k,
            max_generation_rounds=cfg.max_generation_rounds,
            revision_batch=cfg.revision_batch,
            samples_per_call=cfg.samples_per_call,
        )
        run_id = derive_run_id(task, language, model_id, kind, seed)
        shell = GenerationRun(
            run_id=run_id, task=task, language=language, model_id=model_id,
            strategy=strategy, seed=seed,
        )

    gold = _load_gold(cfg, task, language)
    spec = strategy.spec
    needs_en = spec.demo_language == "en" or spec.summary_in_prompt or spec.revision
    english_gold = None
    if needs_en:
        english_gold = gold if language == "en" else _load_gold(cfg, task, "en")
    cache = SummaryCache(cfg.run_root / "summaries.json")

    transcript = store.transcript_writer(shell)
    backend = _build_backend(cfg, backend_name, seed, on_event=transcript)
    return run_strategy(
        task,
        language,
        model_id,
        strategy,
        gold,
        backend,
        seed=seed,
        english_gold=english_gold,
        summary_cache=cache,
        templates=templates,
        store=store,
        run_id=run_id,
        resume=resume,
    )


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    templates = _templates(cfg)
    store = RunStore(cfg.run_root)
    backend_name = _default_backend_name(cfg, args)

    if args.resume:
        run = _one_generation_cell(
            cfg, store, templates, backend_name,
            task=None, language=None, kind=None, seed=None, resume_run_id=args.resume,
        )
        print(store.run_dir(run))
        return 0

    cells = list(product(cfg.tasks, cfg.languages, cfg.strategies, cfg.seeds))
    failures = []

    def execute(cell):
        task, language, kind, seed = cell
        run = _one_generation_cell(cfg, store, templates, backend_name, task, language, kind, seed)
        return store.run_dir(run)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            futures = {pool.submit(execute, cell): cell for cell in cells}
            for future, cell in futures.items():
                try:
                    print(future.result())
                except RUN_ERRORS as exc:
                    failures.append((cell, exc))
    else:
        for cell in cells:
            try:
                print(execute(cell))
            except RUN_ERRORS as exc:
                failures.append((cell, exc))
    for cell, exc in failures:
        logger.error("cell %s failed: %s", cell, exc)
    return 1 if failures else 0


def cmd_revise(args) -> int:
    cfg = _load_cfg(args, check_gold=False)
    templates = _templates(cfg)
    backend_name = _default_backend_name(cfg, args)
    store = RunStore(cfg.run_root)

    if args.run:
        run, _manifest = store.load_run(args.run)
        samples = run.samples
        task, language = run.task, run.language
    else:
        samples = read_corpus_jsonl(args.input)
        if not samples:
            raise CorpusError(f"{args.input} holds no examples")
        task, language = samples[0].meta.get("task", cfg.tasks[0]), samples[0].language

    cache = SummaryCache(cfg.run_root / "summaries.json")
    backend = _build_backend(cfg, backend_name, cfg.seeds[0])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    by_label: dict[str, list[LabeledExample]] = {}
    for ex in samples:
        by_label.setdefault(ex.label, []).append(ex)

    all_verdicts = []
    accepted: list[LabeledExample] = []
    for label_name, bucket in by_label.items():
        summary = cache.get(task, label_name)
        if not summary:
            raise StrategyError(
                f"no cached summary for ({task}, {label_name}); run summarize-labels first"
            )
        verdicts = revise_batch(
            bucket,
            LabelSpec(label_name, summary),
            backend,
            cfg.revision_batch,
            task=task,
            language=language,
            templates=templates,
        )
        for sample, verdict in zip(bucket, verdicts):
            if verdict.accepted:
                accepted.append(sample)
        all_verdicts.extend(verdicts)

    with (out_dir / "verdicts.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for verdict in all_verdicts:
            fh.write(json.dumps(verdict.to_record(), ensure_ascii=False) + "\n")
    write_corpus_jsonl(accepted, out_dir / "accepted.jsonl")
    rejected = len(all_verdicts) - len(accepted)
    stats = {
        "judged": len(all_verdicts),
        "accepted": len(accepted),
        "rejected": rejected,
        "rejection_rate": round(rejected / len(all_verdicts), 4) if all_verdicts else 0.0,
    }
    (out_dir / "revision_stats.json").write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(stats))
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args, check_gold=False)
    store = RunStore(cfg.run_root)
    run, _manifest = store.load_run(args.run)
    gold = _load_gold(cfg, run.task, run.language)
    gold_train = dataset_from_examples(
        run.task,
        run.language,
        [ex for ex in gold.examples if ex.split == "train"],
        labels=gold.label_names(),
    )
    generated = dataset_from_examples(
        run.task, run.language, run.samples, labels=gold.label_names()
    )

    report = MetricReport(run_id=run.run_id)
    report.tfidf_sim = tfidf_cosine_to_gold(generated, gold_train, cfg.metrics)
    report.ngram_div = ngram_diversity([ex.text for ex in generated.examples], cfg.metrics.ngram_max)
    if run.strategy.spec.revision:
        report.rejection_rate = rejection_stats(run).total
    if args.backend:
        backend = _build_backend(cfg, args.backend, run.seed)
        report.embed_sim = embedding_cosine_to_gold(generated, gold_train, backend, cfg.metrics)
    report.validate(cfg.metrics.ngram_max)

    out_path = store.find_run_dir(run.run_id) / "metrics.json"
    out_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(out_path)
    return 0


def cmd_report(args) -> int:
    grid = ResultsGrid.load(args.grid)
    if args.trainer_result:
        if not args.trainer_cell:
            raise ReportError("--trainer-result needs --trainer-cell task,lang,model,strategy")
        coords = [p.strip() for p in args.trainer_cell.split(",")]
        if len(coords) != 4:
            raise ReportError("--trainer-cell expects 4 comma-separated values")
        payload = json.loads(Path(args.trainer_result).read_text(encoding="utf-8"))
        report = metric_report_from_train_result(payload, run_id=Path(args.trainer_result).stem)
        grid.put(coords[0], coords[1], coords[2], coords[3], report)

    for problem in grid.validate():
        logger.warning("grid completeness: %s", problem)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [args.task] if args.task else grid.tasks
    summary = {}
    for task in tasks:
        table = results_table(grid, task)
        (out_dir / f"{task}_table.md").write_text(table.render_markdown(), encoding="utf-8", newline="\n")
        (out_dir / f"{task}_table.csv").write_text(table.render_csv(), encoding="utf-8", newline="\n")
        for warning in table.warnings:
            logger.warning("table %s: %s", task, warning)
        diffs = diff_to_gold(grid, tasks=[task])
        best, second = best_strategies(diffs)
        summary[task] = {
            "best": best,
            "second_best": second,
            "mean_gap": {name: round(diff.mean, 4) for name, diff in diffs.items()},
        }
        rows = chart_rows_from_diffs(diffs, group=task)
        emit_chart_data(rows, "diff_bars", out_dir / f"{task}_diff_bars")
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(out_dir)
    return 0


def cmd_export_training(args) -> int:
    cfg = _load_cfg(args, check_gold=False)
    store = RunStore(cfg.run_root)
    run, _manifest = store.load_run(args.run)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    normalized: list[LabeledExample] = []
    dropped = 0
    for ex in run.samples:
        text = normalize_for_training(ex.text)
        if not text:
            dropped += 1
            continue
        normalized.append(
            LabeledExample(
                id=ex.id,
                text=text,
                label=ex.label,
                language=ex.language,
                split="train",
                source=ex.source,
                meta=dict(ex.meta),
            )
        )
    pool = dataset_from_examples(run.task, run.language, normalized)
    train, dev = split_train_dev(pool, dev_fraction=args.dev_fraction, seed=run.seed)
    write_corpus_jsonl(train, out_dir / "train.jsonl")
    write_corpus_jsonl(dev, out_dir / "dev.jsonl")
    if dropped:
        logger.warning("dropped %d samples that normalized to empty text", dropped)
    print(json.dumps({"train": len(train), "dev": len(dev), "dropped_empty": dropped}))
    return 0


def cmd_sweep_seeds(args) -> int:
    cfg = _load_cfg(args)
    templates = _templates(cfg)
    backend_name = _default_backend_name(cfg, args)
    ks = expand_int_list(args.k)
    if not ks:
        raise ConfigError(["sweep-seeds: --k expanded to an empty list"])

    task, language = cfg.tasks[0], cfg.languages[0]
    gold = _load_gold(cfg, task, language)
    gold_train = dataset_from_examples(
        task, language, [ex for ex in gold.examples if ex.split == "train"], labels=gold.label_names()
    )
    english_gold = gold if language == "en" else _load_gold(cfg, task, "en")
    cfg.run_root.mkdir(parents=True, exist_ok=True)
    cache = SummaryCache(cfg.run_root / "summaries.json")

    rows: list[ChartRow] = []
    for kind in cfg.strategies:
        for k in ks:
            scores = []
            for seed in cfg.seeds:
                strategy = StrategyConfig(
                    kind=kind,
                    per_label=cfg.per_label,
                    demos_k=k,
                    max_generation_rounds=cfg.max_generation_rounds,
                    revision_batch=cfg.revision_batch,
                    samples_per_call=cfg.samples_per_call,
                )
                backend = _build_backend(cfg, backend_name, seed)
                run = run_strategy(
                    task,
                    language,
                    getattr(backend, "model_id", backend_name),
                    strategy,
                    gold,
                    backend,
                    seed=seed,
                    english_gold=english_gold,
                    summary_cache=cache,
                    templates=templates,
                )
                generated = dataset_from_examples(task, language, run.samples, labels=gold.label_names())
                scores.append(tfidf_cosine_to_gold(generated, gold_train, cfg.metrics))
            if len(scores) >= 2:
                mean, ci_low, ci_high = aggregate_seeds(scores, cfg.metrics.ci_level)
            else:
                mean, ci_low, ci_high = scores[0], None, None
            rows.append(ChartRow(group=str(k), series=kind, value=mean, ci_low=ci_low, ci_high=ci_high))
    out = Path(args.out) if args.out else cfg.run_root / "seed_sweep"
    paths = emit_chart_data(rows, "seed_sweep", out)
    for path in paths:
        print(path)
    return 0


def cmd_serve_sim(args) -> int:
    sim_cfg = {}
    if args.config:
        cfg = load_config(args.config)
        sim_cfg = dict(cfg.sim)
    if sim_cfg.get("seed") is None:
        sim_cfg["seed"] = args.seed if args.seed is not None else 0
    script = SimScript.from_config(sim_cfg)
    server = SimServer(script, host=args.host, port=args.port)
    print(f"simulated backend listening on {server.base_url}", flush=True)
    try:
        server.serve_blocking()
    except KeyboardInterrupt:
        server.stop()
    return 0


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="babelgen",
        description="Generate, filter, evaluate and report synthetic text corpora.",
        formatter_class=_formatter,
    )
    parser.add_argument("--log-json", action="store_true", help="emit line-delimited JSON logs on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, handler, help_text):
        p = sub.add_parser(name, help=help_text, formatter_class=_formatter)
        p.set_defaults(handler=handler)
        return p

    p = add("validate-config", cmd_validate_config, "check a pipeline config, listing every violation")
    p.add_argument("--config", required=True, help="pipeline config file (YAML)")

    p = add("summarize-labels", cmd_summarize_labels, "generate and cache label summaries from English gold")
    p.add_argument("--config", required=True, help="pipeline config file (YAML)")
    p.add_argument("--task", help="restrict to one task")
    p.add_argument("--backend", help="backend name from config (default: first)")

    p = add("generate", cmd_generate, "run generation strategies over the configured grid")
    p.add_argument("--config", required=True, help="pipeline config file (YAML)")
    p.add_argument("--task", help="restrict to one task")
    p.add_argument("--lang", help="restrict to one language code")
    p.add_argument("--strategy", help="strategy name, comma list, or 'all'")
    p.add_argument("--backend", help="backend name from config (default: first)")
    p.add_argument("--seed", type=int, help="override the config seed list with one seed")
    p.add_argument("--per-label", type=int, dest="per_label", help="samples per label quota")
    p.add_argument("--demos-k", type=int, dest="demos_k", help="demonstrations per label")
    p.add_argument("--jobs", type=int, default=1, help="concurrent grid cells (default 1)")
    p.add_argument("--resume", help="resume an interrupted run by run id")

    p = add("revise", cmd_revise, "judge an existing corpus and emit verdicts plus the accepted subset")
    p.add_argument("--config", required=True, help="pipeline config file (YAML)")
    p.add_argument("--run", help="judge a stored run's samples")
    p.add_argument("--input", help="judge a corpus-schema JSONL file instead of a run")
    p.add_argument("--backend", help="backend name from config (default: first)")
    p.add_argument("--out", required=True, help="output directory")

    p = add("evaluate", cmd_evaluate, "compute similarity/diversity metrics for a stored run")
    p.add_argument("--config", required=True, help="pipeline config file (YAML)")
    p.add_argument("--run", required=True, help="run id")
    p.add_argument("--backend", help="embeddings backend name (omit to skip embedding similarity)")

    p = add("report", cmd_report, "render result tables, gaps to gold and chart data from a grid file")
    p.add_argument("--grid", required=True, help="results grid JSON")
    p.add_argument("--task", help="restrict to one task")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--trainer-result", dest="trainer_result", help="merge a trainer result JSON")
    p.add_argument(
        "--trainer-cell",
        dest="trainer_cell",
        help="grid cell for the trainer result: task,lang,model,strategy",
    )

    p = add("export-training", cmd_export_training, "normalize a run's samples and emit train/dev splits")
    p.add_argument("--config", required=True, help="pipeline config file (YAML)")
    p.add_argument("--run", required=True, help="run id")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dev-fraction", dest="dev_fraction", type=float, default=0.1, help="dev share (default 0.1)")

    p = add("sweep-seeds", cmd_sweep_seeds, "vary demonstrations per label and chart the effect")
    p.add_argument("--config", required=True, help="pipeline config file (YAML)")
    p.add_argument("--k", required=True, help="counts, e.g. '10,20,...,100'")
    p.add_argument("--task", help="restrict to one task")
    p.add_argument("--lang", help="restrict to one language code")
    p.add_argument("--strategy", help="strategy name, comma list, or 'all'")
    p.add_argument("--backend", help="backend name from config (default: first)")
    p.add_argument("--out", help="output path stem for chart data")

    p = add("serve-sim", cmd_serve_sim, "serve the simulated backend over HTTP")
    p.add_argument("--config", help="pipeline config file (YAML), for the sim script")
    p.add_argument("--host", default="127.0.0.1", help="bind host (default 127.0.0.1)")
    p.add_argument("--port", type=int, default=8008, help="bind port (default 8008)")
    p.add_argument("--seed", type=int, help="sim script seed")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.log_json)
    try:
        return args.handler(args)
    except ConfigError as exc:
        for violation in exc.violations:
            print(f"config error: {violation}", file=sys.stderr)
        return 2
    except RUN_ERRORS as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())

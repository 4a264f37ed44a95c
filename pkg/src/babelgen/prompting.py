"""Prompt rendering and completion parsing for the three prompt families.

Templates live as UTF-8 files with ``{{name}}`` placeholders and can be
overridden per task via the config. Rendering is deterministic: identical
inputs produce byte-identical messages.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from babelgen.corpus import LANGUAGES, LabelSpec


class PromptError(Exception):
    """Raised when a prompt cannot be rendered from the given context."""


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str


@dataclass
class PromptContext:
    """Everything a generation prompt needs for one (label, language) call."""

    task: str
    label: LabelSpec
    demos: list[tuple[str, str]]  # (text, language)
    target_language: str
    n_requested: int
    include_summary: bool = False
    start_index: int = 1  # continuation rounds number from here


class TemplateSet:
    """The three prompt templates, loadable from a directory override."""

    NAMES = ("generation", "revision", "summary")

    def __init__(self, generation: str, revision: str, summary: str):
        self.generation = generation
        self.revision = revision
        self.summary = summary

    def version(self) -> str:
        """Content hash identifying this template set in run manifests."""
        import hashlib

        digest = hashlib.sha256(
            "\x1e".join([self.generation, self.revision, self.summary]).encode()
        )
        return digest.hexdigest()[:12]

    @classmethod
    def default(cls) -> "TemplateSet":
        texts = {}
        for name in cls.NAMES:
            ref = resources.files("babelgen.templates").joinpath(f"{name}.txt")
            texts[name] = ref.read_text(encoding="utf-8")
        return cls(**texts)

    @classmethod
    def from_dir(cls, directory: str | Path) -> "TemplateSet":
        directory = Path(directory)
        texts = {}
        for name in cls.NAMES:
            path = directory / f"{name}.txt"
            if not path.exists():
                raise PromptError(f"template override missing: {path}")
            texts[name] = path.read_text(encoding="utf-8")
        return cls(**texts)


def _fill(template: str, values: dict[str, str]) -> str:
    out = template
    for key, value in values.items():
        out = out.replace("{{" + key + "}}", value)
    leftover = re.findall(r"\{\{(\w+)\}\}", out)
    if leftover:
        raise PromptError(f"unfilled template placeholders: {leftover}")
    return out


def language_name(code: str) -> str:
    if code not in LANGUAGES:
        return code
    return LANGUAGES[code]


def render_generation_prompt(
    ctx: PromptContext, templates: TemplateSet | None = None
) -> list[ChatMessage]:
    """Render the sample-generation prompt.

    The user turn contains the label name, the summary when requested, every
    demonstration verbatim, the target-language name, the requested count and
    the numbered-list output instruction.
    """
    templates = templates or TemplateSet.default()
    if ctx.include_summary and not (ctx.label.summary and ctx.label.summary.strip()):
        raise PromptError(f"label {ctx.label.name!r} has no summary to include")
    if ctx.n_requested < 1:
        raise PromptError("n_requested must be >= 1")

    summary_block = ""
    if ctx.include_summary:
        summary_block = f"Category description: {ctx.label.summary}\n"
    demos_block = ""
    if ctx.demos:
        lines = "\n".join(f"- {text}" for text, _lang in ctx.demos)
        demos_block = f"Examples of this category:\n{lines}\n"

    user = _fill(
        templates.generation,
        {
            "label": ctx.label.name,
            "summary": summary_block,
            "demos": demos_block,
            "n": str(ctx.n_requested),
            "language": language_name(ctx.target_language),
        },
    )
    if ctx.start_index > 1:
        user = user.rstrip("\n") + f"\nContinue numbering from {ctx.start_index}.\n"
    system = f"You write synthetic training examples for a {ctx.task} classifier."
    return [ChatMessage("system", system), ChatMessage("user", user)]


def render_revision_prompt(
    label: LabelSpec,
    samples: list[str],
    *,
    task: str | None = None,
    language: str | None = None,
    templates: TemplateSet | None = None,
) -> list[ChatMessage]:
    """Render the judge prompt: enumerate samples, ask ACCEPT/REJECT per index."""
    templates = templates or TemplateSet.default()
    if not samples:
        raise PromptError("cannot render a revision prompt for zero samples")
    if not (label.summary and label.summary.strip()):
        raise PromptError(f"label {label.name!r} needs a summary for revision")

    numbered = "\n".join(f"{i}. {text}" for i, text in enumerate(samples, start=1))
    user = _fill(
        templates.revision,
        {"label": label.name, "summary": label.summary, "samples": numbered},
    )
    system = "You review synthetic training examples for a text classifier."
    if task is not None:
        system += f" Task: {task}."
    if language is not None:
        system += f" Expected language: {language_name(language)}."
    return [ChatMessage("system", system), ChatMessage("user", user)]


def render_summary_prompt(
    label_name: str,
    english_demos: list[str],
    templates: TemplateSet | None = None,
) -> list[ChatMessage]:
    """Render the label-description prompt from English demonstrations."""
    templates = templates or TemplateSet.default()
    if not english_demos:
        raise PromptError("cannot summarize a label from zero demonstrations")
    demos_block = "\n".join(f"- {text}" for text in english_demos)
    user = _fill(
        templates.summary, {"label": label_name, "demos": demos_block}
    )
    system = "You describe text-classification categories."
    return [ChatMessage("system", system), ChatMessage("user", user)]


@dataclass
class ResidueLine:
    line: str
    reason: str  # commentary | truncated


@dataclass
class ParsedGeneration:
    samples: list[str]
    residue: list[ResidueLine] = field(default_factory=list)


_LIST_MARKER = re.compile(r"^\s*(?:\d{1,5}\s*[.):\-]\s*|[-*•–]\s+)(.*)$")
_QUOTE_PAIRS = [('"', '"'), ("'", "'"), ("“", "”"), ("‘", "’")]


def _strip_quotes(text: str) -> str:
    if len(text) >= 2:
        for left, right in _QUOTE_PAIRS:
            if text.startswith(left) and text.endswith(right):
                return text[len(left) : -len(right)].strip()
    return text


def parse_generation_output(completion: str, n_expected: int) -> ParsedGeneration:
    """Extract up to ``n_expected`` samples from a list-formatted completion.

    Only lines carrying a list marker (number or bullet) parse as samples;
    everything else lands in the residue report. Entries past ``n_expected``
    are recorded as truncated rather than returned. Zero parses is a valid
    outcome.
    """
    samples: list[str] = []
    residue: list[ResidueLine] = []
    for raw in completion.splitlines():
        line = raw.strip()
        if not line:
            continue
        match = _LIST_MARKER.match(line)
        if not match:
            residue.append(ResidueLine(line, "commentary"))
            continue
        text = _strip_quotes(match.group(1).strip())
        if not text:
            continue
        if len(samples) >= n_expected:
            residue.append(ResidueLine(text, "truncated"))
            continue
        samples.append(text)
    return ParsedGeneration(samples=samples, residue=residue)


ACCEPT = "accept"
REJECT = "reject"


@dataclass
class IndexVerdict:
    index: int
    verdict: str  # accept | reject
    reason: str = ""


@dataclass
class ParsedRevision:
    verdicts: list[IndexVerdict]
    warnings: list[str] = field(default_factory=list)


_VERDICT_LINE = re.compile(
    r"^\s*(?:sample\s+)?(\d{1,5})\s*[.:)\-]?\s*\**\s*(ACCEPT|REJECT)\b\**\s*"
    r"[:\-–—]*\s*(.*)$",
    re.IGNORECASE,
)


def parse_revision_output(
    completion: str, n_samples: int, *, fail_open: bool = True
) -> ParsedRevision:
    """Parse judge output into one verdict per index 1..n_samples.

    Indices the judge never mentioned default to accept (fail-open) with a
    parse warning; with ``fail_open=False`` they become rejects carrying the
    reason "parse-warning" instead.
    """
    found: dict[int, IndexVerdict] = {}
    warnings: list[str] = []
    for raw in completion.splitlines():
        match = _VERDICT_LINE.match(raw.strip())
        if not match:
            continue
        index = int(match.group(1))
        if index < 1 or index > n_samples:
            warnings.append(f"verdict for out-of-range index {index} ignored")
            continue
        if index in found:
            warnings.append(f"duplicate verdict for index {index}; keeping the first")
            continue
        verdict = ACCEPT if match.group(2).upper() == "ACCEPT" else REJECT
        reason = match.group(3).strip().strip("—-:").strip()
        if verdict == REJECT and not reason:
            reason = "no reason given"
        found[index] = IndexVerdict(index, verdict, reason if verdict == REJECT else "")
    verdicts = []
    for index in range(1, n_samples + 1):
        if index in found:
            verdicts.append(found[index])
        else:
            warnings.append(f"no verdict for index {index}; defaulting")
            if fail_open:
                verdicts.append(IndexVerdict(index, ACCEPT, ""))
            else:
                verdicts.append(IndexVerdict(index, REJECT, "parse-warning"))
    return ParsedRevision(verdicts=verdicts, warnings=warnings)

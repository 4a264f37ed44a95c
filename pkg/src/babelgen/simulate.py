"""Deterministic simulated backend for GPU-free pipeline runs.

``sim_respond`` is a pure function of (messages, script): the RNG is seeded
from the script seed plus the message bytes, so identical requests always
produce byte-identical completions. The same behavior is mountable as a
local HTTP server speaking the OpenAI-compatible protocol.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from babelgen.backend import TranscriptEvent
from babelgen.corpus import LANGUAGES
from babelgen.prompting import ChatMessage

_NAME_TO_CODE = {name: code for code, name in LANGUAGES.items()}

DEFAULT_SAMPLE_TEMPLATES = [
    "please check the {label} item",
    "can you help with {label} right now",
    "i need an update about {label}",
    "tell me more about {label} today",
]


class SimError(Exception):
    """The script does not cover the request, or the prompt has no markers."""


@dataclass
class SimBehavior:
    accept_probability: float = 1.0
    sample_templates: list[str] = field(default_factory=lambda: list(DEFAULT_SAMPLE_TEMPLATES))
    duplicate_rate: float = 0.0
    off_language_rate: float = 0.0

    def __post_init__(self):
        for name in ("accept_probability", "duplicate_rate", "off_language_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")


@dataclass
class SimScript:
    seed: int = 0
    behaviors: dict[tuple[str, str], SimBehavior] = field(default_factory=dict)
    embed_dim: int = 32

    def behavior_for(self, language: str, task: str) -> SimBehavior:
        for key in ((language, task), (language, "*"), ("*", task), ("*", "*")):
            if key in self.behaviors:
                return self.behaviors[key]
        raise SimError(f"script has no behavior for (language={language!r}, task={task!r})")

    @classmethod
    def from_config(cls, data: dict) -> "SimScript":
        behaviors = {}
        for entry in data.get("behaviors", []):
            key = (entry.get("language", "*"), entry.get("task", "*"))
            behaviors[key] = SimBehavior(
                accept_probability=float(entry.get("accept_probability", 1.0)),
                sample_templates=list(entry.get("sample_templates", DEFAULT_SAMPLE_TEMPLATES)),
                duplicate_rate=float(entry.get("duplicate_rate", 0.0)),
                off_language_rate=float(entry.get("off_language_rate", 0.0)),
            )
        if not behaviors:
            behaviors[("*", "*")] = SimBehavior()
        return cls(
            seed=int(data.get("seed", 0)),
            behaviors=behaviors,
            embed_dim=int(data.get("embed_dim", 32)),
        )


def _seeded_rng(script_seed: int, messages: list[ChatMessage]) -> random.Random:
    digest = hashlib.sha256()
    digest.update(str(script_seed).encode())
    for message in messages:
        digest.update(b"\x1e")
        digest.update(message.role.encode())
        digest.update(b"\x1f")
        digest.update(message.content.encode())
    return random.Random(int.from_bytes(digest.digest()[:8], "big"))


_GEN_LINE = re.compile(r"Write exactly (\d+) new examples for this category in ([^.\n]+)\.")
_TASK_MARK = re.compile(r"for a (\S+) classifier")
_LABEL_MARK = re.compile(r"^Category: (.+)$", re.MULTILINE)
_START_MARK = re.compile(r"Continue numbering from (\d+)\.")
_REV_TASK = re.compile(r"Task: (\S+)\.")
_REV_LANG = re.compile(r"Expected language: ([^.]+)\.")
_SAMPLE_INDEX = re.compile(r"^(\d+)\. ", re.MULTILINE)


def _language_code(name: str) -> str:
    return _NAME_TO_CODE.get(name.strip(), name.strip())


def sim_respond(messages: list[ChatMessage], script: SimScript) -> str:
    """Answer a rendered prompt deterministically per the script."""
    system = "\n".join(m.content for m in messages if m.role == "system")
    user = "\n".join(m.content for m in messages if m.role == "user")
    rng = _seeded_rng(script.seed, messages)

    if "numbered list only" in user:
        gen = _GEN_LINE.search(user)
        label = _LABEL_MARK.search(user)
        task = _TASK_MARK.search(system)
        if not (gen and label and task):
            raise SimError("generation prompt is missing its markers")
        n = int(gen.group(1))
        language = _language_code(gen.group(2))
        behavior = script.behavior_for(language, task.group(1))
        start_match = _START_MARK.search(user)
        start = int(start_match.group(1)) if start_match else 1
        lines: list[str] = []
        for offset in range(n):
            roll = rng.random()
            nonce = format(rng.getrandbits(32), "08x")
            duplicate = roll < behavior.duplicate_rate and lines
            off_language = (
                behavior.duplicate_rate <= roll < behavior.duplicate_rate + behavior.off_language_rate
            )
            if duplicate:
                text = rng.choice(lines)
            elif off_language:
                text = f"texto fuera del idioma solicitado {nonce}"
            else:
                template = rng.choice(behavior.sample_templates)
                text = f"{template.replace('{label}', label.group(1))} {nonce}"
            lines.append(text)
        return "\n".join(f"{start + i}. {text}" for i, text in enumerate(lines))

    if "ACCEPT" in user and "REJECT" in user:
        indices = [int(m) for m in _SAMPLE_INDEX.findall(user)]
        if not indices:
            raise SimError("revision prompt contains no numbered samples")
        task = _REV_TASK.search(system)
        lang = _REV_LANG.search(system)
        key_task = task.group(1) if task else "*"
        key_lang = _language_code(lang.group(1)) if lang else "*"
        behavior = script.behavior_for(key_lang, key_task)
        lines = []
        for index in range(1, max(indices) + 1):
            if rng.random() < behavior.accept_probability:
                lines.append(f"{index}: ACCEPT")
            else:
                lines.append(f"{index}: REJECT - scripted rejection")
        return "\n".join(lines)

    if "single-paragraph description" in user:
        label = _LABEL_MARK.search(user)
        if not label:
            raise SimError("summary prompt is missing its category marker")
        return (
            f"This intent involves requests and statements about {label.group(1)}, "
            "covering the situations shown in the example texts."
        )

    raise SimError("prompt matches no known template family")


def sim_embed(text: str, dim: int = 32) -> list[float]:
    """Deterministic pseudo-embedding: unit vector seeded by the text bytes."""
    seed = int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")
    rng = random.Random(seed)
    vec = [rng.gauss(0.0, 1.0) for _ in range(dim)]
    norm = math.sqrt(sum(v * v for v in vec)) or 1.0
    return [v / norm for v in vec]


class SimBackend:
    """In-process twin of HttpBackend; same call surface, no network."""

    def __init__(self, script: SimScript, model_id: str = "sim", on_event=None):
        self.script = script
        self.model_id = model_id
        self.on_event = on_event

    def chat_complete(self, messages: list[ChatMessage]) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        content = sim_respond(messages, self.script)
        if self.on_event is not None:
            self.on_event(
                TranscriptEvent(
                    kind="chat",
                    payload={
                        "model": self.model_id,
                        "request": [{"role": m.role, "content": m.content} for m in messages],
                        "response": content,
                        "attempts": 1,
                    },
                )
            )
        return content

    def embed(self, texts: list[str], batch_size: int = 64) -> list[list[float]]:
        if not texts:
            raise ValueError("texts must be non-empty")
        for i, text in enumerate(texts):
            if not text:
                raise ValueError(f"cannot embed empty string at index {i}")
        return [sim_embed(text, self.script.embed_dim) for text in texts]


def _make_handler(script: SimScript):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):  # keep test output quiet
            pass

        def _reply(self, status: int, body: dict) -> None:
            payload = json.dumps(body).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            try:
                request = json.loads(self.rfile.read(length))
            except json.JSONDecodeError:
                self._reply(400, {"error": "invalid JSON"})
                return
            try:
                if self.path == "/v1/chat/completions":
                    messages = [
                        ChatMessage(m["role"], m["content"]) for m in request["messages"]
                    ]
                    content = sim_respond(messages, script)
                    self._reply(
                        200,
                        {
                            "object": "chat.completion",
                            "model": request.get("model", "sim"),
                            "choices": [
                                {
                                    "index": 0,
                                    "message": {"role": "assistant", "content": content},
                                    "finish_reason": "stop",
                                }
                            ],
                            "usage": {
                                "prompt_tokens": sum(len(m.content.split()) for m in messages),
                                "completion_tokens": len(content.split()),
                            },
                        },
                    )
                elif self.path == "/v1/embeddings":
                    inputs = request["input"]
                    if isinstance(inputs, str):
                        inputs = [inputs]
                    self._reply(
                        200,
                        {
                            "object": "list",
                            "model": request.get("model", "sim"),
                            "data": [
                                {
                                    "object": "embedding",
                                    "index": i,
                                    "embedding": sim_embed(text, script.embed_dim),
                                }
                                for i, text in enumerate(inputs)
                            ],
                        },
                    )
                else:
                    self._reply(404, {"error": f"unknown route {self.path}"})
            except (SimError, KeyError, TypeError) as exc:
                self._reply(400, {"error": str(exc)})

    return Handler


class SimServer:
    """The simulated backend behind a real local HTTP socket."""

    def __init__(self, script: SimScript, host: str = "127.0.0.1", port: int = 0):
        self._httpd = ThreadingHTTPServer((host, port), _make_handler(script))
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "SimServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_blocking(self) -> None:
        self._httpd.serve_forever()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

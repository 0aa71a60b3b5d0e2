"""Script realization through a chat-completions endpoint.

One HTTP call per attempt carries the whole script; the response must be a
single JSON array of {role, text} turns, which is parsed tolerantly and
validated against the script (keyword coverage, symbol licensing,
structure). Validation failures trigger bounded regeneration with a
corrective note; final failures become flagged records, never silent drops.
"""

from __future__ import annotations

import json
import logging
import os
import random
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import requests

from .corpus import CorpusRecord, Provenance
from .dialogue import Script
from .errors import DasynthError
from .kb import KnowledgeBase
from .retrieval import tokenize

logger = logging.getLogger(__name__)

_PLACEHOLDER_RE = re.compile(r"\{([A-Z_]+)\}")
_SYSTEM_PLACEHOLDERS = ("STYLE_RULES",)
_USER_PLACEHOLDERS = ("DA_DEFINITIONS", "CONSTRAINTS", "SCRIPT_JSON")

MAX_REGEN_DEFAULT = 2


class RealizerError(DasynthError):
    pass


class TemplateError(RealizerError):
    pass


class EndpointError(RealizerError):
    """Transport-level failure talking to the chat endpoint."""


class EndpointAuthError(EndpointError):
    """Authentication failure; never retried."""


class ResponseParseError(RealizerError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    system_template: str
    user_template: str
    style_rules: str
    da_definitions: str
    constraints: str

    def __post_init__(self):
        for name, text, expected in (
            ("system", self.system_template, _SYSTEM_PLACEHOLDERS),
            ("user", self.user_template, _USER_PLACEHOLDERS),
        ):
            found = _PLACEHOLDER_RE.findall(text)
            for ph in expected:
                if found.count(ph) != 1:
                    raise TemplateError(
                        f"{name} template must contain {{{ph}}} exactly once, "
                        f"found {found.count(ph)}"
                    )
            unexpected = [ph for ph in found if ph not in expected]
            if unexpected:
                raise TemplateError(
                    f"{name} template has unknown placeholders {unexpected}"
                )


def _split_sections(text: str) -> dict[str, str]:
    sections: dict[str, str] = {}
    current: Optional[str] = None
    lines: list[str] = []
    for line in text.splitlines():
        if line.startswith(">>> "):
            if current is not None:
                sections[current] = "\n".join(lines).strip()
            current = line[4:].strip().lower()
            lines = []
        elif current is not None:
            lines.append(line)
    if current is not None:
        sections[current] = "\n".join(lines).strip()
    return sections


def load_template(path: Optional[str | Path] = None) -> PromptTemplate:
    """Load the sectioned prompt file (the packaged default when no path)."""
    if path is None:
        text = (resources.files("dasynth") / "prompts" / "realizer.txt").read_text(
            encoding="utf-8"
        )
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise TemplateError(f"cannot read template {path}: {exc}") from exc
    sections = _split_sections(text)
    missing = [
        s
        for s in ("system", "user", "style_rules", "da_definitions", "constraints")
        if s not in sections
    ]
    if missing:
        raise TemplateError(f"template {path or '<default>'} missing sections {missing}")
    return PromptTemplate(
        system_template=sections["system"],
        user_template=sections["user"],
        style_rules=sections["style_rules"],
        da_definitions=sections["da_definitions"],
        constraints=sections["constraints"],
    )


def build_prompt(
    script: Script,
    template: PromptTemplate,
    style_rules: Optional[str] = None,
) -> list[dict[str, str]]:
    """Render the system+user message pair for a script."""
    system = template.system_template.replace(
        "{STYLE_RULES}", template.style_rules if style_rules is None else style_rules
    )
    user = (
        template.user_template.replace("{DA_DEFINITIONS}", template.da_definitions)
        .replace("{CONSTRAINTS}", template.constraints)
        .replace("{SCRIPT_JSON}", json.dumps(script.to_dict(), indent=2))
    )
    for name, text in (("system", system), ("user", user)):
        leftover = _PLACEHOLDER_RE.findall(text)
        leftover = [ph for ph in leftover if ph in _SYSTEM_PLACEHOLDERS + _USER_PLACEHOLDERS]
        if leftover:
            raise TemplateError(f"unresolved placeholders in {name} message: {leftover}")
    return [
        {"role": "system", "content": system},
        {"role": "user", "content": user},
    ]


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_id: str
    api_key_env: str = ""
    temperature: float = 0.7
    max_tokens: int = 2048
    timeout: float = 60.0
    max_retries: int = 3
    label: str = ""
    backoff_base: float = 1.0
    backoff_factor: float = 2.0

    def __post_init__(self):
        if not self.base_url:
            raise RealizerError("endpoint base_url must be non-empty")
        if self.max_retries < 0:
            raise RealizerError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.temperature < 0:
            raise RealizerError(f"temperature must be >= 0, got {self.temperature}")


@dataclass
class EndpointResponse:
    content: str
    model_id: str
    token_usage: Optional[dict] = None
    latency: float = 0.0
    attempts: int = 1


def backoff_delay(attempt: int, config: EndpointConfig, rng: random.Random) -> float:
    """Exponential backoff with up to +25% jitter: base * factor^attempt * (1 + u/4)."""
    return config.backoff_base * (config.backoff_factor**attempt) * (1.0 + rng.random() * 0.25)


def call_endpoint(
    messages: Sequence[dict[str, str]],
    config: EndpointConfig,
    sleep: Callable[[float], None] = time.sleep,
    rng: Optional[random.Random] = None,
    session: Optional[requests.Session] = None,
) -> EndpointResponse:
    """POST the chat-completions body once per attempt, retrying timeouts,
    429 and 5xx with exponential backoff; auth failures never retry."""
    rng = rng or random.Random()
    headers = {"Content-Type": "application/json"}
    if config.api_key_env:
        key = os.environ.get(config.api_key_env)
        if not key:
            raise EndpointAuthError(
                f"environment variable {config.api_key_env} is unset or empty"
            )
        headers["Authorization"] = f"Bearer {key}"
    body = {
        "model": config.model_id,
        "messages": list(messages),
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    }
    post = (session or requests).post

    start = time.perf_counter()
    last_error = "no attempt made"
    for attempt in range(config.max_retries + 1):
        try:
            resp = post(
                config.base_url, json=body, headers=headers, timeout=config.timeout
            )
        except requests.Timeout:
            last_error = f"timeout after {config.timeout}s"
            if attempt < config.max_retries:
                sleep(backoff_delay(attempt, config, rng))
            continue
        except requests.RequestException as exc:
            raise EndpointError(f"request to {config.base_url} failed: {exc}") from exc

        if resp.status_code in (401, 403):
            raise EndpointAuthError(
                f"authentication failed ({resp.status_code}) at {config.base_url}"
            )
        if resp.status_code == 429 or 500 <= resp.status_code < 600:
            last_error = f"HTTP {resp.status_code}"
            if attempt < config.max_retries:
                sleep(backoff_delay(attempt, config, rng))
            continue
        if resp.status_code != 200:
            raise EndpointError(f"HTTP {resp.status_code} from {config.base_url}")

        try:
            payload = resp.json()
            content = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"malformed response envelope: {exc}") from exc
        if not isinstance(content, str):
            raise EndpointError("malformed response envelope: content is not text")
        return EndpointResponse(
            content=content,
            model_id=payload.get("model", config.model_id),
            token_usage=payload.get("usage"),
            latency=time.perf_counter() - start,
            attempts=attempt + 1,
        )
    raise EndpointError(
        f"retries exhausted after {config.max_retries + 1} attempts ({last_error})"
    )


@dataclass(frozen=True)
class Turn:
    role: str  # "user" | "assistant"
    text: str
    act_index: int

    def to_dict(self) -> dict:
        return {"role": self.role, "text": self.text, "act_index": self.act_index}


@dataclass(frozen=True)
class RealizedDialogue:
    turns: tuple[Turn, ...]
    model_id: str = ""
    token_usage: Optional[dict] = None
    latency: Optional[float] = field(default=None, compare=False)  # telemetry only

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "token_usage": self.token_usage,
            "turns": [t.to_dict() for t in self.turns],
        }

    @staticmethod
    def from_dict(obj: dict) -> "RealizedDialogue":
        return RealizedDialogue(
            turns=tuple(
                Turn(t["role"], t["text"], t["act_index"]) for t in obj["turns"]
            ),
            model_id=obj.get("model_id", ""),
            token_usage=obj.get("token_usage"),
        )


def _first_json_array(text: str) -> list:
    decoder = json.JSONDecoder()
    for pos, ch in enumerate(text):
        if ch == "[":
            try:
                value, _ = decoder.raw_decode(text, pos)
            except json.JSONDecodeError:
                continue
            if isinstance(value, list):
                return value
    raise ResponseParseError("no JSON array found in response")


def parse_response(
    raw: str,
    script: Script,
    model_id: str = "",
    token_usage: Optional[dict] = None,
    latency: Optional[float] = None,
    strict: bool = False,
) -> RealizedDialogue:
    """Map the first JSON array in `raw` positionally onto the script acts.

    Roles are derived from act sides; an explicit role field must agree.
    strict=True requires the whole body to be the array (no fences/prose).
    """
    if strict:
        try:
            entries = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ResponseParseError(f"response is not valid JSON: {exc}") from exc
        if not isinstance(entries, list):
            raise ResponseParseError("response is not a JSON array")
    else:
        entries = _first_json_array(raw)

    if len(entries) != len(script.acts):
        raise ResponseParseError(
            f"length mismatch: {len(entries)} turns for {len(script.acts)} acts"
        )
    turns = []
    for i, (entry, act) in enumerate(zip(entries, script.acts)):
        if not isinstance(entry, dict) or "text" not in entry:
            raise ResponseParseError(f"turn {i} is not an object with a 'text' field")
        text = entry["text"]
        if not isinstance(text, str) or not text.strip():
            raise ResponseParseError(f"turn {i} has empty text")
        role = "user" if act.act_type.is_user else "assistant"
        claimed = entry.get("role")
        if claimed is not None and claimed != role:
            raise ResponseParseError(
                f"turn {i} claims role {claimed!r} but act "
                f"{act.act_type.value} is a {role} turn"
            )
        turns.append(Turn(role=role, text=text, act_index=i))
    return RealizedDialogue(
        turns=tuple(turns),
        model_id=model_id,
        token_usage=token_usage,
        latency=latency,
    )


@dataclass(frozen=True)
class RealizationViolation:
    code: str  # C1 | C2 | C3 | parse
    turn_index: Optional[int]
    detail: str

    def to_dict(self) -> dict:
        return {"code": self.code, "turn_index": self.turn_index, "detail": self.detail}

    @staticmethod
    def from_dict(obj: dict) -> "RealizationViolation":
        return RealizationViolation(obj["code"], obj.get("turn_index"), obj["detail"])


def _is_numeral(token: str) -> bool:
    return token.isdigit()


def validate_realization(
    dialogue: RealizedDialogue,
    script: Script,
    kb: KnowledgeBase,
) -> list[RealizationViolation]:
    """C1 keyword coverage, C2 symbol licensing, C3 structural checks.

    C1: every ProvideQuery keyword must appear in that turn's tokens
    (substring match; numerals must match a token exactly). C2: a KB symbol
    name may appear (word boundary, case-insensitive) in turn i only if an
    act at index <= i references it or names it as a keyword. C3: non-empty
    texts on strictly alternating user/assistant turns.
    """
    violations: list[RealizationViolation] = []

    turn_tokens = [tokenize(t.text) for t in dialogue.turns]

    # C1
    for i, (turn, act) in enumerate(zip(dialogue.turns, script.acts)):
        if not act.keywords:
            continue
        tokens = turn_tokens[i]
        for kw in act.keywords:
            kw_l = kw.lower()
            if _is_numeral(kw_l):
                hit = kw_l in tokens
            else:
                hit = any(kw_l in tok for tok in tokens)
            if not hit:
                violations.append(
                    RealizationViolation(
                        "C1", i, f"keyword {kw!r} missing from its query turn"
                    )
                )

    # C2
    symbol_patterns = {
        sym.name: re.compile(
            r"(?<![0-9A-Za-z_])" + re.escape(sym.name.lower()) + r"(?![0-9A-Za-z_])"
        )
        for sym in kb.symbols
    }
    licensed: set[str] = set()
    for i, turn in enumerate(dialogue.turns):
        act = script.acts[i]
        licensed.update(act.referenced_symbols())
        licensed.update(kw for kw in act.keywords if kw in kb)
        text_l = turn.text.lower()
        for name, pattern in symbol_patterns.items():
            if name not in licensed and pattern.search(text_l):
                violations.append(
                    RealizationViolation(
                        "C2", i, f"symbol {name!r} mentioned before any act references it"
                    )
                )

    # C3
    for i, turn in enumerate(dialogue.turns):
        if not turn.text.strip():
            violations.append(RealizationViolation("C3", i, "empty turn text"))
        expected = "user" if i % 2 == 0 else "assistant"
        if turn.role != expected:
            violations.append(
                RealizationViolation(
                    "C3", i, f"turn {i} role {turn.role!r}, expected {expected!r}"
                )
            )

    return violations


def _corrective_note(violations: Sequence[RealizationViolation]) -> str:
    lines = "\n".join(
        f"- turn {v.turn_index if v.turn_index is not None else '?'}: {v.detail}"
        for v in violations
    )
    return (
        "\n\nYour previous attempt violated these constraints; fix them and "
        "return the corrected JSON array:\n" + lines
    )


def realize(
    script: Script,
    template: PromptTemplate,
    config: EndpointConfig,
    kb: KnowledgeBase,
    max_regen: int = MAX_REGEN_DEFAULT,
    pipeline_version: str = "",
    strict_parse: bool = False,
    sleep: Callable[[float], None] = time.sleep,
    rng: Optional[random.Random] = None,
    session: Optional[requests.Session] = None,
) -> CorpusRecord:
    """build -> call -> parse -> validate, regenerating on validation
    failure up to max_regen times; the returned record is flagged with the
    surviving violations when every attempt fails."""
    messages = build_prompt(script, template)
    dialogue: Optional[RealizedDialogue] = None
    violations: list[RealizationViolation] = []
    attempts = 0
    for attempt in range(max_regen + 1):
        attempts = attempt + 1
        response = call_endpoint(messages, config, sleep=sleep, rng=rng, session=session)
        try:
            dialogue = parse_response(
                response.content,
                script,
                model_id=response.model_id,
                token_usage=response.token_usage,
                latency=response.latency,
                strict=strict_parse,
            )
        except ResponseParseError as exc:
            dialogue = None
            violations = [RealizationViolation("parse", None, str(exc))]
        else:
            violations = validate_realization(dialogue, script, kb)
        if not violations:
            break
        logger.info(
            "realization attempt %d for seed %d failed validation: %s",
            attempts,
            script.seed,
            "; ".join(v.detail for v in violations),
        )
        if attempt < max_regen:
            messages = build_prompt(script, template)
            messages[1]["content"] += _corrective_note(violations)

    return CorpusRecord(
        script=script,
        dialogue=dialogue,
        provenance=Provenance(
            model_id=dialogue.model_id if dialogue else config.model_id,
            endpoint=config.label or config.base_url,
            pipeline_version=pipeline_version,
            attempts=attempts,
        ),
        violations=tuple(violations),
    )


def realize_batch(
    scripts: Sequence[Script],
    template: PromptTemplate,
    config: EndpointConfig,
    kb: KnowledgeBase,
    max_regen: int = MAX_REGEN_DEFAULT,
    pipeline_version: str = "",
    strict_parse: bool = False,
    concurrency: int = 4,
) -> list[CorpusRecord]:
    """Realize scripts with bounded concurrency; output order equals input
    order and each record's attempts stay sequential."""
    from concurrent.futures import ThreadPoolExecutor

    def one(script: Script) -> CorpusRecord:
        return realize(
            script,
            template,
            config,
            kb,
            max_regen=max_regen,
            pipeline_version=pipeline_version,
            strict_parse=strict_parse,
        )

    if concurrency <= 1 or len(scripts) <= 1:
        return [one(s) for s in scripts]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(one, scripts))

"""Run configuration: one JSON file, flag overrides, strict keys.

Every leaf is addressable from the command line as --set dotted.key=value,
so config keys and flags stay in one-to-one correspondence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .dialogue import SHORTLIST_K, T_MAX_DEFAULT
from .errors import ConfigError
from .planner import EPSILON_PLAN_DEFAULT
from .policy import Hyperparams, RewardSpec
from .realizer import EndpointConfig, MAX_REGEN_DEFAULT
from .simulator import BehaviorParams

_DEFAULT_ENDPOINTS = {
    "teacher": {
        "base_url": "https://api.example.com/v1/chat/completions",
        "model_id": "teacher-model",
        "api_key_env": "DASYNTH_TEACHER_API_KEY",
    },
    "student": {
        "base_url": "http://127.0.0.1:8080/v1/chat/completions",
        "model_id": "student-model",
        "api_key_env": "",
    },
    "stub": {"base_url": "stub", "model_id": "stub-chat-1", "api_key_env": ""},
}


@dataclass
class TrainSettings:
    steps: int = 100_000
    seed: int = 7
    eval_episodes: int = 500
    eval_seed: int = 1_000_003


@dataclass
class PlanSettings:
    n: int = 250
    base_seed: int = 2_025_080_1
    epsilon: float = EPSILON_PLAN_DEFAULT


@dataclass
class RealizeSettings:
    max_regen: int = MAX_REGEN_DEFAULT
    concurrency: int = 4
    strict_parse: bool = False


@dataclass
class RetrievalSettings:
    k: int = SHORTLIST_K
    include_names: bool = True


@dataclass
class DialogueSettings:
    t_max: int = T_MAX_DEFAULT


@dataclass
class LoggingSettings:
    level: str = "info"
    path: Optional[str] = None


@dataclass
class RunConfig:
    workdir: str = "runs/default"
    kb_path: Optional[str] = None
    template_path: Optional[str] = None
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)
    dialogue: DialogueSettings = field(default_factory=DialogueSettings)
    simulator: BehaviorParams = field(default_factory=BehaviorParams)
    reward: RewardSpec = field(default_factory=RewardSpec)
    policy: Hyperparams = field(default_factory=Hyperparams)
    train: TrainSettings = field(default_factory=TrainSettings)
    plan: PlanSettings = field(default_factory=PlanSettings)
    realize: RealizeSettings = field(default_factory=RealizeSettings)
    endpoints: dict[str, EndpointConfig] = field(default_factory=dict)
    logging: LoggingSettings = field(default_factory=LoggingSettings)

    def endpoint(self, name: str) -> EndpointConfig:
        if name not in self.endpoints:
            raise ConfigError(
                f"unknown endpoint {name!r}; configured: {sorted(self.endpoints)}"
            )
        return self.endpoints[name]

    def workpath(self, *parts: str) -> Path:
        return Path(self.workdir).joinpath(*parts)


_SECTION_TYPES = {
    "retrieval": RetrievalSettings,
    "dialogue": DialogueSettings,
    "simulator": BehaviorParams,
    "reward": RewardSpec,
    "policy": Hyperparams,
    "train": TrainSettings,
    "plan": PlanSettings,
    "realize": RealizeSettings,
    "logging": LoggingSettings,
}
_SCALAR_KEYS = ("workdir", "kb_path", "template_path")


def _build_section(cls, data: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in config section {where!r}")
    try:
        return cls(**data)
    except Exception as exc:
        raise ConfigError(f"bad config section {where!r}: {exc}") from exc


def build_config(data: dict) -> RunConfig:
    known = set(_SCALAR_KEYS) | set(_SECTION_TYPES) | {"endpoints"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown top-level config key(s) {unknown}")

    kwargs: dict[str, Any] = {}
    for key in _SCALAR_KEYS:
        if key in data:
            kwargs[key] = data[key]
    for key, cls in _SECTION_TYPES.items():
        section = data.get(key, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {key!r} must be an object")
        kwargs[key] = _build_section(cls, section, key)

    endpoints = {}
    endpoint_data = {**_DEFAULT_ENDPOINTS, **data.get("endpoints", {})}
    for name, section in endpoint_data.items():
        if not isinstance(section, dict):
            raise ConfigError(f"endpoint {name!r} must be an object")
        merged = {**_DEFAULT_ENDPOINTS.get(name, {}), **section, "label": name}
        endpoints[name] = _build_section(EndpointConfig, merged, f"endpoints.{name}")
    kwargs["endpoints"] = endpoints

    return RunConfig(**kwargs)


def _parse_override(expr: str) -> tuple[list[str], Any]:
    if "=" not in expr:
        raise ConfigError(f"--set expects dotted.key=value, got {expr!r}")
    key, raw = expr.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"--set expects dotted.key=value, got {expr!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings stay strings
    return path, value


def load_config(
    path: Optional[str | Path] = None,
    overrides: Optional[list[str]] = None,
) -> RunConfig:
    """Read the config file (defaults when absent) and apply --set overrides."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")

    for expr in overrides or []:
        keys, value = _parse_override(expr)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {'.'.join(keys)} crosses a scalar")
        node[keys[-1]] = value

    return build_config(data)

"""Dialogue acts, scripts, and the evolving dialogue state.

Acts are symbolic turn abstractions (type + arguments). A script is an
alternating user/system act sequence opening with ProvideQuery, grounded in
a knowledge base. State transitions are pure: apply_act returns a new
DialogueState.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from .errors import DasynthError
from .kb import KnowledgeBase
from .retrieval import RetrievalResult, TfIdfIndex, query

T_MAX_DEFAULT = 20  # act pairs per episode
SHORTLIST_K = 10


class DialogueProtocolError(DasynthError):
    """Act applied out of turn or on a terminal state."""


class DialogueActType(Enum):
    # user acts
    PROVIDE_QUERY = "ProvideQuery"
    ELICIT_INFO = "ElicitInfo"
    ELICIT_SUGGESTION = "ElicitSuggestion"
    REJECT_SUGGESTION = "RejectSuggestion"
    ACCEPT = "Accept"
    END_USER = "EndUser"
    # system acts
    SUGGEST = "Suggest"
    INFO = "Info"
    LIST_OPTIONS = "ListOptions"
    ELICIT_QUERY = "ElicitQuery"
    END_SYSTEM = "EndSystem"

    @property
    def is_user(self) -> bool:
        return self in USER_ACTS

    @property
    def is_system(self) -> bool:
        return self in SYSTEM_ACTS


# enumeration order is load-bearing: one-hot features and argmax tie-breaks
USER_ACTS = (
    DialogueActType.PROVIDE_QUERY,
    DialogueActType.ELICIT_INFO,
    DialogueActType.ELICIT_SUGGESTION,
    DialogueActType.REJECT_SUGGESTION,
    DialogueActType.ACCEPT,
    DialogueActType.END_USER,
)
SYSTEM_ACTS = (
    DialogueActType.SUGGEST,
    DialogueActType.INFO,
    DialogueActType.LIST_OPTIONS,
    DialogueActType.ELICIT_QUERY,
    DialogueActType.END_SYSTEM,
)
TERMINAL_ACTS = (
    DialogueActType.ACCEPT,
    DialogueActType.END_USER,
    DialogueActType.END_SYSTEM,
)

# which argument slots each act type fills
_KEYWORD_ACTS = (DialogueActType.PROVIDE_QUERY,)
_SYMBOL_ACTS = (
    DialogueActType.ELICIT_INFO,
    DialogueActType.REJECT_SUGGESTION,
    DialogueActType.ACCEPT,
    DialogueActType.SUGGEST,
    DialogueActType.INFO,
)
_LIST_ACTS = (DialogueActType.LIST_OPTIONS,)
_BARE_ACTS = (
    DialogueActType.ELICIT_SUGGESTION,
    DialogueActType.END_USER,
    DialogueActType.ELICIT_QUERY,
    DialogueActType.END_SYSTEM,
)

TURN_CAP_FLAG = "turn_cap_reached"


@dataclass(frozen=True)
class DialogueAct:
    act_type: DialogueActType
    keywords: tuple[str, ...] = ()
    symbol: Optional[str] = None
    symbols: tuple[str, ...] = ()

    @staticmethod
    def provide_query(keywords: Iterable[str]) -> "DialogueAct":
        return DialogueAct(DialogueActType.PROVIDE_QUERY, keywords=tuple(keywords))

    @staticmethod
    def elicit_info(symbol: str) -> "DialogueAct":
        return DialogueAct(DialogueActType.ELICIT_INFO, symbol=symbol)

    @staticmethod
    def elicit_suggestion() -> "DialogueAct":
        return DialogueAct(DialogueActType.ELICIT_SUGGESTION)

    @staticmethod
    def reject(symbol: str) -> "DialogueAct":
        return DialogueAct(DialogueActType.REJECT_SUGGESTION, symbol=symbol)

    @staticmethod
    def accept(symbol: str) -> "DialogueAct":
        return DialogueAct(DialogueActType.ACCEPT, symbol=symbol)

    @staticmethod
    def end_user() -> "DialogueAct":
        return DialogueAct(DialogueActType.END_USER)

    @staticmethod
    def suggest(symbol: str) -> "DialogueAct":
        return DialogueAct(DialogueActType.SUGGEST, symbol=symbol)

    @staticmethod
    def info(symbol: str) -> "DialogueAct":
        return DialogueAct(DialogueActType.INFO, symbol=symbol)

    @staticmethod
    def list_options(symbols: Iterable[str]) -> "DialogueAct":
        return DialogueAct(DialogueActType.LIST_OPTIONS, symbols=tuple(symbols))

    @staticmethod
    def elicit_query() -> "DialogueAct":
        return DialogueAct(DialogueActType.ELICIT_QUERY)

    @staticmethod
    def end_system() -> "DialogueAct":
        return DialogueAct(DialogueActType.END_SYSTEM)

    def referenced_symbols(self) -> tuple[str, ...]:
        if self.symbol is not None:
            return (self.symbol,)
        return self.symbols

    def slot_violations(self) -> list[str]:
        """Shape problems for this act in isolation (empty list = well formed)."""
        problems = []
        t = self.act_type
        if t in _KEYWORD_ACTS:
            if len(self.keywords) < 1:
                problems.append(f"{t.value} requires at least one keyword")
        elif self.keywords:
            problems.append(f"{t.value} carries keywords")
        if t in _SYMBOL_ACTS:
            if self.symbol is None:
                problems.append(f"{t.value} requires a symbol argument")
        elif self.symbol is not None:
            problems.append(f"{t.value} carries a symbol argument")
        if t in _LIST_ACTS:
            if len(self.symbols) < 1:
                problems.append(f"{t.value} requires a symbol list")
        elif self.symbols:
            problems.append(f"{t.value} carries a symbol list")
        return problems

    def to_dict(self) -> dict:
        out: dict = {"type": self.act_type.value}
        if self.keywords:
            out["keywords"] = list(self.keywords)
        if self.symbol is not None:
            out["symbol"] = self.symbol
        if self.symbols:
            out["symbols"] = list(self.symbols)
        return out

    @staticmethod
    def from_dict(obj: dict) -> "DialogueAct":
        try:
            act_type = DialogueActType(obj["type"])
        except (KeyError, ValueError) as exc:
            raise DasynthError(f"bad act record {obj!r}: {exc}") from exc
        return DialogueAct(
            act_type=act_type,
            keywords=tuple(obj.get("keywords", ())),
            symbol=obj.get("symbol"),
            symbols=tuple(obj.get("symbols", ())),
        )


@dataclass(frozen=True)
class Script:
    acts: tuple[DialogueAct, ...]
    goal_symbol: str
    success: bool
    seed: int
    metadata: str = ""

    @property
    def turn_capped(self) -> bool:
        return TURN_CAP_FLAG in self.metadata

    def to_dict(self) -> dict:
        return {
            "goal_symbol": self.goal_symbol,
            "success": self.success,
            "seed": self.seed,
            "acts": [a.to_dict() for a in self.acts],
            "metadata": self.metadata,
        }

    @staticmethod
    def from_dict(obj: dict) -> "Script":
        return Script(
            acts=tuple(DialogueAct.from_dict(a) for a in obj["acts"]),
            goal_symbol=obj["goal_symbol"],
            success=bool(obj["success"]),
            seed=int(obj["seed"]),
            metadata=obj.get("metadata", ""),
        )


def save_scripts(scripts: Iterable[Script], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for script in scripts:
            fh.write(json.dumps(script.to_dict(), ensure_ascii=False) + "\n")


def load_scripts(path: str | Path) -> list[Script]:
    scripts = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            scripts.append(Script.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError) as exc:
            raise DasynthError(f"{path} line {lineno}: bad script record: {exc}") from exc
    return scripts


@dataclass(frozen=True)
class DialogueState:
    """Everything observed about the conversation so far.

    pending_elicit, last_suggested, and last_system_symbols are bookkeeping
    the planner and simulator need (which symbol an ElicitInfo asked about,
    the most recent suggestion, what the last system act offered); the
    policy's feature map never reads them.
    """

    turn: int = 0
    query_keywords: tuple[str, ...] = ()
    shortlist: RetrievalResult = field(default_factory=RetrievalResult)
    suggested: frozenset[str] = frozenset()
    rejected: frozenset[str] = frozenset()
    informed: frozenset[str] = frozenset()
    last_user_act: Optional[DialogueActType] = None
    last_system_act: Optional[DialogueActType] = None
    terminal: bool = False
    next_side: str = "user"
    pending_elicit: Optional[str] = None
    last_suggested: Optional[str] = None
    last_system_symbols: tuple[str, ...] = ()


def initial_state() -> DialogueState:
    return DialogueState()


def apply_act(
    state: DialogueState,
    act: DialogueAct,
    index: TfIdfIndex,
    k: int = SHORTLIST_K,
) -> DialogueState:
    """Pure state transition; raises DialogueProtocolError out of protocol."""
    if state.terminal:
        raise DialogueProtocolError(f"act {act.act_type.value} on terminal state")
    side = "user" if act.act_type.is_user else "system"
    if side != state.next_side:
        raise DialogueProtocolError(
            f"{act.act_type.value} is a {side} act but it is the {state.next_side}'s turn"
        )

    t = act.act_type
    changes: dict = {
        "next_side": "system" if side == "user" else "user",
    }
    if side == "user":
        changes["last_user_act"] = t
    else:
        changes["last_system_act"] = t
        changes["turn"] = state.turn + 1
        changes["last_system_symbols"] = act.referenced_symbols()

    if t is DialogueActType.PROVIDE_QUERY:
        changes["query_keywords"] = act.keywords
        changes["shortlist"] = query(index, act.keywords, k=k)
        changes["pending_elicit"] = None
    elif t is DialogueActType.ELICIT_INFO:
        changes["pending_elicit"] = act.symbol
    elif t is DialogueActType.REJECT_SUGGESTION:
        changes["rejected"] = state.rejected | {act.symbol}
        changes["suggested"] = state.suggested | {act.symbol}
    elif t in (DialogueActType.ACCEPT, DialogueActType.END_USER, DialogueActType.END_SYSTEM):
        changes["terminal"] = True
    elif t is DialogueActType.SUGGEST:
        changes["suggested"] = state.suggested | {act.symbol}
        changes["last_suggested"] = act.symbol
    elif t is DialogueActType.INFO:
        changes["informed"] = state.informed | {act.symbol}
        if state.pending_elicit == act.symbol:
            changes["pending_elicit"] = None
    elif t is DialogueActType.LIST_OPTIONS:
        changes["suggested"] = state.suggested | set(act.symbols)
        changes["last_suggested"] = act.symbols[0] if act.symbols else state.last_suggested

    return replace(state, **changes)


@dataclass(frozen=True)
class ScriptViolation:
    rule: str  # alternation | first_act | termination | grounding | slot_shape | length
    act_index: Optional[int]
    message: str


def validate_script(
    script: Script,
    kb: KnowledgeBase,
    t_max: int = T_MAX_DEFAULT,
) -> list[ScriptViolation]:
    """Structural validation; an empty report means the script is valid."""
    violations: list[ScriptViolation] = []
    acts = script.acts

    if not acts:
        violations.append(ScriptViolation("first_act", None, "script has no acts"))
        return violations

    if acts[0].act_type is not DialogueActType.PROVIDE_QUERY:
        violations.append(
            ScriptViolation(
                "first_act", 0, f"first act is {acts[0].act_type.value}, not ProvideQuery"
            )
        )

    expected = "user"
    for i, act in enumerate(acts):
        side = "user" if act.act_type.is_user else "system"
        if side != expected:
            violations.append(
                ScriptViolation(
                    "alternation",
                    i,
                    f"act {i} ({act.act_type.value}) is a {side} act where a "
                    f"{expected} act was expected",
                )
            )
        expected = "system" if side == "user" else "user"

        for problem in act.slot_violations():
            violations.append(ScriptViolation("slot_shape", i, problem))

        for name in act.referenced_symbols():
            if name not in kb:
                violations.append(
                    ScriptViolation(
                        "grounding", i, f"act {i} references unknown symbol {name!r}"
                    )
                )

        # terminal acts may only close the script; an Accept directly
        # followed by a closing EndSystem is the one tolerated tail pair
        if act.act_type in TERMINAL_ACTS and i != len(acts) - 1:
            closing_pair = (
                act.act_type is DialogueActType.ACCEPT
                and i == len(acts) - 2
                and acts[-1].act_type is DialogueActType.END_SYSTEM
            )
            if not closing_pair:
                violations.append(
                    ScriptViolation(
                        "termination",
                        i,
                        f"terminal act {act.act_type.value} at non-final index {i}",
                    )
                )

    last = acts[-1]
    if last.act_type not in TERMINAL_ACTS and not script.turn_capped:
        violations.append(
            ScriptViolation(
                "termination",
                len(acts) - 1,
                f"script ends on {last.act_type.value} without a {TURN_CAP_FLAG} flag",
            )
        )

    if len(acts) > 2 * t_max:
        violations.append(
            ScriptViolation(
                "length", None, f"{len(acts)} acts exceeds the cap of {2 * t_max}"
            )
        )

    return violations

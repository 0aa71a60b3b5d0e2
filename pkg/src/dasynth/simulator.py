"""Simulated user with a hidden goal symbol.

The user follows a fixed rule table over the dialogue state plus stochastic
behavior parameters. Rule precedence, highest first:

  R1  opening turn                      -> ProvideQuery(drawn keywords)
  R2  goal just suggested/listed        -> ElicitInfo(goal) w.p. p_elicit_info
                                           if uninformed, else Accept(goal)
  R3  goal just informed                -> Accept(goal)
  R5  system elicited a query           -> ProvideQuery(fresh keywords)
  F   user's own last act was a reject  -> ProvideQuery w.p. p_reformulate,
                                           else ElicitSuggestion
  R4  new non-goal suggestion/listing   -> EndUser once |rejected|+1 exceeds
                                           patience, else RejectSuggestion
  R6  info about a non-goal symbol      -> as R4 but the patience test does
                                           not count the new rejection

R2/R3 outrank the post-reject follow-up so an offered goal is never ignored.
All randomness comes from the explicit generator argument; identical seeds
give identical act sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dialogue import DialogueAct, DialogueActType, DialogueState
from .errors import DasynthError
from .kb import KnowledgeBase
from .retrieval import TfIdfIndex, tokenize

_GOAL_SAMPLE_RETRIES = 100


class SimulatorError(DasynthError):
    pass


@dataclass(frozen=True)
class BehaviorParams:
    p_elicit_info: float = 0.5
    p_reformulate: float = 0.5
    p_noise_keyword: float = 0.2
    keyword_count_min: int = 2
    keyword_count_max: int = 5
    patience: int = 3

    def __post_init__(self):
        for name in ("p_elicit_info", "p_reformulate", "p_noise_keyword"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise SimulatorError(f"{name} must be in [0, 1], got {p}")
        if not 1 <= self.keyword_count_min <= self.keyword_count_max:
            raise SimulatorError(
                "need 1 <= keyword_count_min <= keyword_count_max, got "
                f"{self.keyword_count_min}..{self.keyword_count_max}"
            )
        if self.patience < 1:
            raise SimulatorError(f"patience must be >= 1, got {self.patience}")


@dataclass(frozen=True)
class UserGoal:
    target: str
    keyword_pool: tuple[str, ...]  # description terms, best tf-idf weight first


def keyword_pool(description: str, index: TfIdfIndex) -> tuple[str, ...]:
    """Description terms ranked by tf*idf weight, ties by ascending term."""
    counts: dict[str, int] = {}
    for tok in tokenize(description):
        counts[tok] = counts.get(tok, 0) + 1
    weighted = [(term, n * index.idf_of(term)) for term, n in counts.items()]
    weighted.sort(key=lambda pair: (-pair[1], pair[0]))
    return tuple(term for term, _ in weighted)


def sample_goal(
    kb: KnowledgeBase, index: TfIdfIndex, rng: np.random.Generator
) -> UserGoal:
    """Uniform goal symbol; symbols whose description has no terms are skipped."""
    if all(not tokenize(sym.description) for sym in kb.symbols):
        raise SimulatorError("no symbol in the KB has a non-empty keyword pool")
    for _ in range(_GOAL_SAMPLE_RETRIES):
        sym = kb.symbols[int(rng.integers(len(kb)))]
        pool = keyword_pool(sym.description, index)
        if pool:
            return UserGoal(target=sym.name, keyword_pool=pool)
    raise SimulatorError(
        f"no eligible goal found in {_GOAL_SAMPLE_RETRIES} samples"
    )


def draw_query_keywords(
    goal: UserGoal,
    params: BehaviorParams,
    index: TfIdfIndex,
    rng: np.random.Generator,
) -> tuple[str, ...]:
    """Top pool terms, each independently corrupted with p_noise_keyword.

    A corrupted keyword becomes, with even odds, a random index vocabulary
    term or a random numeral token.
    """
    count = int(rng.integers(params.keyword_count_min, params.keyword_count_max + 1))
    count = max(1, min(count, len(goal.keyword_pool)))
    keywords = list(goal.keyword_pool[:count])
    for i in range(count):
        if rng.random() < params.p_noise_keyword:
            if rng.random() < 0.5 and index.terms:
                keywords[i] = index.terms[int(rng.integers(len(index.terms)))]
            else:
                keywords[i] = str(int(rng.integers(1, 10000)))
    return tuple(keywords)


def _reject_target(state: DialogueState) -> str:
    for name in state.last_system_symbols:
        if name not in state.rejected:
            return name
    return state.last_system_symbols[0]


def next_user_act(
    state: DialogueState,
    goal: UserGoal,
    params: BehaviorParams,
    index: TfIdfIndex,
    rng: np.random.Generator,
) -> DialogueAct:
    if state.terminal:
        raise SimulatorError("next_user_act on a terminal state")
    if state.next_side != "user":
        raise SimulatorError("next_user_act called on the system's turn")

    last = state.last_system_act
    if last is None:  # R1
        return DialogueAct.provide_query(draw_query_keywords(goal, params, index, rng))

    offered = state.last_system_symbols
    goal_offered = goal.target in offered

    if last in (DialogueActType.SUGGEST, DialogueActType.LIST_OPTIONS) and goal_offered:
        # R2
        if goal.target not in state.informed and rng.random() < params.p_elicit_info:
            return DialogueAct.elicit_info(goal.target)
        return DialogueAct.accept(goal.target)

    if last is DialogueActType.INFO and goal_offered:  # R3
        return DialogueAct.accept(goal.target)

    if last is DialogueActType.ELICIT_QUERY:  # R5
        return DialogueAct.provide_query(draw_query_keywords(goal, params, index, rng))

    if state.last_user_act is DialogueActType.REJECT_SUGGESTION:  # follow-up
        if rng.random() < params.p_reformulate:
            return DialogueAct.provide_query(
                draw_query_keywords(goal, params, index, rng)
            )
        return DialogueAct.elicit_suggestion()

    if last in (DialogueActType.SUGGEST, DialogueActType.LIST_OPTIONS):  # R4
        if len(state.rejected) + 1 > params.patience:
            return DialogueAct.end_user()
        return DialogueAct.reject(_reject_target(state))

    if last is DialogueActType.INFO:  # R6
        if len(state.rejected) > params.patience:
            return DialogueAct.end_user()
        return DialogueAct.reject(offered[0])

    raise SimulatorError(f"no user rule for system act {last.value}")

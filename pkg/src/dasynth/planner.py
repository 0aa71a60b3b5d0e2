"""Episode orchestration: simulator + policy -> grounded dialogue-act scripts.

The same engine drives self-play training rollouts and script planning so
train-time and plan-time behavior match exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import __version__
from .dialogue import (
    DialogueAct,
    DialogueActType,
    Script,
    SHORTLIST_K,
    SYSTEM_ACTS,
    T_MAX_DEFAULT,
    TURN_CAP_FLAG,
    apply_act,
    initial_state,
    validate_script,
)
from .errors import DasynthError
from .kb import KnowledgeBase
from .policy import QPolicy, RewardSpec, featurize, select_action
from .retrieval import TfIdfIndex
from .simulator import BehaviorParams, next_user_act, sample_goal

logger = logging.getLogger(__name__)

SYSTEM_ACT_INDEX = {t: i for i, t in enumerate(SYSTEM_ACTS)}

GENERATOR_TAG = f"generator=dasynth/{__version__}"
EPSILON_PLAN_DEFAULT = 0.05

# splitmix64 finalizer constants
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


class PlannerError(DasynthError):
    pass


def derive_seed(base: int, i: int) -> int:
    """splitmix64-style mixing of a base seed and a stream index; batches
    stay reproducible while per-item streams are independent."""
    z = (base + (i + 1) * _SPLITMIX_GAMMA) & _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def ground_act(
    act_type: DialogueActType,
    state,
    kb: KnowledgeBase,
    index: TfIdfIndex,
) -> DialogueAct:
    """Turn an abstract system act type into a concrete act with real
    symbols; falls back to ElicitQuery whenever no grounding exists."""
    if act_type is DialogueActType.SUGGEST:
        for name, _ in state.shortlist.ranked:
            if name not in state.suggested:
                return DialogueAct.suggest(name)
        return DialogueAct.elicit_query()
    if act_type is DialogueActType.INFO:
        target = state.pending_elicit or state.last_suggested
        if target is None:
            return DialogueAct.elicit_query()
        return DialogueAct.info(target)
    if act_type is DialogueActType.LIST_OPTIONS:
        fresh = [n for n, _ in state.shortlist.ranked if n not in state.suggested]
        if not fresh:
            return DialogueAct.elicit_query()
        return DialogueAct.list_options(fresh[:3])
    if act_type is DialogueActType.ELICIT_QUERY:
        return DialogueAct.elicit_query()
    if act_type is DialogueActType.END_SYSTEM:
        return DialogueAct.end_system()
    raise PlannerError(f"{act_type.value} is not a system act type")


@dataclass
class EpisodeResult:
    acts: list[DialogueAct] = field(default_factory=list)
    goal: str = ""
    success: bool = False
    turns: int = 0  # completed system acts
    turn_capped: bool = False
    ended_by: str = ""  # accept | end_user | end_system | turn_cap | budget


TransitionHook = Callable[[np.ndarray, int, float, np.ndarray, bool], None]


def run_episode(
    kb: KnowledgeBase,
    index: TfIdfIndex,
    policy: QPolicy,
    sim_params: BehaviorParams,
    rng: np.random.Generator,
    epsilon: Union[float, Callable[[], float]] = 0.0,
    t_max: int = T_MAX_DEFAULT,
    k: int = SHORTLIST_K,
    reward: Optional[RewardSpec] = None,
    on_transition: Optional[TransitionHook] = None,
    step_budget: Optional[int] = None,
) -> EpisodeResult:
    """One simulator/policy episode.

    When on_transition is given, it is called once per system act with
    (features, action_index, reward, next_features, done); rewards follow
    the RewardSpec: turn_penalty per system act, success_bonus when the
    user's next act accepts the goal, failure_penalty on EndUser, EndSystem,
    or the turn cap. step_budget bounds the number of system acts (used to
    land training on an exact step count); a budget-stopped episode is
    unsuccessful.
    """
    reward = reward or RewardSpec()
    eps_fn = epsilon if callable(epsilon) else (lambda: epsilon)
    result = EpisodeResult()
    goal = sample_goal(kb, index, rng)
    result.goal = goal.target

    state = initial_state()
    act = next_user_act(state, goal, sim_params, index, rng)
    state = apply_act(state, act, index, k=k)
    result.acts.append(act)

    zero_features = np.zeros(13, dtype=np.float64)
    budget = step_budget if step_budget is not None else -1

    while True:
        if budget == 0:
            result.ended_by = "budget"
            break
        feats = featurize(state, t_max)
        act_type = select_action(policy, feats, eps_fn(), rng)
        sys_act = ground_act(act_type, state, kb, index)
        state = apply_act(state, sys_act, index, k=k)
        result.acts.append(sys_act)
        result.turns = state.turn
        budget -= 1

        if sys_act.act_type is DialogueActType.END_SYSTEM:
            if on_transition:
                on_transition(
                    feats,
                    SYSTEM_ACT_INDEX[sys_act.act_type],
                    reward.turn_penalty + reward.failure_penalty,
                    zero_features,
                    True,
                )
            result.ended_by = "end_system"
            break
        if state.turn >= t_max:
            if on_transition:
                on_transition(
                    feats,
                    SYSTEM_ACT_INDEX[sys_act.act_type],
                    reward.turn_penalty + reward.failure_penalty,
                    zero_features,
                    True,
                )
            result.turn_capped = True
            result.ended_by = "turn_cap"
            break

        user_act = next_user_act(state, goal, sim_params, index, rng)
        state = apply_act(state, user_act, index, k=k)
        result.acts.append(user_act)

        if user_act.act_type is DialogueActType.ACCEPT:
            if on_transition:
                on_transition(
                    feats,
                    SYSTEM_ACT_INDEX[sys_act.act_type],
                    reward.turn_penalty + reward.success_bonus,
                    zero_features,
                    True,
                )
            result.success = True
            result.ended_by = "accept"
            break
        if user_act.act_type is DialogueActType.END_USER:
            if on_transition:
                on_transition(
                    feats,
                    SYSTEM_ACT_INDEX[sys_act.act_type],
                    reward.turn_penalty + reward.failure_penalty,
                    zero_features,
                    True,
                )
            result.ended_by = "end_user"
            break

        if on_transition:
            on_transition(
                feats,
                SYSTEM_ACT_INDEX[sys_act.act_type],
                reward.turn_penalty,
                featurize(state, t_max),
                False,
            )

    return result


def plan_script(
    kb: KnowledgeBase,
    index: TfIdfIndex,
    policy: QPolicy,
    sim_params: BehaviorParams,
    seed: int,
    epsilon: float = EPSILON_PLAN_DEFAULT,
    t_max: int = T_MAX_DEFAULT,
    k: int = SHORTLIST_K,
) -> Script:
    """Plan one grounded script; the result always passes validate_script."""
    rng = np.random.Generator(np.random.PCG64(seed))
    result = run_episode(
        kb, index, policy, sim_params, rng, epsilon=epsilon, t_max=t_max, k=k
    )
    metadata = GENERATOR_TAG + (";" + TURN_CAP_FLAG if result.turn_capped else "")
    script = Script(
        acts=tuple(result.acts),
        goal_symbol=result.goal,
        success=result.success,
        seed=seed,
        metadata=metadata,
    )
    violations = validate_script(script, kb, t_max=t_max)
    if violations:  # engine bug, not user error
        raise PlannerError(f"planned script failed validation: {violations}")
    return script


def plan_batch(
    n: int,
    base_seed: int,
    kb: KnowledgeBase,
    index: TfIdfIndex,
    policy: QPolicy,
    sim_params: BehaviorParams,
    epsilon: float = EPSILON_PLAN_DEFAULT,
    t_max: int = T_MAX_DEFAULT,
    k: int = SHORTLIST_K,
) -> tuple[list[Script], dict]:
    """n scripts on derived seeds, order-stable, plus a summary report."""
    if n < 1:
        raise PlannerError(f"n must be >= 1, got {n}")
    scripts = [
        plan_script(
            kb,
            index,
            policy,
            sim_params,
            derive_seed(base_seed, i),
            epsilon=epsilon,
            t_max=t_max,
            k=k,
        )
        for i in range(n)
    ]
    histogram: dict[str, int] = {}
    for script in scripts:
        for act in script.acts:
            histogram[act.act_type.value] = histogram.get(act.act_type.value, 0) + 1
    summary = {
        "scripts": n,
        "base_seed": base_seed,
        "epsilon": epsilon,
        "success_rate": sum(s.success for s in scripts) / n,
        "mean_length_acts": sum(len(s.acts) for s in scripts) / n,
        "act_histogram": {name: histogram[name] for name in sorted(histogram)},
    }
    logger.info(
        "planned %d scripts (success %.3f, mean length %.2f acts)",
        n,
        summary["success_rate"],
        summary["mean_length_acts"],
    )
    return scripts, summary

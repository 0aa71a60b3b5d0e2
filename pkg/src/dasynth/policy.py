"""Action-value dialogue manager trained by self-play Q-learning.

The approximator is a one-hidden-layer tanh network (hidden=0 degrades to a
plain linear map) over a fixed 13-dim feature vector, trained online with
semi-gradient TD(0) on L = 0.5*(target - Q(s,a))^2 and an epsilon-greedy
behavior policy with a linear exploration decay.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .dialogue import (
    DialogueActType,
    DialogueState,
    SYSTEM_ACTS,
    T_MAX_DEFAULT,
    USER_ACTS,
)
from .errors import DasynthError

logger = logging.getLogger(__name__)

FEATURE_DIM = 13
N_ACTIONS = len(SYSTEM_ACTS)

_POLICY_FORMAT = "dasynth-qpolicy"
_POLICY_VERSION = 1


class PolicyError(DasynthError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    hidden: int = 32
    alpha: float = 0.01
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.5  # fraction of total steps spent decaying
    init_scale: float = 0.1

    def __post_init__(self):
        if self.hidden < 0:
            raise PolicyError(f"hidden must be >= 0, got {self.hidden}")
        if not 0.0 <= self.gamma < 1.0:
            raise PolicyError(f"gamma must be in [0, 1), got {self.gamma}")
        for name in ("eps_start", "eps_end"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise PolicyError(f"{name} must be in [0, 1], got {v}")

    def to_dict(self) -> dict:
        return {
            "hidden": self.hidden,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "eps_start": self.eps_start,
            "eps_end": self.eps_end,
            "eps_decay_frac": self.eps_decay_frac,
            "init_scale": self.init_scale,
        }


@dataclass(frozen=True)
class RewardSpec:
    turn_penalty: float = -1.0
    success_bonus: float = 20.0
    failure_penalty: float = -20.0

    def __post_init__(self):
        if not self.turn_penalty < 0 <= self.success_bonus:
            raise PolicyError(
                "need turn_penalty < 0 <= success_bonus, got "
                f"{self.turn_penalty} / {self.success_bonus}"
            )
        if self.failure_penalty > 0:
            raise PolicyError(f"failure_penalty must be <= 0, got {self.failure_penalty}")

    def to_dict(self) -> dict:
        return {
            "turn_penalty": self.turn_penalty,
            "success_bonus": self.success_bonus,
            "failure_penalty": self.failure_penalty,
        }


def featurize(state: DialogueState, t_max: int = T_MAX_DEFAULT) -> np.ndarray:
    """13-dim feature vector: one-hot last user act (6) + turn/t_max (1) +
    top-3 shortlist scores (3) + |suggested|/t_max (1) + |rejected|/t_max (1)
    + shortlist-nonempty flag (1). Every component lies in [0, 1]."""
    if state.next_side != "system":
        raise PolicyError("featurize is defined at the system's decision point")
    x = np.zeros(FEATURE_DIM, dtype=np.float64)
    if state.last_user_act is not None:
        x[USER_ACTS.index(state.last_user_act)] = 1.0
    x[6] = min(1.0, state.turn / t_max)
    x[7:10] = state.shortlist.top_scores(3)
    x[10] = min(1.0, len(state.suggested) / t_max)
    x[11] = min(1.0, len(state.rejected) / t_max)
    x[12] = 1.0 if state.shortlist.ranked else 0.0
    return x


class QPolicy:
    """Action-value function plus its hyperparameters.

    Parameter arrays are float64 and updated in place during training;
    treat a trained policy as frozen (share freely across threads).
    """

    def __init__(
        self,
        w1: np.ndarray,
        b1: np.ndarray,
        w2: np.ndarray,
        b2: np.ndarray,
        hyper: Hyperparams,
        training_steps: int = 0,
    ):
        self.w1 = np.ascontiguousarray(w1, dtype=np.float64)
        self.b1 = np.ascontiguousarray(b1, dtype=np.float64)
        self.w2 = np.ascontiguousarray(w2, dtype=np.float64)
        self.b2 = np.ascontiguousarray(b2, dtype=np.float64)
        self.hyper = hyper
        self.training_steps = training_steps
        expected_in = FEATURE_DIM if hyper.hidden == 0 else hyper.hidden
        if self.w2.shape != (N_ACTIONS, expected_in) or self.b2.shape != (N_ACTIONS,):
            raise PolicyError(
                f"output layer shape mismatch: w2 {self.w2.shape}, b2 {self.b2.shape}"
            )
        if hyper.hidden and self.w1.shape != (hyper.hidden, FEATURE_DIM):
            raise PolicyError(f"hidden layer shape mismatch: w1 {self.w1.shape}")

    @staticmethod
    def initialize(hyper: Hyperparams, seed: int) -> "QPolicy":
        """Uniform [-init_scale, init_scale] parameters from the run seed."""
        rng = np.random.Generator(np.random.PCG64(seed))
        s = hyper.init_scale
        h = hyper.hidden
        in2 = FEATURE_DIM if h == 0 else h
        w1 = rng.uniform(-s, s, size=(h, FEATURE_DIM))
        b1 = rng.uniform(-s, s, size=(h,))
        w2 = rng.uniform(-s, s, size=(N_ACTIONS, in2))
        b2 = rng.uniform(-s, s, size=(N_ACTIONS,))
        return QPolicy(w1, b1, w2, b2, hyper)

    @staticmethod
    def zeros(hyper: Hyperparams) -> "QPolicy":
        h = hyper.hidden
        in2 = FEATURE_DIM if h == 0 else h
        return QPolicy(
            np.zeros((h, FEATURE_DIM)),
            np.zeros(h),
            np.zeros((N_ACTIONS, in2)),
            np.zeros(N_ACTIONS),
            hyper,
        )

    def q_values(self, features: np.ndarray) -> np.ndarray:
        return _kernels.q_forward(self.w1, self.b1, self.w2, self.b2, features)

    def params(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)

    def copy(self) -> "QPolicy":
        return QPolicy(
            self.w1.copy(),
            self.b1.copy(),
            self.w2.copy(),
            self.b2.copy(),
            self.hyper,
            self.training_steps,
        )


def select_action(
    policy: QPolicy,
    features: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
) -> DialogueActType:
    """Epsilon-greedy over the five system act types; argmax ties go to the
    earliest enumerand."""
    if epsilon > 0.0 and rng.random() < epsilon:
        return SYSTEM_ACTS[int(rng.integers(N_ACTIONS))]
    q = policy.q_values(features)
    return SYSTEM_ACTS[int(np.argmax(q))]


def td_loss_and_grads(
    policy: QPolicy,
    s: np.ndarray,
    a: int,
    r: float,
    s_next: np.ndarray,
    done: bool,
    target: Optional[float] = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss 0.5*(target - Q(s,a))^2 and its semi-gradient w.r.t. every
    parameter (target held constant). Pass `target` to pin it explicitly,
    e.g. for finite-difference checks."""
    w1, b1, w2, b2 = policy.params()
    if target is None:
        target = r
        if not done:
            target += policy.hyper.gamma * float(np.max(policy.q_values(s_next)))
    grads = {
        "w1": np.zeros_like(w1),
        "b1": np.zeros_like(b1),
        "w2": np.zeros_like(w2),
        "b2": np.zeros_like(b2),
    }
    if policy.hyper.hidden == 0:
        q_a = float(w2[a] @ s + b2[a])
        delta = target - q_a
        grads["w2"][a] = -delta * s
        grads["b2"][a] = -delta
        return 0.5 * delta * delta, grads
    z = w1 @ s + b1
    h = np.tanh(z)
    q_a = float(w2[a] @ h + b2[a])
    delta = target - q_a
    grads["w2"][a] = -delta * h
    grads["b2"][a] = -delta
    grad_z = -delta * w2[a] * (1.0 - h * h)
    grads["w1"] = np.outer(grad_z, s)
    grads["b1"] = grad_z
    return 0.5 * delta * delta, grads


def td_loss(policy: QPolicy, s: np.ndarray, a: int, target: float) -> float:
    """Loss at a fixed target; the finite-difference side of the gradient check."""
    q_a = float(policy.q_values(s)[a])
    return 0.5 * (target - q_a) ** 2


def q_update(
    policy: QPolicy,
    s: np.ndarray,
    a: int,
    r: float,
    s_next: np.ndarray,
    done: bool,
) -> QPolicy:
    """One in-place TD(0) step on output `a`; returns the same policy."""
    delta = _kernels.td_step(
        policy.w1,
        policy.b1,
        policy.w2,
        policy.b2,
        s,
        a,
        float(r),
        s_next,
        bool(done),
        policy.hyper.gamma,
        policy.hyper.alpha,
    )
    if not np.isfinite(delta):
        raise PolicyError(
            f"non-finite TD error {delta!r} (a={a}, r={r}, done={done}, "
            f"s={s.tolist()}, s_next={s_next.tolist()})"
        )
    policy.training_steps += 1
    return policy


def epsilon_at(step: int, total_steps: int, hyper: Hyperparams) -> float:
    """Linear decay from eps_start to eps_end over the first eps_decay_frac
    of training, constant afterwards."""
    decay_steps = max(1, int(total_steps * hyper.eps_decay_frac))
    if step >= decay_steps:
        return hyper.eps_end
    frac = step / decay_steps
    return hyper.eps_start + frac * (hyper.eps_end - hyper.eps_start)


@dataclass
class TrainingStats:
    steps: int = 0
    episodes: int = 0
    successes: int = 0
    windows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "episodes": self.episodes,
            "successes": self.successes,
            "success_rate": self.successes / self.episodes if self.episodes else 0.0,
            "windows": self.windows,
        }


@dataclass(frozen=True)
class EvalStats:
    success_rate: float
    mean_turns: float
    mean_success_turns: float
    episodes: int

    def to_dict(self) -> dict:
        return {
            "success_rate": self.success_rate,
            "mean_turns": self.mean_turns,
            "mean_success_turns": self.mean_success_turns,
            "episodes": self.episodes,
        }


def train_self_play(
    kb,
    index,
    sim_params,
    reward: RewardSpec,
    hyper: Hyperparams,
    steps: int,
    seed: int,
    t_max: int = T_MAX_DEFAULT,
    k: int = 10,
    n_windows: int = 20,
) -> tuple[QPolicy, TrainingStats]:
    """Online TD(0) self-play for `steps` system turns; single-threaded and
    deterministic for a given seed and configuration."""
    from .planner import run_episode  # local import: planner grounds system acts

    if steps < 1:
        raise PolicyError(f"steps must be >= 1, got {steps}")
    policy = QPolicy.initialize(hyper, seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    stats = TrainingStats()
    window_size = max(1, steps // n_windows)
    window = {"episodes": 0, "successes": 0, "turns": 0}
    steps_done = 0

    def flush_window():
        if window["episodes"]:
            stats.windows.append(
                {
                    "end_step": steps_done,
                    "episodes": window["episodes"],
                    "success_rate": window["successes"] / window["episodes"],
                    "mean_episode_length": window["turns"] / window["episodes"],
                    "epsilon": epsilon_at(steps_done, steps, hyper),
                }
            )
        window["episodes"] = window["successes"] = window["turns"] = 0

    def on_transition(s, a, r, s_next, done):
        nonlocal steps_done
        q_update(policy, s, a, r, s_next, done)
        steps_done += 1
        if steps_done % window_size == 0:
            flush_window()

    while steps_done < steps:
        result = run_episode(
            kb,
            index,
            policy,
            sim_params,
            rng,
            epsilon=lambda: epsilon_at(steps_done, steps, hyper),
            t_max=t_max,
            k=k,
            reward=reward,
            on_transition=on_transition,
            step_budget=steps - steps_done,
        )
        stats.episodes += 1
        window["episodes"] += 1
        window["turns"] += result.turns
        if result.success:
            stats.successes += 1
            window["successes"] += 1
    stats.steps = steps_done
    flush_window()
    logger.info(
        "training done: %d steps, %d episodes, overall success %.3f",
        stats.steps,
        stats.episodes,
        stats.successes / max(1, stats.episodes),
    )
    return policy, stats


def evaluate_policy(
    policy: QPolicy,
    kb,
    index,
    sim_params,
    episodes: int,
    seed: int,
    epsilon: float = 0.0,
    t_max: int = T_MAX_DEFAULT,
    k: int = 10,
) -> EvalStats:
    """Rollouts without learning (greedy unless epsilon is raised); success
    means the episode ends in the user accepting the goal. Each episode gets
    an independent generator stream derived from the seed."""
    from .planner import derive_seed, run_episode

    if episodes < 1:
        raise PolicyError(f"episodes must be >= 1, got {episodes}")
    successes = 0
    total_turns = 0
    success_turns = 0
    for i in range(episodes):
        rng = np.random.Generator(np.random.PCG64(derive_seed(seed, i)))
        result = run_episode(
            kb, index, policy, sim_params, rng, epsilon=epsilon, t_max=t_max, k=k
        )
        total_turns += result.turns
        if result.success:
            successes += 1
            success_turns += result.turns
    return EvalStats(
        success_rate=successes / episodes,
        mean_turns=total_turns / episodes,
        mean_success_turns=success_turns / successes if successes else float("nan"),
        episodes=episodes,
    )


def save_policy(policy: QPolicy, path: str | Path) -> None:
    payload = {
        "format": _POLICY_FORMAT,
        "version": _POLICY_VERSION,
        "feature_dim": FEATURE_DIM,
        "n_actions": N_ACTIONS,
        "hyperparams": policy.hyper.to_dict(),
        "training_steps": policy.training_steps,
        "params": {
            "w1": policy.w1.tolist(),
            "b1": policy.b1.tolist(),
            "w2": policy.w2.tolist(),
            "b2": policy.b2.tolist(),
        },
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_policy(path: str | Path) -> QPolicy:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise PolicyError(f"cannot read policy file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise PolicyError(f"corrupt policy file {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != _POLICY_FORMAT:
        raise PolicyError(f"{path} is not a {_POLICY_FORMAT} file")
    if payload.get("version") != _POLICY_VERSION:
        raise PolicyError(
            f"policy version mismatch: file has {payload.get('version')!r}, "
            f"expected {_POLICY_VERSION}"
        )
    if payload.get("feature_dim") != FEATURE_DIM or payload.get("n_actions") != N_ACTIONS:
        raise PolicyError(
            f"policy version mismatch: feature_dim/n_actions "
            f"{payload.get('feature_dim')}/{payload.get('n_actions')} do not match "
            f"{FEATURE_DIM}/{N_ACTIONS}"
        )
    try:
        hyper = Hyperparams(**payload["hyperparams"])
        params = payload["params"]
        return QPolicy(
            np.array(params["w1"], dtype=np.float64).reshape(hyper.hidden, FEATURE_DIM),
            np.array(params["b1"], dtype=np.float64),
            np.array(params["w2"], dtype=np.float64),
            np.array(params["b2"], dtype=np.float64),
            hyper,
            training_steps=payload["training_steps"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise PolicyError(f"corrupt policy file {path}: {exc}") from exc

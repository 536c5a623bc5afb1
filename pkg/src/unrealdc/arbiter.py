"""Runtime composition of the action and navigation agents.

The navigation agent's reward-prediction head routes control: a
predicted positive or negative reward sign hands the step to the action
agent, a predicted zero sign keeps the navigation agent in control.
Both networks observe every frame so the idle agent's recurrent state
stays coherent.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import netcore as nc
from .losses import RP_CLASS_NEGATIVE, RP_CLASS_POSITIVE, RP_CLASS_ZERO
from .minidoom import ACTION_AGENT_ACTIONS, NAVIGATION_AGENT_ACTIONS, EnvAction


class Controller(Enum):
    ACTION = "action"
    NAVIGATION = "navigation"


@dataclass(frozen=True)
class AgentChoice:
    controller: Controller
    rp_class: int  # 0 zero, 1 positive, 2 negative


class RoutingError(ValueError):
    """Routing input is invalid (non-finite logits, bad class count)."""


def route(rp_logits, threshold: float | None = None, action_on: str = "nonzero") -> AgentChoice:
    """Apply the routing rule to the navigation agent's RP logits.

    Default rule: the argmax class decides; positive or negative hands
    control to the action agent, zero (including any tie involving zero)
    keeps the navigation agent. ``threshold`` switches to routing on
    P(zero) < threshold instead of the argmax. ``action_on="negative"``
    is the restricted variant where only a negative prediction selects
    the action agent.
    """
    logits = np.asarray(rp_logits, dtype=np.float64)
    if logits.shape != (3,):
        raise RoutingError(f"expected 3 reward-sign logits, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise RoutingError("non-finite reward-prediction logits")
    if action_on not in ("nonzero", "negative"):
        raise RoutingError(f"unknown action_on mode {action_on!r}")
    cls = int(np.argmax(logits))  # first max wins: ties with zero stay zero
    if threshold is not None:
        shifted = logits - logits.max()
        probs = np.exp(shifted)
        probs /= probs.sum()
        use_action = probs[RP_CLASS_ZERO] < threshold
    elif action_on == "negative":
        use_action = cls == RP_CLASS_NEGATIVE
    else:
        use_action = cls != RP_CLASS_ZERO
    return AgentChoice(Controller.ACTION if use_action else Controller.NAVIGATION, cls)


class PolicyAgent:
    """Single-network agent driving one role's action set."""

    def __init__(self, params: nc.Parameters, role: str, greedy: bool = False):
        actions = {"action": ACTION_AGENT_ACTIONS, "navigation": NAVIGATION_AGENT_ACTIONS}
        if role not in actions:
            raise ValueError(f"unknown role {role!r}")
        if params.config.n_actions != len(actions[role]):
            raise ValueError(
                f"checkpoint has {params.config.n_actions} actions, role {role!r} "
                f"needs {len(actions[role])}"
            )
        self.params = params
        self.role = role
        self.actions = actions[role]
        self.greedy = greedy
        self.rstate = nc.RecurrentState.zeros(params.config)

    def begin_episode(self):
        self.rstate = nc.RecurrentState.zeros(self.params.config)

    def act(self, obs, rng: np.random.Generator) -> EnvAction:
        policy, self.rstate = nc.policy_step(self.params, obs, self.rstate)
        idx = _pick(policy, rng, self.greedy)
        return self.actions[idx]


class CombinedAgent:
    """Two sub-agents arbitrated by the navigation RP head each step."""

    def __init__(self, action_params: nc.Parameters, nav_params: nc.Parameters,
                 greedy: bool = False, threshold: float | None = None,
                 action_on: str = "nonzero"):
        if action_params.config.n_actions != len(ACTION_AGENT_ACTIONS):
            raise ValueError(
                f"action checkpoint must have {len(ACTION_AGENT_ACTIONS)} actions, "
                f"got {action_params.config.n_actions}"
            )
        if nav_params.config.n_actions != len(NAVIGATION_AGENT_ACTIONS):
            raise ValueError(
                f"navigation checkpoint must have {len(NAVIGATION_AGENT_ACTIONS)} actions, "
                f"got {nav_params.config.n_actions}"
            )
        a_cfg, n_cfg = action_params.config, nav_params.config
        if (a_cfg.input_h, a_cfg.input_w) != (n_cfg.input_h, n_cfg.input_w):
            raise ValueError("sub-agents must share the observation dimensions")
        self.action_params = action_params
        self.nav_params = nav_params
        self.greedy = greedy
        self.threshold = threshold
        self.action_on = action_on
        self.action_state = nc.RecurrentState.zeros(a_cfg)
        self.nav_state = nc.RecurrentState.zeros(n_cfg)
        self.history: deque = deque(maxlen=nc.RP_FRAMES)
        self.last_choice: AgentChoice | None = None
        self._rp_override = None  # test hook: callable obs window -> logits

    @classmethod
    def from_checkpoints(cls, action_path, nav_path, **kwargs) -> "CombinedAgent":
        return cls(nc.load_params(action_path), nc.load_params(nav_path), **kwargs)

    def begin_episode(self):
        self.action_state = nc.RecurrentState.zeros(self.action_params.config)
        self.nav_state = nc.RecurrentState.zeros(self.nav_params.config)
        self.history.clear()
        self.last_choice = None

    def _rp_window(self, obs) -> np.ndarray:
        frames = list(self.history) + [obs]
        while len(frames) < nc.RP_FRAMES:
            frames.insert(0, np.zeros_like(obs))
        return np.stack(frames[-nc.RP_FRAMES:], axis=0)

    def act(self, obs, rng: np.random.Generator) -> EnvAction:
        window = self._rp_window(obs)
        if self._rp_override is not None:
            rp_logits = np.asarray(self._rp_override(window), dtype=np.float64)
        else:
            rp_logits = nc.rp_logits_from_windows(
                self.nav_params, self.nav_params.config, window[None]
            )[0]
        choice = route(rp_logits, threshold=self.threshold, action_on=self.action_on)

        # both recurrent states advance on every frame
        action_policy, self.action_state = nc.policy_step(
            self.action_params, obs, self.action_state
        )
        nav_policy, self.nav_state = nc.policy_step(self.nav_params, obs, self.nav_state)

        if choice.controller is Controller.ACTION:
            idx = _pick(action_policy, rng, self.greedy)
            env_action = ACTION_AGENT_ACTIONS[idx]
        else:
            idx = _pick(nav_policy, rng, self.greedy)
            env_action = NAVIGATION_AGENT_ACTIONS[idx]

        self.history.append(obs)
        self.last_choice = choice
        return env_action


def _pick(policy, rng: np.random.Generator, greedy: bool) -> int:
    p = np.asarray(policy, dtype=np.float64)
    if greedy:
        return int(np.argmax(p))
    p = np.clip(p, 0.0, None)
    p /= p.sum()
    return int(rng.choice(len(p), p=p))

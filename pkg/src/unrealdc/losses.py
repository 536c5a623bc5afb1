"""Loss components for the actor-critic objective and its auxiliary tasks.

Every function here is polymorphic: pass plain ndarrays to get plain
numbers, or Tensor leaves (network outputs on the tape) to get a
differentiable scalar. Targets (returns, advantages, Q targets) are
always plain arrays; gradients flow only through the network outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

# reward-sign classes, in fixed order
RP_CLASS_ZERO = 0
RP_CLASS_POSITIVE = 1
RP_CLASS_NEGATIVE = 2


@dataclass(frozen=True)
class LossWeights:
    gamma: float = 0.99
    lambda_vr: float = 1.0
    lambda_rp: float = 1.0
    lambda_pc: float = 0.05
    gamma_pc: float = 0.9
    entropy_beta: float = 0.01

    def validate(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        for name in ("lambda_vr", "lambda_rp", "lambda_pc"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.gamma_pc <= 1.0:
            raise ValueError(f"gamma_pc must be in [0, 1], got {self.gamma_pc}")
        return self


@dataclass
class Rollout:
    """A short on-policy segment: n aligned steps plus a bootstrap value."""

    frames: np.ndarray        # (n, h, w, 3)
    actions: np.ndarray       # (n,) policy indices
    rewards: np.ndarray       # (n,)
    dones: np.ndarray         # (n,) bool
    bootstrap_value: float | None  # V(s_n); None iff the last step is terminal

    def __post_init__(self):
        n = len(self.rewards)
        if not (len(self.frames) == len(self.actions) == len(self.dones) == n):
            raise ValueError("rollout fields have mismatched lengths")
        if bool(self.dones[-1]) == (self.bootstrap_value is not None):
            raise ValueError("bootstrap value must be present iff the last step is non-terminal")


def n_step_returns(rollout: Rollout, gamma: float) -> np.ndarray:
    """Discounted returns R_t = r_t + gamma * R_{t+1}, reset at terminals."""
    rewards = np.asarray(rollout.rewards, dtype=np.float64)
    dones = np.asarray(rollout.dones, dtype=bool)
    returns = np.empty_like(rewards)
    acc = 0.0 if rollout.bootstrap_value is None else float(rollout.bootstrap_value)
    for t in range(len(rewards) - 1, -1, -1):
        if dones[t]:
            acc = 0.0
        acc = rewards[t] + gamma * acc
        returns[t] = acc
    return returns


def entropy_of(log_probs):
    """Shannon entropy per row of log-probabilities (t, actions) -> (t,)."""
    probs = ad.exp(log_probs)
    return -ad.reduce_sum(probs * log_probs, axis=-1)


def policy_loss(returns, values, taken_log_probs, entropies=None, entropy_beta=0.01):
    """Sum of -(R_t - V_t) * log pi(a_t|s_t), minus an optional entropy bonus.

    ``returns`` and ``values`` are constants here; only the log-probs (and
    entropies) carry gradients.
    """
    advantages = np.asarray(ad.constant(returns)) - np.asarray(ad.constant(values))
    loss = ad.reduce_sum((-advantages) * taken_log_probs)
    lp_val = ad.constant(taken_log_probs)
    if not np.all(np.isfinite(lp_val)):
        raise ValueError("non-finite log-probability in policy loss")
    if entropies is not None and entropy_beta:
        loss = loss + (-entropy_beta) * ad.reduce_sum(entropies)
    return loss


def value_loss(returns, values):
    """Sum of 0.5 * (R_t - V(s_t))^2 with R_t held constant."""
    targets = np.asarray(ad.constant(returns))
    diff = targets - values if isinstance(values, ad.Tensor) else targets - np.asarray(values)
    return ad.reduce_sum(0.5 * diff ** 2.0)


# value replay applies the identical formula to replayed data
vr_loss = value_loss


def reward_sign_class(reward: float) -> int:
    if reward == 0.0:
        return RP_CLASS_ZERO
    return RP_CLASS_POSITIVE if reward > 0.0 else RP_CLASS_NEGATIVE


def rp_loss(rp_logits, reward: float):
    """Cross-entropy of softmax(logits) against the reward-sign class."""
    cls = reward_sign_class(float(reward))
    log_probs = ad.log_softmax(rp_logits, axis=-1)
    return -log_probs[cls]


def rp_batch_loss(rp_logits, classes):
    """Mean cross-entropy over a batch; logits (b, 3), classes (b,)."""
    classes = np.asarray(classes, dtype=int)
    log_probs = ad.log_softmax(rp_logits, axis=-1)
    picked = log_probs[(np.arange(len(classes)), classes)]
    return ad.reduce_mean(-picked)


def pc_pseudo_reward(frame_a, frame_b, regions) -> np.ndarray:
    """Per-region mean absolute pixel difference, averaged over channels."""
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    gh, gw = regions
    h, w = a.shape[0], a.shape[1]
    if h % gh or w % gw:
        raise ValueError(f"frame dims {h}x{w} are not divisible into {gh}x{gw} regions")
    diff = np.abs(a - b).mean(axis=-1)
    return diff.reshape(gh, h // gh, gw, w // gw).mean(axis=(1, 3))


def pc_targets(pseudo_rewards, bootstrap_q_max, gamma_pc: float) -> np.ndarray:
    """n-step targets T_t = pr_t + gamma_pc * T_{t+1}, seeded by max_a Q."""
    prs = np.asarray(pseudo_rewards, dtype=np.float64)
    acc = np.asarray(bootstrap_q_max, dtype=np.float64).copy()
    targets = np.empty_like(prs)
    for t in range(len(prs) - 1, -1, -1):
        acc = prs[t] + gamma_pc * acc
        targets[t] = acc
    return targets


def pc_loss(pc_q_seq, actions, targets):
    """Sum over steps and regions of 0.5 * (T_t - Q_t[region, a_t])^2."""
    actions = np.asarray(actions, dtype=int)
    taken = pc_q_seq[(np.arange(len(actions)), slice(None), slice(None), actions)]
    targets = np.asarray(ad.constant(targets))
    diff = targets - taken if isinstance(taken, ad.Tensor) else targets - np.asarray(taken)
    return ad.reduce_sum(0.5 * diff ** 2.0)


def _component_value(x) -> float:
    return float(x.value) if isinstance(x, ad.Tensor) else float(x)


def total_loss(pi, v, vr, rp, pc, weights: LossWeights):
    """L = L_pi + L_v + lambda_vr*L_vr + lambda_rp*L_rp + lambda_pc*L_pc."""
    for name, comp in (("policy", pi), ("value", v), ("vr", vr), ("rp", rp), ("pc", pc)):
        if not np.isfinite(_component_value(comp)):
            raise ValueError(f"non-finite loss component: {name}")
    return pi + v + weights.lambda_vr * vr + weights.lambda_rp * rp + weights.lambda_pc * pc

"""Ring-buffer experience replay feeding the three auxiliary tasks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import reward_sign_class

RP_WINDOW = 3


class WarmupError(RuntimeError):
    """The buffer does not yet contain enough data for this sampler."""


@dataclass
class Transition:
    observation: np.ndarray
    action: int
    reward: float
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring; oldest transitions are evicted first."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list = []
        self._cursor = 0

    def __len__(self):
        return len(self._items)

    def push(self, transition: Transition):
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._cursor] = transition
            self._cursor = (self._cursor + 1) % self.capacity

    def get(self, i: int) -> Transition:
        """i-th transition in insertion order, 0 = oldest retained."""
        if not 0 <= i < len(self._items):
            raise IndexError(i)
        if len(self._items) < self.capacity:
            return self._items[i]
        return self._items[(self._cursor + i) % self.capacity]

    def _dones(self) -> np.ndarray:
        return np.fromiter(
            (self.get(i).done for i in range(len(self))), dtype=bool, count=len(self)
        )

    def valid_sequence_starts(self, length: int) -> np.ndarray:
        """Start indices whose window holds no done flag except at its end."""
        size = len(self)
        if size < length:
            return np.empty(0, dtype=int)
        dones = self._dones()
        if length == 1:
            return np.arange(size)
        # cumulative dones over the first length-1 positions of each window
        c = np.concatenate([[0], np.cumsum(dones)])
        starts = np.arange(size - length + 1)
        interior = c[starts + length - 1] - c[starts]
        return starts[interior == 0]

    def sample_uniform_sequence(self, length: int, rng: np.random.Generator) -> list:
        """`length` consecutive transitions, start uniform over valid starts."""
        if len(self) < length:
            raise WarmupError(
                f"buffer holds {len(self)} transitions, need {length} for a sequence"
            )
        starts = self.valid_sequence_starts(length)
        if len(starts) == 0:
            raise WarmupError("no episode segment of the requested length yet")
        s = int(starts[rng.integers(len(starts))])
        return [self.get(s + k) for k in range(length)]

    def _rp_candidates(self):
        zero, nonzero = [], []
        for i in range(RP_WINDOW - 1, len(self)):
            if self.get(i).reward == 0.0:
                zero.append(i)
            else:
                nonzero.append(i)
        return zero, nonzero

    def _rp_window(self, end: int) -> np.ndarray:
        """Last-3-frame window ending at `end`, zero-padded across episode
        boundaries (a done flag on a predecessor cuts the window)."""
        obs_end = self.get(end).observation
        frames = [obs_end]
        i = end
        while len(frames) < RP_WINDOW:
            j = i - 1
            if j < 0 or self.get(j).done:
                break
            frames.append(self.get(j).observation)
            i = j
        while len(frames) < RP_WINDOW:
            frames.append(np.zeros_like(obs_end))
        return np.stack(frames[::-1], axis=0)

    def sample_rp_batch(self, batch_size: int, rng: np.random.Generator) -> list:
        """Class-balanced reward-sign samples: exactly ceil(b/2) zero-reward
        endpoints and floor(b/2) nonzero ones, each with its 3-frame window.
        """
        if batch_size <= 0:
            raise ValueError("batch_size must be positive")
        zero, nonzero = self._rp_candidates()
        if not zero:
            raise WarmupError("no zero-reward transitions available for reward prediction")
        if not nonzero:
            raise WarmupError("no nonzero-reward transitions available for reward prediction")
        n_zero = (batch_size + 1) // 2
        n_nonzero = batch_size // 2
        picks = [zero[k] for k in rng.integers(len(zero), size=n_zero)]
        picks += [nonzero[k] for k in rng.integers(len(nonzero), size=n_nonzero)]
        return [
            (self._rp_window(i), reward_sign_class(self.get(i).reward)) for i in picks
        ]

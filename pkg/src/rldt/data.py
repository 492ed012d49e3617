"""Trajectories, the trajectory replay buffer, and segment sampling.

Segments are fixed-length windows ending at a uniformly chosen step; the
window is capped (left-padded) at the trajectory start, which induces the
near-uniform distribution of effective context lengths used during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def compute_rtg(rewards) -> np.ndarray:
    """Suffix sums of rewards; rtg has length T+1 with rtg[T] = 0."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("compute_rtg: empty reward sequence")
    rtg = np.zeros(rewards.size + 1)
    for t in range(rewards.size - 1, -1, -1):
        rtg[t] = rewards[t] + rtg[t + 1]
    return rtg


@dataclass
class Trajectory:
    states: np.ndarray   # (T, state_dim)
    actions: np.ndarray  # (T, action_dim)
    rewards: np.ndarray  # (T,)
    dones: np.ndarray    # (T,) bool, last entry True
    rtg: np.ndarray      # (T+1,), rtg[T] = 0

    @classmethod
    def from_steps(cls, states, actions, rewards, dones) -> "Trajectory":
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        rewards = np.asarray(rewards, dtype=np.float64)
        dones = np.asarray(dones, dtype=bool)
        if states.ndim == 1:
            states = states[:, None]
        if actions.ndim == 1:
            actions = actions[:, None]
        traj = cls(states, actions, rewards, dones, compute_rtg(rewards))
        traj.validate()
        return traj

    def __len__(self) -> int:
        return self.rewards.size

    def validate(self):
        n = len(self)
        if n < 1:
            raise ValueError("trajectory must contain at least one step")
        if not (self.states.shape[0] == self.actions.shape[0] == self.dones.size == n):
            raise ValueError("trajectory field lengths disagree")
        if self.rtg.size != n + 1 or self.rtg[n] != 0.0:
            raise ValueError("rtg must have length T+1 with rtg[T] = 0")
        if not self.dones[-1]:
            raise ValueError("last step of a trajectory must be done")
        recomputed = self.rewards + self.rtg[1:]
        if not np.array_equal(recomputed, self.rtg[:-1]):
            raise ValueError("rtg is not the suffix sum of rewards")


@dataclass
class Segment:
    states: np.ndarray     # (T_train, state_dim)
    actions: np.ndarray    # (T_train, action_dim)
    rtgs: np.ndarray       # (T_train,)
    timesteps: np.ndarray  # (T_train,) int
    mask: np.ndarray       # (T_train,) bool; False = left padding
    rtg_condition: float   # real RTG at the first valid step


@dataclass
class TrainingBatch:
    """Stacked segments plus the one-step-shifted sibling windows.

    Position p of the shifted arrays holds step t+1 where position p of the
    original arrays holds step t, so target values line up elementwise.  At
    a trajectory's final step the shifted window carries a phantom repeat of
    the last state; it is only read where done masks the target to zero.
    """

    states: np.ndarray
    actions: np.ndarray
    rtgs: np.ndarray
    timesteps: np.ndarray
    mask: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    next_states: np.ndarray
    next_actions: np.ndarray
    next_rtgs: np.ndarray
    next_timesteps: np.ndarray
    next_mask: np.ndarray

    @property
    def batch_size(self) -> int:
        return self.states.shape[0]


class ReplayBuffer:
    """Trajectory store with FIFO eviction (optionally keep-top-by-return)."""

    def __init__(self, capacity: int, keep_top_by_return: bool = False):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.keep_top_by_return = keep_top_by_return
        self.trajectories: list[Trajectory] = []
        self.total_steps = 0
        self._cumlen: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.trajectories)

    def insert(self, traj: Trajectory):
        traj.validate()
        self.trajectories.append(traj)
        self.total_steps += len(traj)
        if len(self.trajectories) > self.capacity:
            if self.keep_top_by_return:
                idx = int(np.argmin([t.rtg[0] for t in self.trajectories]))
            else:
                idx = 0
            evicted = self.trajectories.pop(idx)
            self.total_steps -= len(evicted)
        self._cumlen = None

    def extend(self, trajectories):
        for t in trajectories:
            self.insert(t)

    def all_states(self) -> np.ndarray:
        return np.concatenate([t.states for t in self.trajectories], axis=0)

    def mean_return(self) -> float:
        return float(np.mean([t.rtg[0] for t in self.trajectories]))

    def _pick_step(self, rng: np.random.Generator):
        """Uniform over stored steps: trajectory w.p. proportional to its
        length, then a uniform step index inside it."""
        if not self.trajectories:
            raise ValueError("cannot sample from an empty buffer")
        if self._cumlen is None:
            self._cumlen = np.cumsum([len(t) for t in self.trajectories])
        flat = int(rng.integers(self.total_steps))
        i = int(np.searchsorted(self._cumlen, flat, side="right"))
        prev = int(self._cumlen[i - 1]) if i else 0
        return self.trajectories[i], flat - prev


def _window(traj: Trajectory, end: int, t_train: int):
    """Window of up to t_train steps ending at step index ``end``.

    ``end`` may equal len(traj): the final slot is then a phantom repeat of
    the last state with zero action and the (real) terminal rtg of 0.
    """
    n = len(traj)
    start = max(0, end - t_train + 1)
    idx = np.arange(start, end + 1)
    k = idx.size
    pad = t_train - k
    ds, da = traj.states.shape[1], traj.actions.shape[1]
    states = np.zeros((t_train, ds))
    actions = np.zeros((t_train, da))
    rtgs = np.zeros(t_train)
    timesteps = np.zeros(t_train, dtype=np.int64)
    mask = np.zeros(t_train, dtype=bool)
    real = idx[idx < n]
    states[pad:pad + real.size] = traj.states[real]
    actions[pad:pad + real.size] = traj.actions[real]
    rtgs[pad:pad + k] = traj.rtg[idx]
    if real.size < k:  # phantom final slot
        states[pad + real.size:] = traj.states[n - 1]
    timesteps[pad:pad + k] = idx
    mask[pad:] = True
    return states, actions, rtgs, timesteps, mask


def sample_segment(buffer: ReplayBuffer, t_train: int, rng: np.random.Generator) -> Segment:
    """Draw one training segment; each stored step is equally likely to be
    the segment's last valid position."""
    traj, j = buffer._pick_step(rng)
    states, actions, rtgs, timesteps, mask = _window(traj, j, t_train)
    first = int(np.argmax(mask))
    return Segment(states, actions, rtgs, timesteps, mask, float(rtgs[first]))


def sample_batch(buffer: ReplayBuffer, t_train: int, batch_size: int,
                 rng: np.random.Generator) -> TrainingBatch:
    """Draw a batch of segments together with their shifted sibling windows."""
    cur, nxt, rews, dons = [], [], [], []
    for _ in range(batch_size):
        traj, j = buffer._pick_step(rng)
        cur.append(_window(traj, j, t_train))
        nxt.append(_window(traj, j + 1, t_train))
        r = np.zeros(t_train)
        d = np.zeros(t_train)
        start = max(0, j - t_train + 1)
        pad = t_train - (j - start + 1)
        r[pad:] = traj.rewards[start:j + 1]
        d[pad:] = traj.dones[start:j + 1]
        rews.append(r)
        dons.append(d)
    stack = lambda items, i: np.stack([it[i] for it in items])
    return TrainingBatch(
        states=stack(cur, 0), actions=stack(cur, 1), rtgs=stack(cur, 2),
        timesteps=stack(cur, 3), mask=stack(cur, 4),
        rewards=np.stack(rews), dones=np.stack(dons),
        next_states=stack(nxt, 0), next_actions=stack(nxt, 1),
        next_rtgs=stack(nxt, 2), next_timesteps=stack(nxt, 3),
        next_mask=stack(nxt, 4),
    )


@dataclass
class StateNormalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    @classmethod
    def identity(cls, dim: int) -> "StateNormalizer":
        return cls(np.zeros(dim), np.ones(dim))


def normalize_states(buffer: ReplayBuffer) -> StateNormalizer:
    """Per-dimension mean/std over all stored steps; std floored at 1e-6."""
    states = buffer.all_states()
    mean = states.mean(axis=0)
    std = np.maximum(states.std(axis=0), 1e-6)
    return StateNormalizer(mean, std)

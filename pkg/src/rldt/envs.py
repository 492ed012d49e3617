"""Self-contained environments and offline-dataset generation.

Two environments: a single-step continuous bandit whose reward peak the
offline data conceals, and a 2-D point-mass reaching task for multi-step
context handling.  Both are deterministic given (seed, action sequence).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Trajectory


@dataclass
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    horizon: int
    reward_min: float
    reward_max: float

    def __post_init__(self):
        self.action_low = np.asarray(self.action_low, dtype=np.float64)
        self.action_high = np.asarray(self.action_high, dtype=np.float64)
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not np.all(self.action_low < self.action_high):
            raise ValueError("action_low must be elementwise below action_high")


@dataclass
class StepResult:
    next_state: np.ndarray
    reward: float
    done: bool


@dataclass
class OfflineDataset:
    trajectories: list[Trajectory]
    metadata: dict

    @property
    def n_steps(self) -> int:
        return sum(len(t.rewards) for t in self.trajectories)

    def returns(self) -> np.ndarray:
        return np.array([t.rtg[0] for t in self.trajectories])


def bandit_reward(a: float) -> float:
    """Piecewise reward: (a+1)^2 left of zero, 1-2a right of it.

    Continuous at a=0 (both branches give 1) with its unique maximum there.
    Inputs are clipped to [-1, 1] as a guard; rollout actions arrive
    pre-squashed.
    """
    a = float(np.clip(a, -1.0, 1.0))
    if a <= 0.0:
        return (a + 1.0) ** 2
    return 1.0 - 2.0 * a


class BanditEnv:
    """Single-state, single-step MDP with 1-D action in [-1, 1]."""

    def __init__(self, seed: int = 0):
        self.spec = EnvSpec("bandit", state_dim=1, action_dim=1,
                            action_low=np.array([-1.0]), action_high=np.array([1.0]),
                            horizon=1, reward_min=-1.0, reward_max=1.0)
        self.rng = np.random.default_rng(seed)
        self._done = True

    def reset(self) -> np.ndarray:
        self._done = False
        return np.zeros(1)

    def step(self, action) -> StepResult:
        if self._done:
            raise RuntimeError("step() called on a finished episode; reset first")
        r = bandit_reward(float(np.asarray(action).ravel()[0]))
        self._done = True
        return StepResult(np.zeros(1), r, True)


class PointMassEnv:
    """2-D point mass with acceleration actions on a bounded arena.

    Semi-implicit Euler at dt=0.1 with velocity clipped to [-1, 1]; dense
    reward -|position - goal|; episode ends within goal_radius of the goal
    or at the horizon.  reset() draws the start from the env's own rng
    unless one is given explicitly.
    """

    DT = 0.1
    GOAL = np.array([1.0, 1.0])
    ARENA = 2.0
    GOAL_RADIUS = 0.05

    def __init__(self, seed: int = 0, horizon: int = 100):
        diameter = float(np.linalg.norm([-self.ARENA, -self.ARENA] - self.GOAL))
        self.spec = EnvSpec("pointmass", state_dim=4, action_dim=2,
                            action_low=np.array([-1.0, -1.0]),
                            action_high=np.array([1.0, 1.0]),
                            horizon=horizon, reward_min=-diameter, reward_max=0.0)
        self.rng = np.random.default_rng(seed)
        self._state = None
        self._t = 0
        self._done = True

    def reset(self, start=None) -> np.ndarray:
        if start is None:
            pos = self.rng.uniform(-2.0, 0.0, size=2)
        else:
            pos = np.asarray(start, dtype=np.float64)
        self._state = np.concatenate([pos, np.zeros(2)])
        self._t = 0
        self._done = False
        return self._state.copy()

    def step(self, action) -> StepResult:
        if self._done:
            raise RuntimeError("step() called on a finished episode; reset first")
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        pos, vel = self._state[:2], self._state[2:]
        vel = np.clip(vel + a * self.DT, -1.0, 1.0)
        pos = np.clip(pos + vel * self.DT, -self.ARENA, self.ARENA)
        self._state = np.concatenate([pos, vel])
        self._t += 1
        dist = float(np.linalg.norm(pos - self.GOAL))
        reward = -dist
        done = dist < self.GOAL_RADIUS or self._t >= self.spec.horizon
        self._done = done
        return StepResult(self._state.copy(), reward, done)


class DelayedRewardEnv:
    """Emit the running reward sum every M-th step and at episode end."""

    def __init__(self, env, period: int):
        if period < 1:
            raise ValueError("period must be >= 1")
        self.env = env
        self.spec = env.spec
        self.period = period
        self._acc = 0.0
        self._count = 0

    @property
    def rng(self):
        return self.env.rng

    def reset(self, **kwargs) -> np.ndarray:
        self._acc = 0.0
        self._count = 0
        return self.env.reset(**kwargs)

    def step(self, action) -> StepResult:
        res = self.env.step(action)
        self._acc += res.reward
        self._count += 1
        if self._count % self.period == 0 or res.done:
            out = self._acc
            self._acc = 0.0
        else:
            out = 0.0
        return StepResult(res.next_state, out, res.done)


def delayed_reward_wrap(env, period: int) -> DelayedRewardEnv:
    return DelayedRewardEnv(env, period)


def make_env(name: str, seed: int = 0):
    if name == "bandit":
        return BanditEnv(seed)
    if name == "pointmass":
        return PointMassEnv(seed)
    raise ValueError(f"unknown environment {name!r}")


# (random, expert) reference returns for score normalization.  The bandit
# random reference is the exact mean reward of a uniform action,
# integral of r over [-1, 1] divided by 2 = 1/6; the expert reference is the
# peak reward.
REF_RETURNS = {"bandit": (1.0 / 6.0, 1.0)}


def pointmass_reference_returns(seed: int = 0, n_episodes: int = 20) -> tuple[float, float]:
    """(random, oracle) mean returns measured from matched start states."""
    rets = {}
    for tag in ("random", "oracle"):
        env = PointMassEnv(seed)
        rng = np.random.default_rng(seed + 1)
        totals = []
        for _ in range(n_episodes):
            s = env.reset()
            total = 0.0
            done = False
            while not done:
                a = _behavior_action(tag, env, s, rng)
                res = env.step(a)
                total += res.reward
                s = res.next_state
                done = res.done
            totals.append(total)
        rets[tag] = float(np.mean(totals))
    return rets["random"], rets["oracle"]


# ---------------------------------------------------------------------------
# scripted policies


def pointmass_oracle_policy(state: np.ndarray) -> np.ndarray:
    """Tuned PD controller toward the goal."""
    pos, vel = state[:2], state[2:]
    a = 4.0 * (PointMassEnv.GOAL - pos) - 3.0 * vel
    return np.clip(a, -1.0, 1.0)


def pointmass_suboptimal_policy(state: np.ndarray) -> np.ndarray:
    """Undamped proportional controller with a weak gain; approaches the
    goal slowly and overshoots, landing between random and oracle returns."""
    pos = state[:2]
    return np.clip(0.4 * (PointMassEnv.GOAL - pos), -1.0, 1.0)


_BEHAVIORS = {"random", "scripted-suboptimal", "oracle"}


def _behavior_action(tag: str, env, state: np.ndarray, rng: np.random.Generator):
    if tag == "random":
        return rng.uniform(env.spec.action_low, env.spec.action_high)
    if env.spec.name != "pointmass":
        raise ValueError(f"behavior {tag!r} is only scripted for pointmass")
    if tag == "scripted-suboptimal":
        return pointmass_suboptimal_policy(state)
    return pointmass_oracle_policy(state)


def generate_offline(env, behavior: str, n_steps: int, seed: int) -> OfflineDataset:
    """Roll the behavior policy for exactly n_steps environment steps.

    Episodes are cut at the step budget; a cut episode is stored as ended.
    """
    if behavior not in _BEHAVIORS:
        raise ValueError(f"unknown behavior {behavior!r}; options: {sorted(_BEHAVIORS)}")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = np.random.default_rng(seed)
    trajectories = []
    steps_left = n_steps
    while steps_left > 0:
        states, actions, rewards, dones = [], [], [], []
        s = env.reset()
        done = False
        while not done and steps_left > 0:
            a = np.asarray(_behavior_action(behavior, env, s, rng), dtype=np.float64)
            res = env.step(a)
            states.append(s)
            actions.append(a)
            rewards.append(res.reward)
            steps_left -= 1
            done = res.done or steps_left == 0
            dones.append(done)
            s = res.next_state
        trajectories.append(Trajectory.from_steps(states, actions, rewards, dones))
    returns = np.array([t.rtg[0] for t in trajectories])
    metadata = {
        "env": env.spec.name,
        "seed": seed,
        "generator": behavior,
        "n_steps": n_steps,
        "mean_return": float(returns.mean()),
        "std_return": float(returns.std()),
    }
    return OfflineDataset(trajectories, metadata)


def bandit_dataset(seed: int, literal_interval: bool = False) -> OfflineDataset:
    """128 one-step trajectories hiding the bandit's reward peak.

    100 actions uniform on the low-reward left band and 28 uniform on
    (0.5, 1).  The left band defaults to (-1, -0.95); literal_interval=True
    samples (-1, 0.95) instead, which does not conceal the peak.
    """
    rng = np.random.default_rng(seed)
    left_high = 0.95 if literal_interval else -0.95
    acts = np.concatenate([
        rng.uniform(-1.0, left_high, size=100),
        rng.uniform(0.5, 1.0, size=28),
    ])
    trajectories = []
    for a in acts:
        r = bandit_reward(a)
        trajectories.append(Trajectory.from_steps(
            [np.zeros(1)], [np.array([a])], [r], [True]))
    returns = np.array([t.rtg[0] for t in trajectories])
    metadata = {
        "env": "bandit",
        "seed": seed,
        "generator": "peak-concealing-bands" + ("-literal" if literal_interval else ""),
        "n_steps": 128,
        "mean_return": float(returns.mean()),
        "std_return": float(returns.std()),
    }
    return OfflineDataset(trajectories, metadata)


# ---------------------------------------------------------------------------
# dataset serialization (line-delimited JSON; bit-exact float round trip)


def save_dataset(ds: OfflineDataset, path):
    with open(path, "w") as f:
        f.write(json.dumps(ds.metadata) + "\n")
        for i, traj in enumerate(ds.trajectories):
            for t in range(len(traj.rewards)):
                rec = {
                    "traj_id": i,
                    "t": t,
                    "state": traj.states[t].tolist(),
                    "action": traj.actions[t].tolist(),
                    "reward": float(traj.rewards[t]),
                    "done": int(traj.dones[t]),
                }
                f.write(json.dumps(rec) + "\n")


def load_dataset(path) -> OfflineDataset:
    with open(path) as f:
        metadata = json.loads(f.readline())
        groups: dict[int, list[dict]] = {}
        for line in f:
            rec = json.loads(line)
            groups.setdefault(rec["traj_id"], []).append(rec)
    trajectories = []
    for tid in sorted(groups):
        recs = sorted(groups[tid], key=lambda r: r["t"])
        trajectories.append(Trajectory.from_steps(
            [np.array(r["state"]) for r in recs],
            [np.array(r["action"]) for r in recs],
            [r["reward"] for r in recs],
            [bool(r["done"]) for r in recs],
        ))
    return OfflineDataset(trajectories, metadata)

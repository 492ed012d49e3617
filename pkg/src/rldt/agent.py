"""Agent: decision-transformer actor, twin reflexive critics, target copies.

The rollout context mirrors evaluation-time conditioning: a ring buffer of
the last T_eval steps whose RTG entry starts at the rollout target and drops
by each observed reward.
"""

from __future__ import annotations

import pickle
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet
from .data import StateNormalizer, Trajectory
from .nn import (MLPConfig, TransformerConfig, dt_forward_batch, init_mlp,
                 init_transformer, mlp_forward)
from .optim import OptimizerState

CHECKPOINT_VERSION = 1

_RNG_STREAMS = ("sample", "explore", "smooth", "dropout")


@dataclass
class AgentConfig:
    transformer: TransformerConfig
    critic_hidden: tuple[int, ...] = (256, 256)
    critic_layernorm: bool = False
    tau: float = 0.005
    rtg_scale: float = 1.0
    init_scale: float = 0.02

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")


class RolloutContext:
    """Ring buffer of the last T_eval (state, rtg, action) steps."""

    def __init__(self, rtg_init: float, t_eval: int):
        if t_eval < 1:
            raise ValueError("t_eval must be >= 1")
        self.t_eval = t_eval
        self.rtg = float(rtg_init)
        self.states: deque = deque(maxlen=t_eval)
        self.rtgs: deque = deque(maxlen=t_eval)
        self.actions: deque = deque(maxlen=t_eval)
        self.steps: deque = deque(maxlen=t_eval)
        self.step = 0

    def push_state(self, state: np.ndarray):
        """Append the current state; the action slot stays empty until
        record_action."""
        self.states.append(np.asarray(state, dtype=np.float64))
        self.rtgs.append(self.rtg)
        self.actions.append(None)
        self.steps.append(self.step)

    def record_action(self, action: np.ndarray):
        self.actions[-1] = np.asarray(action, dtype=np.float64)

    def advance_rtg(self, reward: float):
        """Drop the conditioning RTG by the observed reward."""
        self.rtg -= float(reward)
        self.step += 1

    def arrays(self, action_dim: int):
        """(1, k, ...) arrays for the model; the current action is zeros,
        which the causal mask hides from its own prediction."""
        k = len(self.states)
        states = np.stack(self.states)[None]
        rtgs = np.array(self.rtgs)[None]
        actions = np.zeros((1, k, action_dim))
        for i, a in enumerate(self.actions):
            if a is not None:
                actions[0, i] = a
        timesteps = np.array(self.steps)[None]
        mask = np.ones((1, k), dtype=bool)
        return states, actions, rtgs, timesteps, mask


class Agent:
    def __init__(self, cfg: AgentConfig, seed: int, lr_actor: float = 1e-4,
                 lr_critic: float = 1e-3, weight_decay: float = 0.0,
                 optimizer: str = "adam", warmup_steps: int = 0):
        self.cfg = cfg
        tcfg = cfg.transformer
        self.critic_cfg = MLPConfig(tcfg.state_dim + tcfg.action_dim, 1,
                                    cfg.critic_hidden, "relu", cfg.critic_layernorm)
        seqs = np.random.SeedSequence(seed).spawn(3 + len(_RNG_STREAMS))
        self.policy = init_transformer(tcfg, np.random.default_rng(seqs[0]),
                                       cfg.init_scale).compact()
        self.critic1 = init_mlp(self.critic_cfg, np.random.default_rng(seqs[1])).compact()
        self.critic2 = init_mlp(self.critic_cfg, np.random.default_rng(seqs[2])).compact()
        self.target_policy = self.policy.clone()
        self.target_critic1 = self.critic1.clone()
        self.target_critic2 = self.critic2.clone()
        self.rngs = {name: np.random.default_rng(s)
                     for name, s in zip(_RNG_STREAMS, seqs[3:])}
        self.opt_actor = OptimizerState(optimizer, lr_actor, weight_decay=weight_decay,
                                        warmup_steps=warmup_steps)
        self.opt_critic1 = OptimizerState("adam", lr_critic)
        self.opt_critic2 = OptimizerState("adam", lr_critic)
        self.normalizer = StateNormalizer.identity(tcfg.state_dim)
        self.actor_steps = 0
        self.critic_steps = 0

    # -- model input plumbing -------------------------------------------------

    def policy_forward(self, params: ParamSet, states, actions, rtgs, timesteps,
                       mask, train: bool = False):
        return dt_forward_batch(
            params, self.cfg.transformer,
            self.normalizer.apply(states), actions,
            np.asarray(rtgs, dtype=np.float64) * self.cfg.rtg_scale,
            timesteps, mask, train=train,
            rng=self.rngs["dropout"] if train else None,
        )

    def critic_forward(self, params: ParamSet, states, actions, frozen: bool = False):
        """Q(s, a); states raw (normalized internally), shapes (..., dim)."""
        sa = np.concatenate([self.normalizer.apply(states), actions], axis=-1)
        return mlp_forward(params, self.critic_cfg, sa, frozen=frozen)

    def critic_on_action_tensor(self, params: ParamSet, states, action_tensor):
        """Q(s, a) where a is a live graph tensor; critic weights frozen."""
        sa = ad.concat_last(ad.constant(self.normalizer.apply(states)), action_tensor)
        return mlp_forward(params, self.critic_cfg, sa, frozen=True)

    # -- acting ----------------------------------------------------------------

    def act(self, ctx: RolloutContext, explore_noise: float = 0.0,
            noise_kind: str = "gaussian") -> np.ndarray:
        """Deterministic policy on the windowed context, plus optional
        exploration noise, clipped to the action bounds."""
        tcfg = self.cfg.transformer
        states, actions, rtgs, timesteps, mask = ctx.arrays(tcfg.action_dim)
        with ad.no_grad():
            out = self.policy_forward(self.policy, states, actions, rtgs,
                                      timesteps, mask)
        a = out.data[0, -1].copy()
        if explore_noise > 0.0:
            rng = self.rngs["explore"]
            if noise_kind == "gaussian":
                a += rng.normal(0.0, explore_noise, size=a.shape)
            elif noise_kind == "uniform":
                a += rng.uniform(-explore_noise, explore_noise, size=a.shape)
            else:
                raise ValueError(f"unknown noise kind {noise_kind!r}")
        return np.clip(a, tcfg.action_low, tcfg.action_high)

    def collect_episode(self, env, rtg_rollout: float, t_eval: int,
                        explore_noise: float = 0.0,
                        noise_kind: str = "gaussian") -> Trajectory:
        states, actions, rewards, dones = [], [], [], []
        s = env.reset()
        ctx = RolloutContext(rtg_rollout, t_eval)
        done = False
        while not done:
            ctx.push_state(s)
            a = self.act(ctx, explore_noise, noise_kind)
            ctx.record_action(a)
            res = env.step(a)
            states.append(s)
            actions.append(a)
            rewards.append(res.reward)
            dones.append(res.done)
            ctx.advance_rtg(res.reward)
            s = res.next_state
            done = res.done
        return Trajectory.from_steps(states, actions, rewards, dones)

    def collect_epoch(self, env, min_steps: int, rtg_rollout: float, t_eval: int,
                      explore_noise: float = 0.0,
                      noise_kind: str = "gaussian") -> list[Trajectory]:
        """Episodes until the cumulative step count reaches min_steps
        (min_steps=1 is the one-trajectory-per-epoch regime)."""
        out = []
        steps = 0
        while steps < min_steps:
            traj = self.collect_episode(env, rtg_rollout, t_eval, explore_noise,
                                        noise_kind)
            out.append(traj)
            steps += len(traj)
        return out

    # -- TD3 target machinery ----------------------------------------------

    def target_q_batch(self, batch, gamma: float, policy_noise: float,
                       noise_clip: float, single_critic: bool = False,
                       literal_eq3: bool = False) -> np.ndarray:
        """Eq.-style TD targets per position, (B, T).

        The target policy acts on the shifted next-state context; its action
        gets clipped Gaussian smoothing noise, then the smaller of the two
        target critics (or a single one in DDPG mode) evaluates the next
        state.  With literal_eq3 the target critics read the current state
        instead, reproducing the printed form of the critic target.
        """
        tcfg = self.cfg.transformer
        with ad.no_grad():
            mu = self.policy_forward(self.target_policy, batch.next_states,
                                     batch.next_actions, batch.next_rtgs,
                                     batch.next_timesteps, batch.next_mask).data
            if policy_noise > 0.0:
                eps = self.rngs["smooth"].normal(0.0, policy_noise, size=mu.shape)
                eps = np.clip(eps, -noise_clip, noise_clip)
            else:
                eps = 0.0
            a_tar = np.clip(mu + eps, tcfg.action_low, tcfg.action_high)
            s_tar = batch.states if literal_eq3 else batch.next_states
            q1 = self.critic_forward(self.target_critic1, s_tar, a_tar).data[..., 0]
            if single_critic:
                q_min = q1
            else:
                q2 = self.critic_forward(self.target_critic2, s_tar, a_tar).data[..., 0]
                q_min = np.minimum(q1, q2)
        return batch.rewards + gamma * (1.0 - batch.dones) * q_min

    def polyak_update(self):
        """theta_tar <- (1 - tau) theta_tar + tau theta for every target."""
        tau = self.cfg.tau
        for live, tar in ((self.policy, self.target_policy),
                          (self.critic1, self.target_critic1),
                          (self.critic2, self.target_critic2)):
            if live.flat_data is not None and tar.flat_data is not None:
                tar.flat_data *= 1.0 - tau
                tar.flat_data += tau * live.flat_data
            else:
                for p, q in zip(live, tar, strict=True):
                    q.data *= 1.0 - tau
                    q.data += tau * p.data

    # -- checkpointing -------------------------------------------------------

    def save(self, path):
        state = {
            "version": CHECKPOINT_VERSION,
            "params": {
                "policy": self.policy.state_dict(),
                "critic1": self.critic1.state_dict(),
                "critic2": self.critic2.state_dict(),
                "target_policy": self.target_policy.state_dict(),
                "target_critic1": self.target_critic1.state_dict(),
                "target_critic2": self.target_critic2.state_dict(),
            },
            "opts": {
                "actor": self.opt_actor.state_dict(),
                "critic1": self.opt_critic1.state_dict(),
                "critic2": self.opt_critic2.state_dict(),
            },
            "normalizer": (self.normalizer.mean.copy(), self.normalizer.std.copy()),
            "rngs": {k: g.bit_generator.state for k, g in self.rngs.items()},
            "counters": (self.actor_steps, self.critic_steps),
        }
        with open(path, "wb") as f:
            pickle.dump(state, f)

    def load(self, path):
        with open(path, "rb") as f:
            state = pickle.load(f)
        if state["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {state['version']}")
        self.policy.load_state_dict(state["params"]["policy"])
        self.critic1.load_state_dict(state["params"]["critic1"])
        self.critic2.load_state_dict(state["params"]["critic2"])
        self.target_policy.load_state_dict(state["params"]["target_policy"])
        self.target_critic1.load_state_dict(state["params"]["target_critic1"])
        self.target_critic2.load_state_dict(state["params"]["target_critic2"])
        self.opt_actor.load_state_dict(state["opts"]["actor"])
        self.opt_critic1.load_state_dict(state["opts"]["critic1"])
        self.opt_critic2.load_state_dict(state["opts"]["critic2"])
        mean, std = state["normalizer"]
        self.normalizer = StateNormalizer(mean, std)
        for k, g in self.rngs.items():
            g.bit_generator.state = state["rngs"][k]
        self.actor_steps, self.critic_steps = state["counters"]

"""Losses and the offline-pretrain / online-finetune loops.

The actor minimizes the masked mean over segment positions of
``-alpha * Q1(s_t, mu(ctx_t)) + sup * |mu(ctx_t) - a_t|^2``; the critics fit
TD targets built by the agent's target networks.  Updates interleave as
(critic, critic, actor) by default, matching the delayed-update ratio.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .agent import Agent
from .autodiff import ParamSet, backward
from .data import ReplayBuffer, TrainingBatch, normalize_states, sample_batch
from .optim import optimizer_step


@dataclass
class TrainConfig:
    rtg_eval: float = 1.0
    rtg_rollout: float = 1.0
    alpha_pretrain: float = 0.0
    alpha_online: float = 0.1
    sup_pretrain: float = 1.0
    sup_online: float = 1.0
    use_critic: bool = True
    gamma: float = 0.99
    batch_size: int = 256
    critic_updates_per_epoch: int = 600
    actor_updates_per_epoch: int = 300
    T_train: int = 20
    T_eval: int = 5
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    weight_decay: float = 0.0
    optimizer: str = "adam"
    warmup_steps: int = 0
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    explore_noise: float = 0.1
    noise_kind: str = "gaussian"
    tau: float = 0.005
    pretrain_steps: int = 1000
    online_max_env_steps: int = 10000
    min_steps_per_epoch: int = 1000
    eval_episodes: int = 10
    kl_coeff: float = 0.0
    curriculum_rtg: bool = False
    single_critic: bool = False
    literal_eq3: bool = False
    buffer_capacity: int = 1000
    keep_top_by_return: bool = False
    bandit_schedule: bool = False

    def __post_init__(self):
        if self.alpha_pretrain < 0 or self.alpha_online < 0:
            raise ValueError("alpha must be nonnegative")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        for name in ("batch_size", "critic_updates_per_epoch", "actor_updates_per_epoch",
                     "T_train", "T_eval", "pretrain_steps", "online_max_env_steps",
                     "min_steps_per_epoch", "eval_episodes", "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.T_eval > self.T_train:
            raise ValueError("T_eval must not exceed T_train (the model context)")
        if self.use_critic and self.critic_updates_per_epoch % self.actor_updates_per_epoch:
            raise ValueError("critic updates per epoch must be a multiple of actor updates")

    @property
    def actor_delay(self) -> int:
        if not self.use_critic:
            return 1
        return self.critic_updates_per_epoch // self.actor_updates_per_epoch


def effective_mechanics(cfg: TrainConfig) -> dict:
    """Resolved update-rule switches, echoed with run outputs."""
    return {
        "critic_enabled": cfg.use_critic,
        "uses_min_target": cfg.use_critic and not cfg.single_critic,
        "policy_smoothing": cfg.use_critic and cfg.policy_noise > 0.0,
        "actor_delay": cfg.actor_delay,
        "alpha_online": cfg.alpha_online,
        "sup_online": cfg.sup_online,
    }


@dataclass
class EpochMetrics:
    epoch: int
    env_steps: int
    grad_steps: int
    eval_mean: float
    eval_std: float
    actor_loss: float
    critic_loss: float
    mean_q: float
    seed: int
    wall_time: float = 0.0


CSV_FIELDS = ("epoch", "env_steps", "grad_steps", "eval_mean", "eval_std",
              "actor_loss", "critic_loss", "mean_q", "seed")


def write_metrics_csv(path, rows: list[EpochMetrics]):
    """One row per epoch; floats at shortest round-trip precision."""
    with open(path, "w") as f:
        f.write(",".join(CSV_FIELDS) + "\n")
        for r in rows:
            vals = []
            for name in CSV_FIELDS:
                v = getattr(r, name)
                vals.append(repr(v) if isinstance(v, float) else str(v))
            f.write(",".join(vals) + "\n")


# ---------------------------------------------------------------------------
# losses


def odt_loss(agent: Agent, batch: TrainingBatch, params: ParamSet | None = None,
             train: bool = False):
    """Masked mean squared action-regression error of the policy."""
    if not np.any(batch.mask):
        raise ValueError("odt_loss: segment batch is entirely padding")
    out = agent.policy_forward(params or agent.policy, batch.states, batch.actions,
                               batch.rtgs, batch.timesteps, batch.mask, train=train)
    err = ad.sub(out, ad.constant(batch.actions))
    return ad.masked_mean(ad.sum_last(ad.mul(err, err)), batch.mask)


def mixed_actor_loss(agent: Agent, batch: TrainingBatch, alpha: float,
                     sup_coeff: float = 1.0, kl_coeff: float = 0.0,
                     pretrain_policy: ParamSet | None = None, train: bool = False):
    """Supervised regression plus -alpha times the critic's value of the
    policy action; the critic weights are frozen so only the action input
    carries gradient.  Optional pull toward a frozen pretrain policy."""
    if not np.any(batch.mask):
        raise ValueError("mixed_actor_loss: segment batch is entirely padding")
    out = agent.policy_forward(agent.policy, batch.states, batch.actions,
                               batch.rtgs, batch.timesteps, batch.mask, train=train)
    err = ad.sub(out, ad.constant(batch.actions))
    loss = ad.scale(ad.masked_mean(ad.sum_last(ad.mul(err, err)), batch.mask), sup_coeff)
    if alpha != 0.0:
        q = agent.critic_on_action_tensor(agent.critic1, batch.states, out)
        q_term = ad.masked_mean(ad.reshape(q, q.data.shape[:-1]), batch.mask)
        loss = ad.add(loss, ad.scale(q_term, -alpha))
    if kl_coeff != 0.0:
        if pretrain_policy is None:
            raise ValueError("kl regularizer needs the frozen pretrain policy")
        with ad.no_grad():
            a_old = agent.policy_forward(pretrain_policy, batch.states, batch.actions,
                                         batch.rtgs, batch.timesteps, batch.mask).data
        kerr = ad.sub(out, ad.constant(a_old))
        loss = ad.add(loss, ad.scale(
            ad.masked_mean(ad.sum_last(ad.mul(kerr, kerr)), batch.mask), kl_coeff))
    return loss


def critic_loss(agent: Agent, batch: TrainingBatch, targets: np.ndarray,
                single_critic: bool = False):
    """Sum over critics of the masked mean squared TD error; targets are
    plain numbers, so no gradient reaches the target networks."""
    q1 = agent.critic_forward(agent.critic1, batch.states, batch.actions)
    d1 = ad.sub(ad.reshape(q1, q1.data.shape[:-1]), ad.constant(targets))
    loss = ad.masked_mean(ad.mul(d1, d1), batch.mask)
    if not single_critic:
        q2 = agent.critic_forward(agent.critic2, batch.states, batch.actions)
        d2 = ad.sub(ad.reshape(q2, q2.data.shape[:-1]), ad.constant(targets))
        loss = ad.add(loss, ad.masked_mean(ad.mul(d2, d2), batch.mask))
    return loss


# ---------------------------------------------------------------------------
# update steps


def _actor_step(agent: Agent, batch: TrainingBatch, cfg: TrainConfig, alpha: float,
                sup_coeff: float, pretrain_policy: ParamSet | None) -> float:
    agent.policy.zero_grads()
    loss = mixed_actor_loss(agent, batch, alpha, sup_coeff, cfg.kl_coeff,
                            pretrain_policy, train=True)
    val = float(loss.data)
    if not np.isfinite(val):
        raise RuntimeError(f"actor loss is not finite ({val}) at grad step "
                           f"{agent.actor_steps + 1}")
    backward(loss)
    optimizer_step(agent.opt_actor, agent.policy)
    agent.actor_steps += 1
    return val


def _critic_step(agent: Agent, batch: TrainingBatch, cfg: TrainConfig) -> tuple[float, float]:
    targets = agent.target_q_batch(batch, cfg.gamma, cfg.policy_noise, cfg.noise_clip,
                                   cfg.single_critic, cfg.literal_eq3)
    agent.critic1.zero_grads()
    agent.critic2.zero_grads()
    loss = critic_loss(agent, batch, targets, cfg.single_critic)
    val = float(loss.data)
    if not np.isfinite(val):
        raise RuntimeError(f"critic loss is not finite ({val}) at grad step "
                           f"{agent.critic_steps + 1}")
    backward(loss)
    optimizer_step(agent.opt_critic1, agent.critic1)
    if not cfg.single_critic:
        optimizer_step(agent.opt_critic2, agent.critic2)
    agent.critic_steps += 1
    with ad.no_grad():
        q = agent.critic_forward(agent.critic1, batch.states, batch.actions).data[..., 0]
    mean_q = float(q[batch.mask.astype(bool)].mean())
    return val, mean_q


def _update_phase(agent: Agent, buffer: ReplayBuffer, cfg: TrainConfig, n_iters: int,
                  alpha: float, sup_coeff: float,
                  pretrain_policy: ParamSet | None = None) -> tuple[float, float, float]:
    """n_iters update iterations: a critic step each (when enabled) and an
    actor step every actor_delay-th.  Polyak follows every critic step.
    Returns mean actor loss, mean critic loss and mean Q over the phase."""
    a_losses, c_losses, qs = [], [], []
    delay = cfg.actor_delay
    for it in range(n_iters):
        batch = sample_batch(buffer, cfg.T_train, cfg.batch_size, agent.rngs["sample"])
        if cfg.use_critic:
            cl, q = _critic_step(agent, batch, cfg)
            c_losses.append(cl)
            qs.append(q)
            agent.polyak_update()
        if not cfg.use_critic or it % delay == delay - 1:
            a_losses.append(_actor_step(agent, batch, cfg, alpha, sup_coeff,
                                        pretrain_policy))
    mean = lambda xs: float(np.mean(xs)) if xs else 0.0
    return mean(a_losses), mean(c_losses), mean(qs)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(agent: Agent, env, n_episodes: int, rtg_eval: float,
             t_eval: int) -> tuple[float, float]:
    """Noise-free rollouts conditioned on rtg_eval; raw return mean/std."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rets = []
    for _ in range(n_episodes):
        traj = agent.collect_episode(env, rtg_eval, t_eval, explore_noise=0.0)
        rets.append(traj.rtg[0])
    rets = np.array(rets)
    return float(rets.mean()), float(rets.std())


def normalized_score(ret: float, ref_random: float, ref_expert: float) -> float:
    """100 * (ret - random) / (expert - random)."""
    return 100.0 * (ret - ref_random) / (ref_expert - ref_random)


# ---------------------------------------------------------------------------
# loops


def pretrain(agent: Agent, dataset, cfg: TrainConfig, seed: int = 0,
             eval_env=None, eval_seed: int | None = None) -> tuple[ReplayBuffer, EpochMetrics]:
    """Offline phase: fill the buffer, fit the state normalizer, run
    pretrain_steps update iterations with the pretrain coefficients."""
    if not dataset.trajectories:
        raise ValueError("pretrain: dataset is empty")
    t0 = time.perf_counter()
    buffer = ReplayBuffer(cfg.buffer_capacity, cfg.keep_top_by_return)
    buffer.extend(dataset.trajectories)
    agent.normalizer = normalize_states(buffer)
    a_loss, c_loss, mean_q = _update_phase(agent, buffer, cfg, cfg.pretrain_steps,
                                           cfg.alpha_pretrain, cfg.sup_pretrain)
    if eval_env is not None:
        if eval_seed is not None:
            eval_env.rng = np.random.default_rng(eval_seed)
        eval_mean, eval_std = evaluate(agent, eval_env, cfg.eval_episodes,
                                       cfg.rtg_eval, cfg.T_eval)
    else:
        eval_mean = eval_std = 0.0
    metrics = EpochMetrics(0, 0, agent.actor_steps + agent.critic_steps,
                           eval_mean, eval_std, a_loss, c_loss, mean_q, seed,
                           time.perf_counter() - t0)
    return buffer, metrics


def finetune(agent: Agent, env, buffer: ReplayBuffer, cfg: TrainConfig,
             eval_env, seed: int = 0, eval_seed: int | None = None) -> list[EpochMetrics]:
    """Online phase: collect, insert, update, evaluate each epoch until the
    environment-step budget runs out."""
    pretrain_policy = agent.policy.clone() if cfg.kl_coeff > 0.0 else None
    rtg_data = buffer.mean_return() if len(buffer) else 0.0
    rows: list[EpochMetrics] = []
    env_steps = 0
    episodes = 0
    epoch = 0
    while env_steps < cfg.online_max_env_steps:
        epoch += 1
        t0 = time.perf_counter()
        if cfg.curriculum_rtg:
            rtg_roll = cfg.rtg_eval - 0.99 ** episodes * (cfg.rtg_eval - rtg_data)
        else:
            rtg_roll = cfg.rtg_rollout
        trajs = agent.collect_epoch(env, cfg.min_steps_per_epoch, rtg_roll,
                                    cfg.T_eval, cfg.explore_noise, cfg.noise_kind)
        episodes += len(trajs)
        env_steps += sum(len(t) for t in trajs)
        buffer.extend(trajs)
        if cfg.bandit_schedule:
            # 2n+4 actor updates in epoch n; the critic keeps its usual
            # delayed-update multiple of that count
            n_iters = (2 * epoch + 4) * cfg.actor_delay
        elif cfg.use_critic:
            n_iters = cfg.critic_updates_per_epoch
        else:
            n_iters = cfg.actor_updates_per_epoch
        a_loss, c_loss, mean_q = _update_phase(agent, buffer, cfg, n_iters,
                                               cfg.alpha_online, cfg.sup_online,
                                               pretrain_policy)
        # same eval seed every epoch: evaluation episodes start from the same
        # states, so the curve is comparable across epochs
        if eval_seed is not None:
            eval_env.rng = np.random.default_rng(eval_seed)
        eval_mean, eval_std = evaluate(agent, eval_env, cfg.eval_episodes,
                                       cfg.rtg_eval, cfg.T_eval)
        rows.append(EpochMetrics(epoch, env_steps,
                                 agent.actor_steps + agent.critic_steps,
                                 eval_mean, eval_std, a_loss, c_loss, mean_q,
                                 seed, time.perf_counter() - t0))
    return rows

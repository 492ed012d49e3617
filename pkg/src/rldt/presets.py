"""Experiment presets and the runnable per-seed experiment."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import Agent, AgentConfig
from .envs import (REF_RETURNS, OfflineDataset, bandit_dataset, generate_offline,
                   load_dataset, make_env)
from .nn import TransformerConfig
from .train import (EpochMetrics, TrainConfig, effective_mechanics, finetune,
                    pretrain, write_metrics_csv)

ALGOS = ("td3+odt", "ddpg+odt", "td3", "ddpg", "odt")


@dataclass
class ModelConfig:
    n_layers: int = 1
    n_heads: int = 2
    embed_dim: int = 64
    dropout_rate: float = 0.1
    init_scale: float = 0.02
    use_positional_embedding: bool = False
    critic_hidden: tuple[int, ...] = (256, 256)
    critic_layernorm: bool = False
    tau: float = 0.005
    rtg_scale: float = 1.0


@dataclass
class DatasetConfig:
    source: str = "bandit"        # bandit | generate | file
    behavior: str = "random"
    n_steps: int = 10000
    literal_interval: bool = False
    path: str = ""


@dataclass
class RunConfig:
    preset: str = "custom"
    algo: str = "td3+odt"
    env: str = "bandit"
    mode: str = "finetune"        # finetune | pretrain-only
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = ""
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algo {self.algo!r}; options: {ALGOS}")
        if self.mode not in ("finetune", "pretrain-only"):
            raise ValueError(f"unknown mode {self.mode!r}")


def bandit_fig2() -> RunConfig:
    """The concealed-peak bandit: 128-sample offline data, 16 online epochs
    of 64 rollouts trained 2n+4 actor steps each, width-64 single-block
    policy, plain Adam at 1e-3 and uniform exploration noise 0.01."""
    train = TrainConfig(
        rtg_eval=1.0, rtg_rollout=1.0,
        alpha_pretrain=0.0, alpha_online=1.0,
        batch_size=32, T_train=1, T_eval=1,
        lr_actor=1e-3, lr_critic=1e-3, weight_decay=0.0,
        explore_noise=0.01, noise_kind="uniform",
        pretrain_steps=20, online_max_env_steps=16 * 64,
        min_steps_per_epoch=64, eval_episodes=1,
        bandit_schedule=True, buffer_capacity=256,
        critic_updates_per_epoch=600, actor_updates_per_epoch=300,
        gamma=0.99,
    )
    model = ModelConfig(dropout_rate=0.0)
    ds = DatasetConfig(source="bandit")
    return RunConfig(preset="bandit-fig2", env="bandit", dataset=ds,
                     model=model, train=train)


def pointmass() -> RunConfig:
    """Multi-step reaching task from a random-quality dataset."""
    train = TrainConfig(
        rtg_eval=-40.0, rtg_rollout=-80.0,
        alpha_pretrain=0.0, alpha_online=0.1,
        batch_size=64, T_train=4, T_eval=2,
        lr_actor=1e-3, lr_critic=1e-3, weight_decay=0.0,
        explore_noise=0.1, noise_kind="gaussian",
        pretrain_steps=1000, online_max_env_steps=15000,
        min_steps_per_epoch=1000, eval_episodes=6,
        buffer_capacity=60,
        critic_updates_per_epoch=300, actor_updates_per_epoch=150,
        gamma=0.99,
    )
    model = ModelConfig(rtg_scale=0.02, critic_hidden=(128, 128))
    ds = DatasetConfig(source="generate", behavior="random", n_steps=10000)
    return RunConfig(preset="pointmass", env="pointmass", dataset=ds,
                     model=model, train=train)


PRESETS = {"bandit-fig2": bandit_fig2, "pointmass": pointmass}


def apply_algo(cfg: RunConfig, algo: str) -> RunConfig:
    """Resolve the algorithm variant into trainer switches."""
    t = cfg.train
    cfg.algo = algo
    if algo == "odt":
        t.use_critic = False
        t.alpha_pretrain = 0.0
        t.alpha_online = 0.0
        t.sup_pretrain = 1.0
        t.sup_online = 1.0
        return cfg
    t.use_critic = True
    if algo in ("ddpg+odt", "ddpg"):
        t.single_critic = True
        t.policy_noise = 0.0
        t.critic_updates_per_epoch = t.actor_updates_per_epoch
    if algo in ("td3", "ddpg"):
        # pure RL online; offline pretraining of the actor stays supervised
        t.sup_online = 0.0
        t.alpha_online = 1.0
    return cfg


def make_run_config(preset: str, algo: str | None = None) -> RunConfig:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; options: {sorted(PRESETS)}")
    cfg = PRESETS[preset]()
    return apply_algo(cfg, algo or cfg.algo)


def resolve_dataset(cfg: RunConfig, seed: int) -> OfflineDataset:
    d = cfg.dataset
    if d.source == "bandit":
        return bandit_dataset(seed, literal_interval=d.literal_interval)
    if d.source == "generate":
        env = make_env(cfg.env, seed=seed + 901)
        return generate_offline(env, d.behavior, d.n_steps, seed=seed + 902)
    if d.source == "file":
        return load_dataset(d.path)
    raise ValueError(f"unknown dataset source {d.source!r}")


def build_agent(cfg: RunConfig, seed: int) -> Agent:
    env = make_env(cfg.env, seed=0)
    m = cfg.model
    tcfg = TransformerConfig(
        state_dim=env.spec.state_dim, action_dim=env.spec.action_dim,
        action_low=env.spec.action_low, action_high=env.spec.action_high,
        n_layers=m.n_layers, n_heads=m.n_heads, embed_dim=m.embed_dim,
        dropout_rate=m.dropout_rate, context_len=cfg.train.T_train,
        use_positional_embedding=m.use_positional_embedding,
    )
    acfg = AgentConfig(tcfg, critic_hidden=tuple(m.critic_hidden),
                       critic_layernorm=m.critic_layernorm, tau=m.tau,
                       rtg_scale=m.rtg_scale, init_scale=m.init_scale)
    return Agent(acfg, seed, lr_actor=cfg.train.lr_actor,
                 lr_critic=cfg.train.lr_critic,
                 weight_decay=cfg.train.weight_decay,
                 optimizer=cfg.train.optimizer,
                 warmup_steps=cfg.train.warmup_steps)


@dataclass
class SeedResult:
    seed: int
    rows: list[EpochMetrics]
    initial_eval: float
    final_eval: float
    best_eval: float


def run_seed(cfg: RunConfig, seed: int, out_dir: Path | None = None) -> SeedResult:
    """Pretrain + finetune one seed; optionally write csv and checkpoint."""
    cfg.validate()
    agent = build_agent(cfg, seed)
    dataset = resolve_dataset(cfg, seed)
    env = make_env(cfg.env, seed=seed + 11)
    eval_env = make_env(cfg.env, seed=seed + 12)
    buffer, row0 = pretrain(agent, dataset, cfg.train, seed, eval_env,
                            eval_seed=seed + 13)
    rows = [row0]
    if cfg.mode == "finetune":
        rows += finetune(agent, env, buffer, cfg.train, eval_env, seed,
                         eval_seed=seed + 13)
    evals = [r.eval_mean for r in rows]
    result = SeedResult(seed, rows, evals[0], evals[-1], max(evals[1:] or evals))
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out_dir / f"metrics_seed{seed}.csv", rows)
        agent.save(out_dir / f"checkpoint_seed{seed}.pkl")
    return result


def config_json(cfg: RunConfig) -> str:
    """Resolved config plus update-mechanics diagnostics, stable layout."""
    blob = dataclasses.asdict(cfg)
    blob["mechanics"] = effective_mechanics(cfg.train)
    return json.dumps(blob, indent=2, sort_keys=True, default=list)


def summary_lines(label: str, results: list[SeedResult],
                  ref: tuple[float, float] | None = None) -> list[str]:
    """Per-seed and aggregate rows in the final(+delta) table style."""
    out = []
    finals = np.array([r.final_eval for r in results])
    initials = np.array([r.initial_eval for r in results])
    bests = np.array([r.best_eval for r in results])

    def fmt(final, delta):
        if ref is not None:
            lo, hi = ref
            final = 100.0 * (final - lo) / (hi - lo)
            delta = 100.0 * delta / (hi - lo)
        return f"{final:.1f}({delta:+.1f})"

    for r in results:
        out.append(f"{label},{r.seed},{fmt(r.final_eval, r.final_eval - r.initial_eval)},"
                   f"{r.final_eval!r},{r.initial_eval!r},{r.best_eval!r}")
    out.append(f"{label},mean,{fmt(float(finals.mean()), float((finals - initials).mean()))},"
               f"{float(finals.mean())!r},{float(initials.mean())!r},{float(bests.mean())!r}")
    return out

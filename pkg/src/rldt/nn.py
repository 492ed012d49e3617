"""Model definitions: causal decision-transformer policy and MLP critic.

Both are plain functions over a ParamSet so the same code serves live and
target networks.  All forwards are float64 and deterministic unless a
dropout rng is supplied with train=True.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor


@dataclass
class TransformerConfig:
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    n_layers: int = 1
    n_heads: int = 2
    embed_dim: int = 64
    dropout_rate: float = 0.1
    context_len: int = 20
    use_positional_embedding: bool = False
    max_timestep: int = 1024

    def __post_init__(self):
        self.action_low = np.asarray(self.action_low, dtype=np.float64)
        self.action_high = np.asarray(self.action_high, dtype=np.float64)
        if self.n_layers < 1 or self.n_heads < 1 or self.embed_dim < 1:
            raise ValueError("n_layers, n_heads and embed_dim must be positive")
        if self.embed_dim % self.n_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.context_len < 1:
            raise ValueError("context_len must be positive")
        if self.action_low.shape != (self.action_dim,) or self.action_high.shape != (
            self.action_dim,
        ):
            raise ValueError("action bounds must have shape (action_dim,)")
        if not np.all(self.action_low < self.action_high):
            raise ValueError("action_low must be elementwise below action_high")

    @property
    def action_mid(self) -> np.ndarray:
        return 0.5 * (self.action_low + self.action_high)

    @property
    def action_half(self) -> np.ndarray:
        return 0.5 * (self.action_high - self.action_low)


@dataclass
class MLPConfig:
    in_dim: int
    out_dim: int
    hidden: tuple[int, ...] = (256, 256)
    activation: str = "relu"
    layernorm: bool = False

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("all layer widths must be positive")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")


def init_mlp(cfg: MLPConfig, rng: np.random.Generator) -> ParamSet:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init for weights and biases."""
    params = ParamSet()
    widths = [cfg.in_dim, *cfg.hidden, cfg.out_dim]
    for i in range(len(widths) - 1):
        fan_in = widths[i]
        bound = 1.0 / np.sqrt(fan_in)
        params.add(f"l{i}.W", rng.uniform(-bound, bound, size=(widths[i], widths[i + 1])))
        params.add(f"l{i}.b", rng.uniform(-bound, bound, size=widths[i + 1]))
        if cfg.layernorm and i < len(widths) - 2:
            params.add(f"l{i}.ln.g", np.ones(widths[i + 1]))
            params.add(f"l{i}.ln.b", np.zeros(widths[i + 1]))
    return params


def mlp_forward(params: ParamSet, cfg: MLPConfig, x, frozen: bool = False) -> Tensor:
    """Forward the affine/activation stack.

    x may be a Tensor or an array of shape (..., in_dim).  With frozen=True
    the parameters are treated as constants so no gradient reaches them
    (used when the actor loss differentiates through the critic's action
    input only).
    """
    if not isinstance(x, Tensor):
        x = ad.constant(x)
    if x.data.shape[-1] != cfg.in_dim:
        raise ValueError(
            f"mlp_forward: input dim {x.data.shape[-1]} does not match "
            f"configured in_dim {cfg.in_dim}"
        )
    wrap = ad.use_frozen if frozen else ad.use
    act = ad.relu if cfg.activation == "relu" else ad.tanh
    n_layers = len(cfg.hidden) + 1
    for i in range(n_layers):
        x = ad.linear(x, wrap(params[f"l{i}.W"]), wrap(params[f"l{i}.b"]))
        if i < n_layers - 1:
            x = act(x)
            if cfg.layernorm:
                x = ad.layernorm(x, wrap(params[f"l{i}.ln.g"]), wrap(params[f"l{i}.ln.b"]))
    return x


def init_transformer(
    cfg: TransformerConfig, rng: np.random.Generator, init_scale: float = 0.02
) -> ParamSet:
    """GPT-style init: N(0, init_scale) weights, zero biases, unit LN gains."""
    d = cfg.embed_dim

    def w(*shape):
        return rng.normal(0.0, init_scale, size=shape)

    params = ParamSet()
    params.add("embed_rtg.W", w(1, d))
    params.add("embed_rtg.b", np.zeros(d))
    params.add("embed_state.W", w(cfg.state_dim, d))
    params.add("embed_state.b", np.zeros(d))
    params.add("embed_action.W", w(cfg.action_dim, d))
    params.add("embed_action.b", np.zeros(d))
    if cfg.use_positional_embedding:
        params.add("embed_timestep.table", w(cfg.max_timestep, d))
    params.add("embed_ln.g", np.ones(d))
    params.add("embed_ln.b", np.zeros(d))
    for i in range(cfg.n_layers):
        pre = f"block{i}"
        params.add(f"{pre}.ln1.g", np.ones(d))
        params.add(f"{pre}.ln1.b", np.zeros(d))
        # keys carry no bias: a constant key offset shifts every score in a
        # softmax row equally, so such a bias cannot affect the output
        for name in ("Wq", "Wk", "Wv", "Wo"):
            params.add(f"{pre}.attn.{name}", w(d, d))
        for name in ("bq", "bv", "bo"):
            params.add(f"{pre}.attn.{name}", np.zeros(d))
        params.add(f"{pre}.ln2.g", np.ones(d))
        params.add(f"{pre}.ln2.b", np.zeros(d))
        params.add(f"{pre}.mlp.W1", w(d, 4 * d))
        params.add(f"{pre}.mlp.b1", np.zeros(4 * d))
        params.add(f"{pre}.mlp.W2", w(4 * d, d))
        params.add(f"{pre}.mlp.b2", np.zeros(d))
    params.add("ln_f.g", np.ones(d))
    params.add("ln_f.b", np.zeros(d))
    params.add("head.W", w(d, cfg.action_dim))
    params.add("head.b", np.zeros(cfg.action_dim))
    return params


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, t, d = x.data.shape
    return ad.transpose(ad.reshape(x, (b, t, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.data.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def token_mask(step_mask: np.ndarray) -> np.ndarray:
    """Allowed-attention mask over the 3T token stream of a step mask (B, T).

    Token j may be attended from token i when j <= i (causal) and j is a
    real (unpadded) token; every token may attend to itself so padded rows
    never softmax over an empty set.
    """
    b, t = step_mask.shape
    n = 3 * t
    valid = np.repeat(step_mask.astype(bool), 3, axis=1)
    causal = np.tril(np.ones((n, n), dtype=bool))
    allowed = causal[None, :, :] & valid[:, None, :]
    diag = np.arange(n)
    allowed[:, diag, diag] = True
    return allowed.astype(np.uint8)


def dt_forward_batch(
    params: ParamSet,
    cfg: TransformerConfig,
    states: np.ndarray,
    actions: np.ndarray,
    rtgs: np.ndarray,
    timesteps: np.ndarray,
    mask: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Actions predicted at every step's state token; shape (B, T, action_dim).

    Inputs are (B, T, ...) arrays; mask marks real steps (left padding is
    False).  Position t sees tokens (rtg, state) of steps <= t and actions
    of steps < t; its own action token is causally hidden, so the action
    column may contain anything at the current step.
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    rtgs = np.asarray(rtgs, dtype=np.float64)
    mask = np.asarray(mask)
    if states.ndim != 3 or states.shape[1] == 0:
        raise ValueError("dt_forward: segment must contain at least one step")
    b, t, _ = states.shape
    if t > cfg.context_len:
        raise ValueError(
            f"dt_forward: segment length {t} exceeds context_len {cfg.context_len}"
        )
    if train and cfg.dropout_rate > 0.0 and rng is None:
        raise ValueError("training forward with dropout needs an rng")

    r_e = ad.linear(ad.constant(rtgs[..., None]), ad.use(params["embed_rtg.W"]),
                    ad.use(params["embed_rtg.b"]))
    s_e = ad.linear(ad.constant(states), ad.use(params["embed_state.W"]),
                    ad.use(params["embed_state.b"]))
    a_e = ad.linear(ad.constant(actions), ad.use(params["embed_action.W"]),
                    ad.use(params["embed_action.b"]))
    if cfg.use_positional_embedding:
        idx = np.minimum(np.asarray(timesteps, dtype=np.int64), cfg.max_timestep - 1)
        pos = ad.gather_rows(ad.use(params["embed_timestep.table"]), idx)
        r_e = ad.add(r_e, pos)
        s_e = ad.add(s_e, pos)
        a_e = ad.add(a_e, pos)

    x = ad.interleave3(r_e, s_e, a_e)
    x = ad.layernorm(x, ad.use(params["embed_ln.g"]), ad.use(params["embed_ln.b"]))
    allowed = token_mask(mask)

    drop = cfg.dropout_rate if train else 0.0
    for i in range(cfg.n_layers):
        pre = f"block{i}"
        h = ad.layernorm(x, ad.use(params[f"{pre}.ln1.g"]), ad.use(params[f"{pre}.ln1.b"]))
        q = _split_heads(ad.linear(h, ad.use(params[f"{pre}.attn.Wq"]),
                                   ad.use(params[f"{pre}.attn.bq"])), cfg.n_heads)
        k = _split_heads(ad.matmul3(h, ad.use(params[f"{pre}.attn.Wk"])), cfg.n_heads)
        v = _split_heads(ad.linear(h, ad.use(params[f"{pre}.attn.Wv"]),
                                   ad.use(params[f"{pre}.attn.bv"])), cfg.n_heads)
        att = _merge_heads(ad.attention(q, k, v, allowed))
        att = ad.linear(att, ad.use(params[f"{pre}.attn.Wo"]),
                        ad.use(params[f"{pre}.attn.bo"]))
        if drop > 0.0:
            att = ad.dropout(att, drop, rng)
        x = ad.add(x, att)
        h = ad.layernorm(x, ad.use(params[f"{pre}.ln2.g"]), ad.use(params[f"{pre}.ln2.b"]))
        h = ad.relu(ad.linear(h, ad.use(params[f"{pre}.mlp.W1"]),
                              ad.use(params[f"{pre}.mlp.b1"])))
        h = ad.linear(h, ad.use(params[f"{pre}.mlp.W2"]), ad.use(params[f"{pre}.mlp.b2"]))
        if drop > 0.0:
            h = ad.dropout(h, drop, rng)
        x = ad.add(x, h)

    x = ad.layernorm(x, ad.use(params["ln_f.g"]), ad.use(params["ln_f.b"]))
    state_tokens = ad.strided_tokens(x, 1, 3)
    z = ad.linear(state_tokens, ad.use(params["head.W"]), ad.use(params["head.b"]))
    out = ad.add(ad.mul(ad.tanh(z), ad.constant(cfg.action_half)),
                 ad.constant(cfg.action_mid))
    return out


def dt_forward(params: ParamSet, cfg: TransformerConfig, segment) -> np.ndarray:
    """Deterministic single-segment forward; returns a (T, action_dim) array."""
    with ad.no_grad():
        out = dt_forward_batch(
            params, cfg,
            segment.states[None], segment.actions[None], segment.rtgs[None],
            segment.timesteps[None], segment.mask[None],
        )
    return out.data[0]

import numpy as np
import pytest

from rldt import autodiff as ad
from rldt.data import Segment
from rldt.nn import (MLPConfig, TransformerConfig, dt_forward, dt_forward_batch,
                     init_mlp, init_transformer, mlp_forward, token_mask)


def small_cfg(**kw):
    base = dict(state_dim=3, action_dim=2, action_low=[-1.0, -1.0],
                action_high=[1.0, 1.0], n_layers=1, n_heads=2, embed_dim=16,
                dropout_rate=0.0, context_len=4)
    base.update(kw)
    return TransformerConfig(**base)


def seeded_inputs(cfg, B=2, T=4, seed=5):
    r = np.random.default_rng(seed)
    states = r.normal(size=(B, T, cfg.state_dim))
    actions = r.uniform(-1, 1, (B, T, cfg.action_dim))
    rtgs = r.normal(size=(B, T))
    ts = np.tile(np.arange(T), (B, 1))
    mask = np.ones((B, T), dtype=bool)
    return states, actions, rtgs, ts, mask


class TestMLP:
    def test_identity_linear_layer(self):
        cfg = MLPConfig(in_dim=2, out_dim=2, hidden=())
        params = ad.ParamSet({"l0.W": np.eye(2), "l0.b": np.zeros(2)})
        out = mlp_forward(params, cfg, np.array([1.0, 2.0]))
        assert np.array_equal(out.data, [1.0, 2.0])

    def test_zero_weights_give_zero(self):
        cfg = MLPConfig(in_dim=3, out_dim=2, hidden=(4,))
        params = init_mlp(cfg, np.random.default_rng(0))
        for p in params:
            p.data[...] = 0.0
        out = mlp_forward(params, cfg, np.array([5.0, -1.0, 2.0]))
        assert np.array_equal(out.data, np.zeros(2))

    def test_matches_straight_line_oracle(self):
        cfg = MLPConfig(in_dim=4, out_dim=1, hidden=(256, 256))
        params = init_mlp(cfg, np.random.default_rng(7))
        x = np.random.default_rng(8).normal(size=(5, 4))
        out = mlp_forward(params, cfg, x).data
        # hand-rolled matrix multiplies
        h = x
        for i in range(3):
            h = h @ params[f"l{i}.W"].data + params[f"l{i}.b"].data
            if i < 2:
                h = np.maximum(h, 0.0)
        assert np.allclose(out, h, atol=1e-12)

    def test_layernorm_after_each_hidden_activation(self):
        cfg = MLPConfig(in_dim=2, out_dim=1, hidden=(8, 8), layernorm=True)
        params = init_mlp(cfg, np.random.default_rng(1))
        assert "l0.ln.g" in params and "l1.ln.g" in params and "l2.ln.g" not in params._params
        out = mlp_forward(params, cfg, np.ones((3, 2)))
        assert out.data.shape == (3, 1)

    def test_dimension_error(self):
        cfg = MLPConfig(in_dim=3, out_dim=1, hidden=())
        params = init_mlp(cfg, np.random.default_rng(0))
        with pytest.raises(ValueError, match="in_dim"):
            mlp_forward(params, cfg, np.ones((2, 5)))

    def test_frozen_params_get_no_grad(self):
        cfg = MLPConfig(in_dim=2, out_dim=1, hidden=(4,))
        params = init_mlp(cfg, np.random.default_rng(0))
        out = mlp_forward(params, cfg, np.ones((3, 2)), frozen=True)
        ad.backward(ad.mean_all(out))
        assert all(np.all(p.grad == 0.0) for p in params)


class TestTransformer:
    def test_config_validation(self):
        with pytest.raises(ValueError, match="divisible"):
            small_cfg(embed_dim=10, n_heads=4)
        with pytest.raises(ValueError, match="action_low"):
            small_cfg(action_low=[1.0, 1.0], action_high=[-1.0, -1.0])

    def test_zero_params_give_bounds_midpoint(self):
        cfg = small_cfg(action_low=[0.0, -2.0], action_high=[1.0, 6.0])
        params = init_transformer(cfg, np.random.default_rng(0))
        for p in params:
            if not p.name.endswith(".g"):
                p.data[...] = 0.0
        out = dt_forward_batch(params, cfg, *seeded_inputs(cfg))
        assert np.allclose(out.data[..., 0], 0.5)
        assert np.allclose(out.data[..., 1], 2.0)

    def test_causality_future_and_own_action(self):
        cfg = small_cfg()
        params = init_transformer(cfg, np.random.default_rng(3), init_scale=0.2)
        states, actions, rtgs, ts, mask = seeded_inputs(cfg)
        base = dt_forward_batch(params, cfg, states, actions, rtgs, ts, mask).data
        # perturb everything at position 2 and after
        s2, a2, g2 = states.copy(), actions.copy(), rtgs.copy()
        s2[:, 2:] += 3.0
        a2[:, 2:] = -a2[:, 2:]
        g2[:, 2:] -= 5.0
        out2 = dt_forward_batch(params, cfg, s2, a2, g2, ts, mask).data
        assert np.array_equal(base[:, :2], out2[:, :2])
        # perturb only the action at position t: prediction at t unchanged
        a3 = actions.copy()
        a3[:, 1, :] = 0.99
        out3 = dt_forward_batch(params, cfg, states, a3, rtgs, ts, mask).data
        assert np.array_equal(base[:, 1], out3[:, 1])
        assert not np.array_equal(base[:, 2], out3[:, 2])

    def test_matches_naive_attention_oracle(self):
        """Step-by-step single-head-at-a-time reimplementation, 3-step segment."""
        cfg = small_cfg(n_layers=1, n_heads=2, embed_dim=8, context_len=3)
        params = init_transformer(cfg, np.random.default_rng(11), init_scale=0.3)
        states, actions, rtgs, ts, mask = seeded_inputs(cfg, B=1, T=3, seed=12)
        got = dt_forward_batch(params, cfg, states, actions, rtgs, ts, mask).data[0]

        def ln(x, g, b, eps=1e-5):
            mu = x.mean(-1, keepdims=True)
            var = ((x - mu) ** 2).mean(-1, keepdims=True)
            return (x - mu) / np.sqrt(var + eps) * g + b

        P = {p.name: p.data for p in params}
        tokens = []
        for t in range(3):
            tokens.append(rtgs[0, t:t + 1] @ P["embed_rtg.W"] + P["embed_rtg.b"])
            tokens.append(states[0, t] @ P["embed_state.W"] + P["embed_state.b"])
            tokens.append(actions[0, t] @ P["embed_action.W"] + P["embed_action.b"])
        x = ln(np.stack(tokens), P["embed_ln.g"], P["embed_ln.b"])

        h = ln(x, P["block0.ln1.g"], P["block0.ln1.b"])
        q = h @ P["block0.attn.Wq"] + P["block0.attn.bq"]
        k = h @ P["block0.attn.Wk"]
        v = h @ P["block0.attn.Wv"] + P["block0.attn.bv"]
        att = np.zeros_like(h)
        dh = 4
        for head in range(2):
            sl = slice(head * dh, (head + 1) * dh)
            for i in range(9):
                scores = np.array([q[i, sl] @ k[j, sl] / np.sqrt(dh)
                                   for j in range(i + 1)])
                w = np.exp(scores - scores.max())
                w /= w.sum()
                att[i, sl] = sum(w[j] * v[j, sl] for j in range(i + 1))
        x = x + att @ P["block0.attn.Wo"] + P["block0.attn.bo"]
        hh = ln(x, P["block0.ln2.g"], P["block0.ln2.b"])
        hh = np.maximum(hh @ P["block0.mlp.W1"] + P["block0.mlp.b1"], 0.0)
        x = x + hh @ P["block0.mlp.W2"] + P["block0.mlp.b2"]
        x = ln(x, P["ln_f.g"], P["ln_f.b"])
        z = x[1::3] @ P["head.W"] + P["head.b"]
        want = cfg.action_mid + cfg.action_half * np.tanh(z)
        assert np.allclose(got, want, atol=1e-10)

    def test_actions_respect_bounds(self):
        cfg = small_cfg(action_low=[-0.3, 0.1], action_high=[0.4, 0.2])
        params = init_transformer(cfg, np.random.default_rng(4), init_scale=2.0)
        out = dt_forward_batch(params, cfg, *seeded_inputs(cfg)).data
        assert np.all(out >= cfg.action_low - 1e-15)
        assert np.all(out <= cfg.action_high + 1e-15)

    def test_deterministic_with_dropout_disabled(self):
        cfg = small_cfg(dropout_rate=0.5)
        params = init_transformer(cfg, np.random.default_rng(5))
        inputs = seeded_inputs(cfg)
        a = dt_forward_batch(params, cfg, *inputs, train=False).data
        b = dt_forward_batch(params, cfg, *inputs, train=False).data
        assert np.array_equal(a, b)
        c = dt_forward_batch(params, cfg, *inputs, train=True,
                             rng=np.random.default_rng(0)).data
        assert not np.array_equal(a, c)

    def test_empty_segment_rejected(self):
        cfg = small_cfg()
        params = init_transformer(cfg, np.random.default_rng(0))
        with pytest.raises(ValueError, match="at least one step"):
            dt_forward_batch(params, cfg, np.zeros((1, 0, 3)), np.zeros((1, 0, 2)),
                             np.zeros((1, 0)), np.zeros((1, 0)), np.zeros((1, 0)))

    def test_context_len_cap(self):
        cfg = small_cfg(context_len=2)
        params = init_transformer(cfg, np.random.default_rng(0))
        with pytest.raises(ValueError, match="exceeds context_len"):
            dt_forward_batch(params, cfg, *seeded_inputs(cfg, T=4))

    def test_left_padding_ignored(self):
        """A padded short segment predicts like the unpadded one."""
        cfg = small_cfg()
        params = init_transformer(cfg, np.random.default_rng(6), init_scale=0.2)
        states, actions, rtgs, ts, _ = seeded_inputs(cfg, B=1, T=4)
        full_mask = np.ones((1, 4), dtype=bool)
        out_full = dt_forward_batch(params, cfg, states, actions, rtgs, ts,
                                    full_mask).data
        # same last two steps, left-padded with garbage
        pad_states = states.copy()
        pad_states[:, :2] = 123.0
        pad_actions = actions.copy()
        pad_actions[:, :2] = -0.5
        mask = np.array([[False, False, True, True]])
        out_pad = dt_forward_batch(params, cfg, pad_states, pad_actions, rtgs,
                                   ts, mask).data
        short = dt_forward_batch(params, cfg, states[:, 2:], actions[:, 2:],
                                 rtgs[:, 2:], ts[:, 2:],
                                 np.ones((1, 2), dtype=bool)).data
        assert np.allclose(out_pad[:, 2:], short, atol=1e-12)
        assert not np.allclose(out_full[:, 2:], short, atol=1e-6)

    def test_timestep_embedding_flag(self):
        cfg = small_cfg(use_positional_embedding=True)
        params = init_transformer(cfg, np.random.default_rng(7))
        assert "embed_timestep.table" in params
        states, actions, rtgs, ts, mask = seeded_inputs(cfg)
        out1 = dt_forward_batch(params, cfg, states, actions, rtgs, ts, mask).data
        out2 = dt_forward_batch(params, cfg, states, actions, rtgs, ts + 9, mask).data
        assert not np.array_equal(out1, out2)
        cfg_off = small_cfg()
        p_off = init_transformer(cfg_off, np.random.default_rng(7))
        assert "embed_timestep.table" not in p_off
        a = dt_forward_batch(p_off, cfg_off, states, actions, rtgs, ts, mask).data
        b = dt_forward_batch(p_off, cfg_off, states, actions, rtgs, ts + 9, mask).data
        assert np.array_equal(a, b)


def test_dt_forward_single_segment():
    cfg = small_cfg()
    params = init_transformer(cfg, np.random.default_rng(0))
    states, actions, rtgs, ts, mask = seeded_inputs(cfg, B=1)
    seg = Segment(states[0], actions[0], rtgs[0], ts[0], mask[0], rtgs[0, 0])
    out = dt_forward(params, cfg, seg)
    assert out.shape == (4, 2)
    batch = dt_forward_batch(params, cfg, states, actions, rtgs, ts, mask).data
    assert np.array_equal(out, batch[0])

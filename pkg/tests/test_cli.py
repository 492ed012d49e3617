import json

import numpy as np
import pytest

from rldt.cli import main
from rldt.presets import apply_algo, make_run_config, run_seed


def test_gen_data_bandit_preset(tmp_path, capsys):
    f = tmp_path / "bandit.jsonl"
    assert main(["gen-data", "--env", "bandit", "--seed", "3",
                 "--file", str(f)]) == 0
    lines = f.read_text().splitlines()
    assert len(lines) == 129  # header + 128 records
    assert "128" in capsys.readouterr().out


def test_gen_data_same_seed_identical_bytes(tmp_path):
    f1, f2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    main(["gen-data", "--env", "bandit", "--seed", "5", "--file", str(f1)])
    main(["gen-data", "--env", "bandit", "--seed", "5", "--file", str(f2)])
    assert f1.read_bytes() == f2.read_bytes()


def test_gen_data_pointmass_step_count(tmp_path):
    f = tmp_path / "pm.jsonl"
    main(["gen-data", "--env", "pointmass", "--behavior", "random",
          "--n-steps", "500", "--seed", "1", "--file", str(f)])
    assert len(f.read_text().splitlines()) == 501


def fast_overrides(out, name):
    return ["run", "--preset", "bandit-fig2", "--algo", "odt",
            "--seed", "0", "--out", out, "--name", name,
            "--override", "train.pretrain_steps=4",
            "--override", "train.online_max_env_steps=8",
            "--override", "train.min_steps_per_epoch=4",
            "--override", "model.embed_dim=16"]


def test_run_writes_outputs(tmp_path):
    assert main(fast_overrides(str(tmp_path), "t1")) == 0
    out = tmp_path / "t1"
    assert (out / "metrics_seed0.csv").exists()
    assert (out / "checkpoint_seed0.pkl").exists()
    assert (out / "summary.csv").exists()
    blob = json.loads((out / "config.json").read_text())
    assert blob["train"]["pretrain_steps"] == 4
    assert blob["mechanics"]["critic_enabled"] is False
    header = (out / "metrics_seed0.csv").read_text().splitlines()[0]
    assert header == ("epoch,env_steps,grad_steps,eval_mean,eval_std,"
                      "actor_loss,critic_loss,mean_q,seed")


def test_run_identical_across_invocations(tmp_path):
    main(fast_overrides(str(tmp_path), "r1"))
    main(fast_overrides(str(tmp_path), "r2"))
    a = (tmp_path / "r1" / "metrics_seed0.csv").read_bytes()
    b = (tmp_path / "r2" / "metrics_seed0.csv").read_bytes()
    assert a == b


def test_out_dir_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("RLDT_OUT", str(tmp_path / "envroot"))
    args = fast_overrides("", "t2")
    args.remove("--out")
    args.remove("")
    assert main(args) == 0
    assert (tmp_path / "envroot" / "t2" / "summary.csv").exists()


def test_alpha_sweep_produces_summary_rows(tmp_path):
    for alpha in ("0", "0.1", "0.3"):
        name = f"sweep{alpha.replace('.', '_')}"
        args = fast_overrides(str(tmp_path), name)
        args[4] = "td3+odt"
        args += ["--override", f"train.alpha_online={alpha}"]
        assert main(args) == 0
    rows = [(tmp_path / f"sweep{a}" / "summary.csv").read_text().splitlines()[-1]
            for a in ("0", "0_1", "0_3")]
    assert len(rows) == 3 and all(r.split(",")[1] == "mean" for r in rows)


def test_override_validation(tmp_path):
    args = fast_overrides(str(tmp_path), "bad") + ["--override", "nope.key=1"]
    with pytest.raises(SystemExit, match="unknown config section"):
        main(args)
    args = fast_overrides(str(tmp_path), "bad2") + ["--override", "malformed"]
    with pytest.raises(SystemExit, match="key=value"):
        main(args)


def test_config_file_roundtrip(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "preset": "custom", "algo": "odt", "env": "bandit",
        "seeds": [1],
        "train": {"pretrain_steps": 3, "online_max_env_steps": 4,
                  "min_steps_per_epoch": 4, "T_train": 1, "T_eval": 1,
                  "batch_size": 8, "buffer_capacity": 100,
                  "eval_episodes": 1},
        "model": {"embed_dim": 16},
        "dataset": {"source": "bandit"},
    }))
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path),
                 "--name", "fromfile"]) == 0
    assert (tmp_path / "fromfile" / "metrics_seed1.csv").exists()


def test_theory_subcommand(tmp_path):
    assert main(["theory", "--out", str(tmp_path), "--n-mdps", "6"]) == 0
    text = (tmp_path / "theory_report.csv").read_text()
    assert "bayes_identity_max_residual" in text
    assert ",FAIL," not in text


def test_eval_subcommand(tmp_path, capsys):
    main(fast_overrides(str(tmp_path), "forEval"))
    ck = tmp_path / "forEval" / "checkpoint_seed0.pkl"
    rc = main(["eval", "--preset", "bandit-fig2", "--algo", "odt",
               "--checkpoint", str(ck), "--episodes", "2",
               "--override", "model.embed_dim=16",
               "--out", str(tmp_path)])
    assert rc == 0
    assert "eval over 2 episodes" in capsys.readouterr().out


def test_unknown_preset_and_algo_rejected():
    with pytest.raises(ValueError, match="unknown preset"):
        make_run_config("mujoco")
    cfg = make_run_config("bandit-fig2")
    with pytest.raises(ValueError, match="unknown algo"):
        cfg.algo = "sac"
        cfg.validate()


def test_dataset_literal_interval_flag(tmp_path):
    f = tmp_path / "lit.jsonl"
    main(["gen-data", "--env", "bandit", "--seed", "0",
          "--literal-interval", "--file", str(f)])
    recs = [json.loads(l) for l in f.read_text().splitlines()[1:]]
    acts = np.array([r["action"][0] for r in recs[:100]])
    assert acts.max() > 0.0

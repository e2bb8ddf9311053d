import json

import numpy as np
import pytest

from bop import checkpoint
from bop.agent import Trainer
from bop.cli import main, tidy_rows
from bop.config import RunConfig
from bop.diffcore import ContractError

SMALL = ["--set", "env=deep_sea:5", "--set", "num_envs=2", "--set", "rollout_steps=16",
         "--set", "minibatch=16", "--set", "update_epochs=1", "--set", "width=16",
         "--set", "probe_states=8", "--quiet"]


def cfg(**kw):
    base = dict(env="nchain:5", heads=2, num_envs=2, rollout_steps=12, minibatch=16,
                update_epochs=1, width=16, latent_dim=2, probe_states=8, seed=4)
    base.update(kw)
    return RunConfig(**base)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    straight = Trainer(cfg())
    want = [straight.train_iteration() for _ in range(4)]

    first = Trainer(cfg())
    got = [first.train_iteration() for _ in range(2)]
    checkpoint.save(first, tmp_path / "ck")
    resumed = checkpoint.load(tmp_path / "ck")
    got += [resumed.train_iteration() for _ in range(2)]
    assert got == want
    for a, b in zip(straight.heads[1].policy.net.arrays(), resumed.heads[1].policy.net.arrays()):
        np.testing.assert_array_equal(a, b)


def test_corrupt_checkpoint_is_rejected(tmp_path):
    tr = Trainer(cfg())
    tr.train_iteration()
    checkpoint.save(tr, tmp_path / "ck")
    blob = bytearray((tmp_path / "ck" / checkpoint.BLOB).read_bytes())
    blob[-1] ^= 0xFF
    (tmp_path / "ck" / checkpoint.BLOB).write_bytes(bytes(blob))
    with pytest.raises(ContractError, match="checksum"):
        checkpoint.load(tmp_path / "ck")


def test_cli_missing_env_names_field(capsys):
    assert main(["train", "--k", "1"]) == 2
    assert "env" in capsys.readouterr().err


def test_cli_train_same_seed_twice(tmp_path):
    for name in ("a", "b"):
        assert main(["train", *SMALL, "--seed", "7", "--iterations", "3",
                     "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a" / "metrics.jsonl").read_text()
    b = (tmp_path / "b" / "metrics.jsonl").read_text()
    assert a == b and len(a.splitlines()) == 3
    assert (tmp_path / "a" / "checkpoints" / "final" / "manifest.json").exists()


def test_config_snapshot_reproduces_run(tmp_path):
    main(["train", *SMALL, "--seed", "2", "--iterations", "2", "--out", str(tmp_path / "a")])
    main(["train", str(tmp_path / "a" / "config.txt"), "--quiet", "--iterations", "2",
          "--out", str(tmp_path / "b")])
    assert ((tmp_path / "a" / "metrics.jsonl").read_text()
            == (tmp_path / "b" / "metrics.jsonl").read_text())


def test_bop_seed_environment_override(tmp_path, monkeypatch):
    monkeypatch.setenv("BOP_SEED", "11")
    main(["train", *SMALL, "--iterations", "1", "--out", str(tmp_path / "r")])
    assert "seed = 11" in (tmp_path / "r" / "config.txt").read_text()


def test_k1_smoke_on_deep_sea6(tmp_path):
    assert main(["train", "--set", "env=deep_sea:6", "--k", "1", "--set", "total_env_steps=1000",
                 "--quiet", "--out", str(tmp_path / "r")]) == 0


def test_eval_all_modes(tmp_path, capsys):
    main(["train", *SMALL, "--iterations", "1", "--out", str(tmp_path / "r")])
    ck = str(tmp_path / "r" / "checkpoints" / "final")
    capsys.readouterr()
    for mode in ("average-then-argmax", "argmax-then-vote", "sample-then-argmax"):
        assert main(["eval", ck, "--episodes", "3", "--mode", mode]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["episodes"] == 3 and out["mode"] == mode
        if mode != "sample-then-argmax":
            assert out["stderr"] == 0.0


def test_eval_corrupt_checkpoint_exits_nonzero(tmp_path, capsys):
    main(["train", *SMALL, "--iterations", "1", "--out", str(tmp_path / "r")])
    ck = tmp_path / "r" / "checkpoints" / "final"
    (ck / checkpoint.BLOB).write_bytes((ck / checkpoint.BLOB).read_bytes()[:-8])
    assert main(["eval", str(ck)]) == 2
    assert "checksum" in capsys.readouterr().err


def test_random_policy_success_rate_on_deep_sea10():
    """A uniform policy reaches the treasure with probability 2^-10."""
    tr = Trainer(RunConfig(env="deep_sea:10", heads=1, width=8, probe_states=4, seed=0))
    for p in tr.heads[0].policy.net.params:
        p.data = np.zeros_like(p.data)
    n = 20_000
    hits = sum(tr.evaluate("sample", 1)["mean"] > 0.5 for _ in range(n))
    from scipy import stats
    assert stats.binomtest(hits, n, 2.0 ** -10).pvalue > 0.001


def test_sweep_directory_layout(tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", *SMALL[:-1], "--axis", "K", "--values", "1,2", "--seeds", "0,1",
                 "--iterations", "1", "--out", str(out)]) == 0
    dirs = sorted(str(p.relative_to(out)) for p in out.glob("*/seed*"))
    assert dirs == ["heads=1/seed0", "heads=1/seed1", "heads=2/seed0", "heads=2/seed1"]
    lines = (out / "curves.csv").read_text().splitlines()
    assert lines[0].startswith("axis,value,seed,iteration") and len(lines) == 5


def test_plot_data_is_tidy(tmp_path, capsys):
    main(["train", *SMALL, "--iterations", "2", "--out", str(tmp_path / "r")])
    capsys.readouterr()
    assert main(["plot-data", str(tmp_path / "r")]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "iteration,metric,head,value"
    assert any(r.startswith("2,head_return,") for r in rows[1:]) or any(
        r.startswith("2,kl_mean,2,") for r in rows[1:])
    assert list(tidy_rows([{"iteration": 1, "a": 0.5, "b": [1, None, 3]}])) == [
        (1, "a", "", 0.5), (1, "b", 0, 1), (1, "b", 2, 3)]


def test_verify_battery_passes(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4

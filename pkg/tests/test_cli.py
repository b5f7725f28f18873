import numpy as np
import pytest

from awmp import tabular as tb
from awmp.cli import main

INI = """\
[experiment]
algorithm = sac-awmp
env_id = bang1d
total_steps = 200
eval_interval = 100
eval_episodes = 2
seeds = 0, 1
out_dir = runs

[agent]
hidden = 8
replay_capacity = 400
critic_batch = 16
policy_batch = 16
prior_batch = 8
start_steps = 100
update_after = 100
"""


def q_line(out):
    lines = out.splitlines()
    return lines[lines.index("Q*:") + 1]


def test_oracle_geometric_series(tmp_path, capsys):
    (tmp_path / "one.mdp").write_text("1 1 0.99\n1\n1\n")
    assert main(["oracle", "--mdp", str(tmp_path / "one.mdp"), "--alpha", "1.0"]) == 0
    out = capsys.readouterr().out
    assert float(q_line(out)) == pytest.approx(100.0, abs=1e-9)
    assert "certificate monotone: PASS" in out and "certificate contraction: PASS" in out


def test_oracle_random_mdp_passes_and_entropy_dominated(tmp_path, capsys):
    rng = np.random.default_rng(7)
    mdp = tb.random_mdp(rng, 4, 3, 0.9)
    small = tb.FiniteMDP(mdp.transitions, 0.1 * mdp.rewards, 0.5)
    (tmp_path / "r.mdp").write_text(tb.render_mdp(small))
    assert main(["oracle", "--mdp", str(tmp_path / "r.mdp"), "--alpha", "100"]) == 0
    out = capsys.readouterr().out
    gap = float(out.split("row gap:")[1].split()[0])
    assert gap < 1e-3 and "certificate monotone: PASS" in out


def test_oracle_parse_error_line(tmp_path, capsys):
    (tmp_path / "bad.mdp").write_text("1 1 0.9\n1\nabc\n")
    assert main(["oracle", "--mdp", str(tmp_path / "bad.mdp"), "--alpha", "1"]) == 2
    assert "line 3" in capsys.readouterr().err


def test_train_eval_aggregate_round(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "run.ini"
    cfg.write_text(INI)
    out = tmp_path / "runs"
    monkeypatch.setenv("AWMP_AGENT_N_COMPONENTS", "3")
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    files = sorted(out.glob("*.metrics.tsv"))
    assert [f.name for f in files] == ["sac-awmp_bang1d_seed0.metrics.tsv", "sac-awmp_bang1d_seed1.metrics.tsv"]
    assert "n_components = 3" in (out / "sac-awmp_bang1d_seed0.ini").read_text()

    ck = out / "sac-awmp_bang1d_seed0.ckpt"
    traj = tmp_path / "traj.tsv"
    assert main(["eval", "--checkpoint", str(ck), "--episodes", "2", "--trajectory", str(traj)]) == 0
    assert "mean\t" in capsys.readouterr().out and traj.read_text()

    band = tmp_path / "band.tsv"
    assert main(["aggregate", "--in", *map(str, files), "--out", str(band)]) == 0
    assert band.with_suffix(".png").exists()
    assert len(band.read_text().splitlines()) == 3 + 2


def test_train_repeated_is_bit_identical(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(INI)
    for name in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / name)]) == 0
    f = "sac-awmp_bang1d_seed1.metrics.tsv"
    assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_aggregate_misaligned_exit_code(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text(INI.replace("algorithm = sac-awmp", "algorithm = oracle"))
    main(["train", "--config", str(cfg), "--seed", "0", "--out", str(tmp_path / "a")])
    cfg.write_text(INI.replace("algorithm = sac-awmp", "algorithm = oracle").replace("total_steps = 200", "total_steps = 300"))
    main(["train", "--config", str(cfg), "--seed", "0", "--out", str(tmp_path / "b")])
    files = [str(p) for p in sorted(tmp_path.glob("*/*.metrics.tsv"))]
    assert main(["aggregate", "--in", *files, "--out", str(tmp_path / "x.tsv"), "--no-plot"]) == 2
    assert "b/oracle_bang1d_seed0.metrics.tsv" in capsys.readouterr().err

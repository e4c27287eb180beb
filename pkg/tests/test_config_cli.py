import csv
import json

import pytest

from semisupcon.cli import main, parse_values, summarize
from semisupcon.config import ExperimentConfig, dump_config, load_config, parse_config
from semisupcon.exceptions import ConfigError, UnknownParameter

TINY = """
[dataset]
kind = blobs
n_per_class = 30
input_dim = 6

[train]
total_steps = 10
steps_per_epoch = 4
b = 4
mu = 2
hidden_dims = 16
embed_dim = 8
seeds = 0, 1, 2

[output]
directory = {out}
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY.format(out=tmp_path / "out"))
    return path


def records(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_missing_config(tmp_path, capsys):
    missing = tmp_path / "nope.ini"
    assert main(["train", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_unknown_key(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[train]\nlearning_rate = 0.1\n")
    assert main(["train", str(path)]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_unknown_section_and_bad_values():
    with pytest.raises(ConfigError):
        parse_config("[optim]\nlr = 1\n")
    with pytest.raises(ConfigError):
        parse_config("[train]\ntau = high\n")
    with pytest.raises(ConfigError):
        parse_config("[train]\ntau = 1.5\n")
    with pytest.raises(ConfigError):
        parse_config("[dataset]\nkind = mnist\n")


def test_train_writes_metrics_and_checkpoint(tiny, tmp_path, capsys):
    assert main(["train", str(tiny)]) == 0
    recs = records(tmp_path / "out" / "metrics.ndjson")
    assert recs[0]["event"] == "config"
    assert recs[0]["config"]["train"]["tau"] == 0.95
    assert sum(r["event"] == "step" for r in recs) == 10
    assert sum(r["event"] == "eval" for r in recs) >= 1
    assert (tmp_path / "out" / "final.ckpt").stat().st_size > 0
    assert "final accuracy" in capsys.readouterr().out


def test_metrics_byte_identical(tiny, tmp_path, monkeypatch):
    texts = []
    for name in ("r1", "r2"):
        monkeypatch.setenv("SSC_OUTPUT_DIR", str(tmp_path / name))
        assert main(["train", str(tiny)]) == 0
        texts.append((tmp_path / name / "metrics.ndjson").read_bytes())
    assert texts[0] == texts[1]
    assert not (tmp_path / "out").exists()  # environment override wins


def test_eval_command(tiny, tmp_path, capsys):
    assert main(["train", str(tiny)]) == 0
    trained = capsys.readouterr().out.split()[-1]
    assert main(["eval", str(tiny), "--checkpoint", str(tmp_path / "out" / "final.ckpt")]) == 0
    assert capsys.readouterr().out.split()[-1] == trained
    assert main(["eval", str(tiny), "--checkpoint", str(tmp_path / "missing.ckpt")]) == 2


def test_eval_rejects_corrupt_checkpoint(tiny, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    assert main(["eval", str(tiny), "--checkpoint", str(bad)]) == 1


def test_ablate(tiny, tmp_path):
    assert main(["ablate", str(tiny)]) == 0
    with open(tmp_path / "out" / "ablation_runs.csv") as fh:
        runs = list(csv.DictReader(fh))
    with open(tmp_path / "out" / "ablation.csv") as fh:
        summary = list(csv.DictReader(fh))
    assert len(runs) == 18 and len(summary) == 6
    assert [r["preset"] for r in summary] == [str(p) for p in range(1, 7)]


def test_summary_uses_sample_std():
    (row,) = summarize([(6, 0, 1.0), (6, 1, 0.5), (6, 2, 0.0)])
    assert row == (6, 0.5, 0.5, 3)


@pytest.mark.parametrize("param,values", [("tau", "0.9,0.91,0.92,0.93,0.94,0.95,0.96,0.97,0.975,0.98"),
                                          ("mu", "3,12"), ("strength", "3,20")])
def test_sweep(tiny, tmp_path, param, values):
    assert main(["sweep", str(tiny), "--param", param, "--values", values]) == 0
    with open(tmp_path / "out" / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(values.split(","))
    assert {r["param"] for r in rows} == {param}


def test_sweep_parallel_matches_serial(tiny, tmp_path):
    out = []
    for jobs in ("1", "2"):
        assert main(["sweep", str(tiny), "--param", "mu", "--values", "3,4", "--jobs", jobs]) == 0
        out.append((tmp_path / "out" / "sweep.csv").read_text())
    assert out[0] == out[1]


def test_sweep_parameter_checks():
    with pytest.raises(UnknownParameter):
        parse_values("lr0", "0.1")
    with pytest.raises(ConfigError):
        parse_values("tau", "0.5")
    with pytest.raises(ConfigError):
        parse_values("mu", "13")
    assert parse_values("tau", "0.9, 0.95") == [0.9, 0.95]


def test_sweep_unknown_parameter_exit_code(tiny):
    assert main(["sweep", str(tiny), "--param", "lr0", "--values", "0.1"]) == 2


def test_tau_does_not_change_first_step_loss(tmp_path):
    # a soft head (T' = 1) keeps every example unconfident at step 1
    losses = []
    for tau in ("0.9", "0.98"):
        cfg = parse_config(f"[train]\ntotal_steps = 1\nt_prime = 1.0\ntau = {tau}\n[output]\ndirectory = {tmp_path / tau}\n")
        path = tmp_path / f"{tau}.ini"
        path.write_text(dump_config(cfg))
        assert main(["train", str(path)]) == 0
        step1 = next(r for r in records(tmp_path / tau / "metrics.ndjson") if r["event"] == "step")
        assert step1["values"]["mask_rate"] == 0.0
        losses.append(step1["values"]["loss"])
    assert losses[0] == losses[1]


def test_config_round_trip(tiny):
    cfg = load_config(tiny)
    again = parse_config(dump_config(cfg))
    assert again == cfg
    assert again.to_dict() == cfg.to_dict()
    default = ExperimentConfig()
    assert parse_config(dump_config(default)) == default


def test_augment_section():
    cfg = parse_config("[augment]\nstrength = 5\n")
    assert cfg.augment.strong_mask_fraction == pytest.approx(0.125)
    cfg = parse_config("[augment]\nstrong_mask_fraction = 0.3\n")
    assert cfg.augment.strong_mask_fraction == 0.3 and cfg.augment.strong_noise_sigma == 0.2


def test_verify_command(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 6 and "max_err=" in out


def test_verify_corrupted_gradient_is_isolated(capsys):
    assert main(["verify", "--corrupt-gradient"]) == 1
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith(("PASS", "FAIL"))]
    failed = {l.split()[1] for l in lines if l.startswith("FAIL")}
    assert failed == {"gradient_losses", "gradient_model"}
    assert len(lines) == 6

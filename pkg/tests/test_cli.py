import json

import pytest

from seldiv import config as config_mod
from seldiv.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, main
from seldiv.datasets import load_dataset
from seldiv.errors import ConfigError

SMALL = ["--steps", "20", "--batch-size", "16"]


@pytest.fixture
def root(tmp_path, monkeypatch):
    monkeypatch.setenv("SELDIV_OUTPUT_ROOT", str(tmp_path))
    return tmp_path


def test_full_synthetic_workflow(root, capsys):
    assert main(["gen-data", "synth2d", "--n-per-cluster", "20", "--seed", "1"]) == 0
    data = root / "data" / "synth2d-seed1.bin"
    assert len(load_dataset(data)) == 360

    assert main(["train", "--data", str(data), "--out", str(root / "run"), *SMALL]) == 0
    assert (root / "run" / "final.pt").exists()
    assert len(list(root.glob("data/*.fdiv-*.json"))) == 1
    fp = (root / "run" / "FINGERPRINT").read_text().strip()
    assert json.loads((root / "run" / "config.json").read_text())["fingerprint"] == fp

    gen = root / "gen.bin"
    assert main(["sample", "--checkpoint", str(root / "run" / "final.pt"), "--conditions-from", str(data),
                 "--n-per-condition", "10", "--out", str(gen)]) == 0
    assert len(load_dataset(gen)) == 180

    capsys.readouterr()
    assert main(["eval", "--real", str(data), "--generated", str(gen), "--out", str(root / "ev")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("section\tkey\tvalue\n")
    names = {p.name for p in (root / "ev").iterdir()}
    assert {"metrics.tsv", "report.json", "scatter_spread0.png", "scatter_spread1.png", "FINGERPRINT"} <= names
    assert json.loads((root / "ev" / "report.json").read_text())["fingerprint"]

    assert main(["report", "--report", str(root / "ev" / "report.json"), "--out", str(root / "rep")]) == 0
    assert (root / "rep" / "metrics.tsv").read_text() == (root / "ev" / "metrics.tsv").read_text()


def test_resume_and_mismatch(root):
    main(["gen-data", "synth2d", "--n-per-cluster", "10", "--out", str(root / "d.bin")])
    assert main(["train", "--data", str(root / "d.bin"), "--out", str(root / "a"), *SMALL]) == 0
    ckpt = str(root / "a" / "final.pt")
    args = ["train", "--data", str(root / "d.bin"), "--steps", "30", "--batch-size", "16", "--out", str(root / "b")]
    assert main(args + ["--resume", ckpt]) == 0
    assert main(args + ["--resume", ckpt, "--lambda-div", "3"]) == EXIT_CONFIG


def test_exit_codes(root, tmp_path, monkeypatch):
    assert main(["eval", "--real", str(tmp_path / "missing.bin"), "--generated", "x"]) == EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text('{"training": {"warp": 9}}')
    assert main(["train", "--data", "x", "--config", str(bad)]) == EXIT_CONFIG
    main(["gen-data", "synth2d", "--n-per-cluster", "5", "--out", str(tmp_path / "s.bin")])
    main(["gen-data", "calo", "--particles", "3", "--repeats", "2", "--out", str(tmp_path / "c.bin")])
    assert main(["eval", "--real", str(tmp_path / "s.bin"), "--generated", str(tmp_path / "c.bin")]) == EXIT_CONFIG

    import seldiv.training as training

    monkeypatch.setattr(training, "total_generator_loss", lambda g, r, c: g * float("nan"))
    assert main(["train", "--data", str(tmp_path / "s.bin"), "--out", str(tmp_path / "div"), *SMALL]) == EXIT_DIVERGED
    assert (tmp_path / "div" / "last_good.pt").exists()


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as err:
        main(["train"])
    assert err.value.code == 2


def test_config_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"training": {"steps": 7, "loss": {"lambda_div": 0.5}}, "data": {"seed": 3}}))
    cfg = config_mod.load_config(str(path), {"training": {"steps": 9}})
    assert cfg["training"]["steps"] == 9
    assert cfg["training"]["loss"]["lambda_div"] == 0.5
    assert cfg["training"]["loss"]["regularizer_mode"] == "sdi"
    assert cfg["data"]["seed"] == 3
    assert config_mod.fingerprint(cfg) == config_mod.fingerprint(dict(cfg, out_dir="/elsewhere"))
    assert config_mod.fingerprint(cfg) != config_mod.fingerprint(config_mod.load_config(str(path)))
    with pytest.raises(ConfigError):
        config_mod.load_config(None, {"training": {"loss": {"lambda_div": -1}}})
    with pytest.raises(ConfigError):
        config_mod.load_config(None, {"data": {"kind": "mnist"}})

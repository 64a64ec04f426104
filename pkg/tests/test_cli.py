import json

import numpy as np
import pytest
import yaml

from moodreader import checkpoint
from moodreader.cli import STD_NOTE, build_parser, main
from moodreader.config import DEFAULTS, load_config
from moodreader.mbsm import FrozenEncoder
from moodreader.nn import ConfigError

SMALL = {
    "dataset": {"synthetic": {"n_subjects": 5, "trials_per_subject": 6, "samples_per_trial": 1}},
    "model": {"preset": "STIB+Eye+MLF"},
    "train": {"steps": 12, "eval_every": 6},
    "pretrain": {"steps": 2, "n_spans": 4, "batch_size": 2},
}


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return path


def run(cfg_path, out, *args):
    return main(["--config", str(cfg_path), "--out", str(out), *args])


def test_parser_knows_every_subcommand():
    p = build_parser()
    for cmd in ["features", "pretrain", "train", "eval --checkpoint x", "ablate", "viz"]:
        args = p.parse_args(["--seed", "3", "--out", "o", *cmd.split()])
        assert args.seed == 3 and args.out == "o"


def test_config_defaults_and_overrides(cfg_path):
    cfg = load_config(cfg_path, {"seed": 9})
    assert cfg["seed"] == 9
    assert cfg["train"]["steps"] == 12
    assert cfg["train"]["batch_size"] == DEFAULTS["train"]["batch_size"]
    assert cfg["dataset"]["synthetic"]["separability"] == 2.0


@pytest.mark.parametrize(
    "override,match",
    [
        ({"trian": {}}, "trian"),
        ({"train": {"stepz": 3}}, "stepz"),
        ({"split": {"by": "session"}}, "split.by"),
        ({"split": {"ratio": 1.5}}, "ratio"),
        ({"dataset": {"source": "manifest"}}, "manifest"),
        ({"model": {"preset": "XYZ"}}, "preset"),
    ],
)
def test_config_errors(override, match):
    with pytest.raises(ConfigError, match=match):
        load_config(None, override)


def test_train_eval_viz(cfg_path, tmp_path, capsys):
    out = tmp_path / "run"
    assert run(cfg_path, out, "train") == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["note"] == STD_NOTE and 0.0 <= metrics["accuracy"] <= 1.0
    assert STD_NOTE in (out / "metrics.txt").read_text()
    assert json.loads((out / "audit.json").read_text())["components"][-1] == "classifier"
    snaps = json.loads((out / "attention.json").read_text())
    assert [s["tag"] for s in snaps] == ["0%", "25%", "50%", "100%"]
    assert len(snaps[0]["channels"]) == 62

    assert run(cfg_path, tmp_path / "ev", "eval", "--checkpoint", str(out / "model.ckpt")) == 0
    ev = json.loads((tmp_path / "ev" / "eval_metrics.json").read_text())
    assert ev["accuracy"] == metrics["accuracy"]
    assert main(["--out", str(tmp_path / "ev2"), "eval", "--checkpoint", str(out / "model.ckpt")]) == 0
    assert json.loads((tmp_path / "ev2" / "eval_metrics.json").read_text())["accuracy"] == metrics["accuracy"]

    assert run(cfg_path, tmp_path / "vz", "viz", "--checkpoint", str(out / "model.ckpt")) == 0
    final = json.loads((tmp_path / "vz" / "attention_final.json").read_text())
    assert sum(c["weight"] for c in final[0]["channels"]) == pytest.approx(1.0)
    assert (tmp_path / "vz" / "topomap_final.png").exists()

    assert run(cfg_path, tmp_path / "vz2", "viz", "--attention", str(out / "attention.json")) == 0
    assert sorted(p.name for p in (tmp_path / "vz2").glob("*.png")) == [
        "topomap_0.png", "topomap_100.png", "topomap_25.png", "topomap_50.png"]


def test_features_container(cfg_path, tmp_path):
    assert run(cfg_path, tmp_path / "f", "features", "--spans") == 0
    arrays, meta = checkpoint.load(tmp_path / "f" / "features.bin")
    assert arrays["de"].shape == (30, 4, 5, 62)
    assert arrays["raw_spans"].shape == (30, 62, 3200)
    assert len(meta["subjects"]) == 30 and meta["n_classes"] == 3


def test_pretrain_flags(cfg_path, tmp_path):
    out = tmp_path / "p"
    assert run(cfg_path, out, "pretrain", "--steps", "3", "--mask-ratio", "0.5", "--token-size", "80",
               "--encoder-depth", "2", "--decoder-depth", "1") == 0
    enc = FrozenEncoder.load(out / "encoder.ckpt")
    assert (enc.cfg.mask_ratio, enc.cfg.token_size, enc.cfg.encoder_depth) == (0.5, 80, 2)
    assert len(json.loads((out / "pretrain_loss.json").read_text())["loss"]) == 3
    assert run(cfg_path, tmp_path / "bad", "pretrain", "--encoder-depth", "1", "--decoder-depth", "1") == 2


def test_pretrain_on_manifest_spans(cfg_path, tmp_path):
    np.save(tmp_path / "a.npy", np.random.default_rng(0).normal(size=(62, 200 * 32)))
    (tmp_path / "m.yaml").write_text(yaml.safe_dump({"n_classes": 3, "fs": 200, "trials": [
        {"subject": "s1", "trial": "t1", "label": 0, "file": "a.npy"}]}))
    out = tmp_path / "p"
    assert run(cfg_path, out, "pretrain", "--steps", "2", "--manifest", str(tmp_path / "m.yaml")) == 0
    assert (out / "encoder.ckpt").exists()


def test_seeded_train_is_byte_identical(cfg_path, tmp_path):
    for name in ("a", "b"):
        assert main(["--config", str(cfg_path), "--seed", "4", "--out", str(tmp_path / name), "train"]) == 0
    for f in ("metrics.json", "attention.json", "loss_curve.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_known_errors_exit_2(cfg_path, tmp_path, capsys):
    assert main(["--out", str(tmp_path), "--config", str(tmp_path / "missing.yaml"), "train"]) == 2
    assert run(cfg_path, tmp_path, "train", "--preset", "STB+XX") == 2
    assert run(cfg_path, tmp_path, "eval", "--checkpoint", str(tmp_path / "none.ckpt")) == 2
    assert run(cfg_path, tmp_path, "viz") == 2
    assert "error:" in capsys.readouterr().err

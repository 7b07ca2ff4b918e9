import json
import math

import numpy as np
import pytest

from encbridge.analysis import read_csv, read_pgm
from encbridge.checkpoint import load_checkpoint
from encbridge.cli import main, read_kv_config
from encbridge.gradcheck import gradcheck_model
from encbridge.model import ModelConfig

TINY = ["--n-pairs", "48", "--eval-pairs", "8", "--len-max", "5", "--batch-size", "16",
        "--d-model", "16", "--n-heads", "2", "--d-ff", "16", "--n-enc-layers", "3",
        "--n-dec-layers", "3"]


@pytest.fixture
def root(tmp_path, monkeypatch):
    monkeypatch.setenv("ENCBRIDGE_RUN_ROOT", str(tmp_path / "run"))
    return tmp_path / "run"


@pytest.fixture
def base_ckpt(root):
    assert main(["experiment", "--id", "0", "--steps", "4", *TINY]) == 0
    return root / "experiment-0" / "ckpt" / "final.ckpt"


def test_experiment_two_report(root, base_ckpt, capsys):
    capsys.readouterr()
    code = main(["experiment", "--id", "2", "--data", "subst", "--base", str(base_ckpt),
                 "--steps", "2", *TINY])
    assert code == 0
    out = root / "experiment-2"
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "experiment,evaluate_loss,bleu"
    assert lines[1].startswith("2,")
    assert capsys.readouterr().out.splitlines()[0] == "experiment,evaluate_loss,bleu"
    for name in ("manifest.json", "loss.csv", "ckpt/final.ckpt"):
        assert (out / name).is_file()


def test_finetune_experiment_without_base_is_usage_error(root, capsys):
    assert main(["experiment", "--id", "1", *TINY]) == 2
    assert "--base" in capsys.readouterr().err


def test_invalid_flags_exit_two(root):
    assert main(["experiment", "--id", "9"]) == 2
    assert main(["train", "--bridge-init", "diagonal"]) == 2
    assert main(["bogus"]) == 2


def test_same_command_twice_gives_identical_loss_csv(root):
    args = ["train", "--steps", "3", "--bridge-init", "gca", *TINY]
    assert main([*args, "--name", "a"]) == 0
    assert main([*args, "--name", "b"]) == 0
    assert (root / "a" / "loss.csv").read_bytes() == (root / "b" / "loss.csv").read_bytes()
    assert (root / "a" / "ckpt" / "final.ckpt").read_bytes() == \
        (root / "b" / "ckpt" / "final.ckpt").read_bytes()


def test_rerun_from_manifest(root):
    assert main(["train", "--steps", "3", "--name", "orig", *TINY]) == 0
    manifest = json.loads((root / "orig" / "manifest.json").read_text())
    assert manifest["args"]["steps"] == 3 and "started" in manifest and "finished" in manifest
    assert main(["rerun", str(root / "orig" / "manifest.json"), "--name", "again"]) == 0
    for f in ("loss.csv", "ckpt/final.ckpt", "report.csv"):
        assert (root / "orig" / f).read_bytes() == (root / "again" / f).read_bytes()


def test_config_file_with_flag_override(root, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# toy run\nsteps = 2\nbatch-size = 8\nbridge_init = gca\nfreeze_base = false\n")
    assert read_kv_config(cfg)["batch_size"] == "8"
    assert main(["train", "--config", str(cfg), "--steps", "3", "--name", "cfg", *TINY[:6]]) == 0
    args = json.loads((root / "cfg" / "manifest.json").read_text())["args"]
    assert args["steps"] == 3 and args["batch_size"] == 8 and args["bridge_init"] == "gca"
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert main(["train", "--config", str(bad)]) == 2


def test_eval_untrained_is_chance_level(root, capsys):
    assert main(["train", "--steps", "0", "--name", "fresh", *TINY]) == 0
    capsys.readouterr()
    ckpt = root / "fresh" / "ckpt" / "final.ckpt"
    assert main(["eval", "--checkpoint", str(ckpt), *TINY[:6]]) == 0
    header, row = capsys.readouterr().out.splitlines()
    assert header == "evaluate_loss,bleu"
    loss, bleu = map(float, row.split(","))
    assert abs(loss - math.log(56)) < 1.0
    assert bleu < 5.0


def test_eval_missing_checkpoint(root):
    assert main(["eval", "--checkpoint", "does/not/exist.ckpt"]) == 2


def test_eval_corrupt_checkpoint_names_record(root, base_ckpt, capsys):
    raw = bytearray(base_ckpt.read_bytes())
    raw[-1] ^= 0x55
    bad = base_ckpt.parent / "bad.ckpt"
    bad.write_bytes(bytes(raw))
    assert main(["eval", "--checkpoint", str(bad)]) == 1
    assert "record 'adam.v/" in capsys.readouterr().err


@pytest.mark.parametrize("init", ["original", "gca"])
def test_analyze_init_patterns(root, init):
    assert main(["train", "--steps", "0", "--bridge-init", init, "--name", init, *TINY]) == 0
    ckpt = root / init / "ckpt" / "final.ckpt"
    assert main(["analyze", "--checkpoint", str(ckpt), "--baseline", str(ckpt), "--raw",
                 "--name", f"an-{init}", "--upscale", "1"]) == 0
    hm = root / f"an-{init}" / "heatmaps"
    pix = read_pgm(hm / "block_norms" / "block_norms.pgm")
    if init == "original":
        expected = np.zeros((3, 3), dtype=np.uint8)
        expected[:, 2] = 255
    else:
        expected = np.fliplr(np.eye(3, dtype=np.uint8)) * 255
    np.testing.assert_array_equal(pix, expected)
    assert not read_csv(hm / "drift" / "drift.csv").any()
    assert (hm / "raw" / "dec0" / "bridge0.pgm").is_file()
    np.testing.assert_allclose(read_csv(hm / "block_norms" / "block_norms.csv").max(), 4.0)


def test_analyze_bridge_free_checkpoint_fails(root, base_ckpt, capsys):
    assert main(["analyze", "--checkpoint", str(base_ckpt)]) == 1
    assert "no bridge" in capsys.readouterr().err


def test_gradcheck_threshold_zero_always_fails(root, monkeypatch, capsys):
    import encbridge.cli as cli

    small = ModelConfig(vocab_size=8, d_model=4, n_heads=1, d_ff=4, n_enc_layers=1,
                        n_dec_layers=1, max_seq_len=5)
    monkeypatch.setattr(cli, "tiny_config", lambda: small)
    assert main(["gradcheck", "--threshold", "0"]) == 1
    assert capsys.readouterr().out.startswith("FAIL")
    assert main(["gradcheck"]) == 0
    assert capsys.readouterr().out.startswith("PASS")


def test_gradcheck_deterministic():
    small = ModelConfig(vocab_size=8, d_model=4, n_heads=2, d_ff=4, n_enc_layers=2,
                        n_dec_layers=2, max_seq_len=5)
    assert gradcheck_model(small, seed=3).errors == gradcheck_model(small, seed=3).errors


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_train_halts_on_non_finite_loss(root, base_ckpt, capsys):
    ckpt = load_checkpoint(base_ckpt)
    ckpt.params["out.bias"][4] = np.inf
    from encbridge.checkpoint import save_checkpoint

    bad = save_checkpoint(ckpt, base_ckpt.parent / "inf.ckpt")
    assert main(["finetune", "--base", str(bad), "--steps", "2", "--name", "halt", *TINY]) == 1
    assert (root / "halt" / "ckpt" / "halted.ckpt").is_file()
    assert "non-finite" in capsys.readouterr().err

import numpy as np
import pytest

from encbridge import tensor as T
from encbridge.checkpoint import (Checkpoint, CheckpointError, from_bytes, load_checkpoint,
                                  payload_bytes, save_checkpoint, to_bytes)
from encbridge.data import collate, gen_synthetic, make_batches, task_vocab
from encbridge.eval import evaluate_loss
from encbridge.experiments import (REPORT_COLUMNS, MissingBaseCheckpoint, experiment_config,
                                   workflow_experiment, write_report_csv)
from encbridge.model import ModelConfig, Seq2Seq, greedy_decode
from encbridge.train import (AdamState, NonFiniteGradient, TrainConfig, TrainingHalted, adam_step,
                             clip_grad_norm, train_run, write_loss_csv)

VOCAB = task_vocab("subst")
SMALL = ModelConfig(vocab_size=len(VOCAB), d_model=16, n_heads=2, d_ff=32, n_enc_layers=2,
                    n_dec_layers=2, max_seq_len=12)


@pytest.fixture(scope="module")
def pairs():
    return gen_synthetic("subst", 64, 0, (2, 6))


@pytest.fixture(scope="module")
def base(pairs):
    return train_run(TrainConfig(steps=5, batch_size=16), pairs, VOCAB, model_config=SMALL).checkpoint


# ---------------------------------------------------------------- adam


def test_adam_zero_grad_is_a_fixed_point():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    before = p["w"].copy()
    state = AdamState()
    for _ in range(3):
        adam_step(p, {"w": np.zeros(3)}, state, lr=0.1)
    np.testing.assert_array_equal(p["w"], before)


@pytest.mark.parametrize("g", [1e-3, 0.5, -7.0])
def test_adam_first_step_moves_by_lr(g):
    # bias-corrected m/sqrt(v) is g/|g| on step one
    p = {"w": np.array([2.0])}
    adam_step(p, {"w": np.array([g])}, AdamState(), lr=0.01, betas=(0.9, 0.98), eps=1e-9)
    expected = 2.0 - 0.01 * g / (abs(g) + 1e-9)
    assert p["w"][0] == pytest.approx(expected, rel=1e-12)


def test_adam_trajectories_repeat():
    def run():
        rng = np.random.default_rng(0)
        p = {"w": rng.standard_normal(5)}
        s = AdamState()
        for _ in range(20):
            adam_step(p, {"w": 2 * p["w"] + rng.standard_normal(5)}, s, lr=0.05)
        return p["w"]

    assert run().tobytes() == run().tobytes()


def test_adam_rejects_non_finite_grads():
    state = AdamState(step=4)
    with pytest.raises(NonFiniteGradient, match="step 5") as info:
        adam_step({"w": np.zeros(2)}, {"w": np.array([0.0, np.inf])}, state, lr=0.1)
    assert info.value.name == "w"


def test_adam_state_shape_mismatch():
    state = AdamState(m={"w": np.zeros(3)}, v={"w": np.zeros(3)})
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.ones(2)}, state, lr=0.1)


def test_clip_grad_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_grad_norm(grads, 1.0) == 5.0
    assert np.sqrt(grads["a"] ** 2 + grads["b"] ** 2) == pytest.approx(1.0, rel=1e-5)
    small = {"a": np.array([0.1])}
    clip_grad_norm(small, 1.0)
    assert small["a"][0] == 0.1


# ---------------------------------------------------------------- config


def test_train_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(steps=10, epochs=1)
    with pytest.raises(ValueError):
        TrainConfig(steps=None, epochs=None)
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(mode="pretrain")
    with pytest.raises(ValueError):
        TrainConfig(bridge_init="diag")


def test_one_epoch_accounting():
    assert TrainConfig(steps=None, epochs=1, batch_size=16).total_steps(1000) == 63
    assert TrainConfig(steps=None, epochs=2, batch_size=128).total_steps(1000) == 16


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip_is_bit_identical(tmp_path, pairs):
    result = train_run(TrainConfig(steps=3, batch_size=8, bridge_init="xavier"), pairs, VOCAB,
                       model_config=SMALL)
    path = save_checkpoint(result.checkpoint, tmp_path / "c.ckpt")
    loaded = load_checkpoint(path)
    assert loaded.vocab == VOCAB.tokens() and loaded.step == 3
    assert loaded.loss_history == result.losses
    assert set(loaded.opt_m) == set(result.checkpoint.params)
    b = collate(pairs[:5], VOCAB)
    with T.no_grad():
        before = result.model.forward(b.src, b.tgt_in).data
        after = loaded.to_model().forward(b.src, b.tgt_in).data
    assert before.tobytes() == after.tobytes()
    assert to_bytes(loaded) == path.read_bytes()


def test_checkpoint_header_layout(tmp_path):
    ckpt = Checkpoint({"vocab_size": 8, "d_model": 4, "n_heads": 1, "d_ff": 4},
                      ["a"], {"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
    raw = to_bytes(ckpt)
    assert raw[:8] == b"ENCBCKPT"
    assert int.from_bytes(raw[8:12], "little") == 1
    path = save_checkpoint(ckpt, tmp_path / "x.ckpt")
    assert payload_bytes(path) == np.arange(6, dtype="<f4").tobytes()


def test_corrupt_checkpoint_names_record(base, tmp_path):
    raw = bytearray(to_bytes(base))
    raw[-3] ^= 0xFF  # last record is the final adam.v entry
    with pytest.raises(CheckpointError, match=r"adam\.v/"):
        from_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="record"):
        from_bytes(bytes(raw[:-10]))
    with pytest.raises(CheckpointError, match="magic"):
        from_bytes(b"XXXXXXXX" + bytes(raw[8:]))


# ---------------------------------------------------------------- training


def test_train_run_is_deterministic(pairs):
    cfg = TrainConfig(steps=6, batch_size=8, seed=3, bridge_init="gca", mode="retrain")
    a = train_run(cfg, pairs, VOCAB, model_config=SMALL)
    b = train_run(cfg, pairs, VOCAB, model_config=SMALL)
    assert a.losses == b.losses
    assert to_bytes(a.checkpoint) == to_bytes(b.checkpoint)
    assert all(np.isfinite(a.losses))


def test_loss_csv(tmp_path):
    path = write_loss_csv([2.5, 1.25, 0.5], tmp_path / "loss.csv", log_every=2)
    assert path.read_text() == "step,loss\n0,2.5\n2,0.5\n"


def test_finetune_identity_bridge_matches_base_at_step_zero(base, pairs):
    cfg = TrainConfig(mode="finetune", steps=1, batch_size=16, seed=5, bridge_init="original")
    result = train_run(cfg, pairs, VOCAB, base=base)
    first = make_batches(pairs, VOCAB, 16, seed=5 * 100_003)[0]
    assert abs(result.losses[0] - evaluate_loss(base.to_model(), [first])) < 1e-5
    direct = train_run(TrainConfig(mode="finetune", steps=1, batch_size=16, seed=5), pairs, VOCAB,
                       base=base)
    assert direct.losses[0] == result.losses[0]


def test_finetune_requires_base(pairs):
    with pytest.raises(ValueError, match="base"):
        train_run(TrainConfig(mode="finetune", steps=1), pairs, VOCAB)


def test_empty_data_is_an_error():
    with pytest.raises(ValueError, match="no training pairs"):
        train_run(TrainConfig(steps=1), [], VOCAB, model_config=SMALL)


def test_freeze_base_trains_only_the_bridge(base, pairs):
    cfg = TrainConfig(mode="finetune", steps=3, batch_size=16, bridge_init="gca", freeze_base=True)
    result = train_run(cfg, pairs, VOCAB, base=base)
    for name, arr in result.checkpoint.params.items():
        if name.startswith("bridge."):
            assert not np.array_equal(arr, result.initial_bridge[int(name.split(".")[1])])
        else:
            np.testing.assert_array_equal(arr, base.params[name])


def test_non_finite_loss_halts_with_checkpoint(base, pairs):
    poisoned = Checkpoint(base.model_config, base.vocab, dict(base.params))
    poisoned.params["out.bias"] = base.params["out.bias"].copy()
    poisoned.params["out.bias"][5] = np.nan
    with pytest.raises(TrainingHalted, match="non-finite loss") as info:
        train_run(TrainConfig(mode="finetune", steps=3), pairs, VOCAB, base=poisoned)
    assert info.value.step == 0
    assert isinstance(info.value.checkpoint, Checkpoint)


def test_ones_body_init_trains_without_crashing(pairs):
    cfg = TrainConfig(steps=2, batch_size=8, body_init="ones", bridge_init="original")
    result = train_run(cfg, pairs, VOCAB, model_config=SMALL)
    assert all(np.isfinite(result.losses))
    assert (result.checkpoint.params["enc.0.attn.q.weight"] != 0).all()


# ---------------------------------------------------------------- experiments


def test_experiment_presets():
    assert experiment_config(1).bridge_init == "original" and experiment_config(1).mode == "finetune"
    assert experiment_config(2).bridge_init is None
    assert experiment_config(3).bridge_init == "gca"
    assert experiment_config(4).mode == "retrain" and experiment_config(4).bridge_init == "original"
    assert experiment_config(4, body_init="ones").body_init == "ones"
    with pytest.raises(ValueError):
        experiment_config(7)


def test_experiments_one_and_two_agree_at_step_zero(base, pairs):
    held = gen_synthetic("subst", 10, 9, (2, 6))
    r1 = workflow_experiment(1, pairs, held, VOCAB, base=base, steps=2, batch_size=16)
    r2 = workflow_experiment(2, pairs, held, VOCAB, base=base, steps=2, batch_size=16)
    assert r1.result.losses[0] == r2.result.losses[0]
    assert set(r1.row()) == set(REPORT_COLUMNS) == {"experiment", "evaluate_loss", "bleu"}
    assert r1.final_norms is not None and r2.final_norms is None
    np.testing.assert_array_equal(r1.initial_norms.values[:, -1], np.full(2, 4.0))


def test_finetune_experiments_need_base(pairs):
    for exp_id in (1, 2, 3):
        with pytest.raises(MissingBaseCheckpoint):
            workflow_experiment(exp_id, pairs, pairs[:4], VOCAB, steps=1)


def test_report_csv(tmp_path):
    path = write_report_csv([{"experiment": 2, "evaluate_loss": 1.5, "bleu": 36.25}],
                            tmp_path / "report.csv")
    assert path.read_text() == "experiment,evaluate_loss,bleu\n2,1.5,36.25\n"


@pytest.mark.slow
def test_copy_task_converges_with_defaults():
    v = task_vocab("copy")
    pairs = gen_synthetic("copy", 5000, 1)
    result = train_run(TrainConfig(), pairs, v, model_config=ModelConfig(vocab_size=len(v)))
    assert len(result.losses) == 2000
    # single batches of 16 are noisy, so score the final model on all of its data
    assert evaluate_loss(result.model, make_batches(pairs, v, 128, seed=None)) < 0.1
    src = collate([("a b c", "a b c")], v).src
    assert v.decode(greedy_decode(src, result.model, 10)[0]) == "a b c"

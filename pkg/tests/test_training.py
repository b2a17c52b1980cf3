import json
import os

import numpy as np
import pytest

from maskprune.checkpoint import load_checkpoint, save_checkpoint
from maskprune.data import Dataset, synth_classification, synth_sequences
from maskprune.gate import GateParam
from maskprune.models import LstmClassifier, LstmLm, Mlp, ToyConvNet
from maskprune.objective import ObjectiveConfig, l1_alpha
from maskprune.tensor import Tape, Tensor
from maskprune.training import (TrainConfig, TrainDivergence, evaluate, lr_at,
                                sgd_momentum_step, train, train_step)


def test_lr_schedule_from_reference_protocol():
    cfg = TrainConfig(epochs=160, base_lr=0.1, decay_epochs=(80, 120))
    assert lr_at(79, cfg) == 0.1
    assert lr_at(80, cfg) == pytest.approx(0.01)
    assert lr_at(120, cfg) == pytest.approx(0.001)
    flat = TrainConfig(epochs=10, base_lr=0.05)
    assert all(lr_at(e, flat) == 0.05 for e in range(10))


def test_sgd_plain_step():
    p = {"w": np.array([10.0])}
    v = {}
    sgd_momentum_step(p, {"w": np.array([2.0])}, v, lr=1.0, momentum=0.0)
    assert np.array_equal(p["w"], [8.0])


def test_sgd_momentum_two_steps_hand_iterated():
    p = {"w": np.array([0.0])}
    v = {}
    for _ in range(2):
        sgd_momentum_step(p, {"w": np.array([1.0])}, v, lr=1.0, momentum=0.9)
    assert np.allclose(p["w"], [-2.9])   # 1 then 1.9


def test_sgd_zero_gradient_no_motion():
    p = {"w": np.array([3.0, -1.0])}
    sgd_momentum_step(p, {"w": np.zeros(2)}, {}, lr=0.5, momentum=0.9)
    assert np.array_equal(p["w"], [3.0, -1.0])


def test_sgd_shape_mismatch():
    with pytest.raises(ValueError):
        sgd_momentum_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, {}, 0.1, 0.9)


class _FixedLogits:
    """Stub classifier emitting pre-baked logits for evaluate()."""

    task = "classification"

    def __init__(self, logits):
        self.logits = logits
        self.cursor = 0

    def forward(self, tape, x, mode="eval"):
        out = Tensor(self.logits[self.cursor:self.cursor + len(x)])
        self.cursor += len(x)
        return out


def test_evaluate_perfect_and_chance():
    labels = np.arange(2400) % 10
    perfect = np.eye(10)[labels] * 5.0
    ds = Dataset(np.zeros((2400, 1)), labels, "test")
    assert evaluate(_FixedLogits(perfect), ds)["test_error"] == 0.0
    rng = np.random.default_rng(0)
    random_logits = rng.normal(size=(2400, 10))
    err = evaluate(_FixedLogits(random_logits), ds)["test_error"]
    assert abs(err - 0.9) < 0.03


def test_evaluate_uniform_lm_perplexity_equals_vocab():
    model = LstmLm(vocab=11, embed_dim=4, hidden=5, seed=0)
    for arr in model.params().values():
        arr[...] = 0.0
    ds = synth_sequences(40, vocab=11, length=6, seed=1, kind="markov")
    ppl = evaluate(model, ds)["test_perplexity"]
    assert ppl == pytest.approx(11.0, rel=1e-12)


def test_evaluate_empty_dataset_rejected():
    with pytest.raises(ValueError):
        evaluate(_FixedLogits(np.zeros((0, 2))),
                 Dataset(np.zeros((0, 1)), np.zeros(0, dtype=int), "test"))


def test_alpha_strictly_decreases_under_pure_l1():
    # zero task gradient: the l1 pull shrinks every active alpha each step
    gate = GateParam.create("filter", 4, name="g")
    gate.alpha[:] = [1.0, 0.4, 0.05, 0.8]
    velocity = {}
    lam, lr = 1e-2, 0.5
    prev = gate.alpha.copy()
    for _ in range(30):
        tape = Tape()
        a = tape.param("g.alpha", gate.alpha)
        grads = tape.backward(l1_alpha([a]))
        sgd_momentum_step({"g.alpha": gate.alpha},
                          {"g.alpha": lam * grads["g.alpha"].data},
                          velocity, lr, momentum=0.0)
        active = np.abs(prev) > gate.threshold
        assert np.all(np.abs(gate.alpha[active]) < np.abs(prev[active]))
        prev = gate.alpha.copy()


def _tiny_image_data(seed=0, n=96, classes=3):
    train = synth_classification(n, classes=classes, seed=seed, margin=9.0,
                                 image_shape=(2, 6, 6))
    test = synth_classification(48, classes=classes, seed=seed, margin=9.0,
                                image_shape=(2, 6, 6), split="test")
    return train, test


def _tiny_convnet(gated, seed=0, **kw):
    return ToyConvNet(channels=(4, 4), in_channels=2, input_hw=(6, 6), classes=3,
                      seed=seed, granularity="filter" if gated else None, **kw)


def test_identity_reduction_convnet_five_steps_bit_exact():
    train, _ = _tiny_image_data()
    cfg = TrainConfig(epochs=1, batch_size=16, base_lr=0.05, seed=3,
                      freeze_gates=True)
    gated, plain = _tiny_convnet(True), _tiny_convnet(False)
    vel_g, vel_p = {}, {}
    for step in range(5):
        lo = step * 16
        xb = train.inputs[lo:lo + 16]
        yb = train.labels[lo:lo + 16]
        pg = train_step(gated, xb, yb, cfg, vel_g, 0.05, step)
        pp = train_step(plain, xb, yb, cfg, vel_p, 0.05, step)
        assert pg["task_loss"] == pp["task_loss"]
    plain_params = plain.params()
    for name, arr in gated.params().items():
        if name.endswith(".alpha"):
            assert np.all(arr == 1.0)
            continue
        assert np.array_equal(arr, plain_params[name]), name


def test_identity_reduction_lstm_five_steps_bit_exact():
    train = synth_sequences(80, vocab=8, length=6, seed=4)
    cfg = TrainConfig(epochs=1, batch_size=16, base_lr=0.05, seed=5,
                      freeze_gates=True)
    gated = LstmClassifier(vocab=8, embed_dim=6, hidden=8, seed=6,
                           granularity="node")
    plain = LstmClassifier(vocab=8, embed_dim=6, hidden=8, seed=6)
    vel_g, vel_p = {}, {}
    for step in range(5):
        lo = step * 16
        xb = train.inputs[lo:lo + 16]
        yb = train.labels[lo:lo + 16]
        pg = train_step(gated, xb, yb, cfg, vel_g, 0.05, step)
        pp = train_step(plain, xb, yb, cfg, vel_p, 0.05, step)
        assert pg["task_loss"] == pp["task_loss"]
    plain_params = plain.params()
    for name, arr in gated.params().items():
        if not name.endswith(".alpha"):
            assert np.array_equal(arr, plain_params[name]), name


def test_train_emits_one_record_per_epoch(tmp_path):
    train_ds, test_ds = _tiny_image_data(seed=7)
    cfg = TrainConfig(epochs=3, batch_size=16, base_lr=0.05, seed=8,
                      objective=ObjectiveConfig(lambda1=1e-3, lambda2=1e-4))
    model = _tiny_convnet(True, seed=9)
    metrics = train(model, train_ds, test_ds, cfg, out_dir=str(tmp_path))
    assert len(metrics) == 3
    lines = (tmp_path / "metrics.jsonl").read_text().strip().split("\n")
    assert len(lines) == 3
    rec = json.loads(lines[-1])
    for key in ("epoch", "lr", "task_loss", "l1_term", "l2_term", "hinge_term",
                "test_error", "active_counts", "pruned_ratio", "schema_version"):
        assert key in rec


def test_train_determinism_metric_stream():
    train_ds, test_ds = _tiny_image_data(seed=10)
    def run():
        cfg = TrainConfig(epochs=2, batch_size=16, base_lr=0.05, seed=11,
                          objective=ObjectiveConfig(lambda1=1e-3))
        return train(_tiny_convnet(True, seed=12), train_ds, test_ds, cfg)
    m1, m2 = run(), run()
    assert json.dumps(m1, sort_keys=True) == json.dumps(m2, sort_keys=True)


def test_nan_abort_names_first_bad_tensor():
    train_ds, test_ds = _tiny_image_data(seed=13)
    model = _tiny_convnet(True, seed=14)
    model.head_w[0, 0] = np.nan
    cfg = TrainConfig(epochs=1, batch_size=16, base_lr=0.05, seed=15)
    with pytest.raises(TrainDivergence, match="non-finite"):
        train(model, train_ds, test_ds, cfg)


def test_checkpoint_round_trip_reproduces_evaluation(tmp_path):
    train_ds, test_ds = _tiny_image_data(seed=16)
    model = _tiny_convnet(True, seed=17)
    cfg = TrainConfig(epochs=2, batch_size=16, base_lr=0.05, seed=18,
                      objective=ObjectiveConfig(lambda1=1e-3))
    train(model, train_ds, test_ds, cfg)
    before = evaluate(model, test_ds)["test_error"]
    save_checkpoint(str(tmp_path / "ck"), model.persistent_arrays(), model.gates(),
                    {"note": "test"})
    arrays, manifest = load_checkpoint(str(tmp_path / "ck"))
    fresh = _tiny_convnet(True, seed=99)    # different init, then overwritten
    fresh.load_params(arrays)
    after = evaluate(fresh, test_ds)["test_error"]
    assert before == after
    for name, arr in model.persistent_arrays().items():
        assert np.array_equal(arrays[name], arr)
    assert manifest["meta"]["note"] == "test"


def test_checkpoint_rejects_corrupt_archive(tmp_path):
    model = _tiny_convnet(True, seed=19)
    save_checkpoint(str(tmp_path / "ck"), model.params(), model.gates())
    bin_path = tmp_path / "ck" / "tensors.bin"
    bin_path.write_bytes(bin_path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="corrupt"):
        load_checkpoint(str(tmp_path / "ck"))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(base_lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(decay_factor=1.0)
    with pytest.raises(ValueError):
        TrainConfig(decay_epochs=(10, 5))

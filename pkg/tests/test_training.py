import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrgnn.data import GraphCache, LabeledPairDataset, PairRecord, generate_synthetic
from mrgnn.model import ModelConfig, MrGnnModel
from mrgnn.training import (
    AdamState,
    NumericFailure,
    SplitSpec,
    TrainConfig,
    adam_step,
    evaluate,
    prepare,
    sample_loss_and_grads,
    split_dataset,
    train,
)

SMALL = ModelConfig(conv_widths=(16, 16, 16), c_g=8, c_k=8)


def dummy(q):
    return LabeledPairDataset([PairRecord("C", "C" * (i % 5 + 1), i % 2) for i in range(q)], 2, {})


def samples(n=12, seed=0):
    return prepare(generate_synthetic(n, seed), GraphCache(), SMALL.d_max)


def snapshot(model):
    return {k: v.copy() for k, v in model.params.snapshot().items()}


def same_params(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


# --- splits -------------------------------------------------------------------------


@pytest.mark.parametrize("q, sizes", [(19624, (14130, 3532, 1962)), (10, (8, 1, 1))])
def test_nine_to_one_split_sizes(q, sizes):
    tr, va, te = split_dataset(dummy(q), SplitSpec(seed=3))
    assert (len(tr), len(va), len(te)) == sizes


def test_sixty_twenty_twenty_split():
    tr, va, te = split_dataset(dummy(100), SplitSpec("fractions_60_20_20", seed=0))
    assert (len(tr), len(va), len(te)) == (60, 20, 20)


def test_split_errors():
    with pytest.raises(ValueError, match="too small"):
        split_dataset(dummy(9), SplitSpec())
    with pytest.raises(ValueError):
        split_dataset(dummy(20), SplitSpec("custom", fractions=(0.5, 0.2, 0.2)))


@settings(max_examples=50, deadline=None)
@given(q=st.integers(10, 300), seed=st.integers(0, 10**6), mode=st.sampled_from(["ratio_9_1_with_fifth_val", "fractions_60_20_20"]))
def test_split_is_a_deterministic_partition(q, seed, mode):
    data = LabeledPairDataset([PairRecord(f"C{i}", "C", 0) for i in range(q)], 2, {})
    parts = split_dataset(data, SplitSpec(mode, seed))
    again = split_dataset(data, SplitSpec(mode, seed))
    ids = [[r.smiles_a for r in p.records] for p in parts]
    assert ids == [[r.smiles_a for r in p.records] for p in again]
    flat = [x for p in ids for x in p]
    assert sorted(flat) == sorted(r.smiles_a for r in data.records)
    assert len(set(flat)) == q


# --- optimizer and loop --------------------------------------------------------------


def test_adam_first_step_moves_by_learning_rate():
    model = MrGnnModel(SMALL)
    before = model.params["head.b2"].data.copy()
    grads = {"head.b2": np.array([[0.3, -2.0]])}
    adam_step(model, grads, AdamState(), TrainConfig(learning_rate=1e-3))
    np.testing.assert_allclose(model.params["head.b2"].data - before, [[-1e-3, 1e-3]], rtol=1e-6)


def test_zero_learning_rate_leaves_parameters_bit_identical():
    model = MrGnnModel(SMALL, seed=1)
    before = snapshot(model)
    train(model, samples(8), TrainConfig(learning_rate=0.0, epochs=3, batch_size=3))
    assert same_params(before, model.params.snapshot())


def test_single_pair_overfits():
    model = MrGnnModel(ModelConfig(conv_widths=(32, 32, 32), c_g=16, c_k=16), seed=0)
    one = samples(2)[:1]
    result = train(model, one, TrainConfig(epochs=200, batch_size=1))
    losses = [h["train_loss"] for h in result.history]
    assert losses[-1] < 0.01
    # trending down: every 20-epoch window ends lower than it starts
    assert all(losses[i + 20] < losses[i] for i in range(0, 180, 20))


def test_training_is_bit_reproducible():
    data = samples(16)

    def run():
        model = MrGnnModel(SMALL, seed=7)
        result = train(model, data[:12], TrainConfig(epochs=3, batch_size=4, seed=7), data[12:])
        return model.params.snapshot(), result.history

    (p1, h1), (p2, h2) = run(), run()
    assert same_params(p1, p2)
    assert h1 == h2


def test_early_stopping_restores_best_parameters():
    data = samples(16)
    model = MrGnnModel(SMALL, seed=2)
    seen = []
    result = train(model, data[:12], TrainConfig(learning_rate=5e-2, epochs=30, batch_size=4, patience=2), data[12:],
                   on_epoch=lambda e: seen.append(snapshot(model)))
    assert len(result.history) <= 30
    best = min(range(len(result.history)), key=lambda i: result.history[i]["val_loss"])
    assert result.history[best]["epoch"] == result.best_epoch
    assert same_params(seen[best], model.params.snapshot())
    if len(result.history) < 30:
        assert len(result.history) - 1 - best == 2


def test_epoch_log_fields():
    data = samples(12)
    log = train(MrGnnModel(SMALL), data[:8], TrainConfig(epochs=2, batch_size=4), data[8:]).history
    assert [e["epoch"] for e in log] == [0, 1]
    assert {"train_loss", "val_loss", "val_metrics"} <= set(log[0])
    assert {"auc", "accuracy", "recall", "f1"} <= set(log[0]["val_metrics"])


def test_nan_loss_names_the_sample():
    data = samples(6)
    model = MrGnnModel(SMALL)
    model.params["head.b2"].data[0, 0] = np.nan
    with pytest.raises(NumericFailure, match="training sample"):
        train(model, data, TrainConfig(epochs=1, batch_size=2))


def test_label_outside_model_range():
    data = samples(4)
    bad = [type(data[0])(data[0].batch, 5)]
    with pytest.raises(ValueError, match="label 5"):
        train(MrGnnModel(SMALL), bad, TrainConfig(epochs=1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_gradient_step_decreases_loss_on_most_inits():
    pair = samples(2)[0]
    failures = 0
    for seed in range(50):
        model = MrGnnModel(SMALL, seed=seed)
        before, grads = sample_loss_and_grads(model, pair)
        for name, g in grads.items():
            model.params[name].data -= 1e-4 * g
        after, _ = sample_loss_and_grads(model, pair)
        failures += after > before
    assert failures <= 2


# --- evaluation ----------------------------------------------------------------------


def test_evaluate_is_pure_and_uniform_model_is_at_chance():
    data = samples(40, seed=3)
    model = MrGnnModel(SMALL)
    model.zero_()
    before = snapshot(model)
    report = evaluate(model, data)
    assert same_params(before, model.params.snapshot())
    assert report["auc"] == 0.5
    assert report["accuracy"] == pytest.approx(0.5)  # argmax of a tie is class 0
    assert report.loss == pytest.approx(math.log(2))


def test_zero_lr_metrics_do_not_depend_on_batch_size():
    data = samples(10)
    reports = []
    for bs in (1, 3, 10):
        model = MrGnnModel(SMALL, seed=4)
        train(model, data, TrainConfig(learning_rate=0.0, epochs=1, batch_size=bs))
        reports.append(evaluate(model, data).to_json())
    assert len(set(reports)) == 1


def test_resume_continues_epoch_numbering():
    data = samples(12)
    model = MrGnnModel(SMALL, seed=5)
    first = train(model, data, TrainConfig(epochs=2, batch_size=4))
    second = train(model, data, TrainConfig(epochs=4, batch_size=4), optimizer=first.optimizer, start_epoch=2)
    assert [e["epoch"] for e in second.history] == [2, 3]
    # 3 batches per epoch over 4 epochs, moments carried across the restart
    assert second.optimizer.steps["head.w2"] == 12

import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from segdrive.dataset import NormStats, normalize_targets
from segdrive.errors import ConfigError, DataError, TrainingError
from segdrive.loader import SequenceDataset
from segdrive.models import build_model
from segdrive.training import (
    SCHEDULE_AB,
    SCHEDULE_C,
    BestTracker,
    LrSchedule,
    TrainConfig,
    evaluate_split,
    loss_fn,
    lr_at_epoch,
    make_batches,
    mse_per_target,
    predict_normalized,
    read_history,
    train,
    write_history,
)

from conftest import make_sample


class TensorSet:
    augment = None

    def __init__(self, x, y_norm, raw):
        self.x, self.y, self.raw_targets = x, y_norm, raw

    def __len__(self):
        return len(self.x)

    def __getitem__(self, i):
        return self.x[i], self.y[i], i


class Echo(torch.nn.Module):
    """Returns the first two input features (used as oracle predictors)."""

    def __init__(self):
        super().__init__()
        self.dummy = torch.nn.Parameter(torch.zeros(1, dtype=torch.float64))

    def forward(self, x):
        return x[:, :2] + 0 * self.dummy


# ---------------------------------------------------------------- schedules


def test_schedule_examples():
    assert lr_at_epoch(SCHEDULE_AB, 0) == 0.0003
    assert lr_at_epoch(SCHEDULE_AB, 10) == 0.0001
    assert lr_at_epoch(SCHEDULE_AB, 89) == 0.00003
    assert lr_at_epoch(SCHEDULE_C, 25) == pytest.approx(0.0015, rel=1e-12)
    assert lr_at_epoch(SCHEDULE_C, 45) == pytest.approx(0.000375, rel=1e-12)


@pytest.mark.parametrize("schedule", [SCHEDULE_AB, SCHEDULE_C])
def test_schedule_non_increasing(schedule):
    rates = [lr_at_epoch(schedule, e) for e in range(200)]
    assert all(b <= a for a, b in zip(rates, rates[1:]))


def test_schedule_errors():
    with pytest.raises(ValueError):
        lr_at_epoch(SCHEDULE_AB, -1)
    with pytest.raises(ConfigError):
        LrSchedule(1e-3, ((5, 1e-4), (5, 1e-5)))
    with pytest.raises(ConfigError):
        LrSchedule(-1e-3)


def test_schedule_from_mapping():
    assert LrSchedule.from_mapping({"initial": 0.003, "halve_at": [20, 30, 40]}) == SCHEDULE_C
    s = LrSchedule.from_mapping({"initial": 0.01, "steps": [[3, 0.001]]})
    assert lr_at_epoch(s, 2) == 0.01 and lr_at_epoch(s, 3) == 0.001


def test_train_config_defaults():
    assert TrainConfig("A").epochs == 90
    assert TrainConfig("B").epochs == 90
    assert TrainConfig("C").epochs == 50
    assert TrainConfig("C").schedule == SCHEDULE_C
    assert TrainConfig("A").batch_size == 13
    with pytest.raises(ConfigError):
        TrainConfig("A", batch_size=0)


# ---------------------------------------------------------------- loss


def test_loss_examples():
    z = torch.zeros(1, 2)
    assert loss_fn(z, z).item() == 0.0
    assert loss_fn(torch.ones(1, 2), z).item() == 2.0
    pred = torch.tensor([[0.0, 0.0], [2.0, 0.0]])
    # speed: (0 + 4) / 2 = 2, angle: 0
    assert loss_fn(pred, torch.zeros(2, 2)).item() == 2.0


# values on a 1e-3 grid so squared differences never underflow
_grid = st.integers(-10 ** 6, 10 ** 6).map(lambda v: v / 1000)
_pairs = st.lists(st.tuples(_grid, _grid), min_size=1, max_size=8)


@given(_pairs, _pairs)
def test_loss_non_negative_and_zero_iff_equal(a, b):
    n = min(len(a), len(b))
    pa = torch.tensor(a[:n], dtype=torch.float64)
    pb = torch.tensor(b[:n], dtype=torch.float64)
    assert loss_fn(pa, pb).item() >= 0
    assert loss_fn(pa, pa).item() == 0
    if not torch.equal(pa, pb):
        assert loss_fn(pa, pb).item() > 0


# ---------------------------------------------------------------- best checkpoints


def test_scripted_traces_pick_argmin():
    tracker = BestTracker()
    for e, (s, a) in enumerate(zip([5, 4, 6], [9, 7, 8])):
        tracker.update(e, s, a, lambda e=e: {"epoch": e})
    assert tracker.best["speed"].meta.epoch == 1
    assert tracker.best["angle"].meta.epoch == 1


def test_bests_may_come_from_different_epochs():
    tracker = BestTracker()
    for e, (s, a) in enumerate(zip([3, 4, 2, 5], [1, 5, 6, 0.5])):
        tracker.update(e, s, a, lambda e=e: {"epoch": e})
    assert tracker.best["speed"].meta.epoch == 2
    assert tracker.best["speed"].state_dict == {"epoch": 2}
    assert tracker.best["angle"].meta.epoch == 3
    assert tracker.best["angle"].meta.best_for == "angle"


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), min_size=1, max_size=30))
def test_best_equals_prefix_minimum(trace):
    tracker = BestTracker()
    for e, (s, a) in enumerate(trace):
        tracker.update(e, s, a, dict)
        assert tracker.best["speed"].meta.val_mse_speed == min(t[0] for t in trace[: e + 1])
        assert tracker.best["angle"].meta.val_mse_angle == min(t[1] for t in trace[: e + 1])


def test_train_keeps_argmin_epochs(monkeypatch, unit_stats):
    import segdrive.training as tr

    speed_trace, angle_trace = [5.0, 4.0, 6.0, 4.5], [9.0, 7.0, 8.0, 6.0]
    calls = iter(zip(speed_trace, angle_trace))
    monkeypatch.setattr(tr, "evaluate_split", lambda *a, **k: next(calls))
    x = torch.randn(6, 4)
    data = TensorSet(x, torch.zeros(6, 2), np.zeros((6, 2)))
    result = train(Echo(), data, data, TrainConfig("A", epochs=4, augment=False), unit_stats)
    assert result.best_speed.meta.epoch == int(np.argmin(speed_trace))
    assert result.best_angle.meta.epoch == int(np.argmin(angle_trace))
    assert [r["val_mse_speed"] for r in result.history] == speed_trace


# ---------------------------------------------------------------- batching


def test_make_batches_folds_singleton():
    rng = np.random.default_rng(0)
    b = make_batches(27, 13, rng)
    assert sorted(len(x) for x in b) == [13, 14]
    assert sorted(np.concatenate(b).tolist()) == list(range(27))
    assert sorted(len(x) for x in make_batches(26, 13, rng)) == [13, 13]
    assert [len(x) for x in make_batches(1, 13, rng)] == [1]


# ---------------------------------------------------------------- evaluation


def _echo_split(raw, stats):
    x = torch.from_numpy(normalize_targets(raw, stats))
    return TensorSet(x, x.float(), raw)


def test_perfect_predictor_scores_zero():
    stats = NormStats((0, 0, 0), (1, 1, 1), 10.0, 3.0, -2.0, 7.0)
    raw = np.random.default_rng(0).normal([10, -2], [3, 7], size=(20, 2))
    mse_s, mse_a = evaluate_split(Echo(), _echo_split(raw, stats), stats)
    assert mse_s == pytest.approx(0.0, abs=1e-20)
    assert mse_a == pytest.approx(0.0, abs=1e-20)


def test_constant_mean_predictor_scores_variance():
    raw = np.random.default_rng(1).normal([15, 0], [4, 30], size=(50, 2))
    stats = NormStats((0, 0, 0), (1, 1, 1), raw[:, 0].mean(), 2.0, raw[:, 1].mean(), 5.0)
    # inputs that normalize to zero -> the model predicts the means
    data = TensorSet(torch.zeros(50, 2, dtype=torch.float64), torch.zeros(50, 2), raw)
    mse_s, mse_a = evaluate_split(Echo(), data, stats)
    var_s = sum((v - sum(raw[:, 0]) / 50) ** 2 for v in raw[:, 0]) / 50
    var_a = sum((v - sum(raw[:, 1]) / 50) ** 2 for v in raw[:, 1]) / 50
    assert mse_s == pytest.approx(var_s, rel=1e-12)
    assert mse_a == pytest.approx(var_a, rel=1e-12)


def test_mse_is_order_invariant():
    rng = np.random.default_rng(2)
    pred, truth = rng.normal(size=(40, 2)), rng.normal(size=(40, 2))
    perm = rng.permutation(40)
    a = mse_per_target(pred, truth)
    b = mse_per_target(pred[perm], truth[perm])
    assert a == pytest.approx(b, rel=1e-14)


def test_denormalized_mse_equals_scaled_normalized_mse():
    rng = np.random.default_rng(3)
    stats = NormStats((0, 0, 0), (1, 1, 1), 12.0, 4.5, 1.0, 33.0)
    raw = rng.normal([12, 1], [4.5, 33], size=(64, 2))
    noisy = raw + rng.normal(0, [1.0, 10.0], size=raw.shape)
    data = _echo_split(noisy, stats)
    data.raw_targets = raw
    direct = evaluate_split(Echo(), data, stats)
    norm_mse = mse_per_target(normalize_targets(noisy, stats), normalize_targets(raw, stats))
    assert direct[0] == pytest.approx(stats.speed_std ** 2 * norm_mse[0], rel=1e-6)
    assert direct[1] == pytest.approx(stats.angle_std ** 2 * norm_mse[1], rel=1e-6)


def test_empty_split_rejected(unit_stats):
    empty = TensorSet(torch.zeros(0, 2), torch.zeros(0, 2), np.zeros((0, 2)))
    with pytest.raises(DataError):
        evaluate_split(Echo(), empty, unit_stats)
    data = TensorSet(torch.zeros(3, 2), torch.zeros(3, 2), np.zeros((3, 2)))
    with pytest.raises(DataError):
        train(Echo(), data, empty, TrainConfig("A", epochs=1), unit_stats)


def test_prediction_refuses_augmented_dataset(rng, unit_stats):
    from segdrive.augment import AugmentConfig

    ds = SequenceDataset([make_sample(rng)], unit_stats, 20, "A", augment=AugmentConfig())
    with pytest.raises(DataError):
        predict_normalized(Echo(), ds)


# ---------------------------------------------------------------- training runs


def _sample_set(rng, n, stats, mode, augment=None, hw=(18, 32)):
    samples = [make_sample(rng, hw=hw, chapter=f"c{i % 2}", start=10 * i) for i in range(n)]
    return SequenceDataset(samples, stats, 20, mode, augment=augment)


def test_training_is_deterministic(tiny_arch):
    from segdrive.augment import AugmentConfig

    stats = NormStats((128, 128, 128), (64, 64, 64), 12.0, 4.0, 0.0, 20.0)
    histories = []
    for _ in range(2):
        rng = np.random.default_rng(9)
        tr = _sample_set(rng, 10, stats, "A", augment=AugmentConfig())
        va = _sample_set(rng, 4, stats, "A")
        torch.manual_seed(3)
        model = build_model("A", tiny_arch)
        result = train(model, tr, va, TrainConfig("A", epochs=3, seed=4), stats)
        histories.append(result.history)
    for a, b in zip(*histories):
        for k in a:
            assert a[k] == pytest.approx(b[k], abs=1e-6)


def test_non_finite_loss_aborts(unit_stats):
    x = torch.full((4, 2), math.nan)
    data = TensorSet(x, torch.zeros(4, 2), np.zeros((4, 2)))
    with pytest.raises(TrainingError, match="epoch 0, batch 0"):
        train(Echo(), data, data, TrainConfig("A", epochs=1), unit_stats)


def test_history_csv_round_trip(tmp_path):
    hist = [{"epoch": e, "lr": 3e-4, "train_loss": 1.0 / (e + 1), "val_mse_speed": 2.0, "val_mse_angle": 3.5}
            for e in range(5)]
    write_history(hist, tmp_path / "h.csv")
    back = read_history(tmp_path / "h.csv")
    assert back == hist


def test_history_malformed_row_names_row(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("epoch,lr,train_loss,val_mse_speed,val_mse_angle\n0,0.1,1,1,1\n1,0.1,oops,1,1\n")
    with pytest.raises(DataError, match="row 3"):
        read_history(p)

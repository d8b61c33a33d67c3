import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dcacsi import nn_core as nn
from dcacsi.scenet import SCEnet, SCEnetConfig
from dcacsi.training import (DEFAULT_RATE_WEIGHTS, Checkpoint, CheckpointError, TrainConfig,
                             TrainingDiverged, derive_seed, train, weighted_loss)

CFG = SCEnetConfig(k=2, n_t=16, refine_blocks=1)


def tiny_data(n, seed):
    rng = np.random.default_rng(seed)
    return 0.3 * (rng.standard_normal((n, 4, 16)) + 1j * rng.standard_normal((n, 4, 16)))


def tiny_cfg(**kw):
    base = dict(epochs=3, batch_size=8, lr_switch_epoch=2, seed=5)
    base.update(kw)
    return TrainConfig(**base)


def test_loss_zero_for_perfect_reconstruction():
    t = np.ones((3, 2, 4))
    loss, grads = weighted_loss(t, [t.copy()] * 4, DEFAULT_RATE_WEIGHTS)
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads)


def test_single_unit_error_costs_one_over_batch():
    t = np.zeros((5, 2, 4))
    y = t.copy()
    y[2, 1, 3] = 1.0
    loss, _ = weighted_loss(t, [y], [1.0])
    assert loss == pytest.approx(1 / 5)


def test_equal_per_rate_errors_give_that_error():
    rng = np.random.default_rng(0)
    t = rng.standard_normal((4, 2, 8))
    # every sample has squared error e at every rate
    e = 0.37
    outs = []
    for _ in range(4):
        d = rng.standard_normal((4, 2, 8))
        d *= np.sqrt(e / (d**2).sum(axis=(1, 2), keepdims=True))
        outs.append(t + d)
    loss, _ = weighted_loss(t, outs, DEFAULT_RATE_WEIGHTS)
    assert loss == pytest.approx(e)


@pytest.mark.parametrize("squared", [True, False])
def test_loss_gradient_matches_finite_differences(squared):
    rng = np.random.default_rng(1)
    t = rng.standard_normal((3, 2, 4))
    outs = [rng.standard_normal((3, 2, 4)) for _ in range(2)]
    _, grads = weighted_loss(t, outs, [0.7, 0.3], squared)
    for y, g in zip(outs, grads):
        num = nn.numeric_grad(lambda: weighted_loss(t, outs, [0.7, 0.3], squared)[0], y, 1e-6)
        assert nn.relative_error(g, num) < 1e-8


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (2, 3), elements=st.integers(-80, 80).map(lambda v: v / 8)),
       hnp.arrays(np.float64, (2, 3), elements=st.integers(-80, 80).map(lambda v: v / 8)))
def test_loss_non_negative_and_zero_iff_equal(t, y):
    # grid values: tiny differences would underflow when squared
    loss, _ = weighted_loss(t, [y], [1.0])
    assert loss >= 0
    assert (loss == 0) == np.array_equal(t, y)


def test_loss_shape_checks():
    with pytest.raises(ValueError):
        weighted_loss(np.zeros((2, 3)), [np.zeros((2, 4))], [1.0])
    with pytest.raises(ValueError):
        weighted_loss(np.zeros((2, 3)), [np.zeros((2, 3))], [0.5, 0.5])


def test_train_config_validation_and_schedule():
    cfg = TrainConfig(lr=1e-3, lr_after=5e-4, lr_switch_epoch=300)
    assert cfg.lr_at(299) == 1e-3 and cfg.lr_at(300) == 5e-4
    assert sum(cfg.rate_weights) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        TrainConfig(rate_weights=(0.5, 0.6))
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_batch_larger_than_training_set_rejected():
    with pytest.raises(ValueError):
        train(tiny_data(2, 0), tiny_data(2, 1), SCEnet(CFG), tiny_cfg(batch_size=100))


def test_derived_seeds_differ_by_label():
    assert derive_seed(1, "data") != derive_seed(1, "init")
    assert derive_seed(1, "data") == derive_seed(1, "data")
    assert 0 <= derive_seed(7, "shuffle") < 2**63


def test_zero_epochs_leave_parameters_unchanged():
    model = SCEnet(CFG, seed=1)
    before = {n: a.copy() for n, a in model.params.items()}
    report = train(tiny_data(8, 0), tiny_data(4, 1), model, tiny_cfg(epochs=0))
    assert report.rows == []
    for n, a in model.params.items():
        np.testing.assert_array_equal(a, before[n])


def test_training_reduces_loss_and_is_reproducible(tmp_path):
    reports = []
    for run in range(2):
        model = SCEnet(CFG, seed=1)
        reports.append(train(tiny_data(16, 0), tiny_data(4, 1), model, tiny_cfg(epochs=4),
                             out_dir=tmp_path / str(run)))
    a, b = reports
    assert a.to_csv() == b.to_csv()
    assert a.rows[-1][1] < a.rows[0][1]
    assert a.to_csv().splitlines()[0] == "epoch,loss,nmse_cr2,nmse_cr4,nmse_cr8,nmse_cr16"
    assert (tmp_path / "0" / "best.ckpt").read_bytes() == (tmp_path / "1" / "best.ckpt").read_bytes()
    best = min(a.rows, key=lambda r: r[2])
    assert a.best_epoch == best[0]


def test_resume_reproduces_uninterrupted_run(tmp_path):
    train_x, val_x = tiny_data(16, 0), tiny_data(4, 1)
    full = SCEnet(CFG, seed=1)
    full_report = train(train_x, val_x, full, tiny_cfg(epochs=4))

    part = SCEnet(CFG, seed=1)
    train(train_x, val_x, part, tiny_cfg(epochs=2), out_dir=tmp_path)
    ckpt = Checkpoint.load(tmp_path / "last.ckpt")
    assert ckpt.epoch == 2
    resumed = SCEnet(CFG, seed=99)
    rest = train(train_x, val_x, resumed, tiny_cfg(epochs=4), resume=ckpt)
    assert [r[0] for r in rest.rows] == [3, 4]
    assert rest.rows == full_report.rows[2:]
    for n in full.params:
        np.testing.assert_array_equal(resumed.params[n], full.params[n])


def test_checkpoint_roundtrip_bytes_and_moments(tmp_path):
    model = SCEnet(CFG, seed=1)
    train(tiny_data(8, 0), tiny_data(4, 1), model, tiny_cfg(epochs=1), out_dir=tmp_path)
    raw = (tmp_path / "last.ckpt").read_bytes()
    assert raw[:8] == b"SCEP0001"
    ckpt = Checkpoint.from_bytes(raw)
    assert ckpt.to_bytes() == raw
    assert ckpt.adam_t == 4 and ckpt.epoch == 1  # 32 segments, batch 8
    assert "norm_scale" not in ckpt.meta and ckpt.meta["best_epoch"] == 1

    # first post-resume Adam step matches the optimizer that never stopped
    opt_a = nn.Adam()
    model_a = SCEnet(CFG, seed=2)
    ckpt.restore(model_a, opt_a)
    opt_b = nn.Adam()
    model_b = ckpt.model()
    Checkpoint.from_bytes(raw).restore(model_b, opt_b)
    grads = {n: np.full_like(a, 0.01) for n, a in model_a.params.items()}
    opt_a.step(model_a.params, grads)
    opt_b.step(model_b.params, grads)
    for n in model_a.params:
        np.testing.assert_array_equal(model_a.params[n], model_b.params[n])
    assert any(np.any(a != 0) for a in opt_a.m.values())


def test_checkpoint_refuses_other_architecture_and_damage(tmp_path):
    model = SCEnet(CFG, seed=1)
    ckpt = Checkpoint.capture(model, nn.Adam(), 0, 0)
    raw = ckpt.to_bytes()
    other = SCEnetConfig(k=2, n_t=16, refine_blocks=2)
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(raw, expect=other)
    with pytest.raises(CheckpointError):
        ckpt.restore(SCEnet(other))
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(raw[:-5])
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(raw + b"\0")
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(b"NOTACKPT" + raw[8:])


def test_non_finite_data_reports_divergence_epoch():
    data = tiny_data(8, 0)
    data[3, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged) as info:
        train(data, tiny_data(4, 1), SCEnet(CFG), tiny_cfg())
    assert info.value.epoch == 1

import math

import numpy as np
import pytest

from jscclab.autodiff import Tensor, ops
from jscclab.channel import ChannelConfig
from jscclab.errors import ConfigurationError, TrainingDiverged
from jscclab.metrics import report
from jscclab.models import Enhancer, System, TransNet
from jscclab.models.checkpoint import to_bytes
from jscclab.models.layers import Module, parameter
from jscclab.signal_io import DatasetSpec, build_dataset
from jscclab.training import (
    AdamState,
    TrainConfig,
    adam_step,
    clip_global_norm,
    evaluate,
    fit,
    mean_metric,
    train_enhancer_separate,
    train_joint,
    train_transnet_separate,
)


class Quadratic(Module):
    def __init__(self, start=(1.0, -2.0)):
        self.w = parameter(np.array(start))


def _quad_loss(model):
    return lambda items, step: ops.sum(ops.square(model.w))


@pytest.fixture(scope="module")
def tiny():
    return build_dataset(DatasetSpec(count=10, duration_s=0.09, test_count=2, test_duration_s=0.45, seed=0))


# -- Adam ----------------------------------------------------------------------

def test_adam_first_step_example():
    p = np.array([1.0])
    st = AdamState.for_params([p], lr=0.1)
    adam_step([p], [np.array([1.0])], st)
    assert st.t == 1
    assert p[0] == pytest.approx(1 - 0.1 / (1 + 1e-8), abs=1e-15)
    assert p[0] == pytest.approx(0.9, abs=1e-8)


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(0)
    p = rng.standard_normal(5)
    ref = p.copy()
    m = np.zeros(5)
    v = np.zeros(5)
    st = AdamState.for_params([p], lr=0.01)
    for t in range(1, 20):
        g = rng.standard_normal(5)
        adam_step([p], [g.copy()], st)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p, ref, rtol=0, atol=1e-14)


def test_adam_zero_gradient_keeps_params_and_decays_moments():
    p = np.array([1.0, 2.0])
    st = AdamState.for_params([p], lr=0.1)
    adam_step([p], [np.array([1.0, 1.0])], st)
    before, m_before, v_before = p.copy(), st.m[0].copy(), st.v[0].copy()
    st2 = AdamState([np.zeros(2)], [np.zeros(2)], lr=0.1)
    q = before.copy()
    adam_step([q], [np.zeros(2)], st2)
    assert np.array_equal(q, before)
    adam_step([p], [np.zeros(2)], st)
    assert np.allclose(st.m[0], 0.9 * m_before)
    assert np.allclose(st.v[0], 0.999 * v_before)


def test_adam_nan_names_parameter():
    p = [np.zeros(2), np.zeros(3)]
    st = AdamState.for_params(p, lr=0.1)
    with pytest.raises(TrainingDiverged, match="dec.weight"):
        adam_step(p, [np.zeros(2), np.array([0.0, np.nan, 0.0])], st, names=["enc.bias", "dec.weight"])


def test_clip_global_norm():
    grads = [np.array([3.0]), np.array([4.0])]
    assert clip_global_norm(grads, 1.0) == 5.0
    assert np.allclose([grads[0][0], grads[1][0]], [0.6, 0.8])
    small = [np.array([0.1])]
    clip_global_norm(small, 5.0)
    assert small[0][0] == 0.1


def test_train_config_defaults():
    assert TrainConfig.enhancer_default().lr == 1e-3
    assert TrainConfig.transnet_default().lr == 1e-4
    assert TrainConfig.joint_default().lr == 1e-4
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.patience, cfg.max_epochs, cfg.clip_norm) == (8, 12, 200, 5.0)
    with pytest.raises(ConfigurationError):
        TrainConfig(objective="l1")


# -- early stopping ------------------------------------------------------------

@pytest.mark.parametrize("initial", [1, 5])
def test_patience_halts_at_initial_plus_twelve(initial):
    model = Quadratic()
    res = fit(model, _quad_loss(model), [0, 1, 2], lambda: 1.0, TrainConfig(lr=0.01), initial_epoch=initial)
    assert res.history[-1].epoch == initial + 12
    assert res.best_epoch == initial


def test_best_checkpoint_restored():
    model = Quadratic()
    vals = iter([3.0, 1.0] + [2.0] * 20)
    snaps = []

    def validate():
        snaps.append(model.w.data.copy())
        return next(vals)

    res = fit(model, _quad_loss(model), [0, 1], validate, TrainConfig(lr=0.1, patience=3))
    assert res.best_epoch == 2
    assert np.array_equal(model.w.data, snaps[1])
    assert res.best_val_loss <= res.history[-1].val_loss
    assert not np.array_equal(snaps[1], snaps[-1])


def test_divergence_reports_last_good():
    model = Quadratic()
    calls = {"n": 0}

    def loss(items, step):
        calls["n"] += 1
        if calls["n"] > 3:
            return ops.mul(ops.sum(model.w), Tensor(np.nan))
        return ops.sum(ops.square(model.w))

    with pytest.raises(TrainingDiverged) as info:
        fit(model, loss, [0], lambda: 1.0, TrainConfig(lr=0.01))
    assert "w" in info.value.last_good


def test_epoch_log_file(tmp_path):
    model = Quadratic()
    path = tmp_path / "train.log"
    fit(model, _quad_loss(model), [0], lambda: 1.0, TrainConfig(lr=0.01, patience=2, log_path=str(path)))
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("epoch=1 train_loss=") and "val_loss=" in lines[0] and "elapsed=" in lines[0]


# -- protocols -----------------------------------------------------------------

def test_enhancer_training_deterministic(tiny):
    cfg = TrainConfig.enhancer_default(max_epochs=2, seed=3)
    a = train_enhancer_separate(tiny.train, tiny.validation, cfg)
    b = train_enhancer_separate(tiny.train, tiny.validation, cfg)
    assert to_bytes(a.model, a.metadata) == to_bytes(b.model, b.metadata)
    assert a.metadata["protocol"] == "separate-enhancer"


def test_transnet_loss_decreases(tiny):
    cfg = TrainConfig.transnet_default(lr=3e-3, max_epochs=5, seed=0, channel=ChannelConfig(10.0))
    res = train_transnet_separate(tiny.train, tiny.validation, cfg)
    losses = [h.train_loss for h in res.history]
    assert losses[-1] < losses[0]


def test_joint_updates_both_and_freeze_differs(tiny):
    enh = Enhancer(seed=1)
    cfg = TrainConfig.joint_default(lr=1e-3, max_epochs=1, seed=0, channel=ChannelConfig(10.0))
    joint = train_joint(tiny.train, tiny.validation, enh, cfg)
    frozen = train_joint(tiny.train, tiny.validation, enh, cfg, freeze_enhancer=True)
    enh_before = enh.state_dict()
    moved = joint.model.enhancer.state_dict()
    assert any(not np.array_equal(enh_before[k], moved[k]) for k in enh_before)
    kept = frozen.model.enhancer.state_dict()
    assert all(np.array_equal(enh_before[k], kept[k]) for k in enh_before)
    tj, tf = joint.model.transnet.state_dict(), frozen.model.transnet.state_dict()
    assert sum(float(np.sum((tj[k] - tf[k]) ** 2)) for k in tj) > 0


def test_joint_first_step_gradient_reaches_enhancer(tiny):
    system = System(Enhancer(seed=1), TransNet(seed=2))
    y = np.stack([e.noisy for e in tiny.train[:2]])
    x = np.stack([e.clean for e in tiny.train[:2]])
    from jscclab.metrics import si_sdr_loss

    si_sdr_loss(x, system.forward(y, ChannelConfig(10.0))).backward()
    assert max(float(np.max(np.abs(p.grad))) for p in system.enhancer.parameters()) > 0


# -- evaluation ----------------------------------------------------------------

def test_evaluate_deterministic_and_identity(tiny):
    system = System(Enhancer(seed=1), TransNet(seed=2))
    ch = ChannelConfig(10.0, seed=4)
    a = evaluate(system, tiny.test, ch)
    b = evaluate(system, tiny.test, ch)
    assert [r.as_dict() for r in a] == [r.as_dict() for r in b]
    base = evaluate(System(), tiny.test, ch)
    for r, ex in zip(base, tiny.test):
        assert r.as_dict() == report(ex.clean, ex.noisy).as_dict()


def test_evaluate_at_snr_grid(tiny):
    reps = evaluate(System(), tiny.test, None, snr_a_db=5.0)
    assert all(abs(r.si_sdr_db - 5.0) < 0.5 for r in reps)
    assert math.isfinite(mean_metric(reps, "si_sdr_db"))

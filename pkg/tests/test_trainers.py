import logging

import numpy as np
import pytest

from andft.data_synth import Dataset
from andft.nn_core import NumericError, backward, cross_entropy, detection_loss, forward, negative_entropy, sgd_step
from andft.replay import ReplayQueue
from andft.trainers import (
    AndftConfig,
    Batch,
    BatchSampler,
    NdftConfig,
    TrainConfig,
    ema_nuisance_update,
    ema_step,
    extract_features,
    full_queue_retrain_if_due,
    init_state,
    joint_gradients,
    joint_update,
    monitor_and_update_nuisance,
    nuisance_sgd_step,
    reinit_nuisance_if_due,
    train_andft,
    train_baseline,
    train_ndft,
)
from fd import fd_grad, rel_err

SMALL = dict(backbone_hidden=(10,), feature_dim=8, n=16)


def make_state(ds, config):
    return init_state(ds.spec.H * ds.spec.W, ds.spec.C, ds.spec.cardinalities, config)


def first_batch(ds, n=16, seed=0):
    return Batch.from_split(ds.train, np.random.default_rng(seed).choice(len(ds.train), n, replace=False))


def test_joint_update_counts_one_forward(small_dataset):
    cfg = TrainConfig(**SMALL)
    st = make_state(small_dataset, cfg)
    joint_update(st, first_batch(small_dataset), cfg)
    assert st.counters.backbone_forwards == 1
    F = extract_features(st, first_batch(small_dataset).X)
    joint_update(st, first_batch(small_dataset), cfg, features=F)
    assert st.counters.backbone_forwards == 2


def test_gamma_zero_is_pure_detection_step(small_dataset):
    cfg = TrainConfig(gammas=(0.0, 0.0, 0.0), **SMALL)
    st = make_state(small_dataset, cfg)
    ref_bb, ref_det = st.backbone.copy(), st.det_head.copy()
    heads_before = [h.params.copy() for h in st.nuisance_heads]
    b = first_batch(small_dataset)
    joint_update(st, b, cfg)

    # hand-rolled detection-only step
    F = forward(ref_bb, b.X)
    out = forward(ref_det, F)
    _, gc, gb = detection_loss(out[:, :3], out[:, 3:], b.class_ids, b.boxes)
    dg = backward(ref_det, F, np.concatenate([gc, gb], axis=1))
    bg = backward(ref_bb, b.X, dg.input_grads)
    assert st.backbone.params.equals(sgd_step(ref_bb.params, bg.param_grads, cfg.eta_u))
    assert st.det_head.params.equals(sgd_step(ref_det.params, dg.param_grads, cfg.eta_u))
    assert all(h.params.equals(p) for h, p in zip(st.nuisance_heads, heads_before))


@pytest.mark.parametrize("mode", ["negative_entropy", "gradient_reversal"])
def test_joint_gradient_matches_finite_differences(small_dataset, mode):
    cfg = TrainConfig(gammas=(0.3, 0.5, 0.7), adversarial_mode=mode, **SMALL)
    st = make_state(small_dataset, cfg)
    b = first_batch(small_dataset)
    jg = joint_gradients(st, b, cfg)

    def objective():
        F = forward(st.backbone, b.X)
        out = forward(st.det_head, F)
        total = detection_loss(out[:, :3], out[:, 3:], b.class_ids, b.boxes)[0]
        for i, h in enumerate(st.nuisance_heads):
            z = forward(h, F)
            a = negative_entropy(z)[0] if mode == "negative_entropy" else -cross_entropy(z, b.nuisances[:, i])[0]
            total += cfg.gammas[i] * a
        return total

    assert jg.loss == pytest.approx(objective(), rel=1e-12)
    rng = np.random.default_rng(0)
    for net, grads in [(st.backbone, jg.backbone), (st.det_head, jg.det_head)]:
        for arr, g in zip(net.params.arrays, grads.arrays):
            coords = rng.choice(arr.size, size=min(arr.size, 15), replace=False)
            assert rel_err(g.ravel()[coords], fd_grad(objective, arr, coords)) < 1e-5


def test_nan_loss_names_term(small_dataset):
    cfg = TrainConfig(**SMALL)
    st = make_state(small_dataset, cfg)
    st.det_head.params.arrays[0][:] = np.nan
    with pytest.raises(NumericError, match="detection loss"):
        joint_update(st, first_batch(small_dataset), cfg)


def test_monitor_disabled(small_dataset):
    cfg = NdftConfig(alpha=-1, **SMALL)
    st = make_state(small_dataset, cfg)
    sampler = BatchSampler(len(small_dataset.train), cfg.n, np.random.default_rng(0))
    assert monitor_and_update_nuisance(st, small_dataset.train, sampler, cfg) == 0
    assert st.counters.backbone_forwards == 0


def test_monitor_cap(small_dataset, caplog):
    cfg = NdftConfig(alpha=0.99, max_inner_iters=1, **SMALL)
    st = make_state(small_dataset, cfg)
    sampler = BatchSampler(len(small_dataset.train), cfg.n, np.random.default_rng(0))
    with caplog.at_level(logging.WARNING):
        used = monitor_and_update_nuisance(st, small_dataset.train, sampler, cfg)
    assert used == 1
    assert st.counters.backbone_forwards == 1
    assert "max_inner_iters" in caplog.text


def test_monitor_forces_updates_for_untrained_heads(small_dataset):
    # Monte Carlo over init seeds: three binary heads start near 0.5 accuracy,
    # so the worst of them is at or below 0.6 almost always.
    from andft.data_synth import DatasetSpec, NuisanceSpec, generate_dataset

    spec = DatasetSpec(
        nuisances=[
            NuisanceSpec("brightness", 2, [0.5, 0.5], "brightness"),
            NuisanceSpec("blur", 2, [0.5, 0.5], "blur"),
            NuisanceSpec("gradient", 2, [0.5, 0.5], "gradient"),
        ],
        M_train=400,
        M_test=10,
    )
    ds = generate_dataset(spec)
    forced = 0
    for seed in range(20):
        cfg = NdftConfig(alpha=0.6, max_inner_iters=1, seed=seed, **SMALL)
        st = make_state(ds, cfg)
        sampler = BatchSampler(len(ds.train), cfg.n, np.random.default_rng(seed))
        monitor_and_update_nuisance(st, ds.train, sampler, cfg)
        forced += st.counters.nuisance_sgd_steps >= 1
    assert forced >= 18


def test_reinit_schedule(small_dataset):
    cfg = NdftConfig(**SMALL)
    st = make_state(small_dataset, cfg)
    for t in range(1, 6):
        st.t = t
        assert reinit_nuisance_if_due(st, 1)
    st.t = 325
    assert reinit_nuisance_if_due(st, 325)
    st.t = 326
    assert not reinit_nuisance_if_due(st, 325)
    assert st.counters.reinit_count == 6


def test_reinit_changes_nearly_all_entries(small_dataset):
    cfg = NdftConfig(**SMALL)
    st = make_state(small_dataset, cfg)
    b = first_batch(small_dataset)
    F = forward(st.backbone, b.X)
    for _ in range(3):
        nuisance_sgd_step(st, F, b.nuisances, 0.1)
    before = np.concatenate([h.params.flat() for h in st.nuisance_heads])
    st.t = 10
    assert reinit_nuisance_if_due(st, 5)
    after = np.concatenate([h.params.flat() for h in st.nuisance_heads])
    assert np.mean(before != after) >= 0.99


def test_ema_step_examples():
    from andft.nn_core import ParameterSet

    theta = ParameterSet(["w"], [np.array([0.5])])
    g = ParameterSet(["w"], [np.array([1.0])])
    np.testing.assert_allclose(ema_step(theta, g, 0.9, 0.1).arrays[0], [0.49], atol=1e-15)
    np.testing.assert_allclose(ema_step(theta, g, 0.9, 0.1).arrays[0], sgd_step(theta, g, 0.01).arrays[0], atol=1e-15)
    assert ema_step(theta, g, 1.0, 0.1).equals(theta)


def test_ema_nuisance_update_no_forward(small_dataset):
    cfg = AndftConfig(beta=0.5, **SMALL)
    st = make_state(small_dataset, cfg)
    b = first_batch(small_dataset)
    F = forward(st.backbone, b.X)
    before = [h.params.copy() for h in st.nuisance_heads]
    ema_nuisance_update(st, F, b.nuisances, cfg)
    assert st.counters.backbone_forwards == 0
    assert not any(h.params.equals(p) for h, p in zip(st.nuisance_heads, before))


def test_full_queue_retrain(small_dataset, caplog):
    cfg = AndftConfig(**SMALL)
    st = make_state(small_dataset, cfg)
    q = ReplayQueue(256, cfg.feature_dim)
    rng = np.random.default_rng(0)
    for _ in range(8):
        q.enqueue_batch(rng.normal(size=(32, cfg.feature_dim)), rng.integers(0, 2, size=(32, 3)))
    st.t = 324
    assert not full_queue_retrain_if_due(st, q, 325, 0.05, 32)
    st.t = 325
    assert full_queue_retrain_if_due(st, q, 325, 0.05, 32)
    assert st.counters.nuisance_sgd_steps == 8
    assert st.counters.full_pass_count == 1
    assert st.counters.backbone_forwards == 0

    small_q = ReplayQueue(256, cfg.feature_dim)
    small_q.enqueue_batch(rng.normal(size=(10, cfg.feature_dim)), rng.integers(0, 2, size=(10, 3)))
    with caplog.at_level(logging.WARNING):
        assert not full_queue_retrain_if_due(st, small_q, 325, 0.05, 32)
    assert "skipping" in caplog.text


def test_baseline_run(small_dataset):
    cfg = TrainConfig(T=30, **SMALL)
    res = train_baseline(small_dataset, cfg)
    assert res.state.counters.backbone_forwards == 30
    assert len(res.metrics) == 30
    assert [m.t for m in res.metrics] == list(range(1, 31))
    el = [m.elapsed_seconds for m in res.metrics]
    assert el == sorted(el)

    # identical to a manual loop over joint_update with gamma = 0
    zero = TrainConfig(T=30, gammas=(0.0, 0.0, 0.0), **SMALL)
    st = make_state(small_dataset, zero)
    sampler = BatchSampler(len(small_dataset.train), zero.n, st.rngs["data"])
    for t in range(1, 31):
        st.t = t
        m, _ = joint_update(st, Batch.from_split(small_dataset.train, sampler.next()), zero)
        assert m.loss_o == res.metrics[t - 1].loss_o
    assert st.backbone.params.equals(res.state.backbone.params)


def test_ndft_accounting(small_dataset):
    cfg = NdftConfig(T=25, alpha=0.6, psi=10, max_inner_iters=5, **SMALL)
    res = train_ndft(small_dataset, cfg)
    inner = sum(m.inner_iters for m in res.metrics)
    assert res.state.counters.backbone_forwards == cfg.T + inner
    assert inner > 0
    assert res.state.counters.reinit_count == 2
    assert all(m.backbone_forwards_this_iter == 1 + m.inner_iters for m in res.metrics)


def test_ndft_degenerates_to_baseline(small_dataset):
    base = train_baseline(small_dataset, TrainConfig(T=20, **SMALL))
    ndft = train_ndft(small_dataset, NdftConfig(T=20, gammas=(0, 0, 0), alpha=-1, psi=1000, **SMALL))
    assert ndft.state.backbone.params.equals(base.state.backbone.params)
    assert ndft.state.det_head.params.equals(base.state.det_head.params)
    assert [m.loss_o for m in ndft.metrics] == [m.loss_o for m in base.metrics]


def test_andft_accounting(small_dataset):
    cfg = AndftConfig(T=40, s=64, phi=10, **SMALL)
    res = train_andft(small_dataset, cfg)
    c = res.state.counters
    assert c.backbone_forwards == 40
    assert c.full_pass_count == 4
    # one EMA step per iteration plus floor(64/16) = 4 per full pass
    assert c.nuisance_sgd_steps == 40 + 4 * 4


def test_andft_beta_zero_is_plain_sgd(small_dataset):
    cfg = AndftConfig(T=1, beta=0.0, phi=1000, **SMALL)
    res = train_andft(small_dataset, cfg)

    st = make_state(small_dataset, cfg)
    sampler = BatchSampler(len(small_dataset.train), cfg.n, st.rngs["data"])
    b = Batch.from_split(small_dataset.train, sampler.next())
    F = forward(st.backbone, b.X)
    for i, h in enumerate(st.nuisance_heads):
        logits = forward(h, F)
        _, g = cross_entropy(logits, b.nuisances[:, i])
        expected = sgd_step(h.params, backward(h, F, g).param_grads, cfg.eta_n)
        assert res.state.nuisance_heads[i].params.equals(expected)


def test_gradient_reversal_mode_runs(small_dataset):
    res = train_andft(small_dataset, AndftConfig(T=10, adversarial_mode="gradient_reversal", **SMALL))
    assert all(np.isfinite(m.adv_loss) and m.adv_loss <= 0 for m in res.metrics)


class _Forbidden:
    def __getattr__(self, name):
        raise AssertionError("trainer touched the test split")

    def __len__(self):
        raise AssertionError("trainer touched the test split")


@pytest.mark.parametrize("fn,cfg", [
    (train_baseline, TrainConfig(T=5, **SMALL)),
    (train_ndft, NdftConfig(T=5, max_inner_iters=2, **SMALL)),
    (train_andft, AndftConfig(T=5, **SMALL)),
])
def test_trainers_never_read_test_split(small_dataset, fn, cfg):
    guarded = Dataset(small_dataset.spec, small_dataset.train, _Forbidden())
    fn(guarded, cfg)


def test_numeric_abort_keeps_partial_log(small_dataset):
    def sabotage(state, m):
        if m.t == 3:
            state.det_head.params.arrays[0][:] = np.nan

    with pytest.raises(NumericError) as exc:
        train_andft(small_dataset, AndftConfig(T=10, **SMALL), callback=sabotage)
    assert len(exc.value.metrics) == 3


def test_config_validation():
    with pytest.raises(ValueError, match="gammas"):
        TrainConfig(gammas=(0.1,)).validate(3)
    with pytest.raises(ValueError, match="alpha"):
        NdftConfig(alpha=1.0).validate(3)
    with pytest.raises(ValueError, match="s:"):
        AndftConfig(s=8, n=32).validate(3)

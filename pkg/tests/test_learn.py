from __future__ import annotations

import math

import numpy as np
import pytest

from meshft.errors import CheckpointMismatch, ShapeMismatch
from meshft.learn import (DampNet, HodgeNet, Model, ModelEval, OptimizerState, TrainConfig, adam_update,
                          backward, checkpoint_hash, damping_from_features, hodge_from_features,
                          init_model, load_checkpoint, save_checkpoint, softplus, step_loss, train)
from meshft.mesher import periodic_delaunay, periodic_grid
from meshft.phcore import CanonicalState, theory_hodge
from meshft.stepper import StepPlan
from meshft.variants import VariantSpec
from meshft.wavegen import PairDataset, SamplerConfig, make_dataset


def random_batch(geom, rng, B=4):
    n = geom.n_nodes
    z0 = CanonicalState(rng.standard_normal((B, n)), rng.standard_normal((B, n)))
    z1 = CanonicalState(rng.standard_normal((B, n)), rng.standard_normal((B, n)))
    return z0, z1


def loss_of(model, geom, batch, plan, target="both"):
    return step_loss(model, geom, batch, plan, target)


def gradient_check(model, geom, batch, plan, target="both", per_array=4, seed=0, h=1e-6):
    """Max relative error of analytic vs central-difference gradients on sampled entries.

    The denominator is floored at 1e-3 of the largest gradient entry so that
    near-zero entries are not judged on difference-quotient cancellation noise.
    """
    rng = np.random.default_rng(seed)
    _, grads = backward(model, geom, batch, plan, target)
    floor = 1e-3 * max(float(np.max(np.abs(g))) for g in grads.values())
    params = {k: v.copy() for k, v in model.params().items()}
    worst = 0.0
    for name, value in params.items():
        flat_idx = rng.choice(value.size, size=min(per_array, value.size), replace=False)
        for j in flat_idx:
            idx = np.unravel_index(j, value.shape)
            vals = []
            for sgn in (1, -1):
                trial = {k: v.copy() for k, v in params.items()}
                trial[name][idx] += sgn * h
                model.set_params(trial)
                vals.append(loss_of(model, geom, batch, plan, target))
            model.set_params(params)
            fd = (vals[0] - vals[1]) / (2 * h)
            an = grads[name][idx]
            scale = max(abs(fd), abs(an), floor)
            worst = max(worst, abs(fd - an) / scale)
    return worst


@pytest.mark.parametrize("damping", [False, True])
def test_gradient_check_grid(damping):
    g = periodic_grid(4, 4)
    rng = np.random.default_rng(1)
    model = init_model(3, damping, width=8)
    assert gradient_check(model, g, random_batch(g, rng), StepPlan(0.1, 3)) < 1e-5


@pytest.mark.parametrize("tag", ["no_orientation", "indefinite_metric", "learned_J_psd", "learned_J_free"])
def test_gradient_check_variants(tag):
    g = periodic_grid(4, 4)
    rng = np.random.default_rng(2)
    model = init_model(4, False, VariantSpec(tag=tag), geom=g, width=8)
    assert gradient_check(model, g, random_batch(g, rng), StepPlan(0.1, 3)) < 1e-5


@pytest.mark.parametrize("target", ["q", "p"])
def test_gradient_check_delaunay_targets(target):
    g = periodic_delaunay(30, seed=5)
    rng = np.random.default_rng(3)
    model = init_model(5, True, width=8)
    assert gradient_check(model, g, random_batch(g, rng), StepPlan(0.05, 2), target) < 1e-5


def test_constant_feature_column_gets_zero_gradient():
    # on a uniform grid every V0 is equal, so the standardized V0 column is exactly zero
    g = periodic_grid(4, 4)
    model = init_model(0, width=8)
    _, grads = backward(model, g, random_batch(g, np.random.default_rng(0)), StepPlan(0.1, 2))
    assert np.all(grads["node.W0"][2] == 0.0)


def test_zero_nets_give_ln2(grid8):
    h = hodge_from_features(HodgeNet.zeros(16), grid8)
    np.testing.assert_allclose(h.M, grid8.V0 * math.log(2), rtol=1e-15)
    np.testing.assert_allclose(h.W, grid8.V1inv * math.log(2), rtol=1e-15)
    np.testing.assert_allclose(damping_from_features(DampNet.zeros(16), grid8).r, math.log(2), rtol=1e-15)
    with pytest.raises(ShapeMismatch):
        damping_from_features(DampNet(HodgeNet.zeros(4).node_mlp), grid8)


def test_softplus_stable():
    x = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
    y = softplus(x)
    assert np.all(np.isfinite(y)) and np.all(y >= 0)
    assert y[2] == math.log(2) and y[-1] == 800.0


def test_positivity_under_random_weights(delaunay64):
    for seed in range(5):
        m = init_model(seed, True, width=16)
        for arr in m.params().values():
            arr *= 20.0
        ev = m.evaluate(delaunay64)
        assert np.all(ev.hodge.M > 0) and np.all(ev.hodge.W > 0) and np.all(ev.damping.r >= 0)


def test_loss_zero_at_own_output(grid8):
    m = init_model(1)
    rng = np.random.default_rng(0)
    z0 = CanonicalState(rng.standard_normal((2, 64)), rng.standard_normal((2, 64)) * 0.01)
    from meshft.learn import predict
    z1 = predict(m, grid8, z0, StepPlan(0.002, 2))
    assert step_loss(m, grid8, (z0, z1), StepPlan(0.002, 2)) == 0.0


def test_injected_theory_loss_is_integrator_error(grid32):
    ds = make_dataset(grid32, 32, 0.002, 0)
    ev = ModelEval.fixed(grid32, theory_hodge(grid32))
    from meshft.learn import predict
    z0, z1 = ds.batch(np.arange(32))
    pred = predict(None, grid32, z0, StepPlan(0.002, 1), ev)
    mse = 0.5 * (np.mean((pred.q - z1.q) ** 2) + np.mean((pred.p - z1.p) ** 2))
    assert mse <= 1e-8


def test_adamw_scalar_oracle():
    p = {"w": np.array([0.0])}
    opt = OptimizerState.for_params(p)
    out = adam_update(p, {"w": np.array([1.0])}, opt, lr=1e-3, wd=0.0)
    assert out["w"][0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
    assert abs(out["w"][0]) == pytest.approx(9.99e-4, rel=2e-3)


def test_adamw_zero_gradient_and_decay():
    p = {"w": np.array([2.0, -3.0])}
    out = adam_update(p, {"w": np.zeros(2)}, OptimizerState.for_params(p), lr=1e-3, wd=0.0)
    np.testing.assert_array_equal(out["w"], p["w"])
    out = adam_update(p, {"w": np.zeros(2)}, OptimizerState.for_params(p), lr=1e-3, wd=0.5)
    np.testing.assert_allclose(out["w"], p["w"] * (1 - 1e-3 * 0.5), rtol=1e-15)
    with pytest.raises(ShapeMismatch):
        adam_update(p, {"v": np.zeros(2)}, OptimizerState.for_params(p))


def test_training_is_bitwise_deterministic(grid8):
    ds = make_dataset(grid8, 40, 0.002, 0)
    cfg = TrainConfig(epochs=2, batch_size=8, width=8)
    a = train(ds, grid8, cfg, val=ds)
    b = train(ds, grid8, cfg, val=ds)
    assert a.log.to_csv() == b.log.to_csv()
    assert a.log.step_losses == b.log.step_losses
    assert save_checkpoint(a.model, grid8, cfg) == save_checkpoint(b.model, grid8, cfg)


def test_identical_pairs_fixed_point(grid8):
    base = make_dataset(grid8, 32, 1e-5, 0, cfg=SamplerConfig(2, 2))
    ds = PairDataset(base.mesh_id, base.dt, base.samples, base.q0, base.p0, base.q0.copy(), base.p0.copy())
    cfg = TrainConfig(epochs=5, batch_size=8, dt=1e-5, width=8, learning_rate=1e-2)
    res = train(ds, grid8, cfg, val=ds)
    assert res.plan.n_sub == 1
    assert res.log.step_losses[-1] < res.log.step_losses[0]


def test_training_reduces_validation_error(grid8):
    ds = make_dataset(grid8, 200, 0.002, 0, cfg=SamplerConfig(2, 2))
    cfg = TrainConfig(epochs=3, batch_size=8, width=16)
    from meshft.learn import evaluate_mse
    m0 = init_model(0, width=16)
    before = evaluate_mse(m0, grid8, ds, StepPlan(0.002, 1))
    res = train(ds, grid8, cfg, val=ds)
    assert res.log.final_val_mse < before


def test_train_rejects_mismatched_data(grid8):
    ds = make_dataset(grid8, 4, 0.002, 0)
    with pytest.raises(ShapeMismatch):
        train(ds, periodic_grid(4, 4), TrainConfig())
    with pytest.raises(ShapeMismatch):
        train(ds, grid8, TrainConfig(dt=0.004))
    with pytest.raises(ValueError):
        TrainConfig(loss_target="x")


@pytest.mark.parametrize("tag,damping", [("structured", True), ("learned_J_psd", False)])
def test_checkpoint_roundtrip(grid8, tag, damping):
    m = init_model(2, damping, VariantSpec(tag=tag), geom=grid8, width=8)
    text = save_checkpoint(m, grid8, TrainConfig(width=8))
    back = load_checkpoint(text, m.architecture())
    for k, v in m.params().items():
        np.testing.assert_array_equal(back.params()[k], v)
    a, b = m.evaluate(grid8), back.evaluate(grid8)
    np.testing.assert_array_equal(a.step_hodge.W, b.step_hodge.W)
    assert checkpoint_hash(text) == checkpoint_hash(save_checkpoint(back, grid8, TrainConfig(width=8)))


def test_checkpoint_mismatch(grid8):
    m = init_model(0, width=8)
    text = save_checkpoint(m, grid8)
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(text, init_model(0, True, width=8).architecture())
    bad = text.replace('"version": 1', '"version": 99')
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(bad)
    lj = init_model(0, False, VariantSpec(tag="learned_J_free"), geom=grid8, width=8)
    with pytest.raises(CheckpointMismatch):
        lj.evaluate(periodic_grid(4, 4))


def test_model_is_mesh_agnostic(grid8, delaunay64):
    m = init_model(0, True, width=8)
    for g in (grid8, delaunay64):
        ev = m.evaluate(g)
        assert ev.hodge.M.shape == (g.n_nodes,) and ev.hodge.W.shape == (g.n_edges,)
    assert isinstance(m, Model)

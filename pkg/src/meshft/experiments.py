"""Pipeline stages behind the CLI: data, training, rollout scoring, OOD, ablations, sweeps.

Every stage is a pure function of an ``ExperimentConfig`` (plus upstream
artifacts), so reruns with the same config and seed give identical numbers.
"""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .learn import Model, ModelEval, TrainResult, evaluate_mse, save_checkpoint, train
from .mesher import parse_mesh_spec
from .phcore import CanonicalState, ForceOperator, Trajectory, theory_hodge
from .physlab import (amp_phase_fit, energy_drift_and_injection, momentum_variation,
                      normalized_energy_error, tsmse, vf_alignment)
from .stepper import plan_steps, rollout
from .variants import VariantSpec
from .wavegen import (TEST_STREAM, TRAIN_STREAM, VAL_STREAM, SamplerConfig, batch_exact_trajectory,
                      batch_initial_states, make_dataset)

ROLLOUT_BUDGET = 4_000_000   # floats per (pred or ref) block held at once
SHORT_HORIZON = 16           # steps before the amplitude/phase fit


def geometry(cfg: ExperimentConfig, spec: str | None = None):
    return parse_mesh_spec(spec or cfg.mesh, cfg.L)


def datasets(cfg: ExperimentConfig, geom, sampler: SamplerConfig | None = None, n_train=None):
    s = sampler or cfg.sampler
    tr = make_dataset(geom, n_train or cfg.data.train, cfg.dt, cfg.seed, TRAIN_STREAM, s)
    va = make_dataset(geom, cfg.data.val, cfg.dt, cfg.seed, VAL_STREAM, s)
    return tr, va


def test_samples(cfg: ExperimentConfig, geom, n, sampler: SamplerConfig | None = None):
    return make_dataset(geom, n, cfg.dt, cfg.seed, TEST_STREAM, sampler or cfg.sampler).samples


def fit(cfg: ExperimentConfig, geom, tr, va, variant: VariantSpec | None = None) -> TrainResult:
    return train(tr, geom, cfg.train_config(), val=va, variant=variant or cfg.variant)


def _finite_or_inf(x):
    x = float(x)
    return x if math.isfinite(x) else float("inf")


def score_rollouts(ev: ModelEval, geom, samples, dt, T, c, cfl, keep_first=False):
    """Open-loop rollouts from exact initial states, scored against the analytic reference.

    Returns aggregate metrics and, with ``keep_first``, the first predicted
    trajectory (for dumps and diagnostics).
    """
    theory = theory_hodge(geom, c)
    plan = plan_steps(ev.op, ev.step_hodge, dt, cfl)
    chunk = max(1, ROLLOUT_BUDGET // (geom.n_nodes * (T + 1)))
    rows = {"one_step_mse": [], "tsmse": [], "nee": [], "drift": [], "injection": [], "momentum": []}
    first = None
    for lo in range(0, len(samples), chunk):
        part = samples[lo:lo + chunk]
        pred = rollout(ev.op, ev.step_hodge, ev.damping, batch_initial_states(geom, part), plan, T,
                       check=False)
        ref = batch_exact_trajectory(geom, part, dt, T)
        for b in range(len(part)):
            tp, tr = pred.sample(b), ref.sample(b)
            if first is None and keep_first:
                first = Trajectory(dt, tp.q.copy(), tp.p.copy(),
                                   {"t0": part[b].t0, "sample": dataclasses.asdict(part[b]),
                                    "n_sub": plan.n_sub})
            one = Trajectory(dt, tp.q[:2], tp.p[:2])
            rows["one_step_mse"].append(tsmse(one, Trajectory(dt, tr.q[:2], tr.p[:2])))
            rows["tsmse"].append(tsmse(tp, tr))
            rows["nee"].append(normalized_energy_error(tp, tr, geom, theory))
            d, i = energy_drift_and_injection(tp, geom, theory)
            rows["drift"].append(d)
            rows["injection"].append(i)
            with np.errstate(invalid="ignore", over="ignore"):
                rows["momentum"].append(_finite_or_inf(momentum_variation(tp)))
    out = {k: _finite_or_inf(np.mean(v)) for k, v in rows.items()}
    out["drift_max"] = _finite_or_inf(np.max(rows["drift"]))
    out["nee_max"] = _finite_or_inf(np.max(rows["nee"]))
    out["n_sub"] = plan.n_sub
    out["omega_max"] = plan.omega_max
    out["n_samples"] = len(samples)
    return out, first


def model_vector_field(ev: ModelEval, state: CanonicalState):
    """(dq/dt, dp/dt) of the continuous model at ``state``."""
    qdot = state.p / ev.step_hodge.M
    pdot = -ev.op.apply(state.q, ev.step_hodge.W)
    if ev.damping is not None:
        pdot = pdot - ev.damping.r * state.p
    return qdot, pdot


def field_alignment(ev: ModelEval, geom, samples, c):
    """Cosine and relative L2 of model vs theory vector fields over the sample states."""
    z = batch_initial_states(geom, samples)
    th = ModelEval.fixed(geom, theory_hodge(geom, c), op=ForceOperator(geom.D0))
    return vf_alignment(model_vector_field(ev, z), model_vector_field(th, z))


def short_horizon(ev: ModelEval, geom, samples, dt, cfl, T=SHORT_HORIZON):
    """Final-frame checks after a short open-loop rollout from exact states.

    Returns max relative L2 error of (q, p), max relative amplitude error and
    max phase error in degrees of the fitted mode.
    """
    plan = plan_steps(ev.op, ev.step_hodge, dt, cfl)
    pred = rollout(ev.op, ev.step_hodge, ev.damping, batch_initial_states(geom, samples), plan, T,
                   check=False)
    ref = batch_exact_trajectory(geom, samples, dt, T)
    num = np.hypot(np.linalg.norm(pred.q[-1] - ref.q[-1], axis=-1), np.linalg.norm(pred.p[-1] - ref.p[-1], axis=-1))
    den = np.hypot(np.linalg.norm(ref.q[-1], axis=-1), np.linalg.norm(ref.p[-1], axis=-1))
    amp, ph = [], []
    for b, s in enumerate(samples):
        t = s.t0 + T * dt
        ae, pe, _, _ = amp_phase_fit(pred.q[-1, b], geom, s.k, s.a * math.exp(-s.gamma * t), s.phi - s.omega * t)
        amp.append(ae)
        ph.append(pe)
    return {"short_rel_err": _finite_or_inf(np.max(num / den)), "amp_err": _finite_or_inf(np.max(amp)),
            "phase_err_deg": _finite_or_inf(np.max(ph))}


@dataclass
class TrainRun:
    result: TrainResult
    checkpoint: str
    metrics: dict

    @property
    def model(self) -> Model:
        return self.result.model


def run_train(cfg: ExperimentConfig, geom=None, data=None, variant: VariantSpec | None = None) -> TrainRun:
    geom = geom or geometry(cfg)
    tr, va = data or datasets(cfg, geom)
    res = fit(cfg, geom, tr, va, variant)
    ev = res.model.evaluate(geom)
    roll, _ = score_rollouts(ev, geom, test_samples(cfg, geom, cfg.data.test), cfg.dt, cfg.T,
                             cfg.sampler.c, cfg.cfl_target)
    metrics = {"val_mse": res.log.final_val_mse, "train_loss": res.log.rows[-1]["train_loss"],
               "n_params": res.model.n_params, "n_sub": res.plan.n_sub, "omega_max": res.plan.omega_max,
               "variant": res.model.variant.tag,
               **{f"rollout_{k}": v for k, v in roll.items()}}
    return TrainRun(res, save_checkpoint(res.model, geom, res.config), metrics)


def ood_shifts(cfg: ExperimentConfig):
    """(name, sampler, mesh spec) for the identity and the three shifts; theory c is sampler.c."""
    s = cfg.sampler
    o = cfg.ood
    return [
        ("identity", s, cfg.mesh),
        ("frequency", dataclasses.replace(s, kmax_x=o.test_kmax, kmax_y=o.test_kmax), cfg.mesh),
        ("wave_speed", dataclasses.replace(s, c=o.test_c), cfg.mesh),
        ("resolution", s, o.test_mesh),
    ]


def ood_eval(cfg: ExperimentConfig, model: Model, tag: str | None = None):
    """Rows of shift metrics for one trained model; the resolution shift re-evaluates its nets on the new mesh."""
    rows = []
    for name, sampler, mesh in ood_shifts(cfg):
        geom = geometry(cfg, mesh)
        samples = test_samples(cfg, geom, cfg.ood.test_pairs, sampler)
        ev = model.evaluate(geom)
        m, _ = score_rollouts(ev, geom, samples, cfg.dt, cfg.T, sampler.c, cfg.cfl_target)
        rows.append({"shift": name, "variant": tag or model.variant.tag, "mesh": mesh,
                     "test_kmax": sampler.kmax_x, "c": sampler.c, **m})
    return rows


def ablation_rows(cfg: ExperimentConfig, geom=None, data=None, variants=None):
    """Train each variant on the shared benchmark and score its rollouts."""
    geom = geom or geometry(cfg)
    data = data or datasets(cfg, geom)
    samples = test_samples(cfg, geom, cfg.ablate.test_pairs)
    rows, models = [], {}
    for tag in variants or cfg.ablate.variants:
        spec = dataclasses.replace(cfg.variant, tag=tag)
        res = fit(cfg, geom, *data, spec)
        m, _ = score_rollouts(res.model.evaluate(geom), geom, samples, cfg.dt, cfg.T, cfg.sampler.c,
                              cfg.cfl_target)
        rows.append({"variant": tag, "val_mse": res.log.final_val_mse, **m})
        models[tag] = res.model
    return rows, models


def sweep_rows(cfg: ExperimentConfig, geom=None):
    """Data-efficiency sweep: one training run per dataset size, merged in config order."""
    geom = geom or geometry(cfg)
    sizes = list(cfg.sweep.sizes)
    tr, va = datasets(cfg, geom, n_train=max(sizes))
    samples = test_samples(cfg, geom, cfg.data.test)

    def one(n):
        res = fit(cfg, geom, tr.subset(n), va)
        m, _ = score_rollouts(res.model.evaluate(geom), geom, samples, cfg.dt, cfg.T, cfg.sampler.c,
                              cfg.cfl_target)
        return {"size": n, "one_step_mse": res.log.final_val_mse, "drift": m["drift"],
                "tsmse": m["tsmse"]}

    with ThreadPoolExecutor(max_workers=cfg.sweep.workers) as pool:
        return list(pool.map(one, sizes))


def validation_mse(model, geom, va, cfg: ExperimentConfig):
    ev = model.evaluate(geom)
    plan = plan_steps(ev.op, ev.step_hodge, cfg.dt, cfg.cfl_target)
    return evaluate_mse(model, geom, va, plan, cfg.train.loss_target)

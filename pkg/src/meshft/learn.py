"""Trainable metric and damping: geometry-conditioned MLPs, exact gradients, AdamW.

    M_i = V0_i softplus(phi_node(x~_i))
    W_e = V1inv_e softplus(1/2 [phi_edge(f~_e) + phi_edge(f~_-e)])
    r_i = softplus(phi_damp([x~_i, mean over incident edges of the outward f~]))

The edge MLP is averaged over both orientations of each edge, so W (and the
whole model) is invariant under edge re-gauging. Gradients are hand-written
reverse mode through the MLPs, the softplus heads, the diagonal scalings, the
incidence matvecs, the exponential half-damps and all n_sub composed substeps.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .errors import CheckpointMismatch, Diverged, NonFiniteGradient, NonFiniteState, ShapeMismatch
from .mesher import MeshGeometry, make_rng
from .phcore import CanonicalState, DampingField, ForceOperator, HodgeStar
from .stepper import DEFAULT_CFL, StepPlan, estimate_omega_max
from .variants import VariantSpec, edge_maps, init_learned_j, sign_mask

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
STD_FLOOR = 1e-8
REPLAN_TOLERANCE = 0.05
LOSS_TARGETS = ("q", "p", "both")
INIT_STREAM = 0x1417
SHUFFLE_STREAM = 0x5417


def softplus(x):
    return np.logaddexp(0.0, x)


# ---------------------------------------------------------------- MLP

@dataclass
class MlpParams:
    weights: list
    biases: list
    in_dim: int
    hidden: tuple = (64,)
    out_dim: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        dims = [self.in_dim, *self.hidden, self.out_dim]
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeMismatch("layer count does not match the architecture")
        for W, b, a, c in zip(self.weights, self.biases, dims[:-1], dims[1:]):
            if W.shape != (a, c) or b.shape != (c,):
                raise ShapeMismatch(f"layer shapes {W.shape}, {b.shape} do not chain ({a} -> {c})")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def arch(self):
        return {"in_dim": self.in_dim, "hidden": list(self.hidden), "out_dim": self.out_dim,
                "activation": self.activation}

    def arrays(self):
        out = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = W
            out[f"b{i}"] = b
        return out

    def set_arrays(self, arrays):
        n = len(self.weights)
        self.weights = [np.asarray(arrays[f"W{i}"], dtype=np.float64) for i in range(n)]
        self.biases = [np.asarray(arrays[f"b{i}"], dtype=np.float64) for i in range(n)]
        self.__post_init__()

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def forward(self, x):
        """Scalar output per row; returns (y, cache)."""
        hs = [x]
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ W + b
            h = np.tanh(a) if i < last else a
            if i < last:
                hs.append(h)
        return h[:, 0], hs

    def backward(self, cache, ybar):
        g = ybar[:, None]
        grads = {}
        for i in range(len(self.weights) - 1, -1, -1):
            h = cache[i]
            grads[f"W{i}"] = h.T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * (1.0 - h * h)
        return grads


def init_mlp(rng, in_dim, hidden=(64,), out_dim=1) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    dims = [in_dim, *hidden, out_dim]
    Ws, bs = [], []
    for a, c in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(6.0 / (a + c))
        Ws.append(rng.uniform(-lim, lim, size=(a, c)))
        bs.append(np.zeros(c))
    return MlpParams(Ws, bs, in_dim, tuple(hidden), out_dim)


def zero_mlp(in_dim, hidden=(64,), out_dim=1) -> MlpParams:
    dims = [in_dim, *hidden, out_dim]
    return MlpParams([np.zeros((a, c)) for a, c in zip(dims[:-1], dims[1:])],
                     [np.zeros(c) for c in dims[1:]], in_dim, tuple(hidden), out_dim)


# ---------------------------------------------------------------- features

@dataclass(frozen=True)
class FeatureStats:
    node_mean: np.ndarray
    node_std: np.ndarray
    edge_mean: np.ndarray
    edge_std: np.ndarray

    @classmethod
    def from_geometry(cls, geom: MeshGeometry):
        nf = geom.node_features
        ef = np.concatenate(_edge_both(geom))
        return cls(nf.mean(axis=0), nf.std(axis=0), ef.mean(axis=0), ef.std(axis=0))

    def to_dict(self):
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()}


def _edge_both(geom):
    d = geom.edge_delta
    ln = geom.edge_length[:, None]
    return np.hstack([d, ln]), np.hstack([-d, ln])


def standardize(x, mean, std):
    """(x - mean) / std per column; columns with std < 1e-8 become exactly 0."""
    out = (x - mean) / np.maximum(std, STD_FLOOR)
    out[:, std < STD_FLOOR] = 0.0
    return out


@dataclass
class GeometryFeatures:
    """Standardized inputs for one mesh, computed once and reused every step."""
    node: np.ndarray
    edge_pos: np.ndarray
    edge_neg: np.ndarray
    damp: np.ndarray
    stats: FeatureStats

    @classmethod
    def build(cls, geom: MeshGeometry):
        st = FeatureStats.from_geometry(geom)
        node = standardize(geom.node_features, st.node_mean, st.node_std)
        fp, fn = _edge_both(geom)
        ep = standardize(fp, st.edge_mean, st.edge_std)
        en = standardize(fn, st.edge_mean, st.edge_std)
        # outward feature: tail sees +e, head sees -e
        ends = geom.edges
        acc = np.zeros((geom.n_nodes, 3))
        np.add.at(acc, ends[:, 0], ep)
        np.add.at(acc, ends[:, 1], en)
        deg = np.bincount(ends.reshape(-1), minlength=geom.n_nodes).astype(np.float64)
        agg = acc / np.maximum(deg, 1.0)[:, None]
        return cls(node, ep, en, np.hstack([node, agg]), st)


_FEATURE_CACHE: dict = {}


def features_for(geom: MeshGeometry) -> GeometryFeatures:
    key = id(geom)
    hit = _FEATURE_CACHE.get(key)
    if hit is None or hit[0] is not geom:
        hit = (geom, GeometryFeatures.build(geom))
        if len(_FEATURE_CACHE) > 16:
            _FEATURE_CACHE.clear()
        _FEATURE_CACHE[key] = hit
    return hit[1]


# ---------------------------------------------------------------- networks

@dataclass
class HodgeNet:
    node_mlp: MlpParams
    edge_mlp: MlpParams

    @classmethod
    def init(cls, rng, width=64):
        return cls(init_mlp(rng, 3, (width,)), init_mlp(rng, 3, (width,)))

    @classmethod
    def zeros(cls, width=64):
        return cls(zero_mlp(3, (width,)), zero_mlp(3, (width,)))


@dataclass
class DampNet:
    mlp: MlpParams

    @classmethod
    def init(cls, rng, width=64):
        return cls(init_mlp(rng, 6, (width,)))

    @classmethod
    def zeros(cls, width=64):
        return cls(zero_mlp(6, (width,)))


def _hodge_forward(net: HodgeNet, geom, feats):
    a, cn = net.node_mlp.forward(feats.node)
    m = len(feats.edge_pos)
    y, ce = net.edge_mlp.forward(np.vstack([feats.edge_pos, feats.edge_neg]))
    s = 0.5 * (y[:m] + y[m:])
    M = geom.V0 * softplus(a)
    W = geom.V1inv * softplus(s)
    return HodgeStar(M, W), (a, cn, s, ce)


def _hodge_backward(net: HodgeNet, geom, cache, gM, gW):
    a, cn, s, ce = cache
    ga = gM * geom.V0 * expit(a)
    gs = gW * geom.V1inv * expit(s)
    half = 0.5 * gs
    grads = {f"node.{k}": v for k, v in net.node_mlp.backward(cn, ga).items()}
    grads.update({f"edge.{k}": v for k, v in net.edge_mlp.backward(ce, np.concatenate([half, half])).items()})
    return grads


def hodge_from_features(net: HodgeNet, geom: MeshGeometry) -> HodgeStar:
    feats = features_for(geom)
    if net.node_mlp.in_dim != feats.node.shape[1] or net.edge_mlp.in_dim != feats.edge_pos.shape[1]:
        raise ShapeMismatch("network input width does not match the mesh features")
    return _hodge_forward(net, geom, feats)[0]


def hodge_gradient(net: HodgeNet, geom, gM, gW):
    """Vector-Jacobian product of (M, W) with cotangents (gM, gW) into the MLP weights."""
    _, cache = _hodge_forward(net, geom, features_for(geom))
    return _hodge_backward(net, geom, cache, np.asarray(gM, float), np.asarray(gW, float))


def _damp_forward(net: DampNet, feats):
    z, cache = net.mlp.forward(feats.damp)
    return softplus(z), (z, cache)


def damping_from_features(net: DampNet, geom: MeshGeometry) -> DampingField:
    feats = features_for(geom)
    if net.mlp.in_dim != feats.damp.shape[1]:
        raise ShapeMismatch("damping network input width does not match the mesh features")
    return DampingField(_damp_forward(net, feats)[0])


def damping_gradient(net: DampNet, geom, gr):
    _, (z, cache) = _damp_forward(net, features_for(geom))
    return {f"damp.{k}": v for k, v in net.mlp.backward(cache, np.asarray(gr, float) * expit(z)).items()}


# ---------------------------------------------------------------- model

@dataclass
class LearnedJ:
    """Per-edge (b_tail, b_head) map values and gains for the learned interconnection."""
    values: np.ndarray
    gains: np.ndarray
    psd: bool

    def gain(self):
        return softplus(self.gains) if self.psd else self.gains

    def gain_grad(self, g):
        return g * expit(self.gains) if self.psd else g


@dataclass
class Model:
    hodge: HodgeNet
    damp: DampNet | None = None
    variant: VariantSpec = field(default_factory=VariantSpec)
    jmap: LearnedJ | None = None
    mesh_id: str | None = None   # learned-J models are tied to one mesh

    def params(self) -> dict:
        out = {f"node.{k}": v for k, v in self.hodge.node_mlp.arrays().items()}
        out.update({f"edge.{k}": v for k, v in self.hodge.edge_mlp.arrays().items()})
        if self.damp is not None:
            out.update({f"damp.{k}": v for k, v in self.damp.mlp.arrays().items()})
        if self.jmap is not None:
            out["J.values"] = self.jmap.values
            out["J.gains"] = self.jmap.gains
        return out

    def set_params(self, params: dict):
        def sub(prefix):
            return {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith(prefix + ".")}
        self.hodge.node_mlp.set_arrays(sub("node"))
        self.hodge.edge_mlp.set_arrays(sub("edge"))
        if self.damp is not None:
            self.damp.mlp.set_arrays(sub("damp"))
        if self.jmap is not None:
            self.jmap.values = np.asarray(params["J.values"], dtype=np.float64)
            self.jmap.gains = np.asarray(params["J.gains"], dtype=np.float64)

    @property
    def n_params(self):
        return int(sum(v.size for v in self.params().values()))

    def architecture(self):
        return {"node": self.hodge.node_mlp.arch, "edge": self.hodge.edge_mlp.arch,
                "damp": None if self.damp is None else self.damp.mlp.arch,
                "variant": asdict(self.variant), "learned_J": self.jmap is not None}

    def evaluate(self, geom: MeshGeometry) -> "ModelEval":
        return ModelEval.build(self, geom)

    def system(self, geom):
        """(operator, HodgeStar used for stepping, DampingField or None)."""
        ev = self.evaluate(geom)
        return ev.op, ev.step_hodge, ev.damping


@dataclass
class ModelEval:
    """Forward values of a model on one mesh plus what the backward pass needs."""
    model: Model
    geom: MeshGeometry
    hodge: HodgeStar         # learned, positive
    step_hodge: HodgeStar    # with the variant's edge factor folded into W
    edge_factor: np.ndarray | None
    damping: DampingField | None
    op: ForceOperator
    hcache: tuple
    dcache: tuple | None

    @classmethod
    def build(cls, model: Model, geom: MeshGeometry):
        feats = features_for(geom)
        hodge, hcache = _hodge_forward(model.hodge, geom, feats)
        damping, dcache = None, None
        if model.damp is not None:
            r, dcache = _damp_forward(model.damp, feats)
            damping = DampingField(r)
        spec = model.variant
        factor = None
        if spec.learned_j:
            if model.mesh_id is not None and model.mesh_id != geom.mesh_id:
                raise CheckpointMismatch("learned-J parameters belong to another mesh")
            factor = model.jmap.gain()
            A = edge_maps(spec, geom.D0, model.jmap.values)
        else:
            A = edge_maps(spec, geom.D0)
            if spec.tag == "indefinite_metric":
                factor = sign_mask(geom.n_edges, spec.seed, spec.negative_fraction)
        op = ForceOperator(A, tag=spec.tag)
        W = hodge.W if factor is None else hodge.W * factor
        return cls(model, geom, hodge, HodgeStar(hodge.M, W), factor, damping, op, hcache, dcache)

    @classmethod
    def fixed(cls, geom, hodge: HodgeStar, damping: DampingField | None = None, op=None):
        """Evaluation with injected (M, W, r); used to score theory or hand-set metrics."""
        op = op or ForceOperator(geom.D0)
        return cls(None, geom, hodge, hodge, None, damping, op, (), None)

    def param_grads(self, gM, gW_step, gr=None, gmap=None):
        m = self.model
        gW = gW_step if self.edge_factor is None else gW_step * self.edge_factor
        grads = _hodge_backward(m.hodge, self.geom, self.hcache, gM, gW)
        if m.damp is not None:
            z, cache = self.dcache
            g = np.zeros_like(z) if gr is None else gr * expit(z)
            grads.update({f"damp.{k}": v for k, v in m.damp.mlp.backward(cache, g).items()})
        if m.jmap is not None:
            grads["J.gains"] = m.jmap.gain_grad(gW_step * self.hodge.W)
            grads["J.values"] = np.zeros_like(m.jmap.values) if gmap is None else gmap
        return grads


def init_model(seed: int, damping=False, variant: VariantSpec | None = None, geom=None, width=64) -> Model:
    rng = make_rng(seed, INIT_STREAM)
    hodge = HodgeNet.init(rng, width)
    damp = DampNet.init(rng, width) if damping else None
    variant = variant or VariantSpec()
    jmap, mesh_id = None, None
    if variant.learned_j:
        if geom is None:
            raise ValueError("learned-J models need the training mesh")
        values, gains = init_learned_j(geom.D0, variant.seed)
        jmap = LearnedJ(values, gains, psd=variant.tag == "learned_J_psd")
        mesh_id = geom.mesh_id
    return Model(hodge, damp, variant, jmap, mesh_id)


# ---------------------------------------------------------------- step + adjoint

def _forward_steps(op, M, W, r, q, p, h, n_sub):
    d = None if r is None else np.exp(-0.5 * h * r)
    tape = []
    for _ in range(n_sub):
        p1 = p if d is None else d * p
        p2 = p1 - 0.5 * h * op.apply(q, W)
        q1 = q + h * p2 / M
        p3 = p2 - 0.5 * h * op.apply(q1, W)
        p4 = p3 if d is None else d * p3
        tape.append((q, p, p2, q1, p3))
        q, p = q1, p4
    return q, p, tape, d


def _sum_batch(x):
    return x.sum(axis=0) if x.ndim == 2 else x


def _backward_steps(op, M, W, h, tape, d, gq, gp, want_maps=False):
    gM = np.zeros_like(M)
    gW = np.zeros_like(W)
    gd = None if d is None else np.zeros_like(d)
    gmap = None
    for q, p, p2, q1, p3 in reversed(tape):
        if d is not None:
            gd += _sum_batch(p3 * gp)
            gp = d * gp
        gf1 = -0.5 * h * gp
        qb, Wb = op.vjp(q1, W, gf1)
        gW += _sum_batch(Wb)
        if want_maps:
            gmap = _acc(gmap, op.vjp_maps(q1, W, gf1)[0])
        gq1 = gq + qb
        gp2 = gp + h * gq1 / M
        gM -= _sum_batch(h * gq1 * p2) / (M * M)
        gf0 = -0.5 * h * gp2
        qb, Wb = op.vjp(q, W, gf0)
        gW += _sum_batch(Wb)
        if want_maps:
            gmap = _acc(gmap, op.vjp_maps(q, W, gf0)[0])
        gq = gq1 + qb
        if d is not None:
            gd += _sum_batch(p * gp2)
            gp = d * gp2
        else:
            gp = gp2
    gr = None if d is None else gd * d * (-0.5 * h)
    return gq, gp, gM, gW, gr, gmap


def _acc(a, b):
    return b if a is None else a + b


def _loss_and_seed(q, p, tq, tp, target):
    use_q = target in ("q", "both")
    use_p = target in ("p", "both")
    n = (use_q + use_p) * q.size
    dq = q - tq
    dp = p - tp
    loss = 0.0
    gq = np.zeros_like(q)
    gp = np.zeros_like(p)
    if use_q:
        loss += float(np.sum(dq * dq))
        gq = 2.0 * dq / n
    if use_p:
        loss += float(np.sum(dp * dp))
        gp = 2.0 * dp / n
    return loss / n, gq, gp


def _check_target(target):
    if target not in LOSS_TARGETS:
        raise ValueError(f"loss target must be one of {LOSS_TARGETS}")


def predict(model: Model, geom, state: CanonicalState, plan: StepPlan, ev: ModelEval | None = None):
    ev = ev or model.evaluate(geom)
    r = None if ev.damping is None else ev.damping.r
    q, p, _, _ = _forward_steps(ev.op, ev.step_hodge.M, ev.step_hodge.W, r, state.q, state.p,
                                plan.dt_sub, plan.n_sub)
    return CanonicalState(q, p)


def step_loss(model: Model, geom, pair, plan: StepPlan, target="both", ev=None) -> float:
    """MSE over the selected components of plan-composed kdk(z_t) vs z_target."""
    _check_target(target)
    z0, z1 = pair
    with np.errstate(over="ignore", invalid="ignore"):
        pred = predict(model, geom, z0, plan, ev)
        loss = _loss_and_seed(pred.q, pred.p, z1.q, z1.p, target)[0]
    if not np.isfinite(loss):
        raise NonFiniteState("non-finite one-step prediction")
    return loss


def backward(model: Model, geom, batch, plan: StepPlan, target="both", ev=None):
    """Loss and exact gradients of the batch-mean step loss for every parameter."""
    _check_target(target)
    ev = ev or model.evaluate(geom)
    z0, z1 = batch
    r = None if ev.damping is None else ev.damping.r
    M, W = ev.step_hodge.M, ev.step_hodge.W
    with np.errstate(over="ignore", invalid="ignore"):
        q, p, tape, d = _forward_steps(ev.op, M, W, r, z0.q, z0.p, plan.dt_sub, plan.n_sub)
        loss, gq, gp = _loss_and_seed(q, p, z1.q, z1.p, target)
    if not np.isfinite(loss):
        raise NonFiniteState("non-finite loss in backward")
    want_maps = model.jmap is not None
    _, _, gM, gW, gr, gmap = _backward_steps(ev.op, M, W, plan.dt_sub, tape, d, gq, gp, want_maps)
    grads = ev.param_grads(gM, gW, gr, gmap)
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {k}")
    return loss, grads


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict):
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()})


def adam_update(params: dict, grads: dict, opt: OptimizerState, lr=1e-3, wd=1e-6) -> dict:
    """AdamW (decoupled decay, bias-corrected); advances ``opt`` in place."""
    if params.keys() != grads.keys():
        raise ShapeMismatch("parameter and gradient names differ")
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** opt.step
    c2 = 1.0 - b2 ** opt.step
    out = {}
    for k in params:
        g = grads[k]
        if g.shape != params[k].shape:
            raise ShapeMismatch(f"gradient for {k} has shape {g.shape}, expected {params[k].shape}")
        opt.m[k] = b1 * opt.m[k] + (1.0 - b1) * g
        opt.v[k] = b2 * opt.v[k] + (1.0 - b2) * g * g
        mhat = opt.m[k] / c1
        vhat = opt.v[k] / c2
        out[k] = params[k] - lr * wd * params[k] - lr * mhat / (np.sqrt(vhat) + opt.eps)
    return out


# ---------------------------------------------------------------- training

@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    seed: int = 0
    dt: float = 0.002
    loss_target: str = "both"
    cfl_target: float = DEFAULT_CFL
    width: int = 64
    damping: bool = False

    def __post_init__(self):
        for name in ("epochs", "batch_size", "width"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("learning_rate", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        _check_target(self.loss_target)


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)        # one per epoch
    step_losses: list = field(default_factory=list)
    plans: list = field(default_factory=list)       # (step, n_sub, omega_max)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "step", "train_loss", "val_mse"])
        for r in self.rows:
            w.writerow([r["epoch"], r["step"], repr(r["train_loss"]), repr(r["val_mse"])])
        return buf.getvalue()

    @property
    def final_val_mse(self):
        return self.rows[-1]["val_mse"] if self.rows else float("nan")


@dataclass
class TrainResult:
    model: Model
    log: TrainLog
    plan: StepPlan
    config: TrainConfig

    @property
    def hodge_net(self):
        return self.model.hodge

    @property
    def damp_net(self):
        return self.model.damp

    def __iter__(self):
        return iter((self.model.hodge, self.model.damp, self.log))


class PlanTracker:
    """Keeps n_sub fixed until the model's omega_max moves by more than 5%."""

    def __init__(self, dt, cfl):
        self.dt, self.cfl = dt, cfl
        self.plan = None

    def update(self, ev: ModelEval) -> StepPlan:
        w = estimate_omega_max(ev.op, ev.step_hodge)
        if self.plan is None or abs(w - self.plan.omega_max) > REPLAN_TOLERANCE * max(self.plan.omega_max, 1e-300):
            n_sub = max(1, int(np.ceil(self.dt * w / (2.0 * self.cfl))))
            self.plan = StepPlan(self.dt, n_sub, self.cfl, w)
        return self.plan


def evaluate_mse(model, geom, dataset, plan, target="both", chunk=256):
    ev = model.evaluate(geom)
    tot, n = 0.0, 0
    for lo in range(0, len(dataset), chunk):
        idx = np.arange(lo, min(lo + chunk, len(dataset)))
        tot += step_loss(model, geom, dataset.batch(idx), plan, target, ev) * len(idx)
        n += len(idx)
    return tot / n


def train(dataset, geom: MeshGeometry, config: TrainConfig, val=None, model: Model | None = None,
          variant: VariantSpec | None = None) -> TrainResult:
    """One-step teacher forcing with AdamW; deterministic given ``config.seed``."""
    if dataset.mesh_id != geom.mesh_id:
        raise ShapeMismatch(f"dataset mesh {dataset.mesh_id} differs from {geom.mesh_id}")
    if not np.isclose(dataset.dt, config.dt, rtol=1e-12, atol=0):
        raise ShapeMismatch(f"dataset dt {dataset.dt} differs from config dt {config.dt}")
    model = model or init_model(config.seed, config.damping, variant, geom, config.width)
    params = model.params()
    opt = OptimizerState.for_params(params)
    tracker = PlanTracker(config.dt, config.cfl_target)
    tlog = TrainLog()
    n = len(dataset)
    step = 0
    for epoch in range(config.epochs):
        order = make_rng(config.seed, SHUFFLE_STREAM, epoch).permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            idx = np.sort(order[lo:lo + config.batch_size])
            ev = model.evaluate(geom)
            plan = tracker.update(ev)
            if not tlog.plans or tlog.plans[-1][1] != plan.n_sub:
                tlog.plans.append((step, plan.n_sub, plan.omega_max))
            try:
                loss, grads = backward(model, geom, dataset.batch(idx), plan, config.loss_target, ev)
            except (NonFiniteState, NonFiniteGradient) as exc:
                raise Diverged(f"training diverged at epoch {epoch}, step {step}: {exc}") from exc
            params = adam_update(params, grads, opt, config.learning_rate, config.weight_decay)
            model.set_params(params)
            losses.append(loss)
            tlog.step_losses.append(loss)
            step += 1
        plan = tracker.update(model.evaluate(geom))
        val_mse = evaluate_mse(model, geom, val, plan, config.loss_target) if val is not None else float("nan")
        tlog.rows.append({"epoch": epoch, "step": step, "train_loss": float(np.mean(losses)),
                          "val_mse": float(val_mse)})
        log.info("epoch %d loss %.3e val %.3e n_sub %d", epoch, np.mean(losses), val_mse, plan.n_sub)
    return TrainResult(model, tlog, tracker.plan, config)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: Model, geom, config: TrainConfig | None = None, seed=None) -> str:
    st = FeatureStats.from_geometry(geom)
    doc = {
        "version": CHECKPOINT_VERSION,
        "architecture": model.architecture(),
        "params": {k: v.reshape(-1).tolist() for k, v in model.params().items()},
        "shapes": {k: list(v.shape) for k, v in model.params().items()},
        "stats": st.to_dict(),
        "mesh_id": model.mesh_id or geom.mesh_id,
        "seed": seed if seed is not None else (config.seed if config else None),
        "config": asdict(config) if config else None,
        "optimizer": "AdamW(beta1=0.9, beta2=0.999, eps=1e-8)",
    }
    return json.dumps(doc, sort_keys=True)


def load_checkpoint(text: str, expect_arch: dict | None = None) -> Model:
    doc = json.loads(text)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointMismatch(f"checkpoint version {doc.get('version')} != {CHECKPOINT_VERSION}")
    arch = doc["architecture"]
    if expect_arch is not None and arch != expect_arch:
        raise CheckpointMismatch("architecture descriptors differ")
    width = arch["node"]["hidden"][0]
    variant = VariantSpec(**arch["variant"])
    hodge = HodgeNet.zeros(width)
    damp = DampNet.zeros(arch["damp"]["hidden"][0]) if arch["damp"] else None
    jmap = None
    params = {k: np.array(v, dtype=np.float64).reshape(doc["shapes"][k]) for k, v in doc["params"].items()}
    if arch["learned_J"]:
        jmap = LearnedJ(params["J.values"], params["J.gains"], psd=variant.tag == "learned_J_psd")
    model = Model(hodge, damp, variant, jmap, doc.get("mesh_id") if arch["learned_J"] else None)
    model.set_params(params)
    return model


def checkpoint_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


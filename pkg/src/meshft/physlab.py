"""Physics-consistency diagnostics, rollout metrics and the ablation factory.

All metrics take trajectories of shape (T+1, n0) and are evaluated under a
caller-supplied Hodge (normally the shared theory Hodge), never the model's.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import SingularFit, TooShort, UnknownVariant, ZeroEnergy, ZeroField, ZeroModeAmplitude
from .mesher import WaveNumber
from .phcore import CanonicalState, ForceOperator, HodgeStar, Trajectory, as_operator
from .variants import VARIANTS, VariantSpec

EPS_ENERGY = 1e-12
MIN_AMPLITUDE = 1e-12
SUMMARY_COLUMNS = ("wave_speed_err", "canonical_err", "pde_residual_short", "pde_residual_long",
                  "equipartition_err", "momentum_variation")
SHORT_WINDOW = 5


@dataclass
class DiagnosticsReport:
    wave_speed_err: float
    canonical_err: float
    pde_residual_short: float
    pde_residual_long: float
    equipartition_err: float
    momentum_variation: float
    energy_drift: float
    energy_injection: float
    meta: dict = field(default_factory=dict)

    def metrics(self):
        d = asdict(self)
        d.pop("meta")
        return d

    def to_json(self):
        return json.dumps({**self.metrics(), "meta": self.meta}, indent=1, sort_keys=True)

    def summary_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerow([repr(float(getattr(self, c))) for c in SUMMARY_COLUMNS])
        return buf.getvalue()


def _k_vector(k, L=1.0):
    if isinstance(k, WaveNumber):
        return k.vector
    return np.asarray(k, dtype=np.float64)


def _project(q, geom, k):
    """Least-squares (a, b) per frame in q ~ a sin(k.x) + b cos(k.x)."""
    th = geom.positions @ k
    basis = np.column_stack([np.sin(th), np.cos(th)])
    G = basis.T @ basis
    if np.linalg.cond(G) > 1e12:
        raise SingularFit("sin/cos basis is rank-deficient at this wavenumber on this mesh")
    rhs = np.asarray(q) @ basis
    return np.linalg.solve(G, rhs.T).T


def wave_speed_error(traj: Trajectory, geom, k, c: float, dt: float | None = None) -> float:
    """|c_hat - c| / c with c_hat from amplitude-weighted unwrapped phase increments."""
    dt = traj.dt if dt is None else dt
    if len(traj.q) < 3:
        raise TooShort("wave speed needs at least 3 frames")
    kv = _k_vector(k)
    ab = _project(traj.q, geom, kv)
    amp = np.hypot(ab[:, 0], ab[:, 1])
    if np.sum(amp < MIN_AMPLITUDE) > len(amp) / 2:
        raise ZeroModeAmplitude("projection onto the mode vanishes in most frames")
    theta = np.arctan2(ab[:, 1], ab[:, 0])   # = phi - omega t
    dth = np.angle(np.exp(1j * np.diff(theta)))
    w = 0.5 * (amp[1:] + amp[:-1])
    omega_hat = -np.sum(w * dth) / np.sum(w) / dt
    c_hat = omega_hat / np.linalg.norm(kv)
    return float(abs(c_hat - c) / c)


def canonical_consistency(traj: Trajectory, M, dt: float | None = None) -> float:
    dt = traj.dt if dt is None else dt
    q, p = traj.q, traj.p
    if len(q) < 3:
        raise TooShort("canonical consistency needs T >= 2")
    Mqd = M * (q[2:] - q[:-2]) / (2.0 * dt)
    pmid = 0.5 * (p[2:] + p[:-2])
    num = float(np.sum((pmid - Mqd) ** 2))
    den = float(np.sum(Mqd ** 2))
    return _ratio(num, den)


def _ratio(num, den):
    """num/den with the 0/0 case reported as 0."""
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return num / den


def pde_residual(traj: Trajectory, M, K_apply, dt: float | None = None, T: int | None = None) -> float:
    """Normalized residual of M qdd + K q over interior frames of the first T steps."""
    dt = traj.dt if dt is None else dt
    q = traj.q if T is None else traj.q[:T + 1]
    if len(q) < 3:
        raise TooShort("pde residual needs T >= 2")
    Mqdd = M * (q[2:] - 2.0 * q[1:-1] + q[:-2]) / (dt * dt)
    Kq = K_apply(q[1:-1])
    num = float(np.sum((Mqdd + Kq) ** 2))
    den = float(np.sum(Mqdd ** 2) + np.sum(Kq ** 2))
    return _ratio(num, den)


def equipartition(traj: Trajectory, M, K_apply) -> float:
    kin = 0.5 * np.sum(traj.p * traj.p / M, axis=-1)
    pot = 0.5 * np.sum(traj.q * K_apply(traj.q), axis=-1)
    T, U = float(np.mean(kin)), float(np.mean(pot))
    if T + U < 1e-14:
        raise ZeroEnergy("no energy to partition")
    return abs(T - U) / (T + U)


def momentum_variation(traj: Trajectory) -> float:
    m = traj.p.sum(axis=-1)
    scale = float(np.mean(np.sum(np.abs(traj.p), axis=-1)))
    if not scale > 0:
        return 0.0
    return float((m.max() - m.min()) / scale)


def theory_energy(geom, hodge: HodgeStar, traj: Trajectory):
    """H_t under ``hodge`` with the signed incidence, whatever produced the frames."""
    D0 = geom.D0
    Dq = D0.apply(traj.q)
    return 0.5 * np.sum(hodge.W * Dq * Dq, axis=-1) + 0.5 * np.sum(traj.p * traj.p / hodge.M, axis=-1)


def energy_drift_and_injection(traj: Trajectory, geom, theory: HodgeStar):
    """(max_t |E_t - E_0| / |E_0|, sum_t max(E_{t+1} - E_t, 0) / (|E_0| + eps))."""
    with np.errstate(over="ignore", invalid="ignore"):
        E = theory_energy(geom, theory, traj)
        if not np.all(np.isfinite(E)):
            return float("inf"), float("inf")
        e0 = abs(E[0])
        drift = float(np.max(np.abs(E - E[0])) / max(e0, EPS_ENERGY))
        inj = float(np.sum(np.maximum(np.diff(E), 0.0)) / (e0 + EPS_ENERGY))
    return drift, inj


def normalized_energy_error(pred: Trajectory, ref: Trajectory, geom, theory: HodgeStar) -> float:
    """Mean over frames of |E_pred - E_ref| / E_ref under the theory Hodge."""
    with np.errstate(over="ignore", invalid="ignore"):
        Ep = theory_energy(geom, theory, pred)
        Er = theory_energy(geom, theory, ref)
        val = float(np.mean(np.abs(Ep - Er) / np.maximum(np.abs(Er), EPS_ENERGY)))
    return val if np.isfinite(val) else float("inf")


def tsmse(pred: Trajectory, ref: Trajectory) -> float:
    """Mean over frames 1..T of the per-frame MSE over concatenated (q, p)."""
    with np.errstate(over="ignore", invalid="ignore"):
        dq = pred.q[1:] - ref.q[1:]
        dp = pred.p[1:] - ref.p[1:]
        val = float(0.5 * (np.mean(dq * dq) + np.mean(dp * dp)))
    return val if np.isfinite(val) else float("inf")


def vf_alignment(model_field, theory_field):
    """Cosine and relative L2 between stacked vector fields over a batch of states."""
    vm = np.concatenate([np.ravel(a) for a in model_field])
    vt = np.concatenate([np.ravel(a) for a in theory_field])
    nt = np.linalg.norm(vt)
    nm = np.linalg.norm(vm)
    if nt == 0 or nm == 0:
        raise ZeroField("vector field vanishes")
    return float(vm @ vt / (nm * nt)), float(np.linalg.norm(vm - vt) / nt)


def amp_phase_fit(q_pred, geom, k, A_true=None, phi_eff=None):
    """Fit q ~ a sin(k.x) + b cos(k.x); returns (amp_err_rel, phase_err_deg, A_hat, phi_hat)."""
    a, b = _project(np.asarray(q_pred)[None, :], geom, _k_vector(k))[0]
    A_hat = float(math.hypot(a, b))
    phi_hat = float(math.atan2(b, a))
    amp_err = float("nan") if A_true is None else abs(A_hat - A_true) / abs(A_true)
    if phi_eff is None:
        ph_err = float("nan")
    else:
        d = math.degrees(phi_hat - phi_eff)
        d = (d + 180.0) % 360.0 - 180.0
        if d == -180.0:
            d = 180.0
        ph_err = abs(d)
    return amp_err, ph_err, A_hat, phi_hat


def diagnose(traj: Trajectory, geom, theory: HodgeStar, k, c: float, meta=None) -> DiagnosticsReport:
    """Full physics report plus drift/injection for one rollout."""
    op = ForceOperator(geom.D0)
    K = lambda q: op.apply(q, theory.W)
    drift, inj = energy_drift_and_injection(traj, geom, theory)
    return DiagnosticsReport(
        wave_speed_err=wave_speed_error(traj, geom, k, c),
        canonical_err=canonical_consistency(traj, theory.M),
        pde_residual_short=pde_residual(traj, theory.M, K, T=SHORT_WINDOW),
        pde_residual_long=pde_residual(traj, theory.M, K),
        equipartition_err=equipartition(traj, theory.M, K),
        momentum_variation=momentum_variation(traj),
        energy_drift=drift,
        energy_injection=inj,
        meta={"T": traj.T, "dt": traj.dt, "c": c, **(meta or {})},
    )


def make_ablation(variant, geom=None, base_system=None, seed: int = 0, negative_fraction: float = 0.1):
    """Variant spec (or a model re-wired to it).

    ``base_system`` may be a ``learn.Model``; the returned model shares its
    networks and swaps the force path. With no base system the spec is returned.
    """
    tag = variant.tag if isinstance(variant, VariantSpec) else str(variant)
    if tag not in VARIANTS:
        raise UnknownVariant(f"unknown ablation {tag!r}")
    spec = variant if isinstance(variant, VariantSpec) else VariantSpec(tag, seed, negative_fraction)
    if base_system is None:
        return spec
    if tag == "structured":
        return base_system
    from .learn import LearnedJ, Model
    from .variants import init_learned_j

    jmap, mesh_id = None, None
    if spec.learned_j:
        if geom is None:
            raise ValueError("learned-J ablations need a mesh")
        values, gains = init_learned_j(geom.D0, spec.seed)
        jmap = LearnedJ(values, gains, psd=tag == "learned_J_psd")
        mesh_id = geom.mesh_id
    return Model(base_system.hodge, base_system.damp, spec, jmap, mesh_id)


def skew_defect(model, geom) -> float:
    """max |J + J^T| for the mixed node-edge interconnection J = A - A^T, A = [[0, 0], [B, 0]]."""
    J = interconnection(model, geom)
    return float(np.max(np.abs(J + J.T)))


def interconnection(model, geom) -> np.ndarray:
    ev = model.evaluate(geom)
    B = np.asarray(ev.op.A.dense(), dtype=np.float64)
    n1, n0 = B.shape
    A = np.zeros((n0 + n1, n0 + n1))
    A[n0:, :n0] = B
    return A - A.T

"""Command-line runner.

    meshft <gen|train|rollout|diagnose|ablate|ood|sweep|maxwell-demo> [--config PATH] [--seed N]
           [--out DIR] [--cfl X] [--mesh SPEC] [--dump-states] [--check]

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 threshold failure under --check.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from .config import ExperimentConfig, load_config, override
from .errors import CheckpointMismatch, ConfigError, Diverged, MeshFTError, NonFiniteGradient, NonFiniteState
from .learn import checkpoint_hash, load_checkpoint
from .maxwell2d import maxwell_demo
from .mesher import parse_mesh_spec, periodic_grid
from .phcore import Trajectory, theory_hodge
from .physlab import diagnose
from .svgplot import line_plot
from .wavegen import PairDataset, WaveSample

log = logging.getLogger("meshft")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4
COMMANDS = ("gen", "train", "rollout", "diagnose", "ablate", "ood", "sweep", "maxwell-demo")
CONTROL_CHARGE_MIN = 1e-3


# ---------------------------------------------------------------- output helpers

def _csv(rows, columns=None) -> str:
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in (r[c] for c in columns)])
    return buf.getvalue()


class Run:
    """Output directory plus provenance for one subcommand invocation."""

    def __init__(self, cfg: ExperimentConfig, stage: str):
        self.cfg = cfg
        self.stage = stage
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.checkpoint_hash = None

    def write(self, name, text):
        (self.out / name).write_text(text)

    def metrics(self, values: dict):
        """Write ``metrics.json`` (latest stage) and ``metrics_<stage>.json`` (kept per stage)."""
        doc = {"stage": self.stage, "config_hash": self.cfg.hash, "checkpoint_hash": self.checkpoint_hash,
               "seed": self.cfg.seed, "version": __version__,
               "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
               "metrics": values}
        text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
        self.write("metrics.json", text)
        self.write(f"metrics_{self.stage.replace('-', '_')}.json", text)
        return doc

    def checkpoint(self, path=None):
        path = Path(path) if path else self.out / "checkpoint.json"
        try:
            text = path.read_text()
        except OSError:
            raise ConfigError(f"no checkpoint at {path}; run `train` first", "diagnose.checkpoint") from None
        self.checkpoint_hash = checkpoint_hash(text)
        return load_checkpoint(text)


def _require(failures, ok, message):
    if not ok:
        failures.append(message)


# ---------------------------------------------------------------- stages

def cmd_gen(cfg, args):
    run = Run(cfg, "gen")
    geom = ex.geometry(cfg)
    tr, va = ex.datasets(cfg, geom)
    tr.save(run.out / "train")
    va.save(run.out / "val")
    run.write("mesh.json", geom.to_json())
    m = {"train_pairs": len(tr), "val_pairs": len(va), "mesh_id": geom.mesh_id, "dt": cfg.dt}
    run.metrics(m)
    failures = []
    _require(failures, len(tr) == cfg.data.train and len(va) == cfg.data.val, "pair counts differ from config")
    return failures


def _load_data(cfg, run, geom):
    """Reuse `gen` output in the run directory when it matches the config, else regenerate."""
    stem_tr, stem_va = run.out / "train", run.out / "val"
    if stem_tr.with_suffix(".json").exists() and stem_va.with_suffix(".json").exists():
        tr, va = PairDataset.load(stem_tr), PairDataset.load(stem_va)
        same = (tr.mesh_id == geom.mesh_id and tr.dt == cfg.dt and len(tr) == cfg.data.train
                and len(va) == cfg.data.val and tr.meta.get("seed") == cfg.seed)
        if same:
            return tr, va
        log.warning("dataset files in %s do not match the config; regenerating", run.out)
    return ex.datasets(cfg, geom)


def cmd_train(cfg, args):
    run = Run(cfg, "train")
    geom = ex.geometry(cfg)
    tr_run = ex.run_train(cfg, geom, _load_data(cfg, run, geom))
    run.write("checkpoint.json", tr_run.checkpoint)
    run.checkpoint_hash = checkpoint_hash(tr_run.checkpoint)
    tlog = tr_run.result.log
    run.write("log.csv", tlog.to_csv())
    steps = np.arange(1, len(tlog.step_losses) + 1)
    run.write("loss.svg", line_plot({"train loss": (steps, tlog.step_losses)}, "training loss", "step",
                                    "one-step MSE", logy=True))
    m = tr_run.metrics
    run.metrics(m)
    failures = []
    _require(failures, m["val_mse"] <= cfg.check.val_mse, f"val_mse {m['val_mse']:.3e} > {cfg.check.val_mse}")
    if cfg.train.damping:
        _require(failures, m["rollout_nee"] <= cfg.check.nee, f"nee {m['rollout_nee']:.3e} > {cfg.check.nee}")
    else:
        _require(failures, m["rollout_drift_max"] <= cfg.check.drift,
                 f"drift {m['rollout_drift_max']:.3e} > {cfg.check.drift}")
    return failures


def cmd_rollout(cfg, args):
    run = Run(cfg, "rollout")
    model = run.checkpoint()
    geom = ex.geometry(cfg)
    ev = model.evaluate(geom)
    samples = ex.test_samples(cfg, geom, cfg.data.test)
    m, first = ex.score_rollouts(ev, geom, samples, cfg.dt, cfg.T, cfg.sampler.c, cfg.cfl_target,
                                 keep_first=True)
    first.meta.update({"mesh": cfg.mesh, "L": cfg.L, "c": cfg.sampler.c})
    theory = theory_hodge(geom, cfg.sampler.c)
    summary = first.summary_csv(geom, theory)
    run.write("rollout.csv", summary)
    t, H = np.loadtxt(io.StringIO(summary), delimiter=",", skiprows=1, usecols=(0, 1), unpack=True, ndmin=2)
    run.write("energy.svg", line_plot({"H (theory)": (t, H)}, "rollout energy", "t", "H"))
    if args.dump_states:
        run.write("trajectory.json", first.to_json())
    run.metrics(m)
    failures = []
    if cfg.train.damping:
        _require(failures, m["nee"] <= cfg.check.nee, f"nee {m['nee']:.3e} > {cfg.check.nee}")
    else:
        _require(failures, m["drift_max"] <= cfg.check.drift, f"drift {m['drift_max']:.3e} > {cfg.check.drift}")
    return failures


def cmd_diagnose(cfg, args):
    run = Run(cfg, "diagnose")
    path = Path(cfg.diagnose.trajectory) if cfg.diagnose.trajectory else run.out / "trajectory.json"
    model = None
    ck = Path(cfg.diagnose.checkpoint) if cfg.diagnose.checkpoint else run.out / "checkpoint.json"
    if ck.exists():
        model = run.checkpoint(ck)
    if path.exists():
        traj = Trajectory.from_json(path.read_text())
        sample = WaveSample(**traj.meta["sample"])
        geom = parse_mesh_spec(traj.meta.get("mesh", cfg.mesh), traj.meta.get("L", cfg.L))
        c = float(traj.meta.get("c", sample.c))
    elif model is not None:
        geom = ex.geometry(cfg)
        sample = ex.test_samples(cfg, geom, 1)[0]
        c = cfg.sampler.c
        _, traj = ex.score_rollouts(model.evaluate(geom), geom, [sample], cfg.dt, cfg.T, c, cfg.cfl_target,
                                    keep_first=True)
    else:
        raise ConfigError(f"neither {path} nor {ck} exists", "diagnose.trajectory")
    rep = diagnose(traj, geom, theory_hodge(geom, c), sample.k, c, {"mode": [sample.mx, sample.my]})
    run.write("diagnostics.json", rep.to_json() + "\n")
    run.write("physics.csv", rep.summary_csv())
    m = rep.metrics()
    if model is not None:
        ev = model.evaluate(geom)
        samples = ex.test_samples(cfg, geom, 8)
        m["vf_cosine"], m["vf_rel_l2"] = ex.field_alignment(ev, geom, samples, c)
        m.update(ex.short_horizon(ev, geom, samples, cfg.dt, cfg.cfl_target))
    run.metrics(m)
    failures = []
    _require(failures, m["wave_speed_err"] <= cfg.check.wave_speed, "wave-speed error above threshold")
    _require(failures, m["canonical_err"] <= cfg.check.canonical, "canonical error above threshold")
    if "vf_cosine" in m:
        _require(failures, m["vf_cosine"] >= cfg.check.vf_cosine, "vector-field cosine below threshold")
        _require(failures, m["phase_err_deg"] <= cfg.check.phase_deg, "phase error above threshold")
    return failures


def cmd_ablate(cfg, args):
    run = Run(cfg, "ablate")
    rows, _ = ex.ablation_rows(cfg)
    cols = ["variant", "val_mse", "one_step_mse", "tsmse", "drift", "injection", "momentum", "n_sub"]
    run.write("ablation.csv", _csv(rows, cols))
    by = {r["variant"]: r for r in rows}
    run.metrics({"rows": rows})
    failures = []
    if "structured" in by and "no_orientation" in by:
        _require(failures, by["no_orientation"]["momentum"] >= 1e3 * by["structured"]["momentum"],
                 "no_orientation momentum not >= 1e3 x structured")
    if "structured" in by and "scrambled_topology" in by:
        s = by["scrambled_topology"]
        _require(failures, s["drift"] >= 1e2 * by["structured"]["drift"] and s["momentum"] <= 1e-6,
                 "scrambled_topology drift/momentum pattern not met")
    if "learned_J_psd" in by and "learned_J_free" in by:
        _require(failures, by["learned_J_free"]["drift"] >= 10 * by["learned_J_psd"]["drift"],
                 "learned_J_free drift not >= 10 x learned_J_psd")
    return failures


def cmd_ood(cfg, args):
    run = Run(cfg, "ood")
    geom = ex.geometry(cfg)
    data = ex.datasets(cfg, geom)
    rows = []
    ck = run.out / "checkpoint.json"
    for tag in cfg.ood.variants:
        if tag == "structured" and ck.exists():
            model = run.checkpoint(ck)
        else:
            model = ex.fit(cfg, geom, *data, dataclasses.replace(cfg.variant, tag=tag)).model
        rows.extend(ex.ood_eval(cfg, model, tag))
    cols = ["shift", "variant", "mesh", "test_kmax", "c", "one_step_mse", "tsmse", "drift", "drift_max",
            "momentum", "n_sub"]
    run.write("ood.csv", _csv(rows, cols))
    run.metrics({"rows": rows})
    failures = []
    by = {(r["shift"], r["variant"]): r for r in rows}
    for shift in ("frequency", "wave_speed", "resolution"):
        s = by.get((shift, "structured"))
        if s is None:
            continue
        _require(failures, s["drift"] <= cfg.check.ood_drift, f"{shift}: drift {s['drift']:.3e}")
        b = by.get((shift, "scrambled_topology"))
        if b is not None:
            _require(failures, s["drift"] < b["drift"], f"{shift}: structured drift not below scrambled")
    return failures


def cmd_sweep(cfg, args):
    run = Run(cfg, "sweep")
    rows = ex.sweep_rows(cfg)
    run.write("sweep.csv", _csv(rows, ["size", "one_step_mse", "drift", "tsmse"]))
    sizes = [r["size"] for r in rows]
    run.write("sweep.svg", line_plot({"one-step MSE": (sizes, [r["one_step_mse"] for r in rows]),
                                      "drift": (sizes, [r["drift"] for r in rows])},
                                     "data efficiency", "training pairs", "", logy=True))
    run.metrics({"rows": rows})
    return [f"size {r['size']}: non-finite metric" for r in rows
            if not (np.isfinite(r["one_step_mse"]) and np.isfinite(r["drift"]))]


def cmd_maxwell(cfg, args):
    run = Run(cfg, "maxwell-demo")
    mx = cfg.maxwell
    geom = periodic_grid(mx.grid, mx.grid, cfg.L)
    rep = maxwell_demo(geom, mx.seed, mx.steps, mx.cfl, mx.stars)
    run.write("maxwell.csv", rep.csv)
    t, E = np.loadtxt(io.StringIO(rep.csv), delimiter=",", skiprows=1, usecols=(0, 1), unpack=True)
    run.write("maxwell_energy.svg", line_plot({"energy": (t, E)}, "TE energy", "t", "energy"))
    m = {"steps": rep.steps, "dt": rep.dt, "energy_drift": rep.energy_drift,
         "charge_invariant": rep.charge_invariant, "control_charge": rep.control_charge}
    run.metrics(m)
    failures = []
    _require(failures, rep.charge_invariant <= cfg.check.charge, "charge invariant above threshold")
    _require(failures, rep.energy_drift <= cfg.check.maxwell_drift, "energy drift above threshold")
    _require(failures, rep.control_charge > CONTROL_CHARGE_MIN, "unsigned control did not break charge")
    return failures


HANDLERS = {"gen": cmd_gen, "train": cmd_train, "rollout": cmd_rollout, "diagnose": cmd_diagnose,
            "ablate": cmd_ablate, "ood": cmd_ood, "sweep": cmd_sweep, "maxwell-demo": cmd_maxwell}


def build_parser():
    ap = argparse.ArgumentParser(prog="meshft", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="YAML experiment config (defaults if omitted)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--cfl", type=float, help="CFL target for substep planning")
    ap.add_argument("--mesh", help="grid:NX,NY or delaunay:N,SEED")
    ap.add_argument("--sizes", help="comma-separated dataset sizes for `sweep`")
    ap.add_argument("--dump-states", action="store_true", help="write the first rollout to trajectory.json")
    ap.add_argument("--check", action="store_true", help="exit 4 if acceptance thresholds are missed")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    cfg = override(cfg, seed=args.seed, out=args.out, cfl_target=args.cfl, mesh=args.mesh)
    if args.sizes:
        try:
            sizes = [int(s) for s in args.sizes.split(",")]
        except ValueError:
            raise ConfigError(f"bad size list {args.sizes!r}", "sweep.sizes") from None
        cfg = override(cfg, sweep=dataclasses.replace(cfg.sweep, sizes=sizes))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        failures = HANDLERS[args.command](cfg, args)
    except (ConfigError, CheckpointMismatch) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteState, NonFiniteGradient, Diverged, FloatingPointError) as exc:
        print(f"{args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MeshFTError as exc:
        print(f"{args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for f in failures:
        log.warning("%s: %s", args.command, f)
    if args.check and failures:
        for f in failures:
            print(f"CHECK FAILED {args.command}: {f}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

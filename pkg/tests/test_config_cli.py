from __future__ import annotations

import csv
import json

import pytest
import yaml

from meshft import cli
from meshft import experiments as ex
from meshft.config import ExperimentConfig, from_dict, load_config, override
from meshft.errors import ConfigError, NonFiniteState
from meshft.wavegen import PairDataset

SMALL = {
    "mesh": "grid:8,8", "T": 20, "seed": 3,
    "sampler": {"kmax_x": 2, "kmax_y": 2},   # mode 4 is the Nyquist mode of an 8-node axis
    "data": {"train": 40, "val": 8, "test": 4},
    "train": {"epochs": 1, "batch_size": 8, "width": 8},
    "ood": {"test_mesh": "grid:16,16", "test_pairs": 4},
    "ablate": {"variants": ["structured", "no_orientation"], "test_pairs": 2},
    "sweep": {"sizes": [10, 20]},
    "maxwell": {"grid": 16, "steps": 50},
}


def write_config(tmp_path, data=None, **top):
    doc = dict(SMALL if data is None else data, out=str(tmp_path / "run"), **top)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def strip_time(path):
    doc = json.loads(path.read_text())
    doc.pop("timestamp")
    return doc


def test_defaults_match_reference_recipe():
    cfg = load_config()
    assert (cfg.mesh, cfg.dt, cfg.T, cfg.data.train, cfg.data.val) == ("grid:32,32", 0.002, 200, 2000, 256)
    assert (cfg.train.epochs, cfg.train.batch_size, cfg.train.learning_rate) == (10, 8, 1e-3)
    assert (cfg.ood.test_kmax, cfg.ood.test_c, cfg.ood.test_mesh) == (6, 1.4, "grid:64,64")
    assert from_dict(yaml.safe_load(cfg.to_yaml())) == cfg


@pytest.mark.parametrize("doc,path", [
    ({"trian": {}}, "trian"),
    ({"train": {"epochz": 3}}, "train.epochz"),
    ({"train": {"epochs": "ten"}}, "train.epochs"),
    ({"train": {"damping": 1}}, "train.damping"),
    ({"dt": "fast"}, "dt"),
    ({"sampler": {"kmax_x": 2.5}}, "sampler.kmax_x"),
    ({"ood": {"variants": ["structured", "nope"]}}, "ood.variants[1]"),
    ({"sweep": {"sizes": [10, "x"]}}, "sweep.sizes[1]"),
    ({"mesh": "hex:4"}, "mesh"),
    ({"dt": -1.0}, "dt"),
    ({"train": {"loss_target": "r"}}, "train.loss_target"),
    ({"variant": {"tag": "bogus"}}, "variant"),
])
def test_config_errors_carry_paths(doc, path):
    with pytest.raises(ConfigError) as exc:
        from_dict(doc)
    assert exc.value.path == path


def test_config_hash_and_override():
    a = load_config()
    assert a.hash == ExperimentConfig().hash
    b = override(a, seed=4, out=None)
    assert b.seed == 4 and b.out == a.out and b.hash != a.hash
    assert isinstance(from_dict({"L": 2}).L, float)


def test_missing_config_file(tmp_path):
    assert cli.main(["gen", "--config", str(tmp_path / "absent.yaml")]) == cli.EXIT_CONFIG


def test_config_error_exit_code(tmp_path, capsys):
    path = write_config(tmp_path, {"train": {"epochz": 1}})
    assert cli.main(["gen", "--config", path]) == cli.EXIT_CONFIG
    assert "train.epochz" in capsys.readouterr().err


def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NonFiniteState("non-finite state at frame 3")
    monkeypatch.setattr(ex, "run_train", boom)
    assert cli.main(["train", "--config", write_config(tmp_path)]) == cli.EXIT_NUMERIC


def test_check_failure_exit_code(tmp_path):
    path = write_config(tmp_path, check={"maxwell_drift": 1e-15})
    assert cli.main(["maxwell-demo", "--config", path]) == cli.EXIT_OK
    assert cli.main(["maxwell-demo", "--config", path, "--check"]) == cli.EXIT_CHECK


def test_gen_reference_counts(tmp_path):
    path = write_config(tmp_path, {"data": {"train": 2000, "val": 256}})
    assert cli.main(["gen", "--config", path, "--mesh", "grid:8,8"]) == 0
    out = tmp_path / "run"
    assert len(PairDataset.load(out / "train")) == 2000
    assert len(PairDataset.load(out / "val")) == 256
    m = json.loads((out / "metrics.json").read_text())
    assert m["metrics"]["train_pairs"] == 2000 and m["config_hash"] and m["seed"] == 0


def test_pipeline_and_bitwise_reruns(tmp_path):
    path = write_config(tmp_path)
    out = tmp_path / "run"
    for cmd in (["gen"], ["train"], ["rollout", "--dump-states"], ["diagnose"]):
        assert cli.main([cmd[0], "--config", path, *cmd[1:]]) == 0, cmd
    rows = list(csv.reader((out / "physics.csv").open()))
    assert rows[0][:2] == ["wave_speed_err", "canonical_err"] and len(rows) == 2 and len(rows[1]) == 6
    first = {s: strip_time(out / f"metrics_{s}.json") for s in ("train", "rollout", "diagnose")}
    ckpt = (out / "checkpoint.json").read_text()
    assert first["diagnose"]["checkpoint_hash"] == first["rollout"]["checkpoint_hash"]
    for cmd in (["train"], ["rollout", "--dump-states"], ["diagnose"]):
        assert cli.main([cmd[0], "--config", path, *cmd[1:]]) == 0
    assert (out / "checkpoint.json").read_text() == ckpt
    for s, doc in first.items():
        assert strip_time(out / f"metrics_{s}.json") == doc
    for name in ("log.csv", "loss.svg", "rollout.csv", "energy.svg", "diagnostics.json"):
        assert (out / name).stat().st_size > 0


def test_remaining_subcommands(tmp_path):
    path = write_config(tmp_path)
    out = tmp_path / "run"
    for cmd in ("ablate", "ood", "sweep", "maxwell-demo"):
        assert cli.main([cmd, "--config", path]) == 0, cmd
    ood = list(csv.DictReader((out / "ood.csv").open()))
    assert {r["shift"] for r in ood} == {"identity", "frequency", "wave_speed", "resolution"}
    sweep = list(csv.DictReader((out / "sweep.csv").open()))
    assert [int(r["size"]) for r in sweep] == [10, 20]
    abl = list(csv.DictReader((out / "ablation.csv").open()))
    assert [r["variant"] for r in abl] == ["structured", "no_orientation"]
    assert (out / "maxwell.csv").read_text().startswith("t,energy,charge_invariant")


def test_sizes_flag(tmp_path):
    args = cli.build_parser().parse_args(["sweep", "--sizes", "5,7", "--config", write_config(tmp_path)])
    assert cli.resolve_config(args).sweep.sizes == [5, 7]
    args = cli.build_parser().parse_args(["sweep", "--sizes", "5,x"])
    with pytest.raises(ConfigError):
        cli.resolve_config(args)


def test_shipped_configs_validate():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    paths = sorted(root.glob("*.yaml"))
    assert paths
    for p in paths:
        load_config(p)

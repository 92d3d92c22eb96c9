import json

import numpy as np
import pytest
import torch
import yaml

from uavsim import cli
from uavsim.cvae import build_model, generate_dataset, save_checkpoint
from uavsim.scenario import paper_defaults

SMALL = dict(layers=2, atoms_per_layer=4)


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "scenario.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return str(path)


@pytest.fixture
def spec_path(tmp_path):
    spec = dict(sweep_var="layers", values=[1, 2], trials=1,
                methods=["nosim", "rd"], base=SMALL, master_seed=3)
    path = tmp_path / "spec.yaml"
    path.write_text(yaml.safe_dump(spec))
    return str(path)


def test_solve_writes_solution(config_path, tmp_path):
    out = tmp_path / "sol.json"
    code = cli.main(["solve", config_path, "--seed", "1", "--out", str(out)])
    assert code == cli.EXIT_OK
    payload = json.loads(out.read_text())
    assert payload["schema_version"] == cli.SCHEMA_VERSION
    assert payload["seed"] == 1
    assert payload["capacity_bits_s_hz"] > 0
    assert payload["termination"] in ("converged", "max_iter")
    assert np.asarray(payload["uav_positions"]).shape == (3, 3)
    assert np.asarray(payload["phases"]).shape == (3, 2, 4)
    assert len(payload["trace"]) <= 50
    assert all("wall_ms" not in rec for rec in payload["trace"])


def test_solve_deterministic(config_path, tmp_path):
    outs = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        assert cli.main(["solve", config_path, "--seed", "2",
                         "--out", str(out)]) == cli.EXIT_OK
        payload = json.loads(out.read_text())
        payload.pop("trace")
        outs.append(payload)
    assert outs[0] == outs[1]


def test_solve_missing_config(tmp_path):
    assert cli.main(["solve", str(tmp_path / "nope.yaml")]) == cli.EXIT_CONFIG


def test_solve_bad_config(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(dict(layers=-1)))
    assert cli.main(["solve", str(bad)]) == cli.EXIT_CONFIG


def test_solve_cvae_requires_model(config_path):
    assert cli.main(["solve", config_path, "--phase", "cvae"]) == cli.EXIT_CONFIG


def test_solve_with_trained_model(config_path, tmp_path):
    ds = generate_dataset(paper_defaults(**SMALL), count=6, seed=1, sweeps=5)
    torch.manual_seed(0)
    model = build_model(ds, latent_dim=8, hidden=32)
    ckpt = tmp_path / "m.pt"
    save_checkpoint(model, ckpt)
    out = tmp_path / "sol.json"
    code = cli.main(["solve", config_path, "--seed", "1", "--phase", "cvae",
                     "--model", str(ckpt), "--out", str(out)])
    assert code == cli.EXIT_OK
    assert json.loads(out.read_text())["capacity_bits_s_hz"] > 0


def test_experiment_outputs(spec_path, tmp_path):
    out_dir = tmp_path / "exp"
    code = cli.main(["experiment", spec_path, "--out-dir", str(out_dir)])
    assert code == cli.EXIT_OK
    results = (out_dir / "results.csv").read_text()
    assert len(results.splitlines()) == 1 + 2 * 1 * 2
    assert (out_dir / "timings.csv").exists()


def test_experiment_jobs_bit_identical(spec_path, tmp_path):
    texts = []
    for jobs, sub in (("1", "one"), ("4", "four")):
        out_dir = tmp_path / sub
        assert cli.main(["experiment", spec_path, "--jobs", jobs,
                         "--out-dir", str(out_dir)]) == cli.EXIT_OK
        texts.append((out_dir / "results.csv").read_bytes())
    assert texts[0] == texts[1]


def test_experiment_resume_bit_identical(spec_path, tmp_path):
    out_dir = tmp_path / "exp"
    assert cli.main(["experiment", spec_path, "--out-dir", str(out_dir)]) == 0
    first = (out_dir / "results.csv").read_bytes()
    # drop one cached cell and rerun: only that cell is recomputed
    cells = sorted((out_dir / "cells").glob("*.json"))
    cells[0].unlink()
    assert cli.main(["experiment", spec_path, "--out-dir", str(out_dir)]) == 0
    assert (out_dir / "results.csv").read_bytes() == first


def test_experiment_bad_spec(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(dict(sweep_var="altitude", values=[1])))
    assert cli.main(["experiment", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["experiment", str(tmp_path / "none.yaml")]) == cli.EXIT_CONFIG


def test_dataset_single_file(config_path, tmp_path):
    out = tmp_path / "ds.npz"
    code = cli.main(["dataset", config_path, "--count", "5", "--seed", "2",
                     "--out", str(out)])
    assert code == cli.EXIT_OK
    from uavsim.cvae import PhaseDataset
    assert len(PhaseDataset.load(out)) == 5


def test_dataset_sharding_rule(config_path, tmp_path, monkeypatch):
    # shrink the shard size so sharding is testable at desk scale
    monkeypatch.setattr(cli, "DATASET_SHARD_SIZE", 4)
    out = tmp_path / "ds.npz"
    code = cli.main(["dataset", config_path, "--count", "10", "--seed", "0",
                     "--out", str(out)])
    assert code == cli.EXIT_OK
    from uavsim.cvae import PhaseDataset
    parts = sorted(tmp_path.glob("ds.part*.npz"))
    assert [p.name for p in parts] == ["ds.part000.npz", "ds.part001.npz",
                                       "ds.part002.npz"]
    sizes = [len(PhaseDataset.load(p)) for p in parts]
    assert sizes == [4, 4, 2]


def test_train_roundtrip(config_path, tmp_path):
    ds_path = tmp_path / "ds.npz"
    assert cli.main(["dataset", config_path, "--count", "8", "--seed", "1",
                     "--out", str(ds_path)]) == cli.EXIT_OK
    out = tmp_path / "model.pt"
    code = cli.main(["train", str(ds_path), "--epochs", "3", "--lr", "1e-3",
                     "--seed", "0", "--out", str(out)])
    assert code == cli.EXIT_OK
    loss_csv = tmp_path / "model.loss.csv"
    lines = loss_csv.read_text().splitlines()
    assert lines[0] == "epoch,total,recon,kl,capacity"
    assert len(lines) == 1 + 3
    from uavsim.cvae import load_checkpoint
    load_checkpoint(out)


def test_train_rerun_bit_identical(config_path, tmp_path):
    ds_path = tmp_path / "ds.npz"
    assert cli.main(["dataset", config_path, "--count", "8", "--seed", "1",
                     "--out", str(ds_path)]) == cli.EXIT_OK
    curves = []
    for sub in ("one", "two"):
        out = tmp_path / sub / "model.pt"
        torch.manual_seed(0)
        assert cli.main(["train", str(ds_path), "--epochs", "2", "--seed", "4",
                         "--out", str(out)]) == cli.EXIT_OK
        curves.append((tmp_path / sub / "model.loss.csv").read_bytes())
    assert curves[0] == curves[1]


def test_train_missing_dataset(tmp_path):
    assert cli.main(["train", str(tmp_path / "none.npz")]) == cli.EXIT_CONFIG


def test_out_dir_env_var(config_path, tmp_path, monkeypatch):
    monkeypatch.setenv("UAVSIM_OUT_DIR", str(tmp_path / "envout"))
    assert cli.main(["solve", config_path, "--seed", "0"]) == cli.EXIT_OK
    assert (tmp_path / "envout" / "solution.json").exists()

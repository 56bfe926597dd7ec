import hashlib
import json
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

import meshinvert.cli as cli
import meshinvert.harness as H
import meshinvert.inverse as I
import meshinvert.report as R
import meshinvert.util as util
import meshinvert.wavesim as W
from meshinvert.config import Config, ConfigError, load_config, parse_pairs


# ---------------------------------------------------------------------------
# configuration


def test_config_defaults():
    cfg = load_config()
    assert cfg["seed"] == 0
    assert cfg["gnn.hidden"] == 64
    assert cfg["solve.with_prior"] is True
    assert cfg["data.obstacles"] == "mixed"


def test_config_unknown_key_named():
    with pytest.raises(ConfigError, match="no.such.key"):
        load_config(overrides={"no.such.key": "1"})
    cfg = load_config()
    with pytest.raises(ConfigError, match="bogus"):
        cfg["bogus"]


def test_config_bad_value_named():
    with pytest.raises(ConfigError, match="gnn.hidden"):
        load_config(overrides={"gnn.hidden": "wide"})
    with pytest.raises(ConfigError, match="solve.with_prior"):
        load_config(overrides={"solve.with_prior": "maybe"})


def test_config_file_parsing(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# comment line\n"
        "seed = 5\n"
        "\n"
        "gnn.hidden = 8   # trailing comment\n"
        "gnn.hidden = 16\n")
    cfg = load_config(str(path))
    assert cfg["seed"] == 5
    assert cfg["gnn.hidden"] == 16


def test_config_overrides_beat_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 5\n")
    cfg = load_config(str(path), overrides={"seed": "9"})
    assert cfg["seed"] == 9


def test_config_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/no/such/config.cfg")


def test_config_line_error_named():
    with pytest.raises(ConfigError, match="line 2"):
        parse_pairs("seed = 1\nnot a pair\n", origin="x.cfg")


def test_content_hash_tracks_values():
    a = load_config()
    b = load_config(overrides={"seed": "1"})
    assert a.content_hash() == load_config().content_hash()
    assert a.content_hash() != b.content_hash()
    assert len(a.content_hash()) == 16


def test_config_builders_pass_values_through():
    cfg = load_config(overrides={
        "gnn.hidden": "12", "gnn.steps": "3", "sample.c_lo": "0.25",
        "prior.latent": "6", "prior_train.target_mse": "0.5",
        "gnn_train.epochs": "2"})
    assert cfg.gnn_config().hidden == 12
    assert cfg.gnn_config().steps == 3
    assert cfg.sample_config().c_lo == 0.25
    assert cfg.prior_config().latent == 6
    assert cfg.prior_train_config(0).target_mse == 0.5
    assert cfg.gnn_train_config(3).epochs == 2
    assert cfg.gnn_train_config(3).seed == 3
    # the 0 sentinel disables the early stop
    assert load_config().prior_train_config(0).target_mse is None


# ---------------------------------------------------------------------------
# seed derivation


def test_derive_seed_frozen_values():
    # frozen oracle: sha256("{master}|{tag}"), low 8 bytes, little-endian
    assert util.derive_seed(0, "gen-data") == 9469238820752041846
    assert util.derive_seed(0, "train-gnn") == 1939957155102668794
    assert util.derive_seed(7, "solve/0") == 15944840786559928665


def test_derive_seed_matches_hash_construction():
    digest = hashlib.sha256(b"11|meshes/obstacles").digest()
    expect = int.from_bytes(digest[:8], "little")
    assert util.derive_seed(11, "meshes/obstacles") == expect


def test_rng_for_tag_independence():
    a = util.rng_for(0, "alpha").uniform(size=4)
    b = util.rng_for(0, "beta").uniform(size=4)
    a2 = util.rng_for(0, "alpha").uniform(size=4)
    assert np.array_equal(a, a2)
    assert not np.array_equal(a, b)


# ---------------------------------------------------------------------------
# harness pieces


def test_obstacle_kinds_and_sizing():
    rng = np.random.default_rng(0)
    assert H._obstacle("none", rng) is None
    for kind in ("disk", "ellipse"):
        for _ in range(20):
            ob = H._obstacle(kind, rng, r_hi=0.11)
            lo = min(ob.cx - ob.rx, ob.cy - ob.ry)
            hi = max(ob.cx + ob.rx, ob.cy + ob.ry)
            assert lo > 0.42 - 0.11 - 1e-12
            assert hi < 0.58 + 0.11 + 1e-12


def test_radius_cap_tracks_coarse_resolution():
    default = load_config()
    tiny = load_config(overrides={"data.coarse_nodes": "40"})
    assert H._radius_cap(default) > 0.13    # default caps never bind
    assert H._radius_cap(tiny) < 0.09       # too coarse for any obstacle


def test_mesh_pairs_splits_and_determinism():
    cfg = load_config(overrides={
        "data.train_meshes": "2", "data.test_meshes": "1",
        "data.fine_nodes": "120", "data.coarse_nodes": "60"})
    pairs = H._mesh_pairs(cfg)
    assert [p.split for p in pairs] == ["train", "train", "test"]
    assert [p.name for p in pairs] == ["m00", "m01", "m02"]
    again = H._mesh_pairs(cfg)
    for a, b in zip(pairs, again):
        assert np.array_equal(a.fine.nodes, b.fine.nodes)
        assert np.array_equal(a.coarse.nodes, b.coarse.nodes)
    with pytest.raises(ConfigError, match="data.obstacles"):
        H._mesh_pairs(load_config(overrides={"data.obstacles": "cubes"}))
    with pytest.raises(ConfigError, match="coarse"):
        H._mesh_pairs(load_config(overrides={"data.coarse_nodes": "40"}))


def test_observation_times_validation():
    man = W.DatasetManifest(dt=0.01, stride=5, gnn_steps=10,
                            trajectories=[], prior_samples=[])
    cfg = load_config(overrides={"solve.obs_start": "2",
                                 "solve.obs_stop": "10",
                                 "solve.obs_step": "2"})
    assert H._observation_times(cfg, man) == (2, 4, 6, 8, 10)
    bad = load_config(overrides={"solve.obs_stop": "40"})
    with pytest.raises(ConfigError, match="obs_stop"):
        H._observation_times(bad, man)
    empty = load_config(overrides={"solve.obs_start": "9",
                                   "solve.obs_stop": "8"})
    with pytest.raises(ConfigError, match="no"):
        H._observation_times(empty, man)


def test_missing_input_error_names_path_and_hint(tmp_path):
    cfg = load_config()
    with pytest.raises(H.MissingInputError) as err:
        H.run("train-gnn", cfg, str(tmp_path / "empty"))
    assert "manifest.txt" in str(err.value)
    assert "run gen-data first" in str(err.value)


def test_run_rejects_unknown_task(tmp_path):
    with pytest.raises(ConfigError, match="unknown task"):
        H.run("fit", load_config(), str(tmp_path))


# ---------------------------------------------------------------------------
# command line


def test_cli_requires_task():
    with pytest.raises(SystemExit):
        cli.main([])


def test_cli_bad_set_syntax(tmp_path, capsys):
    assert cli.main(["gen-mesh", "--set", "seed", "--out",
                     str(tmp_path)]) == 2
    assert "KEY=VALUE" in capsys.readouterr().err


def test_cli_unknown_key_exits_2(tmp_path, capsys):
    assert cli.main(["gen-mesh", "--set", "no.such=1", "--out",
                     str(tmp_path)]) == 2
    assert "no.such" in capsys.readouterr().err


def test_cli_missing_input_exits_2(tmp_path, capsys):
    assert cli.main(["train-gnn", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "missing input" in err and "manifest.txt" in err


def test_cli_missing_config_file_exits_2(tmp_path, capsys):
    assert cli.main(["gen-mesh", "--config", "/no/such.cfg", "--out",
                     str(tmp_path)]) == 2


# ---------------------------------------------------------------------------
# the pipeline end to end (smallest useful scale)


SMOKE = {
    "seed": "7",
    "data.train_meshes": "2", "data.test_meshes": "1",
    "data.samples_per_mesh": "1",
    "data.fine_nodes": "150", "data.coarse_nodes": "60",
    "data.gnn_steps": "6", "data.stride": "5", "data.prior_samples": "2",
    "gnn.hidden": "8", "gnn.steps": "2",
    "gnn_train.epochs": "2", "gnn_train.lr0": "1e-3", "gnn_train.lr1": "1e-4",
    "prior.latent": "6", "prior.width": "24", "prior.layers": "3",
    "prior.freqs": "3",
    "prior_train.epochs": "40", "prior_train.points": "60",
    "solve.samples": "1", "solve.sensors": "8",
    "solve.obs_start": "2", "solve.obs_stop": "6", "solve.obs_step": "2",
    "solve.max_iters": "8", "solve.forward": "reference",
    "eval.timing": "false",
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("pipe"))
    cfg = load_config(overrides=dict(SMOKE))
    for task in H.TASKS:
        H.run(task, cfg, out)
    return out


def test_pipeline_stage_records(pipeline):
    hashes = set()
    for task in H.TASKS:
        path = os.path.join(pipeline, f"run_{task}.json")
        record = json.loads(open(path).read())
        assert record["task"] == task
        assert record["seed"] == 7
        assert record["artifacts"] == sorted(record["artifacts"])
        for rel in record["artifacts"]:
            assert os.path.exists(os.path.join(pipeline, rel)), rel
        hashes.add(record["config_hash"])
    assert len(hashes) == 1


def test_pipeline_dataset_layout(pipeline):
    man = W.load_manifest(os.path.join(pipeline, "data", "manifest.txt"))
    assert len(man.trajectories) == 3
    assert len(man.entries("train")) == 2
    assert len(man.entries("test")) == 1
    assert len(man.prior_samples) == 2
    assert man.gnn_steps == 6 and man.stride == 5


def test_pipeline_histories(pipeline):
    gnn_rows = open(os.path.join(pipeline, "models",
                                 "gnn_history.csv")).read().splitlines()
    assert gnn_rows[0] == "epoch,lr,train_loss,valid_loss"
    assert gnn_rows[1].startswith("-1,0,")
    assert len(gnn_rows) == 2 + 2       # header + initial row + 2 epochs
    prior_rows = open(os.path.join(pipeline, "models",
                                   "prior_history.csv")).read().splitlines()
    assert prior_rows[0] == "epoch,lr,loss,recon_mse,recon_max"
    assert len(prior_rows) > 1


def test_pipeline_solution_and_metrics(pipeline):
    sol = I.load_solution(os.path.join(pipeline, "solve", "sol_000.msol"))
    assert sol["task"] == "initial"
    assert sol["iters"] <= 8
    assert sol["field"].shape[0] > 0
    rows = I.read_metrics_csv(os.path.join(pipeline, "eval", "metrics.csv"))
    assert len(rows) == 1
    assert rows[0].sample_id == "sol_000"
    assert rows[0].forward_model == "reference"
    assert rows[0].seconds_per_iter == 0.0      # eval.timing=false
    assert np.isfinite(rows[0].field_mse)


def test_pipeline_report_artifacts(pipeline):
    report = os.path.join(pipeline, "report")
    for name in ("summary.txt", "summary.csv", "objective.svg",
                 "objective.csv", "rollout_error.svg", "rollout_error.csv"):
        assert os.path.exists(os.path.join(report, name)), name
    # the SVGs must be well-formed XML
    for name in ("objective.svg", "rollout_error.svg"):
        ET.parse(os.path.join(report, name))
    summary = open(os.path.join(report, "summary.txt")).read()
    assert "reference" in summary


def test_pipeline_rerun_is_byte_identical(pipeline, tmp_path):
    # second pass of the deterministic stages in a fresh directory
    out2 = str(tmp_path / "pipe2")
    cfg = load_config(overrides=dict(SMOKE))
    for task in H.TASKS[:-1]:       # report only re-renders eval outputs
        H.run(task, cfg, out2)
    for rel in (os.path.join("eval", "metrics.csv"),
                os.path.join("eval", "rollout_error.csv"),
                os.path.join("data", "manifest.txt")):
        a = open(os.path.join(pipeline, rel), "rb").read()
        b = open(os.path.join(out2, rel), "rb").read()
        assert a == b, rel


def test_report_summary_groups():
    rows = [
        I.Metrics("a", "initial", True, "gnn", 0.1, 0.2, 10, 0.5),
        I.Metrics("b", "initial", True, "gnn", 0.3, 0.4, 20, 1.5),
        I.Metrics("c", "initial", False, "reference", 0.7, 0.8, 30, 2.0),
    ]
    groups = R.summarize(rows)
    assert len(groups) == 2
    by_key = {(g["forward_model"], g["with_prior"]): g for g in groups}
    g = by_key[("gnn", True)]
    assert g["n"] == 2
    assert g["field_mse"] == pytest.approx(0.2)
    assert g["seconds_per_iter"] == pytest.approx(1.0)

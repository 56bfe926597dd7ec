"""Pipeline stages behind the command line.

Each stage reads earlier artifacts from a shared output directory and
writes its own under a fixed layout:

    meshes/   gen-mesh     mesh files plus an index
    data/     gen-data     trajectories, parameter samples, manifest.txt
    models/   train-gnn    gnn.mgnn + training history
              train-prior  prior.mpri + training history
    solve/    solve        one solution record per instance + an index
    eval/     eval         metrics.csv and rollout error curves
    report/   report       summary table and SVG/CSV plots

Stages are deterministic for a fixed config: every random stream is
derived from the master seed and a stage-local tag.  A missing upstream
artifact raises MissingInputError naming the path (exit code 2 at the
command line).
"""

from __future__ import annotations

import glob
import json
import logging
import math
import os
import time

import numpy as np

from . import gnn
from . import inverse
from . import mesh as mesh_mod
from . import prior
from . import report as report_mod
from . import synth
from . import tensor as T
from . import util
from . import wavesim
from .config import Config, ConfigError

log = logging.getLogger("meshinvert")

TASKS = ("gen-mesh", "gen-data", "train-gnn", "train-prior",
         "solve", "eval", "report")


class MissingInputError(Exception):
    """An upstream artifact this stage depends on does not exist."""

    def __init__(self, path: str, hint: str = ""):
        self.path = path
        msg = f"missing input: {path}"
        if hint:
            msg += f" ({hint})"
        super().__init__(msg)


def _require(path: str, hint: str = "") -> str:
    if not os.path.exists(path):
        raise MissingInputError(path, hint)
    return path


# ---------------------------------------------------------------------------
# mesh family


def _radius_cap(cfg: Config) -> float:
    """Largest obstacle radius that keeps the triangulation clearance.

    The mesh generator rejects obstacles closer than two grid spacings
    to the outer boundary; the coarser mesh of each pair binds.
    """
    n = min(cfg["data.fine_nodes"], cfg["data.coarse_nodes"])
    side = max(2, round(math.sqrt(float(n))))
    margin = 2.0 / (side - 1)
    return 0.42 - margin - 0.02


def _obstacle(kind: str, rng: np.random.Generator, r_hi: float = 0.25):
    # centers and radii keep the clearance the mesh generator requires
    # between the obstacle and the outer boundary
    if kind == "none":
        return None
    cx, cy = rng.uniform(0.42, 0.58, size=2)
    if kind == "disk":
        return mesh_mod.Obstacle.disk(cx, cy,
                                      rng.uniform(0.08, min(0.13, r_hi)))
    return mesh_mod.Obstacle.ellipse(cx, cy,
                                     rng.uniform(0.08, min(0.14, r_hi)),
                                     rng.uniform(0.07, min(0.11, r_hi)),
                                     rng.uniform(0.0, np.pi))


def _mesh_pairs(cfg: Config) -> list[wavesim.MeshPair]:
    """Deterministic train/test mesh family from the config."""
    style = cfg["data.obstacles"]
    if style not in ("none", "disk", "mixed"):
        raise ConfigError(f"data.obstacles: unknown value {style!r}")
    r_hi = _radius_cap(cfg)
    if style != "none" and r_hi < 0.09:
        raise ConfigError(
            "data.obstacles: meshes this coarse cannot clear an obstacle "
            "from the outer boundary; raise data.coarse_nodes or set "
            "data.obstacles = none")
    rng = util.rng_for(cfg["seed"], "meshes/obstacles")
    pairs = []
    n_train, n_test = cfg["data.train_meshes"], cfg["data.test_meshes"]
    for i in range(n_train + n_test):
        if style == "mixed":
            kind = ("none", "disk", "ellipse")[i % 3]
        else:
            kind = style
        ob = _obstacle(kind, rng, r_hi)
        fine = mesh_mod.generate_mesh(mesh_mod.MeshSpec(
            cfg["data.fine_nodes"], obstacle=ob,
            seed=util.derive_seed(cfg["seed"], f"mesh/{i}/fine")))
        coarse = mesh_mod.generate_mesh(mesh_mod.MeshSpec(
            cfg["data.coarse_nodes"], obstacle=ob,
            seed=util.derive_seed(cfg["seed"], f"mesh/{i}/coarse")))
        split = "train" if i < n_train else "test"
        pairs.append(wavesim.MeshPair(f"m{i:02d}", split, fine, coarse))
    return pairs


# ---------------------------------------------------------------------------
# stages


def _gen_mesh(cfg: Config, out: str) -> list[str]:
    mesh_dir = os.path.join(out, "meshes")
    os.makedirs(mesh_dir, exist_ok=True)
    artifacts, lines = [], []
    for pair in _mesh_pairs(cfg):
        for res, m in (("fine", pair.fine), ("coarse", pair.coarse)):
            path = os.path.join(mesh_dir, f"{pair.name}_{res}.mesh")
            mesh_mod.save_mesh(m, path)
            artifacts.append(path)
        lines.append(f"{pair.name} {pair.split} "
                     f"{pair.fine.nodes.shape[0]} "
                     f"{pair.coarse.nodes.shape[0]}")
    index = os.path.join(mesh_dir, "index.txt")
    util.atomic_write_text(index, "\n".join(lines) + "\n")
    artifacts.append(index)
    return artifacts


def _gen_data(cfg: Config, out: str) -> list[str]:
    data_dir = os.path.join(out, "data")
    dcfg = wavesim.DatasetConfig(
        sample=cfg.sample_config(),
        gnn_steps=cfg["data.gnn_steps"],
        stride=cfg["data.stride"],
        prior_samples=cfg["data.prior_samples"])
    manifest = wavesim.generate_dataset(
        _mesh_pairs(cfg), cfg["data.samples_per_mesh"], dcfg,
        seed=util.derive_seed(cfg["seed"], "gen-data"),
        out_dir=data_dir, jobs=cfg["jobs"])
    log.info("gen-data: %d trajectories, %d prior samples, dt=%.4g",
             len(manifest.trajectories), len(manifest.prior_samples),
             manifest.dt)
    names = {"manifest.txt"}
    for e in manifest.trajectories:
        names.update((e["mesh_file"], e["fine_mesh_file"],
                      e["traj_file"], e["sample_file"]))
    for e in manifest.prior_samples:
        names.update((e["mesh_file"], e["sample_file"]))
    return [os.path.join(data_dir, n) for n in sorted(names)]


def _train_gnn(cfg: Config, out: str) -> list[str]:
    data_dir = os.path.join(out, "data")
    manifest = wavesim.load_manifest(
        _require(os.path.join(data_dir, "manifest.txt"),
                 "run gen-data first"))
    train_pairs = gnn.load_split(data_dir, manifest, "train")
    test_pairs = gnn.load_split(data_dir, manifest, "test")
    result = gnn.train(train_pairs, cfg.gnn_config(),
                       cfg.gnn_train_config(
                           util.derive_seed(cfg["seed"], "train-gnn")),
                       valid_pairs=test_pairs or None)
    if result.diverged:
        log.warning("train-gnn: loss went non-finite; kept the last "
                    "completed epoch")
    model_dir = os.path.join(out, "models")
    os.makedirs(model_dir, exist_ok=True)
    ckpt = os.path.join(model_dir, "gnn.mgnn")
    gnn.save_gnn(ckpt, result.params, result.normalizer)
    lines = ["epoch,lr,train_loss,valid_loss",
             "-1,0,%.17g," % result.initial_loss]
    for row in result.history:
        valid = "%.17g" % row["valid_loss"] if "valid_loss" in row else ""
        lines.append("%d,%.17g,%.17g,%s"
                     % (row["epoch"], row["lr"], row["train_loss"], valid))
    history = os.path.join(model_dir, "gnn_history.csv")
    util.atomic_write_text(history, "\n".join(lines) + "\n")
    final = (result.history[-1]["train_loss"] if result.history
             else float("nan"))
    log.info("train-gnn: loss %.4g -> %.4g over %d epochs",
             result.initial_loss, final, len(result.history))
    return [ckpt, history]


def _prior_samples(cfg: Config, data_dir: str,
                   manifest: wavesim.DatasetManifest) -> list:
    """Training set for the generative prior, values scaled to [0, 1]."""
    field = cfg["prior_train.field"]
    if field not in ("initial", "velocity"):
        raise ConfigError(f"prior_train.field: unknown value {field!r}")
    entries = manifest.prior_samples or manifest.entries("train")
    if not entries:
        raise MissingInputError(os.path.join(data_dir, "manifest.txt"),
                                "dataset has no training samples")
    meshes: dict[str, mesh_mod.Mesh] = {}
    samples = []
    c_lo, c_hi = cfg["sample.c_lo"], cfg["sample.c_hi"]
    for e in entries:
        if e["mesh_file"] not in meshes:
            meshes[e["mesh_file"]] = mesh_mod.load_mesh(
                _require(os.path.join(data_dir, e["mesh_file"])))
        m = meshes[e["mesh_file"]]
        u0, c = synth.load_sample(
            _require(os.path.join(data_dir, e["sample_file"])))
        values = u0 if field == "initial" else (c - c_lo) / (c_hi - c_lo)
        samples.append(prior.sample_from_mesh(m, values))
    return samples


def _train_prior(cfg: Config, out: str) -> list[str]:
    data_dir = os.path.join(out, "data")
    manifest = wavesim.load_manifest(
        _require(os.path.join(data_dir, "manifest.txt"),
                 "run gen-data first"))
    samples = _prior_samples(cfg, data_dir, manifest)
    result = prior.train_prior(
        samples, cfg.prior_config(),
        cfg.prior_train_config(util.derive_seed(cfg["seed"], "train-prior")))
    if result.diverged:
        log.warning("train-prior: loss went non-finite; kept the last "
                    "completed epoch")
    model_dir = os.path.join(out, "models")
    os.makedirs(model_dir, exist_ok=True)
    ckpt = os.path.join(model_dir, "prior.mpri")
    prior.save_prior(ckpt, result.params, result.latents)
    lines = ["epoch,lr,loss,recon_mse,recon_max"]
    for row in result.history:
        recon = ("%.17g,%.17g" % (row["recon_mse"], row["recon_max"])
                 if "recon_mse" in row else ",")
        lines.append("%d,%.17g,%.17g,%s"
                     % (row["epoch"], row["lr"], row["loss"], recon))
    history = os.path.join(model_dir, "prior_history.csv")
    util.atomic_write_text(history, "\n".join(lines) + "\n")
    epochs = result.history[-1]["epoch"] + 1 if result.history else 0
    log.info("train-prior: %d samples, %d epochs", len(samples), epochs)
    return [ckpt, history]


def _observation_times(cfg: Config, manifest) -> tuple:
    times = tuple(range(cfg["solve.obs_start"], cfg["solve.obs_stop"] + 1,
                        cfg["solve.obs_step"]))
    if not times:
        raise ConfigError("solve.obs_start/obs_stop/obs_step give no "
                          "observation times")
    if times[-1] > manifest.gnn_steps:
        raise ConfigError(
            f"solve.obs_stop={times[-1]} exceeds the dataset's "
            f"{manifest.gnn_steps} stored steps")
    return times


def _forward_for(cfg: Config, out: str, msh: mesh_mod.Mesh, manifest):
    kind = cfg["solve.forward"]
    if kind == "gnn":
        ckpt = _require(os.path.join(out, "models", "gnn.mgnn"),
                        "run train-gnn first")
        return inverse.GnnForward.from_checkpoint(ckpt, msh)
    if kind == "reference":
        return inverse.ReferenceForward.from_mesh(
            msh, cfg["sample.c_hi"], stride=manifest.stride, dt=manifest.dt)
    raise ConfigError(f"solve.forward: unknown value {kind!r}")


def _problem_for(cfg: Config, instance: int) -> inverse.InverseProblem:
    period = cfg["solve.schedule_period"]
    schedule = (inverse.ProgressiveSchedule(
        1, period, cfg["solve.schedule_max"]) if period > 0 else None)
    ft_start, ft_end = cfg["solve.fine_tune_start"], cfg["solve.fine_tune_end"]
    fine_tune = (ft_start, ft_end) if ft_start >= 0 else None
    return inverse.InverseProblem(
        task=cfg["solve.task"],
        objective=cfg["solve.objective"],
        with_prior=cfg["solve.with_prior"],
        schedule=schedule,
        max_iters=cfg["solve.max_iters"],
        lr=cfg["solve.lr"],
        fine_tune=fine_tune,
        prior_lr=cfg["solve.prior_lr"],
        checkpoint=cfg["solve.checkpoint"],
        seed=util.derive_seed(cfg["seed"], f"solve/{instance}"),
    )


def _field_spec(cfg: Config) -> prior.FieldSpec:
    return prior.FieldSpec(
        kind=cfg["solve.task"], c_lo=cfg["sample.c_lo"],
        c_hi=cfg["sample.c_hi"], taper_width=cfg["sample.taper_width"])


def _solve(cfg: Config, out: str) -> list[str]:
    data_dir = os.path.join(out, "data")
    manifest = wavesim.load_manifest(
        _require(os.path.join(data_dir, "manifest.txt"),
                 "run gen-data first"))
    entries = manifest.entries("test")[:cfg["solve.samples"]]
    if len(entries) < cfg["solve.samples"]:
        raise ConfigError(
            f"solve.samples={cfg['solve.samples']} but the dataset has "
            f"only {len(entries)} test trajectories")
    times = _observation_times(cfg, manifest)
    prior_params = None
    if cfg["solve.with_prior"]:
        ckpt = _require(os.path.join(out, "models", "prior.mpri"),
                        "run train-prior first")
        prior_params, _ = prior.load_prior(ckpt)
    fspec = _field_spec(cfg)

    solve_dir = os.path.join(out, "solve")
    os.makedirs(solve_dir, exist_ok=True)
    artifacts, index_lines = [], []
    for i, entry in enumerate(entries):
        msh = mesh_mod.load_mesh(
            _require(os.path.join(data_dir, entry["mesh_file"])))
        traj = wavesim.load_trajectory(
            _require(os.path.join(data_dir, entry["traj_file"])))
        sensors = inverse.make_sensors(
            msh, cfg["solve.sensors"], times,
            seed=util.derive_seed(cfg["seed"], f"solve/{i}"))
        observations = inverse.make_observations(traj.u, sensors)
        forward = _forward_for(cfg, out, msh, manifest)
        problem = _problem_for(cfg, i)
        result = inverse.solve(
            problem, forward, msh, sensors, observations, fspec,
            prior_params=prior_params,
            c_known=traj.c if problem.task == "initial" else None,
            u0_known=traj.u[0] if problem.task == "velocity" else None)
        if result.diverged:
            log.warning("solve[%d]: diverged at iteration %d; kept the "
                        "best earlier iterate", i, result.iters)
        sol_name = f"sol_{i:03d}.msol"
        inverse.save_solution(os.path.join(solve_dir, sol_name),
                              problem, result)
        artifacts.append(os.path.join(solve_dir, sol_name))
        index_lines.append(f"{sol_name} {entry['traj_file']} "
                           f"{entry['mesh_file']} {forward.name}")
        log.info("solve[%d]: best objective %.4g at iteration %d/%d",
                 i, result.best_loss, result.best_iter, result.iters)
    index = os.path.join(solve_dir, "index.txt")
    util.atomic_write_text(index, "\n".join(index_lines) + "\n")
    artifacts.append(index)
    return artifacts


def _eval(cfg: Config, out: str) -> list[str]:
    data_dir = os.path.join(out, "data")
    manifest = wavesim.load_manifest(
        _require(os.path.join(data_dir, "manifest.txt"),
                 "run gen-data first"))
    index = _require(os.path.join(out, "solve", "index.txt"),
                     "run solve first")
    with open(index, "r", encoding="utf-8") as f:
        rows = [line.split() for line in f.read().splitlines() if line]

    n_steps = cfg["solve.obs_stop"]
    rows_out, curves = [], {}
    for sol_name, traj_file, mesh_file, forward_name in rows:
        sol = inverse.load_solution(
            _require(os.path.join(out, "solve", sol_name)))
        msh = mesh_mod.load_mesh(
            _require(os.path.join(data_dir, mesh_file)))
        traj = wavesim.load_trajectory(
            _require(os.path.join(data_dir, traj_file)))
        task = sol["task"]
        truth_field = traj.u[0] if task == "initial" else traj.c
        u0 = sol["field"] if task == "initial" else traj.u[0]
        up0 = np.zeros_like(traj.u[0])
        c = traj.c if task == "initial" else sol["field"]
        u_pred = _forward_rollout(cfg, out, msh, manifest, forward_name,
                                  u0, up0, c, n_steps)
        u_true = traj.u[:n_steps + 1]
        field_mse = float(np.mean(np.square(sol["field"] - truth_field)))
        traj_mse = float(np.mean(np.square(u_pred - u_true)))
        timing = cfg["eval.timing"]
        sample_id = os.path.splitext(sol_name)[0]
        rows_out.append(inverse.Metrics(
            sample_id=sample_id, task=task, with_prior=sol["with_prior"],
            forward_model=forward_name, field_mse=field_mse,
            traj_mse=traj_mse, iters=sol["iters"],
            seconds_per_iter=sol["seconds_per_iter"] if timing else 0.0))
        curves[sample_id] = inverse.relative_error_curve(u_pred, u_true)

    eval_dir = os.path.join(out, "eval")
    os.makedirs(eval_dir, exist_ok=True)
    metrics_path = os.path.join(eval_dir, "metrics.csv")
    inverse.write_metrics_csv(metrics_path, rows_out)
    curve_path = os.path.join(eval_dir, "rollout_error.csv")
    util.atomic_write_text(curve_path, report_mod.curve_csv(
        {"step": np.arange(n_steps + 1),
         **{k: v for k, v in sorted(curves.items())}}))
    return [metrics_path, curve_path]


def _forward_rollout(cfg: Config, out: str, msh: mesh_mod.Mesh, manifest,
                     forward_name: str, u0, up0, c, n_steps: int):
    """Roll a recovered field through the named forward model."""
    if forward_name == "gnn":
        ckpt = _require(os.path.join(out, "models", "gnn.mgnn"),
                        "run train-gnn first")
        params, norm = gnn.load_gnn(ckpt)
        graph = gnn.graph_from_mesh(msh)
        u_pred, _ = gnn.rollout_numpy(params, norm, graph, u0, up0, c,
                                      n_steps)
        return u_pred
    forward = inverse.ReferenceForward.from_mesh(
        msh, cfg["sample.c_hi"], stride=manifest.stride, dt=manifest.dt)
    tape = T.Tape()
    ro = forward.run(tape, tape.constant(u0[:, None]),
                     tape.constant(up0[:, None]),
                     tape.constant(c[:, None]), n_steps)
    return np.stack([s[0].data[:, 0] for s in ro.states])


def _report(cfg: Config, out: str) -> list[str]:
    metrics = _require(os.path.join(out, "eval", "metrics.csv"),
                       "run eval first")
    solutions = sorted(glob.glob(os.path.join(out, "solve", "*.msol")))
    curve = os.path.join(out, "eval", "rollout_error.csv")
    return report_mod.make_report(
        os.path.join(out, "report"), [metrics], solutions,
        [curve] if os.path.exists(curve) else None)


_STAGES = {
    "gen-mesh": _gen_mesh,
    "gen-data": _gen_data,
    "train-gnn": _train_gnn,
    "train-prior": _train_prior,
    "solve": _solve,
    "eval": _eval,
    "report": _report,
}


def run(task: str, cfg: Config, out_dir: str) -> list[str]:
    """Run one pipeline stage; returns the artifact paths it wrote."""
    if task not in _STAGES:
        raise ConfigError(f"unknown task {task!r}; expected one of "
                          + ", ".join(TASKS))
    os.makedirs(out_dir, exist_ok=True)
    started = time.time()
    artifacts = _STAGES[task](cfg, out_dir)
    record = {
        "task": task,
        "config_hash": cfg.content_hash(),
        "seed": cfg["seed"],
        "wall_seconds": round(time.time() - started, 3),
        "artifacts": sorted(os.path.relpath(a, out_dir) for a in artifacts),
    }
    manifest = os.path.join(out_dir, f"run_{task}.json")
    util.atomic_write_text(manifest, json.dumps(record, indent=2) + "\n")
    log.info("%s: %d artifacts in %.1fs", task, len(artifacts),
             record["wall_seconds"])
    return artifacts + [manifest]

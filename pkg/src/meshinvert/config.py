"""Run configuration: a flat text file of dotted `key = value` pairs.

Every knob the command-line tasks consume lives in one typed schema, so
an unknown or ill-typed key fails loudly with the offending name instead
of silently running a different experiment.  `#` starts a comment; blank
lines are ignored; later assignments override earlier ones.
"""

from __future__ import annotations

import dataclasses
import hashlib

from . import gnn as gnn_mod
from . import prior as prior_mod
from . import synth


class ConfigError(Exception):
    pass


def _boolean(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (caster, default).  None defaults mean "must come from the CLI".
SCHEMA: dict[str, tuple] = {
    "seed": (int, 0),
    "jobs": (int, 1),
    # dataset generation
    "data.train_meshes": (int, 5),
    "data.test_meshes": (int, 2),
    "data.samples_per_mesh": (int, 4),
    "data.fine_nodes": (int, 700),
    "data.coarse_nodes": (int, 150),
    "data.gnn_steps": (int, 30),
    "data.stride": (int, 5),
    "data.prior_samples": (int, 16),
    "data.obstacles": (str, "mixed"),       # none | disk | mixed
    # field synthesis
    "sample.u_ell": (float, 0.2),
    "sample.c_ell": (float, 0.25),
    "sample.c_lo": (float, 0.5),
    "sample.c_hi": (float, 1.0),
    "sample.quantile": (float, 0.5),
    "sample.taper_width": (float, 0.1),
    # surrogate architecture and training
    "gnn.hidden": (int, 64),
    "gnn.steps": (int, 6),
    "gnn.mlp_layers": (int, 2),
    "gnn.noise_std": (float, 1e-3),
    "gnn_train.epochs": (int, 25),
    "gnn_train.batch_size": (int, 4),
    "gnn_train.lr0": (float, 1e-3),
    "gnn_train.lr1": (float, 1e-5),
    # prior architecture and training
    "prior.latent": (int, 16),
    "prior.width": (int, 64),
    "prior.layers": (int, 6),
    "prior.freqs": (int, 6),
    "prior.sigma": (float, 0.01),
    "prior.head": (str, "sigmoid"),
    "prior_train.epochs": (int, 2000),
    "prior_train.lr": (float, 1e-3),
    "prior_train.points": (int, 900),
    "prior_train.target_mse": (float, 0.0),  # 0 disables early stop
    "prior_train.field": (str, "initial"),   # initial | velocity
    # inverse solves
    "solve.task": (str, "initial"),          # initial | velocity
    "solve.objective": (str, "mse"),         # mse | l1
    "solve.with_prior": (_boolean, True),
    "solve.forward": (str, "gnn"),           # gnn | reference
    "solve.samples": (int, 3),
    "solve.sensors": (int, 20),
    "solve.obs_start": (int, 2),
    "solve.obs_stop": (int, 30),
    "solve.obs_step": (int, 2),
    "solve.max_iters": (int, 2000),
    "solve.lr": (float, 1e-3),
    "solve.prior_lr": (float, 1e-4),
    "solve.fine_tune_start": (int, -1),      # -1 disables
    "solve.fine_tune_end": (int, -1),
    "solve.schedule_period": (int, 0),       # 0 disables the schedule
    "solve.schedule_max": (int, 15),
    "solve.checkpoint": (_boolean, False),
    # evaluation / report
    "eval.timing": (_boolean, True),
}


def parse_pairs(text: str, origin: str = "<config>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}: line {ln}: expected key = value, "
                              f"got {raw.strip()!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


@dataclasses.dataclass
class Config:
    values: dict[str, object]

    def __getitem__(self, key: str):
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    def content_hash(self) -> str:
        canon = "\n".join(f"{k} = {self.values[k]!r}"
                          for k in sorted(self.values))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    # -- module config builders ---------------------------------------

    def sample_config(self) -> synth.SampleConfig:
        return synth.SampleConfig(
            u_init=synth.GrfSpec(ell=self["sample.u_ell"]),
            velocity=synth.GrfSpec(ell=self["sample.c_ell"]),
            c_lo=self["sample.c_lo"], c_hi=self["sample.c_hi"],
            quantile=self["sample.quantile"],
            taper_width=self["sample.taper_width"])

    def gnn_config(self) -> gnn_mod.GnnConfig:
        return gnn_mod.GnnConfig(hidden=self["gnn.hidden"],
                                 steps=self["gnn.steps"],
                                 mlp_layers=self["gnn.mlp_layers"],
                                 noise_std=self["gnn.noise_std"])

    def gnn_train_config(self, seed: int) -> gnn_mod.TrainConfig:
        return gnn_mod.TrainConfig(epochs=self["gnn_train.epochs"],
                                   batch_size=self["gnn_train.batch_size"],
                                   lr0=self["gnn_train.lr0"],
                                   lr1=self["gnn_train.lr1"], seed=seed)

    def prior_config(self) -> prior_mod.PriorConfig:
        return prior_mod.PriorConfig(latent=self["prior.latent"],
                                     width=self["prior.width"],
                                     layers=self["prior.layers"],
                                     freqs=self["prior.freqs"],
                                     sigma=self["prior.sigma"],
                                     head=self["prior.head"])

    def prior_train_config(self, seed: int) -> prior_mod.PriorTrainConfig:
        target = self["prior_train.target_mse"]
        return prior_mod.PriorTrainConfig(
            epochs=self["prior_train.epochs"], lr=self["prior_train.lr"],
            points=self["prior_train.points"], seed=seed,
            target_mse=target if target > 0 else None)


def load_config(path: str | None = None,
                overrides: dict[str, str] | None = None) -> Config:
    """Defaults, then the file, then overrides; every key type-checked."""
    values: dict[str, object] = {k: d for k, (_, d) in SCHEMA.items()}
    raw: dict[str, str] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw.update(parse_pairs(f.read(), origin=str(path)))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    if overrides:
        raw.update(overrides)
    for key, text in raw.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        caster = SCHEMA[key][0]
        try:
            values[key] = caster(text) if isinstance(text, str) else text
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from None
    return Config(values)

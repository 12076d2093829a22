"""Experiment configuration: parsing, validation and object construction."""
from dataclasses import dataclass, field as dc_field, asdict, fields
import json

import numpy as np

from .errors import ConfigError
from .mean_field import LinearField, SignField
from .mdp import MdpModel, random_model
from .sa_engine import BiasModel, NoiseModel
from .scheduler import ConstantKernel, UpdateFamily
from .stepsize import Schedule, is_admissible_pair

KINDS = ("single-sa", "two-timescale", "mdp-learn", "di-flow", "audit")


@dataclass
class ExperimentConfig:
    """One experiment.  Sub-specs are plain dicts so the config round-trips through JSON.

    ``schedule`` drives the slow (or only) iterate and ``fast_schedule`` the
    fast one; for ``mdp-learn`` they are the actor and critic steps, and
    ``noise`` (if set) replaces the model's reward noise.
    """

    kind: str
    seeds: list = dc_field(default_factory=lambda: [0])
    n_steps: int = 10000
    checkpoint_every: int = 1000
    out_dir: str = "runs"
    schedule: dict = dc_field(default_factory=lambda: {"kind": "power", "p": 1.0, "q": 0.0})
    fast_schedule: dict = None
    field: dict = None
    fast_field: dict = None
    scheduler: dict = None
    noise: dict = None
    fast_noise: dict = None
    bias: dict = None
    box: list = None
    x0: list = None
    y0: list = None
    model: dict = None
    epsilon: float = 0.05
    flow: dict = None
    tie_policy: str = "lowest-index"
    freeze_policy: bool = False
    thin: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind: {self.kind!r} not in {KINDS}")
        if not self.seeds or not all(isinstance(s, int) and 0 <= s < 2 ** 64 for s in self.seeds):
            raise ConfigError("seeds: need a non-empty list of 64-bit non-negative integers")
        if int(self.n_steps) < 1:
            raise ConfigError("n_steps: must be >= 1")
        if int(self.checkpoint_every) < 1:
            raise ConfigError("checkpoint_every: must be >= 1")
        self.slow_schedule()
        if self.kind in ("two-timescale", "mdp-learn"):
            if self.fast_schedule is None:
                raise ConfigError(f"fast_schedule: required for {self.kind}")
            if not is_admissible_pair(self.slow_schedule(), self.fast_schedule_obj()):
                raise ConfigError("schedule/fast_schedule: slow steps must vanish relative to fast steps (B2)(c)")
        if self.kind in ("single-sa", "two-timescale", "di-flow") and self.field is None:
            raise ConfigError(f"field: required for {self.kind}")
        if self.kind == "mdp-learn" and self.model is None:
            raise ConfigError("model: required for mdp-learn")

    def slow_schedule(self):
        try:
            return Schedule.from_dict(self.schedule)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"schedule: {exc}") from exc

    def fast_schedule_obj(self):
        try:
            return Schedule.from_dict(self.fast_schedule)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"fast_schedule: {exc}") from exc

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        if "kind" not in d:
            raise ConfigError("kind: required")
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())


def build_field(spec):
    kind = spec.get("type")
    if kind == "linear":
        return LinearField(spec["A"], spec.get("b"))
    if kind == "negative-identity":
        return LinearField.negative_identity(int(spec["dim"]))
    if kind == "sign":
        return SignField(int(spec["dim"]))
    raise ConfigError(f"field.type: unknown field {kind!r}")


def build_scheduler(spec, k):
    """Family and constant kernel; defaults to i.i.d. uniform singletons."""
    spec = spec or {}
    family = UpdateFamily(tuple(tuple(s) for s in spec["family"]), k) if "family" in spec \
        else UpdateFamily.singletons(k)
    if "kernel" in spec:
        P = np.asarray(spec["kernel"], dtype=float)
    else:
        P = np.full((len(family), len(family)), 1.0 / len(family))
    if P.shape != (len(family), len(family)):
        raise ConfigError(f"scheduler.kernel: shape {P.shape} does not match {len(family)} subsets")
    return family, ConstantKernel(P)


def build_noise(spec):
    return NoiseModel.from_dict(spec) if spec else NoiseModel()


def build_bias(spec):
    return BiasModel.from_dict(spec) if spec else BiasModel()


def build_model(spec):
    """Inline model dict, ``{"path": ...}`` or ``{"random": {...}}``."""
    if "path" in spec:
        return MdpModel.load(spec["path"])
    if "random" in spec:
        r = spec["random"]
        model = random_model(int(r["n_states"]), int(r["n_actions"]), float(r["beta"]), int(r.get("seed", 0)))
        model.check_chain()
        return model
    return MdpModel.from_dict(spec)

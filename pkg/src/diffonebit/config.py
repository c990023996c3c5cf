"""Experiment configuration: a flat key-value file with sections.

Example::

    [task]
    task = onebit_cs
    n = 128
    m = 8
    sigma = 0.5
    prior = prior.txt

    [schedule]
    T = 1000
    beta_min = 1e-4
    beta_max = 0.02

    [recovery]
    lambda = 0.02
    zeta = 0
    nfe = 20
    inner_steps = 100
    lr = 0.25

    [run]
    trials = 10
    seed = 0
    output = runs/cs
"""

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields, replace

from . import __version__
from .errors import InvalidArgument
from .sampler import ADAM, FROM_PREVIOUS, FROM_Z, GRADIENT_DESCENT, InnerSolverConfig, RecoveryConfig

TASKS = ("onebit_cs", "logistic", "onebit_inpainting")
DEFAULT_LAMBDA = {"onebit_cs": 0.02, "logistic": 0.02, "onebit_inpainting": 1.0}

# file key -> (section, field name)
_KEYS = {
    "task": ("task", "task"),
    "n": ("task", "n"),
    "m": ("task", "m"),
    "mask_ratio": ("task", "mask_ratio"),
    "sigma": ("task", "sigma"),
    "prior": ("task", "prior"),
    "image_shape": ("task", "image_shape"),
    "t": ("schedule", "T"),
    "beta_min": ("schedule", "beta_min"),
    "beta_max": ("schedule", "beta_max"),
    "lambda": ("recovery", "lam"),
    "zeta": ("recovery", "zeta"),
    "nfe": ("recovery", "nfe"),
    "inner_steps": ("recovery", "inner_steps"),
    "lr": ("recovery", "lr"),
    "optimizer": ("recovery", "optimizer"),
    "warm_start": ("recovery", "warm_start"),
    "fidelity_sigma": ("recovery", "fidelity_sigma"),
    "trials": ("run", "trials"),
    "seed": ("run", "seed"),
    "output": ("run", "output"),
    "workers": ("run", "workers"),
    "data_range": ("run", "data_range"),
}

# fields that do not change results and are left out of the config hash
_UNHASHED = {"output", "workers"}


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "onebit_cs"
    n: int = 128
    m: int = None
    mask_ratio: float = 0.5
    sigma: float = 0.5
    prior: str = None
    image_shape: tuple = None
    T: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 0.02
    lam: float = None
    zeta: float = 0.0
    nfe: int = 20
    inner_steps: int = 100
    lr: float = 0.25
    optimizer: str = ADAM
    warm_start: str = FROM_Z
    fidelity_sigma: float = None
    trials: int = 1
    seed: int = 0
    output: str = "runs"
    workers: int = 1
    data_range: float = 2.0

    @property
    def lam_effective(self):
        return DEFAULT_LAMBDA[self.task] if self.lam is None else self.lam

    @property
    def m_effective(self):
        if self.task == "onebit_inpainting":
            return int(self.mask_ratio * self.n + 0.5)
        return self.n // 16 if self.m is None else self.m

    def recovery(self, seed):
        inner = InnerSolverConfig(
            steps=self.inner_steps, learning_rate=self.lr, method=self.optimizer, warm_start=self.warm_start
        )
        return RecoveryConfig(lam=self.lam_effective, zeta=self.zeta, nfe=self.nfe, seed=seed, inner=inner)

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    def validate(self, check_files=True, for_recovery=True):
        """Raise InvalidArgument on the first out-of-range field.

        ``for_recovery=False`` skips checks that only matter when recovering
        (simulating noiseless probit data needs no assumed fidelity sigma).
        """
        if self.task not in TASKS:
            raise InvalidArgument(f"task must be one of {TASKS}, got {self.task!r}")
        if self.n < 1:
            raise InvalidArgument(f"n must be >= 1, got {self.n}")
        if self.task == "onebit_inpainting":
            if not (0 < self.mask_ratio <= 1) or self.m_effective < 1:
                raise InvalidArgument(f"mask_ratio must lie in (0, 1] and keep >= 1 pixel, got {self.mask_ratio}")
        elif self.m_effective < 1:
            raise InvalidArgument(f"m must be >= 1, got {self.m_effective}")
        if not (self.sigma >= 0):
            raise InvalidArgument(f"sigma must be >= 0, got {self.sigma}")
        if for_recovery and self.task != "logistic" and self.sigma == 0 and self.fidelity_sigma is None:
            raise InvalidArgument("noiseless probit data needs fidelity_sigma > 0 for recovery")
        if self.fidelity_sigma is not None and not self.fidelity_sigma > 0:
            raise InvalidArgument(f"fidelity_sigma must be > 0, got {self.fidelity_sigma}")
        if self.image_shape is not None and self.image_shape[0] * self.image_shape[1] != self.n:
            raise InvalidArgument(f"image_shape {self.image_shape} does not match n={self.n}")
        if self.T < 2 or not (0 < self.beta_min <= self.beta_max < 1):
            raise InvalidArgument("schedule needs T >= 2 and 0 < beta_min <= beta_max < 1")
        if not (1 <= self.nfe <= self.T):
            raise InvalidArgument(f"nfe must lie in [1, T={self.T}], got {self.nfe}")
        if self.optimizer not in (ADAM, GRADIENT_DESCENT):
            raise InvalidArgument(f"optimizer must be {ADAM!r} or {GRADIENT_DESCENT!r}")
        if self.warm_start not in (FROM_Z, FROM_PREVIOUS):
            raise InvalidArgument(f"warm_start must be {FROM_Z!r} or {FROM_PREVIOUS!r}")
        if self.trials < 1 or self.workers < 1 or self.seed < 0:
            raise InvalidArgument("trials and workers must be >= 1 and seed >= 0")
        if not self.data_range > 0:
            raise InvalidArgument("data_range must be positive")
        self.recovery(self.seed)
        if check_files:
            if self.prior is None:
                raise InvalidArgument("a prior file is required")
            if not os.path.isfile(self.prior):
                raise InvalidArgument(f"prior file not found: {self.prior}")
        return self

    def to_dict(self):
        d = asdict(self)
        if d["image_shape"] is not None:
            d["image_shape"] = list(d["image_shape"])
        return d

    def config_hash(self):
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        if d["prior"] is not None and os.path.isfile(d["prior"]):
            with open(d["prior"], "rb") as fh:
                d["prior"] = hashlib.sha256(fh.read()).hexdigest()
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def provenance(self):
        return {"config_hash": self.config_hash(), "tool_version": __version__}


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name, text):
    text = text.strip()
    if name == "image_shape":
        parts = text.replace("x", " ").split()
        if len(parts) != 2:
            raise InvalidArgument(f"image_shape must be 'H W', got {text!r}")
        return (int(parts[0]), int(parts[1]))
    if text.lower() in ("", "none", "default"):
        return None
    kind = _FIELD_TYPES[name]
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise InvalidArgument(f"cannot parse {name} = {text!r}") from None
    return text


def parse_config(text, base_dir=None):
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InvalidArgument(f"malformed config: {exc}") from None
    values = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            if key not in _KEYS:
                raise InvalidArgument(f"unknown config key [{section}] {key}")
            expected, name = _KEYS[key]
            if section != expected:
                raise InvalidArgument(f"key {key!r} belongs in section [{expected}], found in [{section}]")
            values[name] = _coerce(name, raw)
    if base_dir and values.get("prior") and not os.path.isabs(values["prior"]):
        values["prior"] = os.path.join(base_dir, values["prior"])
    return ExperimentConfig(**values)


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read(), os.path.dirname(os.path.abspath(path)))


def format_config(cfg):
    d = cfg.to_dict()
    by_section = {}
    for key, (section, name) in _KEYS.items():
        val = d[name]
        if val is None:
            continue
        if name == "image_shape":
            val = f"{val[0]} {val[1]}"
        by_section.setdefault(section, []).append(f"{key} = {val}")
    out = []
    for section in ("task", "schedule", "recovery", "run"):
        if section in by_section:
            out.append(f"[{section}]")
            out.extend(by_section[section])
            out.append("")
    return "\n".join(out)

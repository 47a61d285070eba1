"""Experiment configuration: JSON files, named detector profiles, CLI overrides."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources

PROFILE_NAMES = ("paper", "desk")
ALGOS = ("m1", "m2", "collision")
DISTS = ("D0", "D1", "DS")


class ConfigError(ValueError):
    pass


def load_profile(name: str) -> dict:
    """Constants for every detector under a named profile."""
    if name not in PROFILE_NAMES:
        raise ConfigError(f"unknown profile {name!r}; expected one of {PROFILE_NAMES}")
    text = resources.files("needlestream.profiles").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def resolve_p(p, n: int) -> float:
    """``p`` as a number or a named rule relative to ``n``."""
    if isinstance(p, (int, float)):
        return float(p)
    rules = {
        "inv_sqrt_n": lambda: 1 / math.sqrt(n),
        "m2_max": lambda: 1 / math.sqrt(n * math.log2(n) ** 3),
    }
    if p not in rules:
        raise ConfigError(f"unknown p rule {p!r}; use a number or one of {sorted(rules)}")
    return rules[p]()


@dataclass
class ExperimentConfig:
    algo: str = "m1"
    profile: str | None = "paper"
    t: int = 10 ** 12
    n: int = 10 ** 6
    p: object = "inv_sqrt_n"
    dists: list = field(default_factory=lambda: ["D0", "D1"])
    S: list | None = None                 # positions for the D^S arm
    trials: int = 100
    master_seed: int = 0
    constants: dict = field(default_factory=dict)
    window: int | None = None             # collision baseline
    workers: int = 1
    timing: bool = False
    asserts: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        if self.algo not in ALGOS:
            raise ConfigError(f"unknown algorithm {self.algo!r}; expected one of {ALGOS}")
        if self.profile is not None:
            load_profile(self.profile)
        if self.trials < 0:
            raise ConfigError("trials must be non-negative")
        for d in self.dists:
            if d not in DISTS:
                raise ConfigError(f"unknown distribution {d!r}; expected one of {DISTS}")
        if "DS" in self.dists and not self.S:
            raise ConfigError("the DS arm needs an index set S")
        if self.algo == "collision" and not self.window:
            raise ConfigError("the collision baseline needs a window")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        resolve_p(self.p, self.n)
        return self

    @property
    def p_value(self) -> float:
        return resolve_p(self.p, self.n)

    def detector_constants(self) -> dict:
        """Profile constants for this algorithm with explicit overrides applied."""
        base = {}
        if self.profile is not None and self.algo in ("m1", "m2"):
            base = dict(load_profile(self.profile)[self.algo]["constants"])
        base.update(self.constants)
        return base

    def to_dict(self) -> dict:
        d = asdict(self)
        d["p_value"] = self.p_value
        d["effective_constants"] = self.detector_constants()
        return d


def load_config(path: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON config (if given) and apply non-``None`` overrides.

    Override keys may be top-level fields or ``constants.<name>``.
    """
    data = {}
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    unknown = set(data) - set(ExperimentConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data = copy.deepcopy(data)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key.startswith("constants."):
            data.setdefault("constants", {})[key.split(".", 1)[1]] = val
        else:
            data[key] = val
    return ExperimentConfig(**data).validate()

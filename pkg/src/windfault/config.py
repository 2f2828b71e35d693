"""Run configuration: profiles, validation, hashing and file loading."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from windfault.errors import InvalidArgument
from windfault.hashing import config_hash
from windfault.models.architectures import ARCHITECTURES, normalize_arch
from windfault.turbsim.params import FaultKind

PROFILES = ("paper-scale", "desk-scale")
ENV_SEED = "WINDFAULT_SEED"
ENV_OUTPUT = "WINDFAULT_OUTPUT"


@dataclass
class SimulatorConfig:
    runs_healthy: int = 140
    runs_per_fault: int = 40
    duration: float = 600.0
    mean_speed: float = 18.2
    turbulence_intensity: float = 0.10
    seed: int = 0

    def runs_per_class(self):
        return {int(k): (self.runs_healthy if k == FaultKind.Healthy else self.runs_per_fault)
                for k in FaultKind}


@dataclass
class DatasetConfig:
    window: int = 125
    stride: int = 125
    folds: int = 10
    seed: int = 0


@dataclass
class ModelConfig:
    archs: list = field(default_factory=lambda: list(ARCHITECTURES))
    epochs: int = 50
    batch: int = 32
    seed: int = 0
    lr: float = 1e-3
    threads: int = 1


@dataclass
class UQConfig:
    k: int = 200
    seed: int = 0


@dataclass
class BaselineConfig:
    enabled: bool = True
    dt_max_depth: int = 50
    rf_estimators: int = 200
    rf_max_depth: int = 50
    seed: int = 0


@dataclass
class VisualizeConfig:
    archs: list = field(default_factory=list)  # empty: every trained architecture
    layers: list = field(default_factory=lambda: ["fusion1", "fusion2"])
    fold: int = 0
    perplexity: float = 30.0
    seed: int = 0


SECTIONS = {"simulator": SimulatorConfig, "dataset": DatasetConfig, "model": ModelConfig,
            "uq": UQConfig, "baselines": BaselineConfig, "visualize": VisualizeConfig}


@dataclass
class RunConfig:
    profile: str = "paper-scale"
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    uq: UQConfig = field(default_factory=UQConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    visualize: VisualizeConfig = field(default_factory=VisualizeConfig)
    output_root: str = "runs/default"

    @classmethod
    def for_profile(cls, profile: str, **overrides) -> "RunConfig":
        if profile not in PROFILES:
            raise InvalidArgument(f"unknown profile {profile!r}; choose from {PROFILES}")
        base = {"profile": profile}
        if profile == "desk-scale":
            base.update({"simulator": {"runs_healthy": 14, "runs_per_fault": 4, "duration": 60.0},
                         "model": {"epochs": 15}})
        return cls.from_dict(_merge(base, overrides))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = copy.deepcopy(dict(d))
        profile = d.pop("profile", "paper-scale")
        if profile not in PROFILES:
            raise InvalidArgument(f"unknown profile {profile!r}; choose from {PROFILES}")
        kwargs = {"profile": profile}
        for name, klass in SECTIONS.items():
            block = d.pop(name, {}) or {}
            known = {f.name for f in fields(klass)}
            extra = set(block) - known
            if extra:
                raise InvalidArgument(f"{name}: unknown field(s) {sorted(extra)}")
            kwargs[name] = klass(**block)
        if "output_root" in d:
            kwargs["output_root"] = str(d.pop("output_root"))
        if d:
            raise InvalidArgument(f"unknown config field(s) {sorted(d)}")
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        s, ds, m, u = self.simulator, self.dataset, self.model, self.uq
        checks = [
            (s.runs_healthy >= 1 and s.runs_per_fault >= 1, "simulator: run counts must be >= 1"),
            (s.duration > 0, "simulator.duration must be positive"),
            (s.mean_speed > 0, "simulator.mean_speed must be positive"),
            (s.turbulence_intensity >= 0, "simulator.turbulence_intensity must be >= 0"),
            (ds.window > 0 and ds.stride > 0, "dataset: window and stride must be positive"),
            (ds.folds >= 2, f"dataset.folds must be at least 2, got {ds.folds}"),
            (m.epochs >= 1 and m.batch >= 1, "model: epochs and batch must be >= 1"),
            (m.lr > 0, "model.lr must be positive"),
            (m.threads >= 1, "model.threads must be >= 1"),
            (u.k >= 1, f"uq.k must be at least 1, got {u.k}"),
            (bool(m.archs), "model.archs is empty"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidArgument(msg)
        self.model.archs = [normalize_arch(a) for a in m.archs]
        n_runs = s.runs_healthy + s.runs_per_fault * (len(FaultKind) - 1)
        if ds.folds > n_runs:
            raise InvalidArgument(f"dataset.folds={ds.folds} exceeds the {n_runs} simulated runs")
        if s.duration * 80 < ds.window:
            raise InvalidArgument("simulator.duration is shorter than one window")
        if self.profile == "desk-scale" and m.epochs > 15:
            raise InvalidArgument("desk-scale profile allows at most 15 epochs")

    def block_hash(self, *names) -> str:
        d = self.to_dict()
        return config_hash({n: d[n] for n in names})

    @property
    def hash(self) -> str:
        d = self.to_dict()
        d.pop("output_root")
        return config_hash(d)

    def with_env(self, environ=None) -> "RunConfig":
        """Apply the seed and output-root environment overrides."""
        environ = os.environ if environ is None else environ
        cfg = copy.deepcopy(self)
        if environ.get(ENV_SEED):
            try:
                seed = int(environ[ENV_SEED])
            except ValueError:
                raise InvalidArgument(f"{ENV_SEED} must be an integer") from None
            for name in ("simulator", "dataset", "model", "uq", "baselines", "visualize"):
                getattr(cfg, name).seed = seed
        if environ.get(ENV_OUTPUT):
            cfg.output_root = environ[ENV_OUTPUT]
        return cfg


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path, environ=None) -> RunConfig:
    """Read a JSON or YAML config; ``profile`` supplies defaults for omitted fields."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        raw = yaml.safe_load(text) or {}
    else:
        raw = json.loads(text)
    if not isinstance(raw, dict):
        raise InvalidArgument(f"{path}: config must be a mapping")
    profile = raw.pop("profile", "paper-scale")
    return RunConfig.for_profile(profile, **raw).with_env(environ)


def save_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path

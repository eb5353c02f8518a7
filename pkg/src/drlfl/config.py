"""Experiment configuration: a sectioned key=value (INI) file with a fixed schema.

Every key is optional and falls back to the defaults below. Unknown sections
or keys are violations, as are type errors and broken invariants; parsing
collects all of them before reporting.

    [run]        seed, output_dir, checkpoint_every, workers
    [data]       source (synthetic|idx), num_classes, samples_per_class,
                 feature_dim, class_separation, test_size, seed,
                 train_images, train_labels, test_images, test_labels, cache
    [partition]  scheme (iid|noniid_shards), num_clients, shard_count,
                 shard_size, shards_per_client, seed
    [model]      hidden (comma list), activation, seed
    [fl]         C, B (int or inf), E, lr, max_rounds, target_accuracy (or none),
                 aggregation, converge_tol, converge_patience, seed
    [channel]    enabled, tx_power, path_loss_exp, noise_var, fading,
                 subchannels, snr_threshold, bandwidth, ema_decay,
                 distance_min, distance_max, seed
    [placements] <device id> = <distance> [: <interferer distance> ...]
    [devices]    compute_min, compute_max, cycles_per_sample, upload_bits
                 (0 = 64 bits per model parameter), nominal_rate, quality, seed
    [scheduler]  kind (random|cyclic|prop_fair|ddpg), groups, seed
    [agent]      hidden, gamma, tau, capacity, batch_size, actor_lr,
                 critic_lr, noise, noise_decay, reward_scale, seed
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import PartitionPlan
from .ddpg import DdpgConfig
from .fed import FlConfig
from .wireless import ChannelConfig, DevicePlacement


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid config:\n  " + "\n  ".join(self.violations))


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if s.strip().lower() in ("none", "") else float(s)


def _opt_int(s):
    return None if s.strip().lower() in ("none", "") else int(s)


def _batch(s):
    v = s.strip().lower()
    return None if v in ("inf", "none", "full") else int(v)


def _int_tuple(s):
    return tuple(int(p) for p in s.split(",") if p.strip())


def _opt_str(s):
    return s.strip() or None


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"
    num_classes: int = 10
    samples_per_class: int = 700
    feature_dim: int = 20
    class_separation: float = 6.0
    test_size: int = 1000
    seed: int | None = None
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    cache: str | None = None


@dataclass(frozen=True)
class ModelSection:
    hidden: tuple[int, ...] = (200, 200)
    activation: str = "relu"
    seed: int | None = None


@dataclass(frozen=True)
class ChannelSection:
    enabled: bool = True
    tx_power: float = 0.1
    path_loss_exp: float = 3.0
    noise_var: float = 1e-9
    fading: str = "rayleigh"
    subchannels: int = 10
    snr_threshold: float = 1.0
    bandwidth: float = 1e6
    ema_decay: float = 0.9
    distance_min: float = 10.0
    distance_max: float = 100.0
    seed: int | None = None


@dataclass(frozen=True)
class DevicesSection:
    compute_min: float = 1e9
    compute_max: float = 3e9
    cycles_per_sample: float = 1e6
    upload_bits: float = 0.0
    nominal_rate: float = 1e6
    quality: str = "sum"
    seed: int | None = None


@dataclass(frozen=True)
class SchedulerSection:
    kind: str = "random"
    groups: int = 10
    seed: int | None = None


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    output_dir: str = "runs/default"
    checkpoint_every: int = 0
    workers: int = 1


SCHEMA = {
    "run": {"seed": int, "output_dir": str, "checkpoint_every": int, "workers": int},
    "data": {"source": str, "num_classes": int, "samples_per_class": int, "feature_dim": int,
             "class_separation": float, "test_size": int, "seed": _opt_int,
             "train_images": _opt_str, "train_labels": _opt_str, "test_images": _opt_str,
             "test_labels": _opt_str, "cache": _opt_str},
    "partition": {"scheme": str, "num_clients": int, "shard_count": int, "shard_size": int,
                  "shards_per_client": int, "seed": _opt_int},
    "model": {"hidden": _int_tuple, "activation": str, "seed": _opt_int},
    "fl": {"C": float, "B": _batch, "E": int, "lr": float, "max_rounds": int,
           "target_accuracy": _opt_float, "aggregation": str, "converge_tol": float,
           "converge_patience": int, "seed": _opt_int},
    "channel": {"enabled": _bool, "tx_power": float, "path_loss_exp": float, "noise_var": float,
                "fading": str, "subchannels": int, "snr_threshold": float, "bandwidth": float,
                "ema_decay": float, "distance_min": float, "distance_max": float, "seed": _opt_int},
    "devices": {"compute_min": float, "compute_max": float, "cycles_per_sample": float,
                "upload_bits": float, "nominal_rate": float, "quality": str, "seed": _opt_int},
    "scheduler": {"kind": str, "groups": int, "seed": _opt_int},
    "agent": {"hidden": _int_tuple, "gamma": float, "tau": float, "capacity": int,
              "batch_size": int, "actor_lr": float, "critic_lr": float, "noise": float,
              "noise_decay": float, "reward_scale": float, "seed": _opt_int},
}
SECTIONS = tuple(SCHEMA) + ("placements",)


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunSection = RunSection()
    data: DataSection = DataSection()
    partition: PartitionPlan = PartitionPlan(num_clients=100)
    partition_seed: int | None = None
    model: ModelSection = ModelSection()
    fl: FlConfig = FlConfig()
    fl_seed: int | None = None
    channel: ChannelSection = ChannelSection()
    placements: dict = field(default_factory=dict)
    devices: DevicesSection = DevicesSection()
    scheduler: SchedulerSection = SchedulerSection()
    agent: DdpgConfig = DdpgConfig()
    agent_seed: int | None = None

    def seed_for(self, component: str) -> int:
        """Explicit seed from the component's section, else derived from the run seed."""
        explicit = {
            "data": self.data.seed, "model": self.model.seed, "channel": self.channel.seed,
            "devices": self.devices.seed, "scheduler": self.scheduler.seed,
            "partition": self.partition_seed, "fl": self.fl_seed, "agent": self.agent_seed,
        }.get(component)
        if explicit is not None:
            return explicit
        index = ("data", "split", "partition", "model", "fl", "channel", "devices",
                 "scheduler", "agent").index(component)
        return int(np.random.SeedSequence([self.run.seed, index]).generate_state(1)[0])

    @property
    def K(self) -> int:
        return self.partition.num_clients

    def channel_config(self) -> ChannelConfig:
        c = self.channel
        return ChannelConfig(c.tx_power, c.path_loss_exp, c.noise_var, c.fading, c.subchannels,
                             c.snr_threshold, c.bandwidth, c.ema_decay, self.seed_for("channel"))

    def fl_config(self) -> FlConfig:
        return replace(self.fl, K=self.K, seed=self.seed_for("fl"))

    def agent_config(self) -> DdpgConfig:
        return replace(self.agent, seed=self.seed_for("agent"))


def _parse_placement(key, value):
    dev = int(key)
    head, _, tail = value.partition(":")
    return DevicePlacement(dev, float(head), tuple(float(x) for x in tail.split()))


def read_sections(text: str) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    cp.optionxform = str  # keys are case-sensitive (C, B, E)
    cp.read_string(text)
    return {s: dict(cp.items(s)) for s in cp.sections()}


def dump_sections(sections: dict[str, dict[str, str]]) -> str:
    lines = []
    for name, items in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in items.items())
        lines.append("")
    return "\n".join(lines)


def _collect(fn, errors):
    try:
        return fn()
    except ValueError as e:
        errors.extend(str(e).split("; "))
        return None


def parse_sections(sections: dict[str, dict[str, str]]) -> tuple[ExperimentConfig | None, list[str]]:
    errors: list[str] = []
    values: dict[str, dict] = {}
    for name, items in sections.items():
        if name not in SECTIONS:
            errors.append(f"unknown section [{name}]")
            continue
        if name == "placements":
            continue
        schema = SCHEMA[name]
        values[name] = {}
        for key, raw in items.items():
            if key not in schema:
                errors.append(f"unknown key {name}.{key}")
                continue
            try:
                values[name][key] = schema[key](raw)
            except ValueError:
                errors.append(f"{name}.{key}: cannot parse {raw!r}")
    placements = {}
    for key, raw in sections.get("placements", {}).items():
        try:
            p = _parse_placement(key, raw)
            placements[p.device_id] = p
        except ValueError as e:
            errors.append(f"placements.{key}: {e}")
    if errors:
        return None, errors

    def section(cls, name, **extra):
        kw = dict(values.get(name, {}))
        kw.update(extra)
        return _collect(lambda: cls(**kw), errors)

    run = section(RunSection, "run")
    data = section(DataSection, "data")
    part = dict(values.get("partition", {}))
    partition_seed = part.pop("seed", None)
    plan = _collect(lambda: PartitionPlan(**part), errors)
    model = section(ModelSection, "model")
    flv = dict(values.get("fl", {}))
    fl_seed = flv.pop("seed", None)
    fl = _collect(lambda: FlConfig(**flv), errors)
    channel = section(ChannelSection, "channel")
    devices = section(DevicesSection, "devices")
    sched = section(SchedulerSection, "scheduler")
    ag = dict(values.get("agent", {}))
    agent_seed = ag.pop("seed", None)
    agent = _collect(lambda: DdpgConfig(**ag), errors)
    if errors:
        return None, errors

    cfg = ExperimentConfig(run, data, plan, partition_seed, model, fl, fl_seed, channel,
                           placements, devices, sched, agent, agent_seed)
    errors.extend(check(cfg))
    return (None, errors) if errors else (cfg, [])


def check(cfg: ExperimentConfig) -> list[str]:
    """Invariant checks across the whole config."""
    out = []
    d = cfg.data
    if cfg.run.checkpoint_every < 0:
        out.append("run.checkpoint_every must be >= 0")
    if cfg.run.workers < 1:
        out.append("run.workers must be >= 1")
    train_size = None
    if d.source == "synthetic":
        if min(d.num_classes, d.samples_per_class, d.feature_dim) < 1:
            out.append("data: num_classes, samples_per_class and feature_dim must be >= 1")
        if d.class_separation <= 0:
            out.append("data.class_separation must be > 0")
        total = d.num_classes * d.samples_per_class
        if not 0 < d.test_size < total:
            out.append(f"data.test_size must be in (0, {total})")
        else:
            train_size = total - d.test_size
    elif d.source == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if getattr(d, key) is None:
                out.append(f"data.{key} is required for idx data")
    else:
        out.append(f"unknown data.source {d.source!r}")
    out.extend(f"partition: {v}" for v in cfg.partition.violations(train_size))
    if any(h < 1 for h in cfg.model.hidden):
        out.append("model.hidden sizes must be >= 1")
    if cfg.model.activation not in ("relu", "sigmoid", "tanh", "identity"):
        out.append(f"unknown model.activation {cfg.model.activation!r}")
    out.extend(cfg.fl.violations())
    if cfg.fl.target_accuracy is not None and cfg.fl.target_accuracy > 1:
        out.append("fl.target_accuracy must be in (0, 1]")
    c = cfg.channel
    try:
        cfg.channel_config()
    except ValueError as e:
        out.extend(f"channel: {v}" for v in str(e).split("; "))
    if not 0 < c.distance_min <= c.distance_max:
        out.append("channel: need 0 < distance_min <= distance_max")
    for dev in cfg.placements:
        if not 0 <= dev < cfg.K:
            out.append(f"placements: device {dev} outside [0, {cfg.K})")
    dv = cfg.devices
    if not 0 < dv.compute_min <= dv.compute_max:
        out.append("devices: need 0 < compute_min <= compute_max")
    if dv.cycles_per_sample < 0 or dv.upload_bits < 0 or dv.nominal_rate <= 0:
        out.append("devices: cycles_per_sample, upload_bits >= 0 and nominal_rate > 0")
    if dv.quality not in ("sum", "mean"):
        out.append(f"unknown devices.quality {dv.quality!r}")
    s = cfg.scheduler
    if s.kind not in ("random", "cyclic", "prop_fair", "ddpg"):
        out.append(f"unknown scheduler.kind {s.kind!r}")
    if s.kind == "cyclic" and not 1 <= s.groups <= cfg.K:
        out.append(f"scheduler.groups must be in [1, {cfg.K}]")
    if s.kind == "prop_fair" and not c.enabled:
        out.append("prop_fair scheduling needs channel.enabled = true")
    return out


def validate(text: str) -> list[str]:
    """All violations in a config text; empty means the config is usable."""
    try:
        sections = read_sections(text)
    except configparser.Error as e:
        return [f"syntax: {e}"]
    _, errors = parse_sections(sections)
    return errors


def parse(text: str) -> ExperimentConfig:
    try:
        sections = read_sections(text)
    except configparser.Error as e:
        raise ConfigError([f"syntax: {e}"]) from None
    cfg, errors = parse_sections(sections)
    if errors:
        raise ConfigError(errors)
    return cfg


def resolve_key(sections: dict, name: str) -> tuple[str, str]:
    """Map ``section.key`` or a bare key unique across the schema to (section, key)."""
    if "." in name:
        sec, key = name.split(".", 1)
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ConfigError([f"unknown parameter {name}"])
        return sec, key
    hits = [s for s, keys in SCHEMA.items() if name in keys]
    if len(hits) != 1:
        raise ConfigError([f"parameter {name!r} is {'ambiguous' if hits else 'unknown'}; use section.key"])
    return hits[0], name


def with_overrides(sections: dict, overrides: dict[str, str]) -> dict:
    out = {k: dict(v) for k, v in sections.items()}
    for name, value in overrides.items():
        sec, key = resolve_key(out, name)
        out.setdefault(sec, {})[key] = str(value)
    return out


def format_batch(B) -> str:
    return "inf" if B is None or (isinstance(B, float) and math.isinf(B)) else str(B)


"""Experiment runner: config -> wired simulation -> run directory.

A run directory holds

    metrics.csv      one row per round (schema: METRICS_HEADER)
    config.ini       the effective config, overrides applied
    summary.json     stop reason, rounds, first round at target, timing
    final.params     global model (ParamVector file format)
    checkpoints/     round_NNNNN.params every ``run.checkpoint_every`` rounds
    actor.params, critic.params   trained agent (ddpg runs only)

Only metrics.csv is promised to be byte-reproducible; summary.json carries
real wallclock time.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

from . import nn
from .config import ExperimentConfig, dump_sections, parse_sections, read_sections, with_overrides, ConfigError
from .data import Dataset, generate_synthetic, load_dataset, load_idx, partition, save_dataset, train_test_split
from .ddpg import DdpgAgent, DdpgScheduler
from .fed import DeviceFleet, FederatedState, RoundRecord, evaluate, run_federated
from .scheduling import CyclicScheduler, PropFairScheduler, RandomScheduler, Scheduler
from .wireless import DevicePlacement, WirelessChannel, default_placements

log = logging.getLogger(__name__)

METRICS_HEADER = ("round", "selected", "uploads_ok", "test_acc", "test_loss",
                  "c_time", "c_qu", "c_total", "reward")
NOT_REACHED = "not_reached"


def metrics_row(rec: RoundRecord) -> list[str]:
    return [str(rec.round), ";".join(map(str, rec.selected)), str(len(rec.uploads_ok)),
            repr(rec.test_acc), repr(rec.test_loss), repr(rec.c_time), repr(rec.c_qu),
            repr(rec.c_total), repr(rec.reward)]


@dataclass
class Experiment:
    config: ExperimentConfig
    state: FederatedState
    scheduler: Scheduler
    channel: WirelessChannel | None


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d.source == "idx":
        train = load_idx(d.train_images, d.train_labels, d.num_classes)
        test = load_idx(d.test_images, d.test_labels, d.num_classes)
        return train, test
    cache = Path(d.cache) if d.cache else None
    if cache is not None and cache.exists():
        pooled = load_dataset(cache)
    else:
        pooled = generate_synthetic(d.num_classes, d.samples_per_class, d.feature_dim,
                                    d.class_separation, cfg.seed_for("data"))
        if cache is not None:
            save_dataset(cache, pooled)
    return train_test_split(pooled, d.test_size, cfg.seed_for("split"))


def build(cfg: ExperimentConfig) -> Experiment:
    train, test = load_data(cfg)
    clients = partition(train, replace(cfg.partition, seed=cfg.seed_for("partition")))
    spec = nn.MlpSpec((train.feature_dim, *cfg.model.hidden, train.num_classes), cfg.model.activation)
    params = nn.init_params(spec, cfg.seed_for("model"))
    dv = cfg.devices
    fleet = DeviceFleet.uniform(
        cfg.K, cfg.seed_for("devices"), dv.compute_min, dv.compute_max,
        cycles_per_sample=dv.cycles_per_sample,
        upload_bits=dv.upload_bits or 64.0 * spec.num_params,
        nominal_rate=dv.nominal_rate, quality=dv.quality)
    state = FederatedState(spec, params, clients, test, fleet)

    channel = None
    if cfg.channel.enabled:
        c = cfg.channel
        placements = default_placements(cfg.K, cfg.seed_for("channel"), c.distance_min, c.distance_max)
        for dev, p in cfg.placements.items():
            placements[dev] = DevicePlacement(dev, p.distance, p.interferers)
        channel = WirelessChannel(cfg.channel_config(), placements)

    kind = cfg.scheduler.kind
    if kind == "random":
        scheduler = RandomScheduler(cfg.seed_for("scheduler"))
    elif kind == "cyclic":
        scheduler = CyclicScheduler(cfg.scheduler.groups)
    elif kind == "prop_fair":
        scheduler = PropFairScheduler()
    else:
        scheduler = DdpgScheduler(DdpgAgent(cfg.K, cfg.agent_config()))
    return Experiment(cfg, state, scheduler, channel)


def _sections(config) -> dict:
    if isinstance(config, dict):
        return config
    return read_sections(Path(config).read_text() if isinstance(config, Path) else config)


def run(config, out_dir=None, workers: int | None = None, seed: int | None = None,
        target: float | None = None) -> Path:
    """Execute one experiment; ``config`` is INI text, a Path, or parsed sections."""
    overrides = {}
    if seed is not None:
        overrides["run.seed"] = str(seed)
    if workers is not None:
        overrides["run.workers"] = str(workers)
    if out_dir is not None:
        overrides["run.output_dir"] = str(out_dir)
    sections = with_overrides(_sections(config), overrides)
    cfg, errors = parse_sections(sections)
    if errors:
        raise ConfigError(errors)
    out = Path(cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_sections(sections))

    exp = build(cfg)
    state = exp.state
    init_acc, init_loss = evaluate(state.spec, state.params, state.test_set)
    fl = cfg.fl_config()
    stop_at = fl.target_accuracy if target is None else target
    every = cfg.run.checkpoint_every
    if every:
        (out / "checkpoints").mkdir(exist_ok=True)

    t0 = time.perf_counter()
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)

        def on_round(rec, st):
            writer.writerow(metrics_row(rec))
            fh.flush()
            if every and rec.round % every == 0:
                nn.save_params(out / "checkpoints" / f"round_{rec.round:05d}.params", st.params)
            log.info("round %d acc=%.4f loss=%.4f", rec.round, rec.test_acc, rec.test_loss)

        reason = run_federated(state, exp.scheduler, exp.channel, fl, cfg.run.workers, on_round, target)

    nn.save_params(out / "final.params", state.params)
    if isinstance(exp.scheduler, DdpgScheduler):
        nn.save_params(out / "actor.params", exp.scheduler.agent.actor)
        nn.save_params(out / "critic.params", exp.scheduler.agent.critic)
    hist = state.history
    hit = next((r.round for r in hist if stop_at is not None and r.test_acc >= stop_at), None)
    summary = {
        "stop_reason": reason,
        "rounds": len(hist),
        "initial_acc": init_acc,
        "initial_loss": init_loss,
        "final_acc": hist[-1].test_acc,
        "final_loss": hist[-1].test_loss,
        "target": stop_at,
        "rounds_to_target": hit if hit is not None else NOT_REACHED,
        "noop_rounds": sum(r.noop for r in hist),
        "wallclock_seconds": time.perf_counter() - t0,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return out


def read_metrics(run_dir) -> list[dict[str, str]]:
    path = Path(run_dir) / "metrics.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path}: no metrics to read")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _parse_values(axis: list[str], values: str) -> list[list[str]]:
    out = []
    for item in values.split(","):
        parts = item.strip().split(":")
        if len(parts) != len(axis):
            raise ConfigError([f"value {item!r} does not have one entry per axis parameter {axis}"])
        out.append(parts)
    return out


def sweep(config, axis: str, values: str, target: float, out_dir=None,
          workers: int | None = None, seed: int | None = None) -> Path:
    """One run per axis value, all from the same base seed; writes summary.csv.

    ``axis`` names one parameter or a comma-joined group (``E,B``) whose values
    are colon-joined tuples (``5:10,1:10,1:inf``).
    """
    base = _sections(config)
    names = [a.strip() for a in axis.split(",")]
    grid = _parse_values(names, values)
    if seed is not None:
        base = with_overrides(base, {"run.seed": str(seed)})
    root = Path(out_dir or base.get("run", {}).get("output_dir", "runs/sweep"))
    # validate every point before running any of them
    problems = []
    for point in grid:
        _, errors = parse_sections(with_overrides(base, dict(zip(names, point))))
        problems.extend(f"{axis}={':'.join(point)}: {e}" for e in errors)
    if problems:
        raise ConfigError(problems)

    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for point in grid:
        label = ":".join(point)
        tag = "_".join(f"{n.split('.')[-1]}{v}" for n, v in zip(names, point))
        run_dir = run(with_overrides(base, dict(zip(names, point))), root / tag, workers, target=target)
        summary = json.loads((run_dir / "summary.json").read_text())
        rows.append([axis, label, str(summary["rounds_to_target"]), repr(summary["final_acc"])])
    with open(root / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["axis", "value", "rounds_to_target", "final_acc"])
        writer.writerows(rows)
    return root / "summary.csv"


PLOT_SERIES = {"accuracy": "test_acc", "loss": "test_loss", "cost": "c_total", "reward": "reward"}


def emit_plot_series(run_dir) -> list[Path]:
    """Two-column ``round value`` text files, values copied verbatim from metrics.csv."""
    rows = read_metrics(run_dir)
    out = []
    for name, column in PLOT_SERIES.items():
        path = Path(run_dir) / f"{name}.dat"
        path.write_text("".join(f"{r['round']} {r[column]}\n" for r in rows))
        out.append(path)
    return out

"""Federated rounds: client selection count, local training, aggregation, evaluation."""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import ClientDataset, Dataset
from .ddpg import DeviceProfile, SelectionFeedback, cost_breakdown, mdp_state, reward
from .scheduling import ScheduleContext, ScheduleDecision, Scheduler
from .wireless import WirelessChannel, shannon_rate


@dataclass(frozen=True)
class FlConfig:
    C: float = 0.1
    K: int = 100
    B: int | None = 10  # None: one full-batch step per epoch
    E: int = 1
    lr: float = 0.05
    max_rounds: int = 100
    target_accuracy: float | None = None
    seed: int = 0
    aggregation: str = "weighted_average"  # weighted_average | gradient_step
    converge_tol: float = 1e-6
    converge_patience: int = 10

    def violations(self) -> list[str]:
        out = []
        if not 0 <= self.C <= 1:
            out.append("C out of [0,1]")
        if self.K < 1:
            out.append("K must be >= 1")
        if self.B is not None and self.B < 1:
            out.append("B must be >= 1 or inf")
        if self.E < 1:
            out.append("E must be >= 1")
        if self.lr <= 0:
            out.append("lr must be > 0")
        if self.max_rounds < 1:
            out.append("max_rounds must be >= 1")
        if self.target_accuracy is not None and not 0 < self.target_accuracy:
            out.append("target_accuracy must be > 0")
        if self.aggregation not in ("weighted_average", "gradient_step"):
            out.append(f"unknown aggregation {self.aggregation!r}")
        if self.converge_patience < 1 or self.converge_tol < 0:
            out.append("converge_patience must be >= 1 and converge_tol >= 0")
        return out

    @property
    def num_selected(self) -> int:
        return num_selected(self.C, self.K)


def num_selected(C: float, K: int) -> int:
    # guard against C*K landing just below an integer (0.29 * 100 = 28.999...)
    return min(K, max(math.floor(C * K + 1e-9), 1))


def select_fraction(C: float, K: int, scheduler: Scheduler, t: int,
                    context: ScheduleContext | None = None) -> ScheduleDecision:
    """Ask ``scheduler`` for max(floor(C*K), 1) devices."""
    if K < 1 or not 0 <= C <= 1:
        raise ValueError(f"need K >= 1 and C in [0, 1], got C={C}, K={K}")
    context = ScheduleContext(K) if context is None else context
    return scheduler.select(num_selected(C, K), t, context)


@dataclass(frozen=True, eq=False)
class ClientUpdateResult:
    client_id: int
    new_params: nn.ParamVector
    local_loss_before: float
    local_loss_after: float
    wallclock_model: float  # simulated local training time, s
    samples_used: int


def client_update(spec: nn.MlpSpec, global_params: nn.ParamVector, data: ClientDataset,
                  E: int, B: int | None, lr: float, seed: int,
                  profile: DeviceProfile | None = None) -> ClientUpdateResult:
    """E epochs of minibatch SGD on one client's data, starting from ``global_params``.

    Each epoch reshuffles with an RNG keyed on (seed, epoch). ``B=None`` (or
    any B >= x_n) means one full-batch step per epoch.
    """
    m = data.size
    if m == 0:
        raise ValueError(f"client {data.client_id} has no data")
    x, y = data.features, data.labels
    before = nn.batch_loss(spec, global_params, x, y)
    params = global_params
    if lr > 0:
        bsize = m if B is None or B >= m else int(B)
        for epoch in range(E):
            order = np.random.default_rng([seed, epoch]).permutation(m) if bsize < m else np.arange(m)
            for start in range(0, m, bsize):
                idx = order[start:start + bsize]
                grad, _ = nn.backward(spec, params, (x[idx], y[idx]))
                params = nn.sgd_step(params, grad, lr)
    after = before if params is global_params else nn.batch_loss(spec, params, x, y)
    train_time = profile.local_time if profile is not None else 0.0
    return ClientUpdateResult(data.client_id, params, before, after, train_time, m)


@dataclass(frozen=True)
class AggregationRule:
    kind: str = "weighted_average"
    lr: float | None = None  # needed by gradient_step

    def __post_init__(self):
        if self.kind not in ("weighted_average", "gradient_step"):
            raise ValueError(f"unknown aggregation {self.kind!r}")
        if self.kind == "gradient_step" and not (self.lr and self.lr > 0):
            raise ValueError("gradient_step needs lr > 0")


def aggregation_weights(results) -> np.ndarray:
    sizes = np.array([r.samples_used for r in results], dtype=np.float64)
    return sizes / sizes.sum()


def aggregate(rule: AggregationRule, global_params: nn.ParamVector, results) -> nn.ParamVector:
    """Data-size weighted combination of client results.

    Sums run in ascending client-id order, so the output does not depend on
    the order of ``results``.
    """
    results = sorted(results, key=lambda r: r.client_id)
    if not results:
        raise ValueError("nothing to aggregate")
    for r in results:
        global_params.check_layout(r.new_params)
    w = aggregation_weights(results)
    if rule.kind == "weighted_average":
        acc = np.zeros(len(global_params))
        for wi, r in zip(w, results):
            acc += wi * r.new_params.values
        return global_params.with_values(acc)
    # FedSGD form: rebuild each client's (pseudo-)gradient from its step
    g = np.zeros(len(global_params))
    for wi, r in zip(w, results):
        g += wi * (global_params.values - r.new_params.values) / rule.lr
    return global_params.with_values(global_params.values - rule.lr * g)


def evaluate(spec: nn.MlpSpec, params: nn.ParamVector, dataset: Dataset) -> tuple[float, float]:
    """(argmax accuracy, mean loss); ties go to the lowest class id."""
    if len(dataset) == 0:
        raise ValueError("empty evaluation set")
    out = nn.forward(spec, params, dataset.features)
    acc = float((out.argmax(axis=1) == dataset.labels).mean())
    return acc, nn.batch_loss(spec, params, dataset.features, dataset.labels)


# -- round loop ---------------------------------------------------------------

@dataclass(frozen=True)
class DeviceFleet:
    """Static per-device resources used by the cost model."""

    compute: np.ndarray  # cycles/s per device
    cycles_per_sample: float = 1e6
    upload_bits: float = 1e6
    nominal_rate: float = 1e6  # bit/s when no channel model is attached
    quality: str = "sum"  # how a client's local loss is reduced: sum | mean

    @classmethod
    def uniform(cls, K: int, seed: int, lo: float = 1e9, hi: float = 3e9, **kw) -> "DeviceFleet":
        return cls(np.random.default_rng(seed).uniform(lo, hi, K), **kw)


@dataclass
class RoundRecord:
    round: int  # 1-based communication round
    selected: tuple[int, ...]
    uploads_ok: tuple[int, ...]
    test_acc: float
    test_loss: float
    c_time: float
    c_qu: float
    c_total: float
    reward: float
    wallclock: float = 0.0  # real seconds, never used in costs
    noop: bool = False


@dataclass
class FederatedState:
    """Everything the round loop owns between rounds."""

    spec: nn.MlpSpec
    params: nn.ParamVector
    clients: list[ClientDataset]
    test_set: Dataset
    fleet: DeviceFleet
    round: int = 0
    local_losses: np.ndarray = None
    prev_selected: np.ndarray = None
    rates: np.ndarray = None
    history: list[RoundRecord] = field(default_factory=list)

    def __post_init__(self):
        K = len(self.clients)
        if len(self.fleet.compute) != K:
            raise ValueError(f"fleet describes {len(self.fleet.compute)} devices, have {K} clients")
        if self.local_losses is None:
            self.local_losses = np.array([self.quality_loss(c, self.params) for c in self.clients])
        if self.prev_selected is None:
            self.prev_selected = np.zeros(K, dtype=np.int64)
        if self.rates is None:
            self.rates = np.full(K, self.fleet.nominal_rate)

    @property
    def K(self) -> int:
        return len(self.clients)

    def quality_loss(self, client: ClientDataset, params) -> float:
        losses = nn.per_sample_losses(self.spec, params, client.features, client.labels)
        return float(losses.sum() if self.fleet.quality == "sum" else losses.mean())

    def profiles(self) -> list[DeviceProfile]:
        f = self.fleet
        return [
            DeviceProfile(c.client_id, c.size, float(f.compute[i]), float(self.rates[i]),
                          f.upload_bits, float(self.local_losses[i]), f.cycles_per_sample)
            for i, c in enumerate(self.clients)
        ]

    def mdp_state(self) -> np.ndarray:
        return mdp_state(self.profiles(), self.prev_selected)


def _client_seed(seed, t, cid):
    return int(np.random.SeedSequence([seed, t, cid]).generate_state(1)[0])


def run_round(state: FederatedState, scheduler: Scheduler, channel: WirelessChannel | None,
              config: FlConfig, executor: ThreadPoolExecutor | None = None) -> RoundRecord:
    t0 = time.perf_counter()
    t = state.round
    if t >= config.max_rounds:
        raise ValueError(f"round {t} is past max_rounds={config.max_rounds}")
    K = state.K
    if channel is not None:
        rc = channel.draw(t)
        state.rates = shannon_rate(channel.config, rc.inst_snr)
        ctx = ScheduleContext(K, rc.inst_snr, rc.avg_snr, state.mdp_state())
    else:
        rc = None
        ctx = ScheduleContext(K, state=state.mdp_state())
    decision = select_fraction(config.C, K, scheduler, t, ctx)
    selected = decision.selected

    profiles = state.profiles()

    def work(cid):
        return client_update(state.spec, state.params, state.clients[cid], config.E, config.B,
                             config.lr, _client_seed(config.seed, t, cid), profiles[cid])

    if executor is not None:
        results = list(executor.map(work, selected))
    else:
        results = [work(cid) for cid in selected]

    if rc is None:
        survivors = results
    else:
        thr = channel.config.snr_threshold
        survivors = [r for r in results if rc.inst_snr[r.client_id] > thr]
    noop = not survivors
    if not noop:
        rule = AggregationRule(config.aggregation,
                               config.lr if config.aggregation == "gradient_step" else None)
        state.params = aggregate(rule, state.params, survivors)

    acc, loss = evaluate(state.spec, state.params, state.test_set)
    for cid in selected:
        state.local_losses[cid] = state.quality_loss(state.clients[cid], state.params)
    indicator = decision.indicators(K)
    profiles = state.profiles()
    costs = cost_breakdown(profiles, selected)
    r = reward(profiles, indicator)
    state.prev_selected = indicator
    state.round += 1
    scheduler.observe(SelectionFeedback(r, state.mdp_state(), done=state.round >= config.max_rounds))

    rec = RoundRecord(
        round=state.round, selected=selected, uploads_ok=tuple(s.client_id for s in survivors),
        test_acc=acc, test_loss=loss, c_time=costs.c_time, c_qu=costs.c_qu,
        c_total=costs.c_time + costs.c_qu, reward=r, wallclock=time.perf_counter() - t0, noop=noop)
    state.history.append(rec)
    return rec


def run_federated(state: FederatedState, scheduler: Scheduler, channel: WirelessChannel | None,
                  config: FlConfig, workers: int = 1, on_round=None,
                  target: float | None = None) -> str:
    """Run rounds until a stop condition fires; return which one.

    Stop reasons: ``target`` (test accuracy reached target_accuracy),
    ``converged`` (test loss moved less than converge_tol for converge_patience
    consecutive rounds) or ``max_rounds``. ``target`` overrides
    ``config.target_accuracy`` and is not range-checked, so an unreachable
    value (e.g. 1.01) simply runs to the other stop conditions.
    """
    problems = config.violations()
    if problems:
        raise ValueError("; ".join(problems))
    if config.aggregation == "gradient_step" and (config.E != 1 or config.B is not None):
        warnings.warn("gradient_step aggregation is exact only for E=1 with full batches")
    executor = ThreadPoolExecutor(workers) if workers > 1 else None
    target = config.target_accuracy if target is None else target
    calm, prev_loss = 0, None
    try:
        while state.round < config.max_rounds:
            rec = run_round(state, scheduler, channel, config, executor)
            if on_round is not None:
                on_round(rec, state)
            if target is not None and rec.test_acc >= target:
                return "target"
            if prev_loss is not None and abs(rec.test_loss - prev_loss) < config.converge_tol:
                calm += 1
                if calm >= config.converge_patience:
                    return "converged"
            else:
                calm = 0
            prev_loss = rec.test_loss
    finally:
        if executor is not None:
            executor.shutdown()
    return "max_rounds"

"""Client scheduling strategies behind one small interface.

A scheduler is asked once per round for ``n`` devices via
``select(n, t, context)`` and is told the round's outcome afterwards via
``observe(feedback)``. Ties are always broken towards the lower device id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np


@dataclass(frozen=True)
class ScheduleDecision:
    round: int
    selected: tuple[int, ...]

    def __post_init__(self):
        sel = tuple(sorted(int(i) for i in self.selected))
        if len(set(sel)) != len(sel):
            raise ValueError(f"duplicate device ids in {sel}")
        object.__setattr__(self, "selected", sel)

    def indicators(self, K: int) -> np.ndarray:
        return indicators(self, K)


def indicators(decision: ScheduleDecision, K: int) -> np.ndarray:
    s = np.zeros(K, dtype=np.int64)
    s[list(decision.selected)] = 1
    return s


def top_n(scores, n: int) -> tuple[int, ...]:
    """Indices of the ``n`` largest scores, ties to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= n <= len(scores):
        raise ValueError(f"cannot pick {n} of {len(scores)}")
    return tuple(int(i) for i in np.argsort(-scores, kind="stable")[:n])


def schedule_random(K: int, n: int, seed: int, t: int) -> ScheduleDecision:
    if not 1 <= n <= K:
        raise ValueError(f"need 1 <= n <= K, got n={n}, K={K}")
    rng = np.random.default_rng([seed, t])
    return ScheduleDecision(t, tuple(rng.choice(K, size=n, replace=False)))


def cyclic_groups(K: int, G: int) -> list[tuple[int, ...]]:
    if not 1 <= G <= K:
        raise ValueError(f"need 1 <= G <= K, got G={G}, K={K}")
    return [tuple(int(i) for i in g) for g in np.array_split(np.arange(K), G)]


def schedule_cyclic(K: int, G: int, t: int) -> ScheduleDecision:
    return ScheduleDecision(t, cyclic_groups(K, G)[t % G])


def schedule_prop_fair(n: int, inst_snr, avg_snr, t: int = 0) -> ScheduleDecision:
    """Top-n devices by instantaneous / time-average SNR."""
    inst = np.asarray(inst_snr, dtype=np.float64)
    avg = np.asarray(avg_snr, dtype=np.float64)
    if inst.shape != avg.shape:
        raise ValueError("inst_snr and avg_snr lengths differ")
    if np.any(avg <= 0):
        raise ValueError("average SNR must be > 0 for every device")
    return ScheduleDecision(t, top_n(inst / avg, n))


@dataclass
class ScheduleContext:
    """What the round loop knows when it asks for a schedule."""

    K: int
    inst_snr: np.ndarray | None = None
    avg_snr: np.ndarray | None = None
    state: Any = None  # MDP state vector for learned schedulers


class Scheduler:
    kind = "base"

    def select(self, n: int, t: int, context: ScheduleContext) -> ScheduleDecision:
        raise NotImplementedError

    def observe(self, feedback) -> None:
        pass


class RandomScheduler(Scheduler):
    kind = "random"

    def __init__(self, seed: int):
        self.seed = seed

    def select(self, n, t, context):
        return schedule_random(context.K, n, self.seed, t)


class CyclicScheduler(Scheduler):
    """Ignores ``n``: each round serves the whole next group."""

    kind = "cyclic"

    def __init__(self, groups: int):
        self.groups = groups

    def select(self, n, t, context):
        return schedule_cyclic(context.K, self.groups, t)


class PropFairScheduler(Scheduler):
    kind = "prop_fair"

    def select(self, n, t, context):
        if context.inst_snr is None:
            raise ValueError("proportional fairness needs channel SNRs")
        return schedule_prop_fair(n, context.inst_snr, context.avg_snr, t)

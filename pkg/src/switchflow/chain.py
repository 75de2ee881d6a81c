"""Regime chain simulation and transition oracles.

Two samplers produce the same law: exponential holding times read off the
generator directly, and the Poisson-random-measure construction in which a
homogeneous Poisson clock of rate ``m0 (m0 - 1) K`` carries uniform marks
``z`` and the interval partition decides whether a mark triggers a jump.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .model import GeneratorMatrix
from ._rng import as_generator


@dataclass(frozen=True)
class PartitionTable:
    """Consecutive intervals ``[left, right)`` of length ``q_ij``, lexicographic in ``(i, j)``."""

    intervals: tuple[tuple[int, int, float, float], ...]
    total_length: float
    m0: int
    domain: float  # m0 (m0 - 1) K, the mark range of the Poisson measure


def build_partition(Q: GeneratorMatrix) -> PartitionTable:
    Q.check()
    m0 = Q.m0
    intervals = []
    left = 0.0
    for i in range(m0):
        for j in range(m0):
            if i == j:
                continue
            right = left + float(Q.q[i, j])
            intervals.append((i, j, left, right))
            left = right
    return PartitionTable(intervals=tuple(intervals), total_length=left, m0=m0,
                          domain=m0 * (m0 - 1) * Q.K)


def eval_g(table: PartitionTable, i: int, z: float) -> int:
    """Regime displacement ``j - i`` if ``z`` falls in an interval with source ``i``, else 0."""
    if z < 0:
        raise ValueError("marks are non-negative")
    for src, dst, left, right in table.intervals:
        if src == i and left <= z < right:
            return dst - i
    return 0


@dataclass(frozen=True)
class ChainPath:
    """A realisation of the regime process on ``[0, t_end]``.

    ``jump_times`` are strictly increasing; ``jump_targets[k]`` is the regime
    entered at ``jump_times[k]`` (the path is right-continuous).  Paths from
    the Poisson construction also keep every clock event, jumps or not.
    """

    t_end: float
    initial: int
    jump_times: tuple[float, ...] = ()
    jump_targets: tuple[int, ...] = ()
    poisson_events: tuple[tuple[float, float], ...] | None = None
    method: str = field(default="holding-times", compare=False)

    def __post_init__(self):
        if len(self.jump_times) != len(self.jump_targets):
            raise ValueError("jump_times and jump_targets differ in length")
        if any(b <= a for a, b in zip(self.jump_times, self.jump_times[1:])):
            raise ValueError("jump times must be strictly increasing")
        prev = self.initial
        for tgt in self.jump_targets:
            if tgt == prev:
                raise ValueError("each jump must change the regime")
            prev = tgt

    def regime_at(self, t: float) -> int:
        k = bisect_right(self.jump_times, t)
        return self.initial if k == 0 else self.jump_targets[k - 1]

    @property
    def final(self) -> int:
        return self.regime_at(self.t_end)

    def segments(self, t: float | None = None):
        """``(start, stop, regime)`` triples covering ``[0, t]``."""
        t = self.t_end if t is None else t
        cuts = [0.0] + [s for s in self.jump_times if s < t] + [t]
        regs = [self.initial] + list(self.jump_targets)
        return [(cuts[k], cuts[k + 1], regs[k]) for k in range(len(cuts) - 1)]

    def integrate(self, per_regime, t: float | None = None) -> float:
        """Exact ``int_0^t v(alpha_s) ds`` for a per-regime constant ``v``."""
        v = np.asarray(per_regime, dtype=float)
        return math.fsum((b - a) * v[r] for a, b, r in self.segments(t))

    def event_clock(self) -> tuple[float, ...]:
        if self.poisson_events is not None:
            return tuple(s for s, _ in self.poisson_events)
        return self.jump_times

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "regime"])
            w.writerow([repr(0.0), self.initial])
            for s, r in zip(self.jump_times, self.jump_targets):
                w.writerow([repr(float(s)), r])


def read_chain_csv(path, t_end: float) -> ChainPath:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    initial = int(rows[0][1])
    times = tuple(float(r[0]) for r in rows[1:])
    targets = tuple(int(r[1]) for r in rows[1:])
    return ChainPath(t_end=t_end, initial=initial, jump_times=times, jump_targets=targets)


def _holding_times(Q: GeneratorMatrix, initial, t_end, rng):
    q = Q.q
    times, targets = [], []
    t, cur = 0.0, initial
    while True:
        rate = -q[cur, cur]
        if rate <= 0:  # absorbing regime
            break
        t += rng.exponential(1.0 / rate)
        if t > t_end:
            break
        probs = np.where(np.arange(Q.m0) == cur, 0.0, q[cur]) / rate
        nxt = int(rng.choice(Q.m0, p=probs))
        times.append(t)
        targets.append(nxt)
        cur = nxt
    return ChainPath(t_end=t_end, initial=initial, jump_times=tuple(times),
                     jump_targets=tuple(targets), method="holding-times")


def _poisson_measure(Q: GeneratorMatrix, initial, t_end, rng):
    table = build_partition(Q)
    lam = table.domain
    events, times, targets = [], [], []
    cur = initial
    if lam > 0:
        t = 0.0
        while True:
            t += rng.exponential(1.0 / lam)
            if t > t_end:
                break
            z = rng.uniform(0.0, lam)
            events.append((t, z))
            step = eval_g(table, cur, z)
            if step:
                cur += step
                times.append(t)
                targets.append(cur)
    return ChainPath(t_end=t_end, initial=initial, jump_times=tuple(times),
                     jump_targets=tuple(targets), poisson_events=tuple(events), method="prm")


def simulate_chain(Q: GeneratorMatrix, initial: int, t_end: float, seed=None,
                   method: str = "holding-times") -> ChainPath:
    """Sample the regime path on ``[0, t_end]``.

    ``method`` is ``"holding-times"`` or ``"prm"``.  The same seed and method
    always reproduce the same path.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    Q.check()
    if not 0 <= initial < Q.m0:
        raise ValueError(f"initial regime {initial} outside 0..{Q.m0 - 1}")
    rng = as_generator(seed)
    if method == "holding-times":
        return _holding_times(Q, int(initial), float(t_end), rng)
    if method == "prm":
        return _poisson_measure(Q, int(initial), float(t_end), rng)
    raise ValueError(f"unknown chain method {method!r}")


def transition_matrix(Q: GeneratorMatrix, t: float) -> np.ndarray:
    """``exp(tQ)`` by scaling and squaring a truncated Taylor series."""
    if t < 0:
        raise ValueError("t must be non-negative")
    A = np.asarray(Q.q, dtype=float) * t
    m = A.shape[0]
    norm = np.max(np.sum(np.abs(A), axis=1))
    squarings = max(0, int(math.ceil(math.log2(norm / 0.25)))) if norm > 0.25 else 0
    A = A / 2.0**squarings
    term = np.eye(m)
    out = np.eye(m)
    for k in range(1, 20):
        term = term @ A / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def longest_constant_interval(path: ChainPath, t: float) -> tuple[float, float]:
    """Longest ``[T1, T2] within [0, t]`` free of clock events; earliest wins ties.

    The clock is the Poisson event sequence when the path carries one, the
    jump times otherwise.  With ``k`` events the result has length at least
    ``t / (k + 1)``.
    """
    if not 0 < t <= path.t_end:
        raise ValueError("need 0 < t <= t_end")
    cuts = [0.0] + sorted(s for s in path.event_clock() if 0 < s < t) + [t]
    best = (cuts[0], cuts[1])
    for a, b in zip(cuts[1:], cuts[2:]):
        if b - a > best[1] - best[0]:
            best = (a, b)
    return best

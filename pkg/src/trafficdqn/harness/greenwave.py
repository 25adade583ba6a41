"""Green-wave detection on a recorded artery trajectory.

Two detectors are reported:

* phase-offset chains: a vehicle leaves intersection ``n`` eastbound at slot
  ``t`` and intersection ``n + 1`` shows artery green when that vehicle can
  first be served there, ``hop`` slots later; links are followed as long as
  both hold.  Westbound chains are the mirror image.
* consecutive reductions: the eastbound queue of ``n`` shrinks over slot
  ``t``, the one of ``n + 1`` over slot ``t + hop``, and so on.

A vehicle departing at slot ``t`` joins the next queue at the end of slot
``t + u`` and can leave it at ``t + u + 1`` at the earliest, so the default
hop is ``u + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..traffic import EAST, GREEN_1, WEST
from .rollouts import Trajectory


@dataclass(frozen=True)
class Chain:
    direction: str       # "east" or "west"
    start: int           # intersection index where the chain starts
    step: int            # slot of the first departure / reduction
    length: int          # number of intersections covered


@dataclass
class GreenwaveReport:
    hop: int
    min_chain: int
    steps: int
    chains: list[Chain] = field(default_factory=list)
    reductions: list[Chain] = field(default_factory=list)
    window: int = 1000

    def counts(self) -> dict:
        out = {}
        for kind in ("chains", "reductions"):
            for d in ("east", "west"):
                out[f"{kind}_{d}"] = sum(c.direction == d for c in getattr(self, kind))
            out[kind] = len(getattr(self, kind))
        return out

    def window_counts(self) -> list[dict]:
        n_win = -(-self.steps // self.window)
        rows = [{"window_start": w * self.window, "chains": 0, "reductions": 0} for w in range(n_win)]
        for kind in ("chains", "reductions"):
            for c in getattr(self, kind):
                rows[c.step // self.window][kind] += 1
        return rows

    def to_json(self) -> dict:
        return {
            "hop": self.hop, "min_chain": self.min_chain, "steps": self.steps,
            "counts": self.counts(), "windows": self.window_counts(),
            "chains": [vars(c) for c in self.chains],
            "reductions": [vars(c) for c in self.reductions],
        }


def _runs(events: np.ndarray, hop: int, min_len: int, direction: str, flip: bool) -> list[Chain]:
    """Maximal diagonal runs in a boolean (T, M) link/event table.

    A run starting at ``(t, n)`` continues through ``(t + hop, n + 1)`` etc.
    The run length in intersections is ``len + extra`` where ``extra`` is 1 for
    link tables (a link joins two intersections) and 0 for event tables.
    """
    T, M = events.shape
    run = np.zeros((T + hop, M + 1), dtype=np.int64)
    for t in range(T - 1, -1, -1):
        for n in range(M - 1, -1, -1):
            if events[t, n]:
                run[t, n] = 1 + run[t + hop, n + 1]
    out = []
    for t, n in zip(*np.nonzero(run[:T, :M])):
        if t >= hop and n >= 1 and events[t - hop, n - 1]:
            continue  # suffix of a longer run
        length = int(run[t, n])
        if length >= min_len:
            out.append((int(t), int(n), length))
    out.sort()
    return [Chain(direction, (M - 1 - n) if flip else n, t, length) for t, n, length in out]


def _oriented(traj: Trajectory, direction: str):
    """Queues, departures and green mask with intersections ordered along travel."""
    d = EAST if direction == "east" else WEST
    q, dep, green = traj.queues[:, :, d], traj.departures[:, :, d], traj.phases == GREEN_1
    if direction == "west":
        q, dep, green = q[:, ::-1], dep[:, ::-1], green[:, ::-1]
    return q, dep, green


def detect_greenwave(traj: Trajectory, u: int | None = None, min_chain: int = 3,
                     hop: int | None = None, window: int = 1000) -> GreenwaveReport:
    u = traj.travel_delay if u is None else u
    hop = u + 1 if hop is None else hop
    if min_chain < 2 or hop < 1:
        raise ValueError("min_chain must be >= 2 and hop >= 1")
    T, N = traj.actions.shape[0], traj.phases.shape[1]
    if T < min_chain * u + 1:
        raise ValueError(f"trajectory has {T} steps; need at least {min_chain * u + 1}")
    report = GreenwaveReport(hop, min_chain, T, window=window)
    for direction in ("east", "west"):
        q, dep, green = _oriented(traj, direction)
        flip = direction == "west"
        # link (t, n): departure from n at t, artery green at n + 1 at t + hop
        links = np.zeros((T, max(N - 1, 0)), dtype=bool)
        if T > hop:
            links[:T - hop] = (dep[:T - hop, :-1] > 0) & green[hop:T, 1:]
        for c in _runs(links, hop, min_chain - 1, direction, False):
            start = (N - 1 - c.start) if flip else c.start
            report.chains.append(Chain(direction, start, c.step, c.length + 1))
        dec = q[1:T + 1] < q[:T]
        report.reductions.extend(_runs(dec, hop, min_chain, direction, flip))
    report.chains.sort(key=lambda c: (c.step, c.direction, c.start))
    report.reductions.sort(key=lambda c: (c.step, c.direction, c.start))
    return report


def verify_chain(traj: Trajectory, chain: Chain, hop: int) -> bool:
    """Re-check a reported phase-offset chain directly against the trajectory."""
    d, sign = (EAST, 1) if chain.direction == "east" else (WEST, -1)
    for j in range(1, chain.length):
        prev, n = chain.start + sign * (j - 1), chain.start + sign * j
        t = chain.step + j * hop
        if traj.departures[t - hop, prev, d] <= 0 or traj.phases[t, n] != GREEN_1:
            return False
    return True


def verify_reduction(traj: Trajectory, run: Chain, hop: int) -> bool:
    d, sign = (EAST, 1) if run.direction == "east" else (WEST, -1)
    for j in range(run.length):
        n, t = run.start + sign * j, run.step + j * hop
        if not traj.queues[t + 1, n, d] < traj.queues[t, n, d]:
            return False
    return True


def compare(agent: GreenwaveReport, baseline: GreenwaveReport) -> dict:
    a, b = agent.counts(), baseline.counts()
    return {k: a[k] - b[k] for k in a}

"""Plain-text frames of a trajectory, one per slot, and the matching parser.

Frame layout::

    t=000012
    #1 G= E:  3 S:  0 W:  1 N:  2
    #2 Y| E:  0 S:  4 W:  0 N:  1

Phase glyphs: ``G=``/``Y=`` artery green/yellow, ``G|``/``Y|`` cross-street
green/yellow.  Counts wider than three digits widen the field.
"""
from __future__ import annotations

import re

import numpy as np

from .rollouts import Trajectory

GLYPHS = {0: "G=", 1: "Y=", 2: "G|", 3: "Y|"}
_PHASE = {g: y for y, g in GLYPHS.items()}
_ROW = re.compile(r"^#(\d+) (G=|Y=|G\||Y\|) E:\s*(\d+) S:\s*(\d+) W:\s*(\d+) N:\s*(\d+)$")


def render_frame(t: int, queues, phases) -> str:
    lines = [f"t={t:06d}"]
    for n, (q, y) in enumerate(zip(np.asarray(queues), np.asarray(phases)), start=1):
        e, s, w, no = (int(v) for v in q)
        lines.append(f"#{n} {GLYPHS[int(y)]} E:{e:3d} S:{s:3d} W:{w:3d} N:{no:3d}")
    return "\n".join(lines)


def render_ascii(traj: Trajectory, start: int = 0, stop: int | None = None) -> str:
    """Frames for states ``start .. stop - 1`` (``stop`` defaults to the last state + 1)."""
    n_states = len(traj.phases)
    stop = n_states if stop is None else stop
    if not 0 <= start < stop <= n_states:
        raise IndexError(f"range [{start}, {stop}) outside trajectory of {n_states} states")
    return "\n\n".join(render_frame(t, traj.queues[t], traj.phases[t]) for t in range(start, stop)) + "\n"


def parse_frames(text: str) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Inverse of :func:`render_ascii`: ``[(t, queues (N, 4), phases (N,)), ...]``."""
    frames = []
    for block in text.strip().split("\n\n"):
        head, *rows = block.splitlines()
        if not head.startswith("t="):
            raise ValueError(f"bad frame header {head!r}")
        q, y = [], []
        for row in rows:
            m = _ROW.match(row)
            if m is None:
                raise ValueError(f"bad frame row {row!r}")
            y.append(_PHASE[m.group(2)])
            q.append([int(m.group(i)) for i in range(3, 7)])
        frames.append((int(head[2:]), np.array(q, dtype=np.int64), np.array(y, dtype=np.int64)))
    return frames

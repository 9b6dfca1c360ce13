"""A timestamped sequence of positions in the approach frame, with optional channels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Trajectory:
    """Positions ``(x_lateral, x_glideslope, l)`` (or ``(x, y, l)`` for synthetic data).

    ``channels`` maps names such as ``"S_x"`` to per-sample values.
    """

    points: np.ndarray
    channels: dict = field(default_factory=dict)
    times: np.ndarray | None = None
    ident: str = ""
    wake: str | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[1] != 3:
            raise ValueError("trajectory points must have three columns")
        n = len(self.points)
        self.channels = {k: np.asarray(v, dtype=float).ravel() for k, v in self.channels.items()}
        for k, v in self.channels.items():
            if len(v) != n:
                raise ValueError(f"channel {k!r} has {len(v)} values for {n} points")
        if self.times is not None:
            self.times = np.asarray(self.times, dtype=float).ravel()
            if len(self.times) != n:
                raise ValueError("times must align with points")

    def __len__(self):
        return len(self.points)

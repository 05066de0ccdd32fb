"""Grid geometry and the solved fields it carries."""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .._io import atomic_writer


@dataclass(frozen=True)
class SolverGrid:
    """Uniform (t, S, q) grid; node ``(k, i, j)`` sits at ``(k dt, i ds, j dq)``."""

    T: float = 1.0
    s_max: float = 300.0
    q_max: float = 1.0
    n_t: int = 360
    n_s: int = 10
    n_q: int = 100

    def __post_init__(self):
        for name in ("n_t", "n_s", "n_q"):
            value = getattr(self, name)
            if int(value) != value or value < 2:
                raise ValueError(f"{name} must be an integer >= 2, got {value}")
            object.__setattr__(self, name, int(value))
        for name in ("T", "s_max", "q_max"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value}")
            object.__setattr__(self, name, float(value))

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def ds(self) -> float:
        return self.s_max / self.n_s

    @property
    def dq(self) -> float:
        return self.q_max / self.n_q

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_t + 1, self.n_s + 1, self.n_q + 1)

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_t + 1) * self.dt

    @property
    def s(self) -> np.ndarray:
        return np.arange(self.n_s + 1) * self.ds

    @property
    def q(self) -> np.ndarray:
        return np.arange(self.n_q + 1) * self.dq

    @property
    def i_mid(self) -> int:
        """Price index where the reported policy is read."""
        return self.n_s // 2

    def rate_cap(self, factor: float = 1.0) -> np.ndarray:
        """Per-inventory-node rate bound ``factor * j dq / dt``."""
        return factor * self.q / self.dt

    def refined(self, axis: str, factor: int = 2) -> "SolverGrid":
        key = {"t": "n_t", "s": "n_s", "q": "n_q"}[axis]
        return dataclasses.replace(self, **{key: getattr(self, key) * factor})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True, eq=False)
class ValueSurface:
    """``H[k, i, j]`` on a :class:`SolverGrid`.

    ``terminal`` records how the last step was treated (see ``solve``).
    """

    H: np.ndarray
    grid: SolverGrid
    penalty: float
    terminal: str = "penalty"

    def __post_init__(self):
        self.H.setflags(write=False)

    @property
    def implicit_layers(self) -> int:
        """Layers ``k < implicit_layers`` came out of the implicit row solves."""
        return self.grid.n_t - (self.terminal == "liquidate")

    def at_time(self, k: int = 0) -> np.ndarray:
        return self.H[k]

    def interior(self, k: int = 0) -> np.ndarray:
        """Values at interior price nodes and q > 0."""
        return self.H[k, 1:-1, 1:]

    def to_csv(self, path) -> Path:
        g = self.grid
        kk, ii, jj = np.meshgrid(
            np.arange(g.n_t + 1), np.arange(g.n_s + 1), np.arange(g.n_q + 1), indexing="ij"
        )
        with atomic_writer(path) as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "i", "j", "H"])
            for row in zip(kk.ravel(), ii.ravel(), jj.ravel(), self.H.ravel()):
                writer.writerow([int(row[0]), int(row[1]), int(row[2]), repr(float(row[3]))])
        return Path(path)


@dataclass(frozen=True, eq=False)
class PolicySurface:
    """Optimal rate ``nu[k, j]`` read at the mid price.

    ``by_price`` holds the full ``nu[k, i, j]`` when the solve ran in
    diagnostic mode, else None.
    """

    nu: np.ndarray
    grid: SolverGrid
    cap_factor: float = 1.0
    by_price: np.ndarray | None = None

    def __post_init__(self):
        self.nu.setflags(write=False)
        if self.by_price is not None:
            self.by_price.setflags(write=False)

    def rate(self, k: int, q: float) -> float:
        """Rate at time index ``k``, linearly interpolated in inventory."""
        g = self.grid
        if not 0 <= q <= g.q_max * (1 + 1e-12):
            raise ValueError(f"inventory {q} outside [0, {g.q_max}]")
        return float(np.interp(q, g.q, self.nu[k]))

    def to_csv(self, path) -> Path:
        g = self.grid
        with atomic_writer(path) as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "j", "nu"])
            for k in range(g.n_t + 1):
                for j in range(g.n_q + 1):
                    writer.writerow([k, j, repr(float(self.nu[k, j]))])
        return Path(path)


@dataclass(frozen=True, eq=False)
class PolicyPath:
    """Forward-integrated ``(t_k, nu_k, q_k)``; ``q[k+1] = q[k] - nu[k] dt``."""

    t: np.ndarray
    nu: np.ndarray
    q: np.ndarray
    label: str = ""

    def __len__(self):
        return len(self.t)

    def inventory_fraction(self) -> np.ndarray:
        return self.q / self.q[0]

    def to_csv(self, path) -> Path:
        with atomic_writer(path) as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "nu", "q"])
            for row in zip(self.t, self.nu, self.q):
                writer.writerow([repr(float(x)) for x in row])
        return Path(path)

    @classmethod
    def from_csv(cls, path, label: str = "") -> "PolicyPath":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(t=data[:, 0], nu=data[:, 1], q=data[:, 2], label=label)

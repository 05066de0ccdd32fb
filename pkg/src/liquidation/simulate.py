"""Replay liquidation schedules against recorded books under full resilience.

Every step executes a market sell against that step's snapshot as recorded;
whatever the previous step consumed has been replenished.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._io import atomic_writer, write_json
from .hjb.grid import PolicyPath
from .lob import LobSnapshot, fills

DEFAULT_TAU = 5.0
DEFAULT_HORIZON = 1800.0
DEFAULT_UPSILON = 4000.0
ON_INSUFFICIENT = ("carry", "fail")
NS_LABEL = "NS"


class ReplayError(RuntimeError):
    pass


def _grid_fraction(n_steps: int) -> np.ndarray:
    return np.arange(n_steps + 1) / n_steps


QUANTUM_BITS = 40


def _slices(remaining: np.ndarray, upsilon: float) -> np.ndarray:
    """Per-step shares from an inventory-fraction path.

    Cumulative sales are rounded to multiples of ``2**-40`` times the leading
    power of two of ``upsilon``; every slice is then exact in floating point
    and the slices add up to ``upsilon`` bit for bit.
    """
    quantum = 2.0 ** (math.frexp(upsilon)[1] - QUANTUM_BITS)
    sold = upsilon * (1.0 - np.clip(remaining, 0.0, 1.0))
    sold = np.round(np.maximum.accumulate(sold) / quantum) * quantum
    sold[0] = 0.0
    sold[-1] = upsilon
    return np.diff(np.minimum(sold, upsilon))


class Strategy:
    label: str

    def schedule(self, n_steps: int, upsilon: float) -> np.ndarray:
        """Shares to sell at each of the ``n_steps`` execution instants."""
        raise NotImplementedError


@dataclass(frozen=True)
class Naive(Strategy):
    """Everything in one market order at step ``index`` (default: the last step)."""

    index: int | None = None
    label: str = NS_LABEL

    def schedule(self, n_steps, upsilon):
        k = n_steps - 1 if self.index is None else self.index
        if not 0 <= k < n_steps:
            raise ValueError(f"naive execution index {k} outside the window of {n_steps} steps")
        out = np.zeros(n_steps)
        out[k] = upsilon
        return out


@dataclass(frozen=True)
class ParametricInventory(Strategy):
    """Inventory ``q(t) = upsilon (1 - (t/T)^d2)``: d2 > 1 concave, d2 < 1 convex."""

    d2: float
    label: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.d2) and self.d2 > 0):
            raise ValueError(f"d2 must be > 0, got {self.d2}")
        if not self.label:
            object.__setattr__(self, "label", f"d2={self.d2:g}")

    def inventory(self, s):
        """Remaining fraction at normalized time ``s`` in [0, 1]."""
        return 1.0 - np.asarray(s, dtype=float) ** self.d2

    def schedule(self, n_steps, upsilon):
        return _slices(self.inventory(_grid_fraction(n_steps)), upsilon)


@dataclass(frozen=True, eq=False)
class NumericPolicy(Strategy):
    """A solver policy path mapped onto the replay window.

    Path time ``[0, T]`` maps to the horizon and the inventory fraction
    ``q / q0`` maps to ``upsilon`` shares; the fraction is linearly interpolated
    when the path and the window have different step counts.
    """

    path: PolicyPath
    label: str = ""

    def __post_init__(self):
        if not self.label:
            object.__setattr__(self, "label", self.path.label or "policy")
        if self.path.q[0] <= 0:
            raise ValueError("policy path must start with positive inventory")

    def schedule(self, n_steps, upsilon):
        t = self.path.t / self.path.t[-1]
        frac = np.interp(_grid_fraction(n_steps), t, self.path.q / self.path.q[0])
        return _slices(frac, upsilon)


def snapshot_fingerprint(snapshots: Sequence[LobSnapshot]) -> str:
    h = hashlib.sha256()
    for snap in snapshots:
        h.update(np.float64(snap.ts).tobytes())
        h.update(snap.bids.tobytes())
        h.update(snap.asks.tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class ExecutionReport:
    label: str
    t: np.ndarray
    shares: np.ndarray
    price: np.ndarray
    revenue_steps: np.ndarray
    revenue: float
    upsilon: float
    tau: float
    horizon: float
    fingerprint: str
    unfilled: float = 0.0
    diagnostics: tuple = ()
    ratio: float | None = None

    @property
    def filled(self) -> float:
        return math.fsum(self.shares)

    @property
    def config(self) -> tuple:
        return (self.upsilon, self.tau, self.horizon, self.fingerprint)

    def with_ratio(self, baseline: "ExecutionReport") -> "ExecutionReport":
        if self.config != baseline.config:
            raise ValueError(f"{self.label} and {baseline.label} were replayed under different settings")
        return ExecutionReport(**{**self.__dict__, "ratio": self.revenue / baseline.revenue})

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "revenue": self.revenue,
            "ratio_vs_NS": self.ratio,
            "upsilon": self.upsilon,
            "tau": self.tau,
            "horizon": self.horizon,
            "snapshots": self.fingerprint,
            "filled": self.filled,
            "unfilled": self.unfilled,
            "diagnostics": list(self.diagnostics),
            "steps": [
                {"t": float(t), "shares": float(s), "price": float(p), "revenue": float(r)}
                for t, s, p, r in zip(self.t, self.shares, self.price, self.revenue_steps)
                if s > 0
            ],
        }


def replay(
    strategy: Strategy,
    snapshots: Sequence[LobSnapshot],
    upsilon: float = DEFAULT_UPSILON,
    tau: float = DEFAULT_TAU,
    horizon: float = DEFAULT_HORIZON,
    on_insufficient: str = "carry",
    baseline: ExecutionReport | None = None,
) -> ExecutionReport:
    """Execute ``strategy`` over the first ``horizon / tau`` snapshots.

    A step asking for more than the visible bid depth either raises
    (``on_insufficient="fail"``) or sells the whole side and carries the
    remainder into the next step; a remainder left after the last step is
    reported as ``unfilled``.
    """
    if not (math.isfinite(upsilon) and upsilon > 0):
        raise ValueError("upsilon must be > 0")
    if not (tau > 0 and horizon > 0):
        raise ValueError("tau and horizon must be > 0")
    if on_insufficient not in ON_INSUFFICIENT:
        raise ValueError(f"on_insufficient must be one of {ON_INSUFFICIENT}")
    n_steps = int(round(horizon / tau))
    if n_steps < 1 or not math.isclose(n_steps * tau, horizon, rel_tol=1e-9):
        raise ValueError(f"horizon {horizon} is not a whole number of {tau}-second steps")
    if len(snapshots) < n_steps:
        raise ValueError(f"need {n_steps} snapshots to cover the horizon, got {len(snapshots)}")

    plan = strategy.schedule(n_steps, upsilon)
    shares = np.zeros(n_steps)
    price = np.zeros(n_steps)
    revenue = np.zeros(n_steps)
    diagnostics = []
    carry = 0.0
    for k in range(n_steps):
        want = plan[k] + carry
        if want <= 0:
            continue
        book = snapshots[k]
        depth = book.bid_depth
        if want > depth:
            if on_insufficient == "fail":
                raise ReplayError(
                    f"{strategy.label}: step {k} needs {want:g} shares, book holds {depth:g}"
                )
            diagnostics.append(f"step {k}: wanted {want:g}, filled {depth:g}, carried {want - depth:g}")
            q = depth
        else:
            q = want
        carry = want - q
        f = fills(book, q)
        shares[k] = q
        revenue[k] = float(np.dot(book.bids[:, 0], f))
        price[k] = revenue[k] / q
    if carry > 0:
        diagnostics.append(f"unfilled after the last step: {carry:g}")
    report = ExecutionReport(
        label=strategy.label,
        t=np.arange(n_steps) * tau,
        shares=shares,
        price=price,
        revenue_steps=revenue,
        revenue=math.fsum(revenue),
        upsilon=float(upsilon),
        tau=float(tau),
        horizon=float(horizon),
        fingerprint=snapshot_fingerprint(snapshots[:n_steps]),
        unfilled=carry,
        diagnostics=tuple(diagnostics),
    )
    return report.with_ratio(baseline) if baseline is not None else report


@dataclass(frozen=True)
class RankingRow:
    label: str
    revenue: float
    ratio: float


def compare_strategies(reports: Sequence[ExecutionReport], baseline: ExecutionReport) -> list[RankingRow]:
    """Revenue ratios against ``baseline``, best first, ties by label."""
    rows = [RankingRow(r.label, r.revenue, r.with_ratio(baseline).ratio) for r in reports]
    return sorted(rows, key=lambda r: (-r.ratio, r.label))


def write_ranking_csv(path, rows: Sequence[RankingRow]) -> Path:
    with atomic_writer(path) as fh:
        w = csv.writer(fh)
        w.writerow(["label", "revenue", "ratio_vs_NS"])
        for r in rows:
            w.writerow([r.label, repr(r.revenue), repr(r.ratio)])
    return Path(path)


def inventory_sweep(
    d2_values: Sequence[float],
    snapshots: Sequence[LobSnapshot],
    upsilon: float = DEFAULT_UPSILON,
    tau: float = DEFAULT_TAU,
    horizon: float = DEFAULT_HORIZON,
    baseline: Strategy | None = None,
    on_insufficient: str = "carry",
) -> list[tuple[float, float]]:
    """``(d2, revenue ratio vs NS)`` for each exponent."""
    d2_values = [float(d) for d in d2_values]
    if any(not d > 0 for d in d2_values):
        raise ValueError("all d2 values must be > 0")
    kw = dict(upsilon=upsilon, tau=tau, horizon=horizon, on_insufficient=on_insufficient)
    base = replay(baseline or Naive(), snapshots, **kw)
    return [(d, replay(ParametricInventory(d), snapshots, baseline=base, **kw).ratio) for d in d2_values]


@dataclass(frozen=True)
class UpsilonSweep:
    upsilons: tuple
    labels: tuple
    ratios: np.ndarray  # (len(labels), len(upsilons))
    rankings: tuple = field(default=())

    @property
    def best(self) -> list[str]:
        return [r[0] for r in self.rankings]

    @property
    def worst(self) -> list[str]:
        return [r[-1] for r in self.rankings]

    def write_csv(self, path) -> Path:
        with atomic_writer(path) as fh:
            w = csv.writer(fh)
            w.writerow(["label"] + [f"{u:g}" for u in self.upsilons])
            for label, row in zip(self.labels, self.ratios):
                w.writerow([label] + [repr(float(x)) for x in row])
        return Path(path)


def upsilon_sweep(
    strategies: Sequence[Strategy],
    snapshots: Sequence[LobSnapshot],
    upsilon_values: Sequence[float],
    tau: float = DEFAULT_TAU,
    horizon: float = DEFAULT_HORIZON,
    baseline: Strategy | None = None,
    on_insufficient: str = "carry",
) -> UpsilonSweep:
    ups = [float(u) for u in upsilon_values]
    if not ups or any(b <= a for a, b in zip(ups, ups[1:])):
        raise ValueError("upsilon values must be strictly increasing")
    ratios = np.zeros((len(strategies), len(ups)))
    rankings = []
    for c, u in enumerate(ups):
        kw = dict(upsilon=u, tau=tau, horizon=horizon, on_insufficient=on_insufficient)
        base = replay(baseline or Naive(), snapshots, **kw)
        reports = [replay(s, snapshots, **kw) for s in strategies]
        for r, rep in enumerate(reports):
            ratios[r, c] = rep.with_ratio(base).ratio
        rankings.append(tuple(row.label for row in compare_strategies(reports, base)))
    return UpsilonSweep(tuple(ups), tuple(s.label for s in strategies), ratios, tuple(rankings))


def write_reports_json(path, reports: Sequence[ExecutionReport]) -> Path:
    return write_json(path, {"reports": [r.to_dict() for r in reports]})

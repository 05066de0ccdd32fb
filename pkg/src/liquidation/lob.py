"""Order-book snapshots, walk-the-book pricing and empirical impact curves.

Only the bid side is measured: a seller hits resting bids best-first.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._io import atomic_writer

DEFAULT_DEPTH = 100
DEFAULT_TAU = 5.0
SIDES = ("bid",)
DEPTH_POLICIES = ("skip", "saturate")


class InsufficientLiquidityError(ValueError):
    """The requested volume needs more shares than the book side holds."""


class SnapshotParseError(ValueError):
    def __init__(self, message, line=None, field=None):
        where = f"line {line}" if line is not None else "snapshot"
        if field is not None:
            where += f", field {field!r}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.field = field


def _levels(raw, name: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=float)
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must be a list of [price, qty] pairs")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class LobSnapshot:
    """One book snapshot. ``bids`` descend in price, ``asks`` ascend."""

    ts: float
    bids: np.ndarray
    asks: np.ndarray
    depth: int = DEFAULT_DEPTH

    def __post_init__(self):
        bids = _levels(self.bids, "bids")
        asks = _levels(self.asks, "asks")
        if not math.isfinite(self.ts):
            raise ValueError("timestamp must be finite")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if len(bids) == 0 or len(asks) == 0:
            raise ValueError("both sides need at least one level")
        if len(bids) > self.depth or len(asks) > self.depth:
            raise ValueError(f"more than {self.depth} levels on one side")
        if np.any(bids[:, 1] <= 0) or np.any(asks[:, 1] <= 0):
            raise ValueError("level quantities must be > 0")
        if np.any(np.diff(bids[:, 0]) >= 0):
            raise ValueError("bid prices must be strictly decreasing")
        if np.any(np.diff(asks[:, 0]) <= 0):
            raise ValueError("ask prices must be strictly increasing")
        if bids[0, 0] >= asks[0, 0]:
            raise ValueError("crossed book: best bid >= best ask")
        bids.setflags(write=False)
        asks.setflags(write=False)
        object.__setattr__(self, "bids", bids)
        object.__setattr__(self, "asks", asks)
        object.__setattr__(self, "ts", float(self.ts))

    @property
    def best_bid(self) -> float:
        return float(self.bids[0, 0])

    @property
    def best_ask(self) -> float:
        return float(self.asks[0, 0])

    @property
    def mid(self) -> float:
        return 0.5 * (self.best_bid + self.best_ask)

    @property
    def spread(self) -> float:
        return self.best_ask - self.best_bid

    @property
    def bid_depth(self) -> float:
        return float(self.bids[:, 1].sum())

    def to_dict(self) -> dict:
        return {"ts": self.ts, "bids": self.bids.tolist(), "asks": self.asks.tolist()}

    @classmethod
    def from_dict(cls, payload: dict, depth: int = DEFAULT_DEPTH) -> "LobSnapshot":
        return cls(payload["ts"], payload["bids"], payload["asks"], depth)


def parse_snapshot_line(text: str, line: int | None = None, depth: int = DEFAULT_DEPTH) -> LobSnapshot:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SnapshotParseError(f"invalid JSON ({exc.msg} at column {exc.colno})", line) from None
    if not isinstance(payload, dict):
        raise SnapshotParseError("expected a JSON object", line)
    for key in ("ts", "bids", "asks"):
        if key not in payload:
            raise SnapshotParseError("missing", line, key)
    if not isinstance(payload["ts"], (int, float)) or isinstance(payload["ts"], bool):
        raise SnapshotParseError("must be a number", line, "ts")
    for key in ("bids", "asks"):
        try:
            _levels(payload[key], key)
        except (TypeError, ValueError) as exc:
            raise SnapshotParseError(str(exc), line, key) from None
    try:
        return LobSnapshot.from_dict(payload, depth)
    except ValueError as exc:
        msg = str(exc)
        fld = "bids" if "bid" in msg else "asks" if "ask" in msg else None
        raise SnapshotParseError(msg, line, fld) from None


def read_snapshots(path, depth: int = DEFAULT_DEPTH) -> list[LobSnapshot]:
    """Load a JSON Lines snapshot file; blank lines are ignored."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if text.strip():
                out.append(parse_snapshot_line(text, lineno, depth))
    if not out:
        raise SnapshotParseError(f"no snapshots in {path}")
    return out


def write_snapshots(path, snapshots: Iterable[LobSnapshot]) -> Path:
    with atomic_writer(path) as fh:
        for snap in snapshots:
            fh.write(json.dumps(snap.to_dict()) + "\n")
    return Path(path)


def _check_side(side: str):
    if side not in SIDES:
        raise ValueError(f"only the bid side is supported, got {side!r}")


def fills(book: LobSnapshot, Q: float, side: str = "bid") -> np.ndarray:
    """Shares taken from each level when selling ``Q`` best-first."""
    _check_side(side)
    if not (math.isfinite(Q) and Q > 0):
        raise ValueError(f"volume must be positive, got {Q}")
    qty = book.bids[:, 1]
    total = qty.sum()
    if Q > total:
        raise InsufficientLiquidityError(f"volume {Q} exceeds bid depth {total}")
    before = np.concatenate(([0.0], np.cumsum(qty)[:-1]))
    out = np.clip(Q - before, 0.0, qty)
    # absorb rounding so the fills add up to Q exactly
    last = int(np.searchsorted(np.cumsum(qty), Q))
    last = min(last, len(qty) - 1)
    out[last] = Q - (out[:last].sum() + out[last + 1:].sum())
    return out


def execution_price(book: LobSnapshot, Q: float, side: str = "bid") -> float:
    """Volume-weighted price of a market sell of ``Q`` shares."""
    f = fills(book, Q, side)
    vwap = float(np.dot(book.bids[:, 0], f) / Q)
    # an average of the touched prices stays within them despite rounding
    worst = float(book.bids[np.flatnonzero(f)[-1], 0])
    return min(max(vwap, worst), book.best_bid)


def measure_tpi(book: LobSnapshot, Q: float) -> float:
    """Execution price minus best bid; never positive."""
    return execution_price(book, Q) - book.best_bid


def _bid_after(book: LobSnapshot, Q: float) -> float:
    cum = np.cumsum(book.bids[:, 1])
    idx = int(np.searchsorted(cum, Q, side="right"))
    if idx >= len(cum):
        raise InsufficientLiquidityError(f"volume {Q} empties the bid side (depth {cum[-1]})")
    return float(book.bids[idx, 0])


def measure_ppi(book: LobSnapshot, Q: float) -> float:
    """Mid after the sell minus mid before; never positive."""
    if not (math.isfinite(Q) and Q > 0):
        raise ValueError(f"volume must be positive, got {Q}")
    return 0.5 * (_bid_after(book, Q) + book.best_ask) - book.mid


def _saturated(book: LobSnapshot, Q: float) -> tuple[float, float]:
    """Impact of a volume beyond the visible depth: the whole side is consumed and
    the deepest visible price is taken as the new bid."""
    qty = book.bids[:, 1]
    tpi = float(np.dot(book.bids[:, 0], qty) / qty.sum()) - book.best_bid
    ppi = 0.5 * (float(book.bids[-1, 0]) + book.best_ask) - book.mid
    return tpi, ppi


@dataclass(frozen=True)
class ImpactSample:
    rate: float
    tpi: float
    ppi: float
    count: int
    skipped: int = 0
    saturated: int = 0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be > 0")
        if self.count < 1:
            raise ValueError("an impact sample needs at least one measurement")
        if not (math.isfinite(self.tpi) and math.isfinite(self.ppi)):
            raise ValueError("impact means must be finite")


@dataclass(frozen=True)
class ImpactCurve:
    """Mean impacts per ladder volume plus the volumes that never measured."""

    samples: tuple[ImpactSample, ...]
    tau: float
    errors: dict = field(default_factory=dict)

    @property
    def rates(self) -> np.ndarray:
        return np.array([s.rate for s in self.samples])

    @property
    def tpi(self) -> np.ndarray:
        return np.array([s.tpi for s in self.samples])

    @property
    def ppi(self) -> np.ndarray:
        return np.array([s.ppi for s in self.samples])

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "samples": [s.__dict__ for s in self.samples],
            "errors": {repr(k): v for k, v in self.errors.items()},
        }


def volume_ladder(nu_max: float, tau: float = DEFAULT_TAU, m: int = 50) -> np.ndarray:
    """``Q_i = i nu_max tau / m`` for i = 1..m."""
    if not (nu_max > 0 and tau > 0):
        raise ValueError("nu_max and tau must be > 0")
    if m < 2:
        raise ValueError("the ladder needs m >= 2 volumes")
    return np.arange(1, m + 1) * (nu_max * tau / m)


def impact_curve(
    snapshots: Sequence[LobSnapshot],
    volumes: Sequence[float],
    tau: float = DEFAULT_TAU,
    depth_policy: str = "skip",
) -> ImpactCurve:
    """Average TPI and PPI of each volume over the snapshots.

    With ``depth_policy="skip"`` a snapshot too thin for a volume is left out of
    that volume's mean. ``"saturate"`` instead charges the impact of consuming
    the whole visible side, so impact stops growing past the book's depth.
    """
    volumes = np.asarray(volumes, dtype=float)
    if len(snapshots) == 0:
        raise ValueError("no snapshots")
    if volumes.ndim != 1 or len(volumes) < 2:
        raise ValueError("need at least two volumes")
    if np.any(volumes <= 0) or np.any(np.diff(volumes) <= 0):
        raise ValueError("volumes must be positive and strictly increasing")
    if not tau > 0:
        raise ValueError("tau must be > 0")
    if depth_policy not in DEPTH_POLICIES:
        raise ValueError(f"depth_policy must be one of {DEPTH_POLICIES}")

    samples, errors = [], {}
    for Q in volumes:
        tpi_sum = ppi_sum = 0.0
        count = skipped = saturated = 0
        for book in snapshots:
            try:
                tpi = measure_tpi(book, Q)
                ppi = measure_ppi(book, Q)
            except InsufficientLiquidityError:
                if depth_policy == "skip":
                    skipped += 1
                    continue
                tpi, ppi = _saturated(book, Q)
                saturated += 1
            tpi_sum += tpi
            ppi_sum += ppi
            count += 1
        if count == 0:
            errors[float(Q)] = f"volume {Q:g} exceeds the bid depth of every snapshot"
            continue
        samples.append(
            ImpactSample(float(Q / tau), tpi_sum / count, ppi_sum / count, count, skipped, saturated)
        )
    return ImpactCurve(tuple(samples), float(tau), errors)


def synthetic_book(
    best_bid: float = 400.0,
    tick: float = 0.1,
    level_qty: float = 170.0,
    depth: int = DEFAULT_DEPTH,
    spread_ticks: int = 1,
    ts: float = 0.0,
) -> LobSnapshot:
    """Book with ``depth`` levels of ``level_qty`` shares, one tick apart, on both sides.

    The default 100 x 170 shares puts the 50, 1200 and 7000 shares/tau ladders
    (tau = 5 s) below, inside and beyond the visible depth respectively.
    """
    if not (tick > 0 and level_qty > 0 and spread_ticks >= 1):
        raise ValueError("tick, level_qty and spread_ticks must be positive")
    if best_bid - (depth - 1) * tick <= 0:
        raise ValueError("book would reach non-positive prices")
    steps = np.arange(depth) * tick
    qty = np.full(depth, float(level_qty))
    bids = np.column_stack((best_bid - steps, qty))
    asks = np.column_stack((best_bid + spread_ticks * tick + steps, qty))
    return LobSnapshot(ts, bids, asks, depth)


def synthetic_series(
    n: int = 360,
    tau: float = DEFAULT_TAU,
    best_bid: float = 400.0,
    tick: float = 0.1,
    level_qty: float = 170.0,
    depth: int = DEFAULT_DEPTH,
    vol_ticks: float = 0.0,
    trend_ticks: float = 0.0,
    seed: int = 0,
) -> list[LobSnapshot]:
    """``n`` constant-depth snapshots ``tau`` seconds apart.

    The best bid follows a seeded random walk with ``vol_ticks`` ticks of
    standard deviation per step (rounded to the tick grid) plus a straight-line
    drift of ``trend_ticks`` ticks over the whole series.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    moves = np.zeros(n)
    if vol_ticks > 0:
        moves[1:] = np.cumsum(np.rint(rng.normal(0.0, vol_ticks, n - 1)))
    if trend_ticks and n > 1:
        moves += trend_ticks * np.arange(n) / (n - 1)
    return [
        synthetic_book(best_bid + moves[k] * tick, tick, level_qty, depth, ts=k * tau)
        for k in range(n)
    ]

"""Timestamped directed-edge event logs: ingestion, splitting, counting."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or unusable event data."""


class SelfLoopWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class EventLog:
    """Time-ordered directed interactions on nodes ``0..n_nodes-1``.

    ``labels[i]`` is the original label of node ``i``. ``meta`` records
    load-time provenance (time unit, offset, dropped self-loops).
    """

    times: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    n_nodes: int
    horizon: float
    labels: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        src = np.asarray(self.src, dtype=np.int64)
        dst = np.asarray(self.dst, dtype=np.int64)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "horizon", float(self.horizon))
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i) for i in range(self.n_nodes)))
        if not (times.shape == src.shape == dst.shape) or times.ndim != 1:
            raise DataError("times, src and dst must be 1-d arrays of equal length")
        if len(self.labels) != self.n_nodes:
            raise DataError("labels must have one entry per node")
        if times.size:
            if np.any(np.diff(times) < 0):
                raise DataError("event times must be sorted")
            if times[0] < 0 or times[-1] > self.horizon:
                raise DataError("event times must lie in [0, horizon]")
            if np.any(src == dst):
                raise DataError("self-loops are not allowed")
            lo = min(src.min(), dst.min())
            hi = max(src.max(), dst.max())
            if lo < 0 or hi >= self.n_nodes:
                raise DataError("node index out of range")
        if self.horizon < 0:
            raise DataError("horizon must be nonnegative")
        for arr in (times, src, dst):
            arr.flags.writeable = False

    @property
    def K(self) -> int:
        return int(self.times.size)

    def __len__(self):
        return self.K

    def __iter__(self):
        return zip(self.times.tolist(), self.src.tolist(), self.dst.tolist())

    def label_index(self) -> dict:
        return {lab: i for i, lab in enumerate(self.labels)}

    def reindex(self, labels: Sequence[str]) -> "EventLog":
        """Express this log on another node universe given by ``labels``."""
        target = {lab: i for i, lab in enumerate(labels)}
        missing = sorted({self.labels[i] for i in np.unique(np.r_[self.src, self.dst])} - set(target))
        if missing:
            raise DataError(f"nodes not in target universe: {missing[:10]}")
        mapping = np.array([target.get(lab, -1) for lab in self.labels], dtype=np.int64)
        return EventLog(self.times, mapping[self.src] if self.K else self.src,
                        mapping[self.dst] if self.K else self.dst,
                        len(labels), self.horizon, tuple(labels), dict(self.meta))

    def with_horizon(self, horizon: float) -> "EventLog":
        return EventLog(self.times, self.src, self.dst, self.n_nodes, horizon,
                        self.labels, dict(self.meta))


def _label_order(labels):
    try:
        return sorted(labels, key=lambda s: (int(s), s))
    except ValueError:
        return sorted(labels)


def load_events(path, time_unit: float | None = None, horizon: float | None = None,
                self_loops: str = "drop") -> EventLog:
    """Read a ``t,src,dst`` CSV into an :class:`EventLog`.

    Node labels are mapped to dense indices in sorted order (numerically
    when every label is an integer). With ``time_unit`` set, timestamps are
    shifted to start at zero and divided by the unit. The horizon defaults
    to the last timestamp.
    """
    if self_loops not in ("drop", "error"):
        raise ValueError("self_loops must be 'drop' or 'error'")
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    rows = []
    dropped = 0
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and [c.strip().lower() for c in row] == ["t", "src", "dst"]:
                continue
            if len(row) != 3:
                raise DataError(f"line {lineno}: expected 3 fields, got {len(row)}")
            t_raw, s, d = (c.strip() for c in row)
            try:
                t = float(t_raw)
            except ValueError:
                raise DataError(f"line {lineno}: bad timestamp {t_raw!r}") from None
            if not np.isfinite(t):
                raise DataError(f"line {lineno}: non-finite timestamp")
            if not s or not d:
                raise DataError(f"line {lineno}: empty node label")
            if s == d:
                if self_loops == "error":
                    raise DataError(f"line {lineno}: self-loop on node {s!r}")
                dropped += 1
                continue
            rows.append((t, s, d))
    if dropped:
        warnings.warn(f"dropped {dropped} self-loop rows from {path.name}", SelfLoopWarning,
                      stacklevel=2)
    if not rows:
        raise DataError(f"{path}: no events")

    labels = _label_order({s for _, s, _ in rows} | {d for _, _, d in rows})
    index = {lab: i for i, lab in enumerate(labels)}
    times = np.array([r[0] for r in rows], dtype=np.float64)
    src = np.array([index[r[1]] for r in rows], dtype=np.int64)
    dst = np.array([index[r[2]] for r in rows], dtype=np.int64)
    order = np.argsort(times, kind="stable")
    times, src, dst = times[order], src[order], dst[order]

    meta = {"source": str(path), "dropped_self_loops": dropped, "time_unit": None, "t_offset": 0.0}
    if time_unit is not None:
        if time_unit <= 0:
            raise ValueError("time_unit must be positive")
        offset = float(times[0])
        times = (times - offset) / time_unit
        meta.update(time_unit=float(time_unit), t_offset=offset)
    if times[0] < 0:
        raise DataError("negative timestamps; pass a time unit to rescale")
    T = float(times[-1]) if horizon is None else float(horizon)
    if T < times[-1]:
        raise DataError("horizon is earlier than the last event")
    return EventLog(times, src, dst, len(labels), T, tuple(labels), meta)


def write_events(log: EventLog, path) -> None:
    """Write the canonical CSV (``t,src,dst`` with original labels)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "src", "dst"])
        labels = log.labels
        for t, s, d in log:
            w.writerow([repr(t), labels[s], labels[d]])


@dataclass(frozen=True)
class SplitSpec:
    mode: str  # "by_count" | "by_time"
    boundary: float


def split(log: EventLog, spec: SplitSpec) -> tuple[EventLog, EventLog]:
    """Split into train/test windows; test times restart at the split point."""
    K = log.K
    if spec.mode == "by_count":
        b = int(spec.boundary)
        if b != spec.boundary or not 0 < b < K:
            raise DataError(f"count boundary must be an integer in (0, {K})")
        t_split = float(log.times[b])
    elif spec.mode == "by_time":
        t_split = float(spec.boundary)
        if not 0 < t_split < log.horizon:
            raise DataError(f"time boundary must lie strictly inside (0, {log.horizon})")
        b = int(np.searchsorted(log.times, t_split, side="left"))
        if b == 0:
            raise DataError("time boundary leaves the training split empty")
    else:
        raise ValueError(f"unknown split mode {spec.mode!r}")
    meta = dict(log.meta, split_point=t_split)
    train = EventLog(log.times[:b], log.src[:b], log.dst[:b], log.n_nodes, t_split,
                     log.labels, dict(meta, split="train"))
    test = EventLog(log.times[b:] - t_split, log.src[b:], log.dst[b:], log.n_nodes,
                    log.horizon - t_split, log.labels, dict(meta, split="test"))
    return train, test


@dataclass(frozen=True, eq=False)
class SufficientStats:
    counts: np.ndarray
    out_strength: np.ndarray
    in_strength: np.ndarray
    total: int
    unique_edges: int

    @property
    def n_nodes(self) -> int:
        return self.counts.shape[0]


def sufficient_stats(log: EventLog) -> SufficientStats:
    n = log.n_nodes
    flat = np.bincount(log.src * n + log.dst, minlength=n * n) if log.K else np.zeros(n * n, np.int64)
    counts = flat.reshape(n, n).astype(np.int64)
    return SufficientStats(counts, counts.sum(axis=1), counts.sum(axis=0), int(counts.sum()),
                           int(np.count_nonzero(counts)))


class GapStats(NamedTuple):
    mean: float
    variance: float
    count: int


def interevent_stats(log_or_times) -> GapStats:
    """Mean and unbiased variance of consecutive gaps of the merged stream."""
    times = log_or_times.times if isinstance(log_or_times, EventLog) else np.asarray(log_or_times, float)
    if times.size < 2:
        raise DataError("need at least two events for inter-event statistics")
    gaps = np.diff(times)
    var = float(gaps.var(ddof=1)) if gaps.size > 1 else float("nan")
    return GapStats(float(gaps.mean()), var, int(gaps.size))

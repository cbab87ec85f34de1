"""Time-independent mark weights ``w_ij`` on a binary support mask.

Weights are stored with an edge partition: ``part[i, j]`` names the part
holding dyad ``(i, j)``. Within a part, normalized weights are the mark
probabilities used for sampling and for the categorical mark likelihood.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import networkx as nx
import numpy as np

from .events import DataError, EventLog, SufficientStats


class InfeasibleError(ValueError):
    """Margin targets cannot be met on the given support."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class FallbackWarning(UserWarning):
    pass


def full_mask(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def observed_mask(stats: SufficientStats) -> np.ndarray:
    return stats.counts > 0


def validate_mask(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("mask must be square")
    if not np.isin(m, (0, 1)).all():
        raise ValueError("mask entries must be 0 or 1")
    m = m.astype(bool)
    if m.diagonal().any():
        raise ValueError("mask diagonal must be zero")
    return m


@dataclass(frozen=True, eq=False)
class MarkWeights:
    weights: np.ndarray
    part: np.ndarray
    mask: np.ndarray
    partition: str = "global"
    factors: tuple | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if np.any(w[~self.mask] != 0):
            raise ValueError("weights must vanish off the mask")
        object.__setattr__(self, "weights", w)

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_parts(self) -> int:
        return int(self.part.max()) + 1

    @property
    def part_totals(self) -> np.ndarray:
        return np.bincount(self.part.ravel(), weights=self.weights.ravel(), minlength=self.n_parts)

    @property
    def probabilities(self) -> np.ndarray:
        W = self.part_totals
        denom = W[self.part]
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(denom > 0, self.weights / np.where(denom > 0, denom, 1.0), 0.0)
        return p


def _global_part(n):
    part = np.zeros((n, n), dtype=np.int64)
    return part


def sender_part(n):
    return np.repeat(np.arange(n, dtype=np.int64)[:, None], n, axis=1)


def block_sender_part(blocks):
    """Partition dyads by the sender's block."""
    blocks = np.asarray(blocks, dtype=np.int64)
    return np.repeat(blocks[:, None], blocks.size, axis=1)


@dataclass(frozen=True)
class MarginTargets:
    out_strength: np.ndarray
    in_strength: np.ndarray
    edge_totals: np.ndarray | None = None
    block_totals: np.ndarray | None = None

    def __post_init__(self):
        so = np.asarray(self.out_strength, float)
        si = np.asarray(self.in_strength, float)
        object.__setattr__(self, "out_strength", so)
        object.__setattr__(self, "in_strength", si)
        if so.shape != si.shape:
            raise ValueError("out and in strengths must have the same length")
        if np.any(so < 0) or np.any(si < 0):
            raise ValueError("strength targets must be nonnegative")
        if not math.isclose(so.sum(), si.sum(), rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"strength totals disagree: {so.sum()} vs {si.sum()}")

    @property
    def total(self) -> float:
        return float(self.out_strength.sum())

    @classmethod
    def from_stats(cls, stats: SufficientStats):
        return cls(stats.out_strength.astype(float), stats.in_strength.astype(float),
                   edge_totals=stats.counts.astype(float))


def edge_poisson_weights(stats: SufficientStats) -> MarkWeights:
    """Count-proportional weights on the observed support, one global part."""
    if stats.total <= 0:
        raise DataError("edge-Poisson weights need at least one event")
    w = stats.counts / stats.total
    return MarkWeights(w, _global_part(stats.n_nodes), stats.counts > 0,
                       info={"mask": "observed"})


class FeasibilityReport(NamedTuple):
    feasible: bool
    max_flow: float
    total: float
    rows: list
    cols: list
    deficit: float

    def describe(self) -> str:
        if self.feasible:
            return f"feasible: max flow {self.max_flow:.6g} = total {self.total:.6g}"
        return (f"infeasible: max flow {self.max_flow:.6g} < total {self.total:.6g}; "
                f"rows {self.rows} need {self.deficit:.6g} more than their allowed "
                f"columns {self.cols} can absorb")


def check_feasibility(targets: MarginTargets, mask, tol: float = 1e-9) -> FeasibilityReport:
    """Max-flow certificate that a nonnegative ``w`` on ``mask`` meets the margins.

    Source feeds each row its out-strength, each column drains its
    in-strength to the sink, and mask entries are uncapacitated arcs. When
    the flow falls short, the source side of a minimum cut names a set of
    rows whose demand exceeds what their reachable columns can take.
    """
    m = validate_mask(mask)
    so, si = targets.out_strength, targets.in_strength
    S = targets.total
    n = so.size
    if S <= tol:
        return FeasibilityReport(True, 0.0, S, [], [], 0.0)
    g = nx.DiGraph()
    g.add_node("s")
    g.add_node("t")
    for i in range(n):
        if so[i] > 0:
            g.add_edge("s", ("r", i), capacity=float(so[i]))
        if si[i] > 0:
            g.add_edge(("c", i), "t", capacity=float(si[i]))
    rows, cols = np.nonzero(m)
    for i, j in zip(rows.tolist(), cols.tolist()):
        if so[i] > 0 and si[j] > 0:
            g.add_edge(("r", i), ("c", j))  # no capacity attribute = infinite
    flow, _ = nx.maximum_flow(g, "s", "t")
    if flow >= S - tol * max(1.0, S):
        return FeasibilityReport(True, float(flow), S, [], [], 0.0)
    _, (src_side, _) = nx.minimum_cut(g, "s", "t")
    bad_rows = sorted(v[1] for v in src_side if isinstance(v, tuple) and v[0] == "r")
    reach = sorted({j for i in bad_rows for j in np.nonzero(m[i])[0].tolist() if si[j] > 0})
    deficit = float(so[bad_rows].sum() - si[reach].sum()) if bad_rows else float(S - flow)
    return FeasibilityReport(False, float(flow), S, bad_rows, reach, deficit)


def _kl(p, q):
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    keep = p > 0
    return float(np.sum(p[keep] * np.log(p[keep] / q[keep])) - p.sum() + q.sum())


def ipfp_strength_weights(targets: MarginTargets, mask, tol: float = 1e-8,
                          max_iter: int = 10_000, check: bool = True) -> MarkWeights:
    """Masked biproportional scaling ``w_ij = x_i y_j M_ij`` to strength margins.

    Rows and columns with zero target are dropped and keep zero weight. The
    result is the maximum-entropy weight matrix on the mask with the given
    row and column sums (in the units of the targets).
    """
    m = validate_mask(mask)
    so, si = targets.out_strength, targets.in_strength
    n = so.size
    if m.shape != (n, n):
        raise ValueError("mask shape does not match targets")
    if check:
        rep = check_feasibility(targets, m)
        if not rep.feasible:
            raise InfeasibleError(rep.describe(), rep)
    r_on = so > 0
    c_on = si > 0
    M = (m & r_on[:, None] & c_on[None, :]).astype(float)
    empty_rows = r_on & (M.sum(axis=1) == 0)
    empty_cols = c_on & (M.sum(axis=0) == 0)
    if empty_rows.any() or empty_cols.any():
        raise InfeasibleError(
            f"empty support for rows {np.nonzero(empty_rows)[0].tolist()} "
            f"and columns {np.nonzero(empty_cols)[0].tolist()}")
    x = np.where(r_on, 1.0, 0.0)
    y = np.where(c_on, 1.0, 0.0)
    kl_history = []
    violation = np.inf
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        x = np.divide(so, M @ y, out=np.zeros(n), where=r_on)
        col = M.T @ x
        kl_history.append(_kl(si, y * col))
        y = np.divide(si, col, out=np.zeros(n), where=c_on)
        row = x * (M @ y)
        violation = float(np.max(np.abs(row - so)))
        if violation < tol:
            break
    converged = violation < tol
    w = x[:, None] * y[None, :] * M
    if not converged:
        warnings.warn(f"IPFP stopped after {sweeps} sweeps with margin violation {violation:.3g}",
                      FallbackWarning, stacklevel=2)
    info = {"sweeps": sweeps, "max_violation": violation, "converged": converged,
            "kl_history": kl_history}
    return MarkWeights(w, _global_part(n), m, factors=(x, y), info=info)


def block_quotas_from_data(stats: SufficientStats, blocks) -> np.ndarray:
    b = np.asarray(blocks)
    B = int(b.max()) + 1
    q = np.zeros((B, B), dtype=np.int64)
    i, j = np.nonzero(stats.counts)
    np.add.at(q, (b[i], b[j]), 1)
    return q


def block_capacity(blocks) -> np.ndarray:
    b = np.asarray(blocks)
    B = int(b.max()) + 1
    size = np.bincount(b, minlength=B)
    return np.outer(size, size) - np.diag(size)


def block_degree_mask(stats: SufficientStats, blocks, quotas="from-data") -> np.ndarray:
    """Support with exactly ``quotas[a, b]`` dyads from block ``a`` to block ``b``.

    Each block pair keeps its most active dyads by count; ties and any
    shortfall of observed dyads are filled in lexicographic ``(i, j)`` order.
    """
    b = np.asarray(blocks, dtype=np.int64)
    n = stats.n_nodes
    if b.shape != (n,):
        raise ValueError("block map must assign every node")
    B = int(b.max()) + 1
    if isinstance(quotas, str):
        if quotas != "from-data":
            raise ValueError("quotas must be a matrix or 'from-data'")
        quotas = block_quotas_from_data(stats, b)
    q = np.asarray(quotas)
    if q.shape != (B, B) or np.any(q < 0) or np.any(q != np.round(q)):
        raise ValueError(f"quotas must be a {B}x{B} nonnegative integer matrix")
    q = q.astype(np.int64)
    cap = block_capacity(b)
    over = np.argwhere(q > cap)
    if over.size:
        a, c = over[0]
        raise ValueError(f"quota {q[a, c]} for block pair ({a},{c}) exceeds capacity {cap[a, c]}")
    mask = np.zeros((n, n), dtype=bool)
    counts = stats.counts
    zero_filled = []
    for a in range(B):
        rows = np.nonzero(b == a)[0]
        for c in range(B):
            k = q[a, c]
            if k == 0:
                continue
            cols = np.nonzero(b == c)[0]
            ii, jj = np.meshgrid(rows, cols, indexing="ij")
            ii, jj = ii.ravel(), jj.ravel()
            keep = ii != jj
            ii, jj = ii[keep], jj[keep]
            order = np.lexsort((jj, ii, -counts[ii, jj]))
            chosen = order[:k]
            mask[ii[chosen], jj[chosen]] = True
            if np.any(counts[ii[chosen], jj[chosen]] == 0):
                zero_filled.append((a, c))
    if zero_filled:
        warnings.warn(f"block pairs {zero_filled} filled with zero-count dyads",
                      FallbackWarning, stacklevel=2)
    return mask


def sender_partition_weights(stats: SufficientStats, mask) -> MarkWeights:
    """One part per sender; row ``i`` holds the sender's mark distribution."""
    m = validate_mask(mask)
    N = stats.counts * m
    n = stats.n_nodes
    row_mass = N.sum(axis=1)
    support = m.sum(axis=1)
    bad = np.nonzero((stats.out_strength > 0) & (support == 0))[0]
    if bad.size:
        raise InfeasibleError(f"senders {bad.tolist()} have events but an empty mask row")
    w = np.zeros((n, n))
    active = row_mass > 0
    w[active] = N[active] / row_mass[active, None]
    fallback = np.nonzero(~active & (support > 0))[0]
    for i in fallback:
        w[i] = m[i] / support[i]
    if fallback.size:
        warnings.warn(f"{fallback.size} senders have no in-mask events; using uniform rows",
                      FallbackWarning, stacklevel=2)
    return MarkWeights(w, sender_part(n), m, partition="sender",
                       info={"uniform_rows": fallback.tolist()})


class MarkLogLik(NamedTuple):
    value: float
    supported_value: float
    unsupported: list


def mark_log_likelihood(weights: MarkWeights, log: EventLog) -> MarkLogLik:
    """Categorical log-likelihood of observed marks under part probabilities.

    ``supported_value`` sums only over events on positive-probability dyads;
    ``unsupported`` lists the offending dyads (when present ``value`` is -inf).
    """
    p = weights.probabilities[log.src, log.dst]
    ok = p > 0
    supported = float(np.log(p[ok]).sum())
    bad = sorted({(int(i), int(j)) for i, j in zip(log.src[~ok], log.dst[~ok])})
    return MarkLogLik(supported if not bad else float("-inf"), supported, bad)


# --- persistence -----------------------------------------------------------


def load_blocks(path, labels) -> np.ndarray:
    """Read a ``node,block`` CSV; blocks are compacted to ``0..B-1``."""
    mapping = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and [c.strip().lower() for c in row] == ["node", "block"]:
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected node,block")
            mapping[row[0].strip()] = row[1].strip()
    missing = [lab for lab in labels if lab not in mapping]
    if missing:
        raise DataError(f"block map lacks nodes {missing[:10]}")
    names = sorted({mapping[lab] for lab in labels}, key=lambda s: (len(s), s))
    index = {name: k for k, name in enumerate(names)}
    return np.array([index[mapping[lab]] for lab in labels], dtype=np.int64)


def write_blocks(path, blocks, labels) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "block"])
        for lab, b in zip(labels, blocks):
            w.writerow([lab, int(b)])


def save_weights(directory, weights: MarkWeights, provenance: dict | None = None) -> None:
    """``weights.csv`` (``i,j,w`` over the mask) plus a ``weights.json`` sidecar."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with (d / "weights.csv").open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["i", "j", "w"])
        for i, j in zip(*np.nonzero(weights.mask)):
            out.writerow([int(i), int(j), repr(float(weights.weights[i, j]))])
    report = {k: v for k, v in weights.info.items() if k != "kl_history"}
    side = {
        "n": weights.n_nodes,
        "partition": weights.partition,
        "mask_provenance": provenance or {},
        "report": report,
    }
    if weights.partition not in ("global", "sender"):
        side["part"] = weights.part.tolist()
    (d / "weights.json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def load_weights(directory) -> MarkWeights:
    d = Path(directory)
    side = json.loads((d / "weights.json").read_text())
    n = side["n"]
    w = np.zeros((n, n))
    mask = np.zeros((n, n), dtype=bool)
    with (d / "weights.csv").open(newline="") as fh:
        rd = csv.reader(fh)
        next(rd)
        for i, j, val in rd:
            i, j = int(i), int(j)
            mask[i, j] = True
            w[i, j] = float(val)
    kind = side["partition"]
    if kind == "global":
        part = _global_part(n)
    elif kind == "sender":
        part = sender_part(n)
    else:
        part = np.asarray(side["part"], dtype=np.int64)
    return MarkWeights(w, part, mask, partition=kind, info=side.get("report", {}))

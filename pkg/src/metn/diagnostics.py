"""Plot-ready tables: inter-event moments, motifs, likelihoods, rasters, heatmaps."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import ensemble as ens
from . import timing
from .events import EventLog, interevent_stats, sufficient_stats

MOTIF_KINDS = ("reciprocity", "broadcast", "convergence", "repeat")
_TYPES = {"str": str, "int": int, "float": float}


@dataclass
class ReportTable:
    """Rectangular table with a typed schema; ``None`` cells are written empty."""

    name: str
    columns: list  # [(name, "str" | "int" | "float"), ...]
    rows: list = field(default_factory=list)

    @property
    def names(self):
        return [c for c, _ in self.columns]

    def column(self, name):
        k = self.names.index(name)
        return [r[k] for r in self.rows]

    def validate(self):
        width = len(self.columns)
        for k, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"{self.name}: row {k} has {len(row)} cells, expected {width}")
            for (col, typ), val in zip(self.columns, row):
                if val is None:
                    continue
                if typ == "float" and isinstance(val, (int, float, np.floating, np.integer)):
                    continue
                if typ == "int" and isinstance(val, (int, np.integer)) and not isinstance(val, bool):
                    continue
                if typ == "str" and isinstance(val, str):
                    continue
                raise TypeError(f"{self.name}.{col}: {val!r} is not {typ}")

    def write(self, directory) -> Path:
        self.validate()
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        path = d / f"{self.name}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.names)
            for row in self.rows:
                w.writerow(["" if v is None else _fmt(v, t) for v, (_, t) in zip(row, self.columns)])
        schema = {
            "name": self.name,
            "columns": [{"name": c, "type": t} for c, t in self.columns],
            "rows": len(self.rows),
        }
        (d / f"{self.name}.schema.json").write_text(json.dumps(schema, indent=2) + "\n")
        return path


def _fmt(v, typ):
    if typ == "float":
        return repr(float(v))
    if typ == "int":
        return str(int(v))
    return v


def read_table(path) -> ReportTable:
    path = Path(path)
    schema = json.loads(path.with_name(path.stem + ".schema.json").read_text())
    cols = [(c["name"], c["type"]) for c in schema["columns"]]
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        next(rd)
        for row in rd:
            rows.append(tuple(None if v == "" else _TYPES[t](v) for v, (_, t) in zip(row, cols)))
    return ReportTable(schema["name"], cols, rows)


# --- inter-event table ---------------------------------------------------------

INTEREVENT_COLUMNS = [
    ("dataset", "str"), ("split", "str"), ("emp_mean", "float"), ("emp_var", "float"),
    ("gaps", "int"), ("poisson_mean", "float"), ("poisson_var", "float"),
    ("hawkes_exp_mean", "float"), ("hawkes_exp_var", "float"),
    ("hawkes_pl_mean", "float"), ("hawkes_pl_var", "float"),
    ("var_method", "str"), ("missing", "str"),
]


def interevent_table(logs: dict, fitted: dict, dataset: str = "data", n_events: int = 10**6,
                     seed: int = 0) -> ReportTable:
    """Empirical gap moments beside those implied by fitted time models.

    ``logs`` maps split name to log; ``fitted[split]`` maps a kind
    (``poisson``, ``hawkes-exp``, ``hawkes-pl``) to a time model. Absent
    fits leave their columns empty and are named in ``missing``.
    """
    table = ReportTable("interevent", INTEREVENT_COLUMNS)
    for split, log in logs.items():
        models = fitted.get(split, {})
        if log.K >= 2:
            g = interevent_stats(log)
            emp = [g.mean, None if math.isnan(g.variance) else g.variance, g.count]
        else:
            emp = [None, None, max(log.K - 1, 0)]
        cells, missing, methods = [], [], []
        for kind in ("poisson", "hawkes-exp", "hawkes-pl"):
            m = models.get(kind)
            if m is None:
                cells += [None, None]
                missing.append(kind)
                continue
            mom = timing.implied_gap_moments(m, n_events=n_events, seed=seed)
            cells += [mom.mean, mom.variance]
            methods.append(f"{kind}:{mom.method}")
        table.rows.append(tuple([dataset, split] + emp + cells + [";".join(methods), ";".join(missing)]))
    return table


# --- motifs ----------------------------------------------------------------------


class MotifRate(NamedTuple):
    count: int
    opportunities: int
    rate: float


def default_motif_window(log: EventLog) -> float:
    gaps = np.diff(log.times)
    med = float(np.median(gaps)) if gaps.size else 0.0
    if med <= 0:
        pos = gaps[gaps > 0]
        med = float(np.median(pos)) if pos.size else 1.0
    return 10.0 * med


def _matches(kind, s1, d1, s2, d2):
    if kind == "reciprocity":
        return (s2 == d1) & (d2 == s1)
    if kind == "broadcast":
        return (s2 == s1) & (d2 != d1)
    if kind == "convergence":
        return (d2 == d1) & (s2 != s1)
    if kind == "repeat":
        return (s2 == s1) & (d2 == d1)
    raise ValueError(f"unknown motif {kind!r}")


def motif_rates(log: EventLog, kind: str, window: float) -> MotifRate:
    """Ordered event pairs within ``window`` forming the motif.

    A pair ``(e1, e2)`` is an opportunity when ``0 < t2 - t1 <= window``;
    the rate is the fraction of opportunities whose dyads match the pattern.
    Sweeps each anchor's forward window, so the cost is ``K`` times the mean
    window occupancy.
    """
    if not window > 0:
        raise ValueError("motif window must be positive")
    if kind not in MOTIF_KINDS:
        raise ValueError(f"unknown motif {kind!r}")
    t, s, d = log.times, log.src, log.dst
    K = t.size
    lo = np.searchsorted(t, t, side="right")
    hi = np.searchsorted(t, t + window, side="right")
    count = 0
    opp = 0
    for k in range(K):
        a, b = lo[k], hi[k]
        # the window edge is decided on the gap itself, not on t + window
        while b < K and t[b] - t[k] <= window:
            b += 1
        while b > a and t[b - 1] - t[k] > window:
            b -= 1
        if b > a:
            opp += b - a
            count += int(np.count_nonzero(_matches(kind, s[k], d[k], s[a:b], d[a:b])))
    return MotifRate(count, opp, count / opp if opp else 0.0)


def motif_table(logs: dict, window: float, name: str = "motifs") -> ReportTable:
    table = ReportTable(name, [("source", "str"), ("motif", "str"), ("window", "float"),
                               ("count", "int"), ("opportunities", "int"), ("rate", "float")])
    for source, log in logs.items():
        for kind in MOTIF_KINDS:
            m = motif_rates(log, kind, window)
            table.rows.append((source, kind, float(window), m.count, m.opportunities, m.rate))
    return table


# --- likelihood table ----------------------------------------------------------

LOGLIK_COLUMNS = [
    ("model", "str"), ("split", "str"), ("layer", "str"), ("events", "int"),
    ("time_total", "float"), ("mark_total", "float"), ("total", "float"),
    ("time_per_event", "float"), ("mark_per_event", "float"), ("total_per_event", "float"),
    ("supported_per_event", "float"), ("unsupported", "int"), ("time_model_loglik", "float"),
    ("flag", "str"),
]


def per_event_loglik_table(models: dict, log: EventLog, split: str = "train",
                           table: ReportTable | None = None) -> ReportTable:
    """Per-event likelihood rows for ensembles and bare time models.

    Ensembles contribute time, mark and total columns; a bare time model only
    the time column. ``-inf`` rows are kept and flagged.
    """
    table = table or ReportTable("loglik", LOGLIK_COLUMNS)
    K = log.K
    for name, model in models.items():
        if isinstance(model, ens.EnsembleModel):
            ll = ens.joint_log_likelihood(model, log)
            raw = timing.log_likelihood(model.time_models[0], log.times, log.horizon) \
                if model.n_parts == 1 else None
            per = (lambda v: v / K if K else None)
            sup = ll.supported_total / ll.n_supported if ll.n_supported else None
            flag = "" if math.isfinite(ll.total) else "unsupported-marks" if ll.unsupported else "zero-intensity"
            table.rows.append((name, split, "ensemble", K, ll.time_part, ll.mark_part, ll.total,
                               per(ll.time_part), per(ll.mark_part), per(ll.total), sup,
                               len(ll.unsupported), raw, flag))
        else:
            v = timing.log_likelihood(model, log.times, log.horizon)
            flag = "" if math.isfinite(v) else "zero-intensity"
            table.rows.append((name, split, "time", K, v, None, None, v / K if K else None,
                               None, None, None, 0, v, flag))
    return table


# --- rasters --------------------------------------------------------------------


def _rank(activity, labels, top_k):
    order = sorted(range(len(activity)), key=lambda e: (-activity[e], labels[e]))
    return [e for e in order[:top_k] if activity[e] > 0]


def raster_export(log: EventLog, top_k: int = 10, group_by: str = "node", blocks=None,
                  source: str = "empirical", table: ReportTable | None = None) -> ReportTable:
    """Long-format raster rows for the ``top_k`` most active nodes or blocks.

    Activity counts events touching the entity (as sender or receiver);
    ties go to the lexicographically smaller label.
    """
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    table = table or ReportTable("raster", [("source", "str"), ("group_by", "str"), ("rank", "int"),
                                            ("entity", "str"), ("direction", "str"), ("t", "float")])
    if group_by == "node":
        snd, rcv = log.src, log.dst
        labels = list(log.labels)
        size = log.n_nodes
    elif group_by == "block":
        if blocks is None:
            raise ValueError("block grouping needs a block map")
        b = np.asarray(blocks)
        snd, rcv = b[log.src], b[log.dst]
        size = int(b.max()) + 1
        labels = [str(k) for k in range(size)]
    else:
        raise ValueError("group_by must be 'node' or 'block'")
    activity = np.bincount(snd, minlength=size) + np.bincount(rcv, minlength=size)
    for rank, e in enumerate(_rank(activity.tolist(), labels, top_k)):
        for direction, side in (("out", snd), ("in", rcv)):
            for t in log.times[side == e].tolist():
                table.rows.append((source, group_by, rank, labels[e], direction, t))
    return table


# --- block heatmaps ---------------------------------------------------------------


def _long(name, M, value_type="float"):
    t = ReportTable(name, [("src_block", "int"), ("dst_block", "int"), ("value", value_type)])
    B = M.shape[0]
    for a in range(B):
        for b in range(B):
            v = M[a, b]
            t.rows.append((a, b, int(v) if value_type == "int" else float(v)))
    return t


def observed_block_unique(log: EventLog, blocks) -> np.ndarray:
    b = np.asarray(blocks)
    B = int(b.max()) + 1
    out = np.zeros((B, B), dtype=np.int64)
    i, j = np.nonzero(sufficient_stats(log).counts)
    np.add.at(out, (b[i], b[j]), 1)
    return out


def block_unique_edge_heatmap(log: EventLog, model, blocks):
    """Observed, expected and residual unique dyads per block pair."""
    obs = observed_block_unique(log, blocks)
    exp = ens.expected_unique_edges(model, blocks)
    return (_long("heatmap_obs", obs, "int"), _long("heatmap_exp", exp),
            _long("heatmap_res", exp - obs))


# --- degree / clustering ---------------------------------------------------------


def empirical_degree_clustering(log: EventLog):
    A = (sufficient_stats(log).counts > 0).astype(float)
    return A.sum(axis=1), ens.clustering_from_probabilities(ens.undirected_collapse(A))


def degree_clustering_scatter(model_or_log, source: str | None = None,
                              table: ReportTable | None = None) -> ReportTable:
    """Per-node out-degree and clustering, expected for a model, observed for a log."""
    table = table or ReportTable("scatter", [("source", "str"), ("node", "str"),
                                             ("out_degree", "float"), ("clustering", "float")])
    if isinstance(model_or_log, EventLog):
        deg, clu = empirical_degree_clustering(model_or_log)
        labels = model_or_log.labels
        source = source or "empirical"
    else:
        deg = ens.expected_out_degree(model_or_log)
        clu = ens.expected_clustering(model_or_log)
        labels = model_or_log.labels
        source = source or model_or_log.case
    for lab, k, c in zip(labels, deg.tolist(), clu.tolist()):
        table.rows.append((source, lab, k, c))
    return table


# --- unique edges (train/test) ----------------------------------------------------


def edges_table(logs: dict, models: dict) -> ReportTable:
    """Observed unique dyads per split beside model expectations at split totals."""
    table = ReportTable("edges", [("model", "str"), ("split", "str"), ("n", "int"), ("events", "int"),
                                  ("unique_obs", "int"), ("unique_expected", "float")])
    for split, log in logs.items():
        obs = sufficient_stats(log).unique_edges
        if not models:
            table.rows.append(("observed", split, log.n_nodes, log.K, obs, None))
        for name, model in models.items():
            m = model.rebudget(log.K) if log.K != model.total else model
            table.rows.append((name, split, log.n_nodes, log.K, obs, ens.expected_unique_edges(m)))
    return table

"""Factorized marked NHPP ensembles: ``lambda_ij(t) = phi_r(t) w_ij``.

Each part ``r`` of the edge partition carries a fitted time model whose
intensity is rescaled so that the part's expected event count equals its
budget ``S_r``. Marks are drawn i.i.d. within the part from the normalized
weights, so the superposed part intensity ``G_r = W_r phi_r`` is what gets
simulated and scored on the time side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import timing
from .events import DataError, EventLog
from .marks import MarkWeights, load_weights, mark_log_likelihood, save_weights

CLUSTERING_MAX_NODES = 2000


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    time_models: tuple
    weights: MarkWeights
    budgets: np.ndarray
    reference: np.ndarray  # unscaled compensator of each part's model on [0, T]
    horizon: float
    case: str = "custom"
    labels: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_parts(self) -> int:
        return len(self.time_models)

    @property
    def n_nodes(self) -> int:
        return self.weights.n_nodes

    @property
    def total(self) -> float:
        return float(self.budgets.sum())

    @property
    def scales(self) -> np.ndarray:
        """Factor ``c_r`` with ``phi_r = c_r * raw_r`` and ``c_r Lambda_r W_r = S_r``."""
        W = self.weights.part_totals
        denom = W * self.reference
        return np.divide(self.budgets, denom, out=np.zeros_like(self.budgets), where=denom > 0)

    def profile(self, r: int, T: float | None = None):
        """Time model of the superposed part intensity ``G_r``."""
        T = self.horizon if T is None else T
        g = self.scales[r] * self.weights.part_totals[r]
        return self.time_models[r].on_window(T).scaled(g)

    def rebudget(self, total: float, horizon: float | None = None) -> "EnsembleModel":
        """Same shape with budgets rescaled to a new grand total."""
        f = total / self.total if self.total > 0 else 0.0
        return EnsembleModel(self.time_models, self.weights, self.budgets * f, self.reference * 1.0,
                             self.horizon if horizon is None else horizon, self.case, self.labels,
                             dict(self.meta))


def assemble(time_models, weights: MarkWeights, budgets, T: float, histories=None,
             case: str = "custom", labels=(), meta=None) -> EnsembleModel:
    """Scale one time model per part so that each part meets its budget.

    ``histories[r]`` are the event times the part model is conditioned on
    when computing its compensator (the fit data); without them the
    expected count from an empty start is used.
    """
    time_models = tuple(time_models)
    R = weights.n_parts
    if len(time_models) != R:
        raise ValueError(f"need {R} time models, got {len(time_models)}")
    S = np.asarray(budgets, float)
    if S.shape != (R,) or np.any(S < 0) or not np.all(np.isfinite(S)):
        raise ValueError("budgets must be one finite nonnegative value per part")
    ref = np.empty(R)
    for r, tm in enumerate(time_models):
        tm = tm.on_window(T)
        if histories is not None and histories[r] is not None:
            ref[r] = tm.integral(np.asarray(histories[r], float), T)
        else:
            ref[r] = tm.expected_count(T)
    W = weights.part_totals
    dead = (S > 0) & ((ref <= 0) | (W <= 0))
    if dead.any():
        r = int(np.argmax(dead))
        raise ValueError(f"part {r} has budget {S[r]} but zero integrated profile or weight")
    model = EnsembleModel(time_models, weights, S, ref, float(T), case,
                          tuple(labels) or tuple(str(i) for i in range(weights.n_nodes)),
                          dict(meta or {}))
    check = model.scales * ref * W
    if not np.allclose(check, S, rtol=1e-10, atol=1e-12):
        raise ArithmeticError("part budgets not reproduced by the scaled profiles")
    return model


def integrated_intensities(model: EnsembleModel) -> np.ndarray:
    """Expected count ``mu_ij`` of each dyad over the window."""
    w = model.weights
    factor = model.scales * model.reference
    return factor[w.part] * w.weights


class JointLogLik(NamedTuple):
    total: float
    time_part: float
    mark_part: float
    unsupported: list
    supported_total: float
    n_supported: int


def joint_log_likelihood(model: EnsembleModel, log: EventLog) -> JointLogLik:
    """Marked-process log-likelihood split into time and mark contributions.

    The time part is the point-process likelihood of each part's superposed
    intensity ``G_r``; the mark part is the categorical likelihood of the
    observed dyads under normalized part probabilities. Their sum is the
    full likelihood of the dyad intensities ``lambda_ij``.
    """
    if log.n_nodes != model.n_nodes:
        raise DataError("log and model have different node universes")
    T = log.horizon
    part = model.weights.part[log.src, log.dst]
    time_part = 0.0
    for r in range(model.n_parts):
        t_r = log.times[part == r]
        G = model.profile(r, T)
        if model.budgets[r] == 0:
            if t_r.size:
                time_part = float("-inf")
            continue
        time_part += timing.log_likelihood(G, t_r, T)
    mark = mark_log_likelihood(model.weights, log)
    n_ok = int(np.count_nonzero(model.weights.probabilities[log.src, log.dst] > 0))
    return JointLogLik(time_part + mark.value, time_part, mark.value, mark.unsupported,
                       time_part + mark.supported_value, n_ok)


def sample(model: EnsembleModel, seed=None, horizon: float | None = None) -> EventLog:
    """Simulate each part's superposed profile, then draw marks within the part."""
    rng = np.random.default_rng(seed)
    T = model.horizon if horizon is None else horizon
    p = model.weights.probabilities
    part = model.weights.part
    flat_part = part.ravel()
    flat_p = p.ravel()
    order = np.argsort(flat_part, kind="stable")
    bounds = np.searchsorted(flat_part[order], np.arange(model.n_parts + 1))
    n = model.n_nodes
    chunks_t, chunks_m = [], []
    for r in range(model.n_parts):
        if model.budgets[r] == 0:
            continue
        times = model.profile(r, T).simulate(T, rng)
        if times.size == 0:
            continue
        cells = order[bounds[r]:bounds[r + 1]]
        probs = flat_p[cells]
        keep = probs > 0
        cells, probs = cells[keep], probs[keep]
        marks = cells[rng.choice(cells.size, size=times.size, p=probs / probs.sum())]
        chunks_t.append(times)
        chunks_m.append(marks)
    if chunks_t:
        times = np.concatenate(chunks_t)
        marks = np.concatenate(chunks_m)
        o = np.argsort(times, kind="stable")
        times, marks = times[o], marks[o]
    else:
        times = np.empty(0)
        marks = np.empty(0, dtype=np.int64)
    return EventLog(times, marks // n, marks % n, n, T, model.labels, {"sampled_from": model.case})


def edge_activation(mu) -> np.ndarray:
    """Probability that a dyad carries at least one event, ``1 - exp(-mu)``."""
    return -np.expm1(-np.asarray(mu, float))


def expected_unique_edges(model_or_mu, blocks=None):
    """Expected number of distinct active dyads, globally or per block pair."""
    mu = integrated_intensities(model_or_mu) if isinstance(model_or_mu, EnsembleModel) else model_or_mu
    P = edge_activation(mu)
    np.fill_diagonal(P, 0.0)
    if blocks is None:
        return float(P.sum())
    b = np.asarray(blocks, dtype=np.int64)
    B = int(b.max()) + 1
    out = np.zeros((B, B))
    np.add.at(out, (b[:, None], b[None, :]), P)
    return out


def expected_out_degree(model_or_mu) -> np.ndarray:
    mu = integrated_intensities(model_or_mu) if isinstance(model_or_mu, EnsembleModel) else model_or_mu
    P = edge_activation(mu)
    np.fill_diagonal(P, 0.0)
    return P.sum(axis=1)


def clustering_from_probabilities(q) -> np.ndarray:
    """Local clustering of an undirected graph with independent edge probabilities.

    ``q`` is symmetric with zero diagonal; with a 0/1 matrix this is the
    usual local clustering coefficient.
    """
    q = np.asarray(q, float)
    n = q.shape[0]
    if n > CLUSTERING_MAX_NODES:
        raise ValueError(f"clustering is O(n^3); refusing n={n} > {CLUSTERING_MAX_NODES}")
    tri = np.einsum("ij,jk,ki->i", q, q, q) / 2.0
    s = q.sum(axis=1)
    pairs = (s**2 - (q**2).sum(axis=1)) / 2.0
    return np.divide(tri, pairs, out=np.zeros(n), where=pairs > 0)


def undirected_collapse(P) -> np.ndarray:
    P = np.asarray(P, float)
    q = 1.0 - (1.0 - P) * (1.0 - P.T)
    np.fill_diagonal(q, 0.0)
    return q


def expected_clustering(model_or_mu) -> np.ndarray:
    mu = integrated_intensities(model_or_mu) if isinstance(model_or_mu, EnsembleModel) else model_or_mu
    if mu.shape[0] > CLUSTERING_MAX_NODES:
        raise ValueError(f"clustering is O(n^3); refusing n={mu.shape[0]} > {CLUSTERING_MAX_NODES}")
    return clustering_from_probabilities(undirected_collapse(edge_activation(mu)))


def poisson_entropy(model: EnsembleModel) -> float:
    """Entropy functional ``sum_ij int (lambda log lambda - lambda) dt``.

    Only defined here for history-free (Poisson / piecewise) time layers.
    """
    total = 0.0
    w = model.weights
    for r, tm in enumerate(model.time_models):
        if tm.kind not in ("poisson", "nhpp"):
            raise ValueError("entropy needs a deterministic time profile, not a Hawkes layer")
        tm = tm.on_window(model.horizon).scaled(model.scales[r])
        if tm.kind == "poisson":
            widths, rates = np.array([model.horizon]), np.array([tm.rate])
        else:
            widths, rates = np.diff(tm.edges), np.asarray(tm.rates)
        wr = w.weights[w.part == r]
        wr = wr[wr > 0]
        lam = rates[:, None] * wr[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = np.where(lam > 0, lam * np.log(lam) - lam, 0.0)
        total += float((widths[:, None] * dens).sum())
    return total


# --- bundles -----------------------------------------------------------------


def save_bundle(directory, model: EnsembleModel, fit_reports=None, provenance=None) -> Path:
    """Write ``manifest.json``, ``time_<r>.json`` per part and the weight files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    fit_reports = fit_reports or [{} for _ in range(model.n_parts)]
    for r, tm in enumerate(model.time_models):
        timing.save_time_model(d / f"time_{r}.json", tm, model.horizon, **fit_reports[r])
    save_weights(d, model.weights, provenance)
    manifest = {
        "case": model.case,
        "horizon": model.horizon,
        "n_parts": model.n_parts,
        "budgets": model.budgets.tolist(),
        "reference_integrals": model.reference.tolist(),
        "scale_factors": model.scales.tolist(),
        "labels": list(model.labels),
        "meta": model.meta,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def load_bundle(directory) -> EnsembleModel:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
        weights = load_weights(d)
        tms = [timing.load_time_model(d / f"time_{r}.json")[0] for r in range(manifest["n_parts"])]
        model = EnsembleModel(tuple(tms), weights, np.asarray(manifest["budgets"], float),
                              np.asarray(manifest["reference_integrals"], float),
                              float(manifest["horizon"]), manifest["case"],
                              tuple(manifest["labels"]), manifest.get("meta", {}))
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"corrupt bundle {d}: {exc}") from exc
    if not np.allclose(model.scales, manifest["scale_factors"], rtol=1e-9, atol=0):
        raise DataError(f"corrupt bundle {d}: scale factors do not match budgets")
    return model

"""End-to-end orchestration: fit model cases, simulate, evaluate, report."""

from __future__ import annotations

import json
import logging
import shutil
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import ensemble as ens
from . import marks as mk
from . import timing
from .events import DataError, EventLog, SplitSpec, load_events, split, sufficient_stats, write_events

log = logging.getLogger(__name__)

CASES = ("edge-poisson", "hawkes-edge-totals", "hawkes-strength-mask", "hawkes-block-mask",
         "sender-hawkes", "partitioned")
BLOCK_CASES = ("hawkes-block-mask", "partitioned")
TABLE_KINDS = ("poisson", "hawkes-exp", "hawkes-pl")


@dataclass
class RunConfig:
    input: str | None = None
    time_unit: float | None = None
    horizon: float | None = None
    self_loops: str = "drop"
    split: dict | None = None  # {"mode": "by_count" | "by_time", "boundary": ...}
    blocks: str | None = None
    quotas: object = "from-data"
    cases: list = field(default_factory=lambda: list(CASES))
    time_kind: str = "hawkes-exp"
    table_kinds: list = field(default_factory=lambda: list(TABLE_KINDS))
    strength_mask: str = "full"
    sender_min_events: int = 10
    nhpp_bins: int = 50
    restarts: int = 3
    max_iter: int = 500
    motif_window: float | None = None
    seed: int = 0
    reps: int = 1
    gap_moment_events: int = 10**6
    top_k: int = 10
    dataset: str = "data"
    out: str = "out"

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            doc = tomllib.loads(text)
        else:
            doc = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("input", "blocks", "out"):
            if doc.get(key) is not None:
                doc[key] = str((path.parent / doc[key]).resolve())
        if isinstance(doc.get("quotas"), str) and doc["quotas"] != "from-data":
            doc["quotas"] = str((path.parent / doc["quotas"]).resolve())
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc)

    def validate(self):
        if self.input is None:
            raise ValueError("config needs an input event log")
        bad = [c for c in self.cases if c not in CASES]
        if bad:
            raise ValueError(f"unknown model cases {bad}; choose from {CASES}")
        needs = [c for c in self.cases if c in BLOCK_CASES]
        if needs and not self.blocks:
            raise ValueError(f"cases {needs} need a block map")
        if self.time_kind not in timing.KINDS:
            raise ValueError(f"unknown time kind {self.time_kind!r}")
        if self.strength_mask not in ("full", "observed"):
            raise ValueError("strength_mask must be 'full' or 'observed'")


def derive_seed(master: int, *keys) -> np.random.SeedSequence:
    """Seed stream keyed by names/counters so cases never share draws."""
    words = [int(master)]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k))
    return np.random.SeedSequence(words)


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1)[0])


# --- data --------------------------------------------------------------------


def load_data(cfg: RunConfig):
    full = load_events(cfg.input, time_unit=cfg.time_unit, horizon=cfg.horizon,
                       self_loops=cfg.self_loops)
    if cfg.split:
        train, test = split(full, SplitSpec(cfg.split["mode"], cfg.split["boundary"]))
    else:
        train, test = full, None
    blocks = mk.load_blocks(cfg.blocks, full.labels) if cfg.blocks else None
    return full, train, test, blocks


def _load_quotas(cfg: RunConfig):
    q = cfg.quotas
    if isinstance(q, str) and q != "from-data":
        return np.loadtxt(q, delimiter=",", ndmin=2)
    return q


# --- fitting ------------------------------------------------------------------


class _TimeFits:
    """Memoized time-layer fits keyed by (kind, data label)."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.cache = {}

    def get(self, kind, times, T, key):
        ck = (kind, key)
        if ck not in self.cache:
            res = timing.fit(kind, times, T, bins=self.cfg.nhpp_bins, restarts=self.cfg.restarts,
                             seed=_seed_int(derive_seed(self.cfg.seed, "fit", kind, key)),
                             max_iter=self.cfg.max_iter)
            if not res.converged:
                log.warning("time fit %s on %s did not converge", kind, key)
            self.cache[ck] = res
        return self.cache[ck]


def _report(res: timing.FitResult, **extra) -> dict:
    return {"loglik": res.loglik, "iterations": res.iterations, "converged": res.converged, **extra}


def _strength_mask(cfg, stats):
    return mk.full_mask(stats.n_nodes) if cfg.strength_mask == "full" else mk.observed_mask(stats)


def _calibrate(targets, mask, part=None, partition="global"):
    rep = mk.check_feasibility(targets, mask)
    if not rep.feasible:
        raise mk.InfeasibleError(rep.describe(), rep)
    w = mk.ipfp_strength_weights(targets, mask, check=False)
    if part is not None:
        w = mk.MarkWeights(w.weights, part, w.mask, partition=partition, factors=w.factors, info=w.info)
    return w


def build_case(case: str, train: EventLog, cfg: RunConfig, fits: _TimeFits, blocks=None):
    """Fit one named model case on the training log.

    Returns ``(model, fit_reports, provenance)``.
    """
    stats = sufficient_stats(train)
    T, K = train.horizon, train.K
    labels = train.labels
    if case in ("edge-poisson", "hawkes-edge-totals"):
        kind = "poisson" if case == "edge-poisson" else cfg.time_kind
        res = fits.get(kind, train.times, T, "train")
        w = mk.edge_poisson_weights(stats)
        model = ens.assemble([res.model], w, [K], T, [train.times], case, labels)
        return model, [_report(res)], {"mask": "observed"}
    if case in ("hawkes-strength-mask", "hawkes-block-mask"):
        targets = mk.MarginTargets.from_stats(stats)
        if case == "hawkes-strength-mask":
            mask = _strength_mask(cfg, stats)
            prov = {"mask": cfg.strength_mask}
        else:
            quotas = _load_quotas(cfg)
            mask = mk.block_degree_mask(stats, blocks, quotas)
            prov = {"mask": "block-degree", "quotas": quotas if isinstance(quotas, str)
                    else np.asarray(quotas).astype(int).tolist()}
        w = _calibrate(targets, mask)
        res = fits.get(cfg.time_kind, train.times, T, "train")
        model = ens.assemble([res.model], w, [K], T, [train.times], case, labels)
        return model, [_report(res)], prov
    if case == "sender-hawkes":
        w = mk.sender_partition_weights(stats, mk.observed_mask(stats))
        tms, reports, hist = [], [], []
        for i in range(train.n_nodes):
            t_i = train.times[train.src == i]
            if t_i.size >= cfg.sender_min_events:
                res = fits.get(cfg.time_kind, t_i, T, f"sender:{labels[i]}")
                reports.append(_report(res))
            elif t_i.size:
                res = fits.get("poisson", t_i, T, f"sender:{labels[i]}")
                reports.append(_report(res, fallback="poisson"))
            else:
                res = timing.FitResult(timing.HomPoisson(0.0), 0.0, 0, True)
                reports.append(_report(res, fallback="silent"))
            tms.append(res.model)
            hist.append(t_i)
        model = ens.assemble(tms, w, stats.out_strength.astype(float), T, hist, case, labels)
        return model, reports, {"mask": "observed", "partition": "sender"}
    if case == "partitioned":
        part = mk.block_sender_part(blocks)
        w = _calibrate(mk.MarginTargets.from_stats(stats), _strength_mask(cfg, stats), part,
                       partition="block-sender")
        R = w.n_parts
        ev_part = part[train.src, train.dst]
        tms, reports, hist, budgets = [], [], [], []
        for r in range(R):
            t_r = train.times[ev_part == r]
            if t_r.size:
                res = fits.get("nhpp", t_r, T, f"part:{r}")
            else:
                res = timing.FitResult(timing.HomPoisson(0.0), 0.0, 0, True)
            tms.append(res.model)
            reports.append(_report(res))
            hist.append(t_r)
            budgets.append(float(t_r.size))
        model = ens.assemble(tms, w, budgets, T, hist, case, labels)
        return model, reports, {"mask": cfg.strength_mask, "partition": "block-sender"}
    raise ValueError(f"unknown case {case!r}")


def run_fit(cfg: RunConfig) -> Path:
    """Fit every configured case; writes bundles, split logs and per-split time fits."""
    cfg.validate()
    out = Path(cfg.out)
    full, train, test, blocks = load_data(cfg)
    fits = _TimeFits(cfg)
    data_dir = out / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    splits = {"train": train} if test is None else {"train": train, "test": test}
    for name, lg in splits.items():
        write_events(lg, data_dir / f"{name}.csv")
    (data_dir / "splits.json").write_text(json.dumps(
        {name: {"horizon": lg.horizon, "events": lg.K} for name, lg in splits.items()},
        indent=2, sort_keys=True) + "\n")
    (data_dir / "labels.json").write_text(json.dumps(list(full.labels)) + "\n")
    if blocks is not None:
        mk.write_blocks(data_dir / "blocks.csv", blocks, full.labels)

    tf_dir = out / "timefits"
    tf_dir.mkdir(parents=True, exist_ok=True)
    for name, lg in splits.items():
        for kind in cfg.table_kinds:
            if lg.K == 0 or (lg.K < 2 and kind.startswith("hawkes")):
                continue
            res = fits.get(kind, lg.times, lg.horizon, name)
            timing.save_time_model(tf_dir / f"{name}_{kind}.json", res.model, lg.horizon,
                                   **_report(res))

    for case in cfg.cases:
        model, reports, prov = build_case(case, train, cfg, fits, blocks)
        target = out / "bundles" / case
        if target.exists():
            shutil.rmtree(target)
        ens.save_bundle(target, model, reports, prov)
        log.info("wrote bundle %s", target)
    resolved = asdict(cfg)
    (out / "config.resolved.json").write_text(json.dumps(resolved, indent=2, sort_keys=True, default=str) + "\n")
    return out


# --- simulate / evaluate ---------------------------------------------------------


def simulate_bundle(bundle_dir, out_dir, seed: int = 0, reps: int = 1, T: float | None = None) -> list:
    model = ens.load_bundle(bundle_dir)
    out = Path(out_dir)
    paths = []
    if reps <= 0:
        return paths
    out.mkdir(parents=True, exist_ok=True)
    for k in range(reps):
        s = derive_seed(seed, "simulate", model.case, k)
        sampled = ens.sample(model, s, horizon=T)
        p = out / f"{model.case}_rep{k:03d}.csv"
        write_events(sampled, p)
        paths.append(p)
    return paths


def evaluate_bundles(bundle_dirs, logs: dict, time_fits: dict | None = None) -> dg.ReportTable:
    """Likelihood table of each bundle on each named log (reindexed to the bundle)."""
    table = dg.ReportTable("loglik", dg.LOGLIK_COLUMNS)
    for b in bundle_dirs:
        model = ens.load_bundle(b)
        for split_name, lg in logs.items():
            dg.per_event_loglik_table({model.case: model}, lg.reindex(model.labels), split_name, table)
    for split_name, lg in logs.items():
        if time_fits:
            dg.per_event_loglik_table(time_fits, lg, split_name, table)
    return table


# --- report --------------------------------------------------------------------


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing {what}: {path} (run `metn fit` first)")
    return path


def load_splits(out: Path) -> dict:
    data_dir = out / "data"
    meta = json.loads(_require(data_dir / "splits.json", "split manifest").read_text())
    labels = json.loads(_require(data_dir / "labels.json", "node labels").read_text())
    logs = {}
    for name, info in meta.items():
        path = _require(data_dir / f"{name}.csv", f"{name} split")
        if info["events"]:
            logs[name] = load_events(path, horizon=info["horizon"]).reindex(labels)
        else:
            logs[name] = EventLog([], [], [], len(labels), info["horizon"], tuple(labels))
    return logs


def run_report(cfg: RunConfig, out_dir=None) -> Path:
    """Write the CSV report suite from a fitted output directory."""
    out = Path(cfg.out)
    report_dir = Path(out_dir) if out_dir else out / "report"
    logs = load_splits(out)
    train = logs["train"]
    blocks = None
    if (out / "data" / "blocks.csv").exists():
        blocks = mk.load_blocks(out / "data" / "blocks.csv", train.labels)
    models = {}
    for case in cfg.cases:
        models[case] = ens.load_bundle(_require(out / "bundles" / case, f"bundle for case {case}"))
    fitted = {}
    for name in logs:
        fitted[name] = {}
        for kind in cfg.table_kinds:
            p = out / "timefits" / f"{name}_{kind}.json"
            if p.exists():
                fitted[name][kind] = timing.load_time_model(p)[0]
    train_fits = fitted.get("train", {})

    tables = []
    tables.append(dg.interevent_table(logs, _poisson_from_train(fitted), cfg.dataset,
                                      n_events=cfg.gap_moment_events,
                                      seed=_seed_int(derive_seed(cfg.seed, "gap-moments"))))

    ll = dg.ReportTable("loglik", dg.LOGLIK_COLUMNS)
    for name, lg in logs.items():
        dg.per_event_loglik_table(models, lg, name, ll)
        dg.per_event_loglik_table({f"time:{k}": m for k, m in train_fits.items()}, lg, name, ll)
    tables.append(ll)

    samples = {case: ens.sample(m, derive_seed(cfg.seed, "report-sample", case))
               for case, m in models.items()}
    window = cfg.motif_window or dg.default_motif_window(train)
    tables.append(dg.motif_table({"empirical": train, **samples}, window))

    raster = dg.raster_export(train, cfg.top_k, "node")
    for case, s in samples.items():
        dg.raster_export(s, cfg.top_k, "node", source=case, table=raster)
    if blocks is not None:
        dg.raster_export(train, cfg.top_k, "block", blocks, table=raster)
        for case, s in samples.items():
            dg.raster_export(s, cfg.top_k, "block", blocks, source=case, table=raster)
    tables.append(raster)

    heat_model = models.get("hawkes-block-mask")
    if blocks is not None and heat_model is not None:
        tables.extend(dg.block_unique_edge_heatmap(train, heat_model, blocks))
    else:
        for nm, typ in (("heatmap_obs", "int"), ("heatmap_exp", "float"), ("heatmap_res", "float")):
            tables.append(dg.ReportTable(nm, [("src_block", "int"), ("dst_block", "int"), ("value", typ)]))

    scatter = dg.degree_clustering_scatter(train)
    for case, m in models.items():
        dg.degree_clustering_scatter(m, table=scatter)
    tables.append(scatter)
    tables.append(dg.edges_table(logs, models))

    for t in tables:
        t.write(report_dir)
    return report_dir


def _poisson_from_train(fitted: dict) -> dict:
    # Poisson columns use the training rate on every split
    base = fitted.get("train", {}).get("poisson")
    out = {}
    for name, kinds in fitted.items():
        out[name] = dict(kinds)
        if base is not None:
            out[name]["poisson"] = base
    return out


def run_all(cfg: RunConfig) -> Path:
    out = run_fit(cfg)
    for case in cfg.cases:
        simulate_bundle(out / "bundles" / case, out / "samples", cfg.seed, cfg.reps)
    logs = load_splits(out)
    evaluate_bundles([out / "bundles" / c for c in cfg.cases], logs).write(out / "evaluate")
    run_report(cfg)
    return out

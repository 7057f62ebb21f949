"""
Experiment grids, result persistence and the run manifest.

Seeds: every stage draws its seeds from ``stage_seed(master, stage, *counters)``,
which is ``SeedSequence(master, spawn_key=(stage id, *counters))``, so any cell
can be rerun on its own and reproduces the value it had inside the full run.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__, clf, datagen, embed, fuse, peaks, replay, stats

STAGES = ("synth", "peaks", "embed", "fuse", "clf", "replay", "stats")
DEFAULT_SENSITIVITIES = (0.5, 0.6, 0.7, 0.8, 0.9)


class ConfigError(ValueError):
    pass


def stage_seed(master_seed: int, stage: str, *counters: int) -> int:
    """Counter-based seed for one stage and cell."""
    key = (STAGES.index(stage),) + tuple(int(c) for c in counters)
    return int(np.random.SeedSequence(int(master_seed), spawn_key=key).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _from_dict(cls, d, section):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


@dataclass(frozen=True)
class SynthSection:
    n_passages: int = 200
    snr_db: float | None = 20.0
    anomaly_rate: float = 0.5
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        if self.n_passages < 20:
            raise ValueError("n_passages must be >= 20")
        if not self.seeds:
            raise ValueError("at least one seed")


@dataclass(frozen=True)
class PeaksSection:
    algorithms: tuple[str, ...] = peaks.ALGORITHMS
    sensitivities: tuple[float, ...] = DEFAULT_SENSITIVITIES
    weighting: str = "both"

    def __post_init__(self):
        for a in self.algorithms:
            if a not in peaks.ALGORITHMS:
                raise ValueError(f"unknown detector {a!r}")
        if not self.sensitivities or any(not 0 <= s <= 1 for s in self.sensitivities):
            raise ValueError("sensitivities must lie in [0, 1]")
        if self.weighting not in ("both", "equal", "ad80"):
            raise ValueError(f"unknown weighting {self.weighting!r}")


@dataclass(frozen=True)
class EmbedSection:
    lr: float = 5e-4
    epochs: int = 150
    batch: int = 64
    beta: float = 1.412
    latent_dim: int = 20
    hidden: tuple[int, ...] = (256,)
    optimizer: str = "sgd"
    window_length: int = embed.WINDOW_LENGTH
    depth_ablation: bool = False

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def vae_config(self, seed: int, hidden=None) -> embed.VaeConfig:
        return embed.VaeConfig(lr=self.lr, epochs=self.epochs, batch=self.batch, beta=self.beta,
                               latent_dim=self.latent_dim,
                               hidden=self.hidden if hidden is None else tuple(hidden),
                               optimizer=self.optimizer, seed=seed)


@dataclass(frozen=True)
class FuseSection:
    strategies: tuple[str, ...] = tuple(fuse.STRATEGIES)
    max_wheels: int = fuse.MAX_WHEELS

    def __post_init__(self):
        for s in self.strategies:
            fuse.strategy(s)


@dataclass(frozen=True)
class ClfSection:
    n_trials: int = 4
    folds: int = 3

    def __post_init__(self):
        if self.n_trials < 1 or self.folds < 2:
            raise ValueError("n_trials >= 1 and folds >= 2 required")


@dataclass(frozen=True)
class ReplaySection:
    strategies: tuple[str, ...] = ("baseline", "rs", "prs", "lb", "plb")
    memories: tuple[int, ...] = (200, 800)
    beta: float = 1.0
    seeds: tuple[int, ...] = (0, 1, 2)
    passages_per_domain: int = 60
    scenario_order: tuple[str, ...] = replay.SCENARIO_ORDER
    fusion: str = "S-WD*"
    detector: str = "SD"
    sensitivity: float = 0.8
    vae_pool: int = 200

    def __post_init__(self):
        for s in self.strategies:
            if s not in replay.STRATEGIES:
                raise ValueError(f"unknown replay strategy {s!r}")
        for name in self.scenario_order:
            if name not in replay.SCENARIOS:
                raise ValueError(f"unknown scenario {name!r}")
        fuse.strategy(self.fusion)
        if self.detector not in peaks.ALGORITHMS:
            raise ValueError(f"unknown detector {self.detector!r}")
        if any(m < 0 for m in self.memories) or self.beta < 0:
            raise ValueError("memories and beta must be non-negative")


@dataclass(frozen=True)
class StatsSection:
    alpha: float = 0.05


_SECTIONS = {"synth": SynthSection, "peaks": PeaksSection, "embed": EmbedSection,
             "fuse": FuseSection, "clf": ClfSection, "replay": ReplaySection,
             "stats": StatsSection}


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthSection = SynthSection()
    peaks: PeaksSection = PeaksSection()
    embed: EmbedSection = EmbedSection()
    fuse: FuseSection = FuseSection()
    clf: ClfSection = ClfSection()
    replay: ReplaySection = ReplaySection()
    stats: StatsSection = StatsSection()
    master_seed: int = 0
    output_dir: str = "results"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(d) - set(_SECTIONS) - {"master_seed", "output_dir"}
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
        kw = {name: _from_dict(sec, d.get(name), name) for name, sec in _SECTIONS.items()}
        return cls(master_seed=int(d.get("master_seed", 0)),
                   output_dir=str(d.get("output_dir", "results")), **kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def desk_config(**overrides) -> ExperimentConfig:
    return ExperimentConfig.from_dict(overrides)


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def csv_text(rows: list[dict], columns=None) -> str:
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Anomaly-detection grid
# ---------------------------------------------------------------------------

@dataclass
class AdResults:
    sweep: list = field(default_factory=list)
    cells: list = field(default_factory=list)
    breakdown: list = field(default_factory=list)
    representation: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


SWEEP_COLUMNS = ("seed", "algorithm", "sensitivity", "count_accuracy", "grouping_accuracy",
                 "ad_accuracy", "selected")
CELL_COLUMNS = ("seed", "detector", "sensitivity", "strategy", "n_rows", "n_failed",
                "accuracy", "precision", "recall", "f1", "auc_roc", "trial_mean",
                "ci_half_width")
BREAKDOWN_COLUMNS = ("seed", "detector", "strategy", "partition", "group", "n", "accuracy")
REPR_COLUMNS = ("seed", "representation", "n_features", "accuracy", "precision", "recall",
                "f1", "auc_roc")


def _tuned_cell(X, y, cfg: ExperimentConfig, seed: int):
    """Random search, then out-of-fold scores of the best configuration."""
    search = clf.random_search(X, y, cfg.clf.n_trials, seed, k=cfg.clf.folds)
    folds = clf.stratified_folds(y, cfg.clf.folds,
                                 np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0]))
    proba = clf.cross_val_predict(X, y, search.best_config, folds)
    means = search.trial_means
    ci = stats.confidence_interval(means)[1] if means.size > 1 else 0.0
    return search, proba, float(means.mean()), ci


def _group_accuracy(ok, groups):
    out = []
    for g in sorted(set(groups), key=str):
        sel = np.array([x == g for x in groups])
        out.append((g, int(sel.sum()), float(ok[sel].mean())))
    return out


def _seed_batch(cfg: ExperimentConfig, seed: int):
    sampling = datagen.SamplingSpec(snr_db=cfg.synth.snr_db, anomaly_rate=cfg.synth.anomaly_rate)
    specs = datagen.sample_specs(sampling, cfg.synth.n_passages,
                                 stage_seed(cfg.master_seed, "synth", seed))
    return specs, datagen.synthesize_batch(specs)


def _representations(cfg: ExperimentConfig, seed: int, recs) -> dict:
    master = cfg.master_seed
    windows = [embed.make_window(r.accel, cfg.embed.window_length) for r in recs]
    vae, _ = embed.train_vae(windows, cfg.embed.vae_config(stage_seed(master, "embed", seed)))
    reps = {"vae": embed.encode_batch(windows, vae),
            "handcrafted": np.stack([embed.handcrafted_features(w) for w in windows])}
    if cfg.embed.depth_ablation:
        for depth, hidden in ((0, ()), (2, cfg.embed.hidden * 2)):
            v, _ = embed.train_vae(windows, cfg.embed.vae_config(
                stage_seed(master, "embed", seed, depth + 1), hidden=hidden))
            reps[f"vae_depth{depth}"] = embed.encode_batch(windows, v)
    return reps


def _representation_rows(cfg: ExperimentConfig, seed: int, reps: dict, y, failures) -> list:
    rows = []
    for ri, (name, F) in enumerate(reps.items()):
        try:
            _, proba, _, _ = _tuned_cell(F, y, cfg, stage_seed(cfg.master_seed, "clf", seed, 0, ri))
            m = clf.score_metrics(proba, y)
            rows.append(dict(seed=seed, representation=name, n_features=F.shape[1],
                             **{k: m[k] for k in REPR_COLUMNS[3:]}))
        except Exception as exc:  # noqa: BLE001 - recorded, grid continues
            failures.append({"seed": seed, "cell": f"representation/{name}", "error": repr(exc)})
    return rows


def compare_representations(config: ExperimentConfig) -> list[dict]:
    """VAE embedding vs handcrafted features, tuned classifier per seed (no detectors)."""
    rows, failures = [], []
    for seed in config.synth.seeds:
        specs, recs = _seed_batch(config, seed)
        y = np.array([s.is_anomalous for s in specs], dtype=int)
        rows += _representation_rows(config, seed, _representations(config, seed, recs), y,
                                     failures)
    if failures:
        raise RuntimeError(f"representation cells failed: {failures}")
    return rows


def _ad_seed(args):
    cfg, seed_index = args
    seed = cfg.synth.seeds[seed_index]
    master = cfg.master_seed
    res = AdResults()
    t0 = time.perf_counter()
    specs, recs = _seed_batch(cfg, seed)
    y = np.array([s.is_anomalous for s in specs], dtype=int)
    types = [s.anomaly_type for s in specs]
    counts = [len(s.defects) for s in specs]
    res.timings["synth"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    reps = _representations(cfg, seed, recs)
    rep = reps["vae"]
    res.timings["embed"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    res.representation += _representation_rows(cfg, seed, reps, y, res.failures)

    grid = tuple(cfg.peaks.sensitivities)
    for ai, alg in enumerate(cfg.peaks.algorithms):
        try:
            sems = {}
            ac, ad = [], []
            sweep_rows = []
            for si, s in enumerate(grid):
                sem_s = []
                cm = gm = 0
                for r in recs:
                    try:
                        sem = fuse.passage_semantics(r, alg, s)
                    except ValueError:
                        sem = None
                    sem_s.append(sem)
                    if sem is not None:
                        acc = peaks.axle_count_accuracy(sem, r.truth.train)
                        cm += acc.count_match
                        gm += acc.grouping_match
                sems[s] = sem_s
                ds = fuse.build_dataset(recs, "I-WD", alg, s, semantics=sem_s,
                                        max_wheels=cfg.fuse.max_wheels)
                folds = clf.stratified_folds(ds.y, cfg.clf.folds,
                                             np.random.default_rng(stage_seed(master, "peaks", seed, ai, si)))
                p = clf.cross_val_predict(ds.X, ds.y, clf.GbdtConfig(n_estimators=50), folds)
                ad_acc = float(np.mean((p >= 0.5) == ds.y))
                ac.append(cm / len(recs))
                ad.append(ad_acc)
                sweep_rows.append(dict(seed=seed, algorithm=alg, sensitivity=s,
                                       count_accuracy=cm / len(recs),
                                       grouping_accuracy=gm / len(recs), ad_accuracy=ad_acc))
            chosen = peaks.select_sensitivity(grid, ac, ad, cfg.peaks.weighting)
            for row in sweep_rows:
                row["selected"] = row["sensitivity"] == chosen
            res.sweep += sweep_rows
        except Exception as exc:  # noqa: BLE001
            res.failures.append({"seed": seed, "cell": f"sweep/{alg}", "error": repr(exc)})
            continue

        for ci_, name in enumerate(cfg.fuse.strategies):
            try:
                ds = fuse.build_dataset(recs, name, alg, chosen, representation=rep,
                                        semantics=sems[chosen], max_wheels=cfg.fuse.max_wheels)
                Xd, yd = ds.X, ds.y
                _, proba, trial_mean, ci = _tuned_cell(
                    Xd, yd, cfg, stage_seed(master, "clf", seed, ai + 1, ci_))
                m = clf.score_metrics(proba, yd)
                res.cells.append(dict(seed=seed, detector=alg, sensitivity=chosen, strategy=name,
                                      n_rows=len(ds), n_failed=ds.n_failed, trial_mean=trial_mean,
                                      ci_half_width=ci, **{k: m[k] for k in CELL_COLUMNS[6:11]}))
                ok = (proba >= 0.5) == yd
                kept = ds.passage_index
                for part, labels in (("type", types), ("count", counts)):
                    groups = [labels[i] for i in kept]
                    for g, n, acc in _group_accuracy(ok, groups):
                        res.breakdown.append(dict(seed=seed, detector=alg, strategy=name,
                                                  partition=part, group=g, n=n, accuracy=acc))
            except Exception as exc:  # noqa: BLE001
                res.failures.append({"seed": seed, "cell": f"{alg}/{name}", "error": repr(exc)})
    res.timings["clf"] = time.perf_counter() - t0
    return res


def run_ad_grid(config: ExperimentConfig, jobs: int = 1) -> AdResults:
    """Detectors x fusion strategies with a tuned classifier per cell, for every seed."""
    parts = _map(_ad_seed, [(config, i) for i in range(len(config.synth.seeds))], jobs)
    out = AdResults()
    for p in parts:
        out.sweep += p.sweep
        out.cells += p.cells
        out.breakdown += p.breakdown
        out.representation += p.representation
        out.failures += p.failures
        for k, v in p.timings.items():
            out.timings[f"ad.{k}"] = out.timings.get(f"ad.{k}", 0.0) + v
    return out


# ---------------------------------------------------------------------------
# Continual-learning grid
# ---------------------------------------------------------------------------

@dataclass
class ClResults:
    metrics: list = field(default_factory=list)
    matrices: list = field(default_factory=list)
    timeline: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


CL_COLUMNS = ("strategy", "memory", "seed", "fwt", "bwt", "im", "kgr")
R_COLUMNS = ("strategy", "memory", "seed", "row") + tuple(f"d{i + 1}" for i in range(5))
TIMELINE_COLUMNS = ("strategy", "memory", "seed", "after_domain", "domain", "scenario",
                    "accuracy", "buffer_size")


def cl_domains(config: ExperimentConfig, seed: int):
    """Frozen-VAE datasets, one per scenario, for one seed."""
    rc = config.replay
    master = config.master_seed
    pool_specs = datagen.sample_specs(replay.SCENARIOS["Balanced"].sampling, rc.vae_pool,
                                      stage_seed(master, "synth", 1000, seed))
    pool = [embed.make_window(r.accel, config.embed.window_length)
            for r in datagen.synthesize_batch(pool_specs)]
    vae, _ = embed.train_vae(pool, config.embed.vae_config(stage_seed(master, "embed", 1000, seed)))
    domains = []
    for d, sc in enumerate(replay.scenario_sequence(rc.scenario_order)):
        specs = datagen.sample_specs(sc.sampling, rc.passages_per_domain,
                                     stage_seed(master, "synth", 2000 + d, seed))
        recs = datagen.synthesize_batch(specs)
        domains.append(fuse.build_dataset(recs, rc.fusion, rc.detector, rc.sensitivity, vae=vae,
                                          domain_id=d + 1, max_wheels=config.fuse.max_wheels))
    return domains


def _cl_seed(args):
    config, seed = args
    rc = config.replay
    res = ClResults()
    t0 = time.perf_counter()
    domains = cl_domains(config, seed)
    res.timings["data"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    names = list(rc.scenario_order)
    cache = {}
    for strat in rc.strategies:
        for mem in rc.memories:
            try:
                key = ("baseline", None) if strat == "baseline" else (strat, mem)
                if key not in cache:
                    cache[key] = replay.run_domain_stream(
                        domains, strat, mem, rc.beta, clf.GbdtConfig(),
                        seed=stage_seed(config.master_seed, "replay", seed))
                r = cache[key]
                res.metrics.append(dict(strategy=strat, memory=mem, seed=seed, **r.metrics))
                for row in range(r.matrix.R.shape[0]):
                    res.matrices.append(dict(strategy=strat, memory=mem, seed=seed, row=row, **{
                        f"d{i + 1}": r.matrix.R[row, i] for i in range(r.matrix.n_domains)}))
                for t in range(r.matrix.n_domains):
                    for i in range(r.matrix.n_domains):
                        res.timeline.append(dict(strategy=strat, memory=mem, seed=seed,
                                                 after_domain=t + 1, domain=i + 1,
                                                 scenario=names[i], accuracy=r.matrix.R[t + 1, i],
                                                 buffer_size=r.buffer_sizes[t]))
            except Exception as exc:  # noqa: BLE001
                res.failures.append({"seed": seed, "cell": f"{strat}/{mem}", "error": repr(exc)})
    res.timings["stream"] = time.perf_counter() - t0
    return res


def run_cl_grid(config: ExperimentConfig, jobs: int = 1) -> ClResults:
    """Replay strategies x memory sizes x seeds over the scenario stream."""
    parts = _map(_cl_seed, [(config, s) for s in config.replay.seeds], jobs)
    out = ClResults()
    for p in parts:
        out.metrics += p.metrics
        out.matrices += p.matrices
        out.timeline += p.timeline
        out.failures += p.failures
        for k, v in p.timings.items():
            out.timings[f"cl.{k}"] = out.timings.get(f"cl.{k}", 0.0) + v
    return out


def table6(metrics_rows) -> list[dict]:
    """Mean FWT/BWT/IM/KGR per (strategy, memory), in input order."""
    groups = {}
    for r in metrics_rows:
        groups.setdefault((r["strategy"], int(r["memory"])), []).append(r)
    out = []
    for (s, m), rows in groups.items():
        out.append(dict(strategy=s, memory=m, n_seeds=len(rows), **{
            k: float(np.mean([float(r[k]) for r in rows])) for k in ("fwt", "bwt", "im", "kgr")}))
    return out


# ---------------------------------------------------------------------------
# Statistics over results
# ---------------------------------------------------------------------------

def block_table(rows, treatment: str, blocks, value: str):
    """Pivot result rows into a RankBlockTable; blocks missing any treatment are dropped."""
    blocks = list(blocks)
    treatments = []
    cells = {}
    for r in rows:
        t = str(r[treatment])
        if t not in treatments:
            treatments.append(t)
        cells[(tuple(str(r[b]) for b in blocks), t)] = float(r[value])
    keys = []
    for (b, _) in cells:
        if b not in keys:
            keys.append(b)
    complete = [b for b in keys if all((b, t) in cells for t in treatments)]
    scores = np.array([[cells[(b, t)] for t in treatments] for b in complete])
    return stats.RankBlockTable(scores, tuple(treatments))


def significance_rows(name, table, alpha):
    stat, p = stats.friedman(table)
    post = stats.shaffer_posthoc(table, alpha, require_rejection=False)
    rows = []
    for (a, b), z, raw, adj in zip(post.pairs, post.z, post.raw_p, post.adjusted_p):
        rows.append(dict(comparison=name, treatment_a=table.names[a], treatment_b=table.names[b],
                         z=z, raw_p=raw, adjusted_p=adj, significant=adj < alpha,
                         friedman_rejected=p < alpha))
    summary = dict(comparison=name, n_blocks=table.n, k=table.k, statistic=stat, p_value=p,
                   rejected=p < alpha)
    return summary, rows


FRIEDMAN_COLUMNS = ("comparison", "n_blocks", "k", "statistic", "p_value", "rejected")
SHAFFER_COLUMNS = ("comparison", "treatment_a", "treatment_b", "z", "raw_p", "adjusted_p",
                   "significant", "friedman_rejected")


def run_stats(ad: AdResults | None, cl: ClResults | None, alpha: float = 0.05):
    summaries, pairs, failures = [], [], []
    jobs = []
    if ad is not None and ad.cells:
        jobs.append(("ad_strategies", block_table(ad.cells, "strategy", ("seed", "detector"),
                                                  "accuracy")))
    if cl is not None and cl.metrics:
        finals = {}
        for r in cl.matrices:
            if int(r["row"]) == max(int(x["row"]) for x in cl.matrices):
                vals = [float(v) for k, v in r.items() if k.startswith("d") and v != ""]
                finals[(r["strategy"], r["memory"], r["seed"])] = float(np.mean(vals))
        rows = [dict(strategy=s, memory=m, seed=sd, final_accuracy=v)
                for (s, m, sd), v in finals.items()]
        jobs.append(("cl_final_accuracy", block_table(rows, "strategy", ("seed", "memory"),
                                                      "final_accuracy")))
    for name, table in jobs:
        try:
            s, p = significance_rows(name, table, alpha)
            summaries.append(s)
            pairs += p
        except Exception as exc:  # noqa: BLE001
            failures.append({"cell": f"stats/{name}", "error": repr(exc)})
    return summaries, pairs, failures


# ---------------------------------------------------------------------------
# Report and manifest
# ---------------------------------------------------------------------------

def ad_summary(cells) -> list[dict]:
    """Table-4 style mean ± CI of accuracy over seeds per (detector, strategy)."""
    groups = {}
    for r in cells:
        groups.setdefault((r["detector"], r["strategy"]), []).append(float(r["accuracy"]))
    out = []
    for (d, s), accs in groups.items():
        mean, half = stats.confidence_interval(accs) if len(accs) > 1 else (accs[0], 0.0)
        out.append(dict(detector=d, strategy=s, n_seeds=len(accs), mean_accuracy=mean,
                        ci_half_width=half, formatted=stats.format_ci(mean, half)))
    return out


def emit_report(results: dict, out_dir) -> list[Path]:
    """Write one CSV per non-empty table plus ``report.md``.

    ``results`` maps a table name to ``(rows, columns)``.  The report lists
    every CSV with its SHA-256.  Returns the written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    lines = ["# Results", ""]
    for name, (rows, columns) in results.items():
        if not rows:
            continue
        path = out_dir / f"{name}.csv"
        path.write_text(csv_text(rows, columns))
        written.append(path)
    if not written:
        lines += ["## No results", "", "The grid produced no result rows.", ""]
    else:
        lines += ["| file | rows | sha256 |", "|---|---|---|"]
        for p in written:
            n = len(results[p.stem][0])
            lines.append(f"| {p.name} | {n} | `{sha256_file(p)}` |")
        lines.append("")
        t4 = results.get("ad_summary", ([], None))[0]
        if t4:
            lines += ["## Anomaly detection (mean accuracy ± 95% CI over seeds)", "",
                      "| detector | strategy | accuracy |", "|---|---|---|"]
            lines += [f"| {r['detector']} | {r['strategy']} | {r['formatted']} |" for r in t4]
            lines.append("")
        t6 = results.get("cl_table6", ([], None))[0]
        if t6:
            lines += ["## Continual learning (means over seeds)", "",
                      "| strategy | memory | FWT | BWT | IM | KGR |", "|---|---|---|---|---|---|"]
            lines += [f"| {r['strategy']} | {r['memory']} | {r['fwt']:.4f} | {r['bwt']:.4f} | "
                      f"{r['im']:.4f} | {r['kgr']:.4f} |" for r in t6]
            lines.append("")
    report = out_dir / "report.md"
    report.write_text("\n".join(lines))
    return written + [report]


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    stage_seeds: dict
    files: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def verify(self, out_dir) -> list[str]:
        """Names of listed files whose checksum no longer matches."""
        out_dir = Path(out_dir)
        return [n for n, h in self.files.items()
                if h != "self" and (not (out_dir / n).exists() or sha256_file(out_dir / n) != h)]


def _stage_seed_table(config: ExperimentConfig) -> dict:
    m = config.master_seed
    return {
        "synth": {str(s): stage_seed(m, "synth", s) for s in config.synth.seeds},
        "embed": {str(s): stage_seed(m, "embed", s) for s in config.synth.seeds},
        "replay": {str(s): stage_seed(m, "replay", s) for s in config.replay.seeds},
        "rule": "SeedSequence(master_seed, spawn_key=(stage index, *counters))",
    }


def write_manifest(out_dir, manifest: RunManifest) -> Path:
    out_dir = Path(out_dir)
    files = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[str(p.relative_to(out_dir))] = sha256_file(p)
    files["manifest.json"] = "self"
    manifest.files = files
    path = out_dir / "manifest.json"
    path.write_text(manifest.to_json())
    return path


def result_tables(ad: AdResults | None, cl: ClResults | None, stat_summary=(), stat_pairs=()):
    tables = {}
    if ad is not None:
        tables["ad_sensitivity_sweep"] = (ad.sweep, SWEEP_COLUMNS)
        tables["ad_cells"] = (ad.cells, CELL_COLUMNS)
        tables["ad_summary"] = (ad_summary(ad.cells),
                                ("detector", "strategy", "n_seeds", "mean_accuracy",
                                 "ci_half_width", "formatted"))
        tables["ad_anomaly_breakdown"] = (ad.breakdown, BREAKDOWN_COLUMNS)
        tables["ad_representation"] = (ad.representation, REPR_COLUMNS)
    if cl is not None:
        tables["cl_metrics"] = (cl.metrics, CL_COLUMNS)
        tables["cl_table6"] = (table6(cl.metrics),
                               ("strategy", "memory", "n_seeds", "fwt", "bwt", "im", "kgr"))
        tables["cl_r_matrix"] = (cl.matrices, R_COLUMNS)
        tables["cl_timeline"] = (cl.timeline, TIMELINE_COLUMNS)
    tables["stats_friedman"] = (list(stat_summary), FRIEDMAN_COLUMNS)
    tables["stats_shaffer"] = (list(stat_pairs), SHAFFER_COLUMNS)
    return tables


def run_all(config: ExperimentConfig, out_dir=None, jobs: int = 1) -> RunManifest:
    """AD grid, CL grid, statistics, report and manifest into ``out_dir``."""
    out_dir = Path(out_dir or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    manifest = RunManifest(config.digest(), __version__, _stage_seed_table(config))
    t0 = time.perf_counter()
    ad = run_ad_grid(config, jobs)
    manifest.wall_clock["ad_grid"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    cl = run_cl_grid(config, jobs)
    manifest.wall_clock["cl_grid"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    summ, pairs, sfail = run_stats(ad, cl, config.stats.alpha)
    manifest.wall_clock["stats"] = time.perf_counter() - t0
    manifest.wall_clock.update(ad.timings)
    manifest.wall_clock.update(cl.timings)
    manifest.failures = ad.failures + cl.failures + sfail
    emit_report(result_tables(ad, cl, summ, pairs), out_dir)
    write_manifest(out_dir, manifest)
    return manifest

"""
Command-line entry point: ``wayside <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from . import __version__, clf, datagen, embed, experiments, fuse, peaks, replay, stats, synth
from .experiments import ConfigError, ExperimentConfig

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3
log = logging.getLogger("wayside")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    d = cfg.to_dict()
    if args.seed is not None:
        d["master_seed"] = args.seed
    if args.out is not None:
        d["output_dir"] = args.out
    return ExperimentConfig.from_dict(d)


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    cfg = _config(args)
    sampling = datagen.SamplingSpec(snr_db=cfg.synth.snr_db, anomaly_rate=cfg.synth.anomaly_rate)
    n = args.n or cfg.synth.n_passages
    specs = datagen.sample_specs(sampling, n, experiments.stage_seed(cfg.master_seed, "synth", 0))
    datagen.save_batch(_out(args, "passages"), datagen.synthesize_batch(specs))


def cmd_peaks(args):
    recs = datagen.load_batch(args.passages)
    rows = []
    for i, r in enumerate(recs):
        sem = fuse.passage_semantics(r, args.algorithm, args.sensitivity)
        acc = peaks.axle_count_accuracy(sem, r.truth.train)
        rows.append(dict(passage=i, train_type=r.truth.train.name, wheels=sem.Z,
                         expected=r.truth.train.expected_wheel_count,
                         count_match=acc.count_match, grouping_match=acc.grouping_match,
                         times=" ".join(f"{t:.5f}" for t in sem.X)))
    _write(_out(args, "peaks.csv"), experiments.csv_text(rows))
    if args.dataset:
        vae = embed.load_vae(args.model)[0] if args.model else None
        ds = fuse.build_dataset(recs, args.strategy, args.algorithm, args.sensitivity, vae=vae)
        Path(args.dataset).parent.mkdir(parents=True, exist_ok=True)
        ds.save(args.dataset)


def _windows(directory):
    return [embed.make_window(r.accel) for r in datagen.load_batch(directory)]


def cmd_embed(args):
    cfg = _config(args)
    if args.action == "train":
        windows = _windows(args.windows)
        seed = experiments.stage_seed(cfg.master_seed, "embed", 0)
        params, hist = embed.train_vae(windows, cfg.embed.vae_config(seed))
        embed.save_vae(args.model, params, seed, hist)
        log.info("validation loss %.2f -> %.2f", hist.val_initial, hist.val[-1])
    else:
        params, _ = embed.load_vae(args.model)
        Z = embed.encode_batch(_windows(args.windows), params)
        L = params.latent_dim
        cols = [f"mu{i}" for i in range(L)] + [f"logvar{i}" for i in range(L)]
        rows = [dict(zip(cols, z)) for z in Z]
        _write(_out(args, "embeddings.csv"), experiments.csv_text(rows, cols))


def cmd_clf(args):
    cfg = _config(args)
    ds = fuse.load_dataset(args.data)
    if args.action == "train":
        config = clf.GbdtConfig.from_dict(json.loads(Path(args.params).read_text())) \
            if args.params else clf.GbdtConfig(seed=cfg.master_seed)
        model = clf.train_gbdt(ds.X, ds.targets, config, layout=ds.layout)
        _write(Path(args.model), model.to_json())
    elif args.action == "eval":
        model = clf.GbdtModel.from_json(Path(args.model).read_text())
        metrics = clf.evaluate(model, ds.X, ds.y, layout=ds.layout)
        _write(_out(args, "metrics.json"), json.dumps(metrics, indent=2, sort_keys=True))
    else:
        res = clf.random_search(ds.X, ds.y, args.trials or cfg.clf.n_trials,
                                experiments.stage_seed(cfg.master_seed, "clf", 0),
                                k=args.folds or 5)
        out = {"best_config": res.best_config.to_dict(), "best_score": res.best_score,
               "trials": [{"config": c.to_dict(), "fold_accuracy": s} for c, s in res.trials]}
        _write(_out(args, "search.json"), json.dumps(out, indent=2))


def cmd_cl(args):
    cfg = _config(args)
    d = cfg.to_dict()
    rc = d["replay"]
    if args.strategy:
        rc["strategies"] = [args.strategy]
    if args.memory:
        rc["memories"] = [args.memory]
    if args.beta is not None:
        rc["beta"] = args.beta
    if args.seeds:
        rc["seeds"] = [int(s) for s in args.seeds.split(",")]
    if args.scenario_order:
        rc["scenario_order"] = args.scenario_order.split(",")
    cfg = ExperimentConfig.from_dict(d)
    res = experiments.run_cl_grid(cfg, args.jobs)
    out = _out(args, "cl")
    tables = {
        "cl_r_matrix": (res.matrices, experiments.R_COLUMNS),
        "cl_timeline": (res.timeline, experiments.TIMELINE_COLUMNS),
        "cl_metrics": (res.metrics, experiments.CL_COLUMNS),
    }
    experiments.emit_report(tables, out)
    keyed = {f"{r['strategy']}/{r['memory']}/{r['seed']}": {k: r[k] for k in ("fwt", "bwt", "im", "kgr")}
             for r in res.metrics}
    _write(out / "metrics.json", json.dumps(keyed, indent=2, sort_keys=True))
    if res.failures:
        raise StageFailure(f"{len(res.failures)} cell(s) failed: {res.failures}")


def cmd_stats(args):
    rows = experiments.read_csv(args.results)
    table = experiments.block_table(rows, args.treatment, args.blocks.split(","), args.value)
    if args.test == "friedman":
        stat, p = stats.friedman(table)
        out = [dict(comparison=Path(args.results).stem, n_blocks=table.n, k=table.k,
                    statistic=stat, p_value=p, rejected=p < args.alpha)]
        text = experiments.csv_text(out, experiments.FRIEDMAN_COLUMNS)
    else:
        _, pairs = experiments.significance_rows(Path(args.results).stem, table, args.alpha)
        text = experiments.csv_text(pairs, experiments.SHAFFER_COLUMNS)
    _write(_out(args, f"{args.test}.csv"), text)


def cmd_report(args):
    src = Path(args.results)
    tables = {}
    for p in sorted(src.glob("*.csv")):
        rows = experiments.read_csv(p)
        cols = list(rows[0].keys()) if rows else []
        if p.stem == "cl_table6":
            rows = [dict(r, **{k: float(r[k]) for k in ("fwt", "bwt", "im", "kgr")}) for r in rows]
        tables[p.stem] = (rows, cols)
    experiments.emit_report(tables, _out(args, str(src)))


def cmd_run_all(args):
    cfg = _config(args)
    manifest = experiments.run_all(cfg, cfg.output_dir, args.jobs)
    if manifest.failures:
        raise StageFailure(f"{len(manifest.failures)} cell(s) failed; see manifest.json")


class StageFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="wayside", description=__doc__.strip().splitlines()[0],
                                parents=[common])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="simulate a passage batch")
    s.add_argument("-n", type=int, help="number of passages")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("peaks", parents=[common], help="axle detection on a passage batch")
    s.add_argument("--passages", required=True)
    s.add_argument("--algorithm", choices=peaks.ALGORITHMS, default="SD")
    s.add_argument("--sensitivity", type=float, default=0.8)
    s.add_argument("--dataset", help="also write a fused dataset CSV here")
    s.add_argument("--strategy", default="I-WD*", help="fusion strategy for --dataset")
    s.add_argument("--model", help="VAE model file for strategies using the signal block")
    s.set_defaults(func=cmd_peaks)

    s = sub.add_parser("embed", parents=[common], help="train or apply the VAE")
    s.add_argument("action", choices=("train", "apply"))
    s.add_argument("--windows", required=True, help="passage batch directory")
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("clf", parents=[common], help="train, evaluate or tune the classifier")
    s.add_argument("action", choices=("train", "eval", "tune"))
    s.add_argument("--data", required=True, help="dataset CSV")
    s.add_argument("--model")
    s.add_argument("--params", help="GBDT config JSON for train")
    s.add_argument("--trials", type=int)
    s.add_argument("--folds", type=int)
    s.set_defaults(func=cmd_clf)

    s = sub.add_parser("cl", parents=[common], help="continual-learning stream")
    s.add_argument("action", choices=("run",))
    s.add_argument("--strategy", choices=replay.STRATEGIES)
    s.add_argument("--memory", type=int, choices=(200, 800))
    s.add_argument("--beta", type=float)
    s.add_argument("--seeds", help="comma-separated seeds")
    s.add_argument("--scenario-order", help="comma-separated scenario names")
    s.set_defaults(func=cmd_cl)

    s = sub.add_parser("stats", parents=[common], help="Friedman / Shaffer on a results CSV")
    s.add_argument("test", choices=("friedman", "shaffer"))
    s.add_argument("--results", required=True)
    s.add_argument("--treatment", default="strategy")
    s.add_argument("--blocks", default="seed,detector")
    s.add_argument("--value", default="accuracy")
    s.add_argument("--alpha", type=float, default=0.05)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("report", parents=[common], help="rebuild report.md from result CSVs")
    s.add_argument("--results", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("run-all", parents=[common], help="full experiment grid")
    s.set_defaults(func=cmd_run_all)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, synth.ConfigurationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any stage error maps to exit 3
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

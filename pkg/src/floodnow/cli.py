"""
Command-line front door: ``floodnow <command> --config pipeline.yaml [--seed N]``.

Every command reads its upstream artifacts from the output directory, writes
its own artifacts there, and records a ``manifest_<command>.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig, load_config
from .dataset import (
    IngestError,
    TabularDataset,
    aggregate_to_grid,
    cell_of,
    merge_claims,
    normalize_claims,
    normalize_numeric_columns,
    read_claims_csv,
    read_features_csv,
    read_grid_csv,
    read_table_csv,
    sum_by_building,
    write_claims_csv,
    write_grid_csv,
    write_table_csv,
)
from .fixtures import write_demo_project
from .gbdt import GbdtModel, importance_table, predict_proba, train
from .labeling import elbow_curve, label_cells, read_labels_csv, write_elbow_csv, write_labels_csv
from .metrics import evaluate, format_report, marginal_similarity, write_pr_csv
from .synth import SynthDivergenceError, fit, sample
from .synth.model import TrainingLog
from .tuning import (
    grid_search_synth,
    random_search,
    read_best_trial,
    stratified_split,
    undersample,
    write_best_trial,
    write_grid_csv as write_synth_grid_csv,
    write_trials_csv,
)

LABEL_COLUMN = "pde_class"


class MissingArtifact(FileNotFoundError):
    pass


class Run:
    """Output-directory bookkeeping for one command."""

    def __init__(self, name: str, cfg: PipelineConfig):
        self.name = name
        self.cfg = cfg
        self.out = cfg.output
        self.out.mkdir(parents=True, exist_ok=True)
        self.written: list[str] = []
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        self.written.append(name)
        return self.out / name

    def need(self, name: str) -> Path:
        p = self.out / name
        if not p.exists():
            raise MissingArtifact(f"missing upstream artifact {p}; run the command that produces it first")
        return p

    def plot(self, name: str, fn: Callable, *args) -> None:
        if self.cfg.plots:
            from . import plotting  # matplotlib loads only when plots are on

            getattr(plotting, fn)(self.path(name), *args)

    def finish(self) -> None:
        manifest = {
            "command": self.name,
            "config_sha256": self.cfg.digest,
            "seed": self.cfg.seed,
            "versions": {"floodnow": __version__, "numpy": np.__version__, "python": platform.python_version()},
            "artifacts": sorted(self.written),
            "wall_time_s": round(time.perf_counter() - self.t0, 3),
        }
        (self.out / f"manifest_{self.name}.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


# -- shared loaders -----------------------------------------------------------


def _labeled_dataset(run: Run) -> tuple[list[tuple[int, int]], TabularDataset]:
    cfg = run.cfg
    schema = cfg.require("schema")
    features = cfg.require("features")
    if not features.exists():
        raise MissingArtifact(f"features file not found: {features}")
    labels = read_labels_csv(run.need("labels.csv"))
    cell_ids, ds = read_features_csv(features, schema)
    missing = [c for c in cell_ids if c not in labels]
    if missing:
        raise IngestError(f"{len(missing)} feature cells have no label, first {missing[0]}")
    y = np.array([labels[c] for c in cell_ids], dtype=np.int64)
    ds = normalize_numeric_columns(TabularDataset(schema, ds.X, y, cfg.labeling.k))
    return cell_ids, ds


def _split(run: Run, cell_ids, ds) -> tuple[TabularDataset, TabularDataset]:
    with open(run.need("split.csv"), newline="", encoding="utf-8") as fh:
        part = {(int(r["cell_col"]), int(r["cell_row"])): r["partition"] for r in csv.DictReader(fh)}
    train_idx = [i for i, c in enumerate(cell_ids) if part.get(c) == "train"]
    test_idx = [i for i, c in enumerate(cell_ids) if part.get(c) == "test"]
    return ds.subset(train_idx), ds.subset(test_idx)


def _read_augmented(run: Run, schema, k) -> TabularDataset:
    return read_table_csv(run.need("augmented.csv"), schema, LABEL_COLUMN, k)


# -- commands -----------------------------------------------------------------


def cmd_ingest(cfg: PipelineConfig) -> Run:
    """Merge claims, normalize them per source and sum them onto the grid."""
    run = Run("ingest", cfg)
    grid = cfg.require("grid")
    claims_path = cfg.require("claims")
    if not claims_path.exists():
        raise MissingArtifact(f"claims file not found: {claims_path}")
    records = read_claims_csv(claims_path)
    nfip = [r for r in records if r.source == "NFIP"]
    ia = [r for r in records if r.source == "IA"]
    merged = sum_by_building(merge_claims(nfip, ia))
    outside = []
    for r in merged:
        try:
            cell_of((r.x, r.y), grid)
        except IngestError:
            outside.append(r)
    if outside:
        listing = "\n".join(f"  {r.claim_id} ({r.x}, {r.y})" for r in outside)
        raise IngestError(f"{len(outside)} claim points outside the grid extent:\n{listing}")
    normalized = normalize_claims(merged, cfg.cap_percentile) if merged else []
    cells = aggregate_to_grid([((r.x, r.y), v) for r, v in normalized], grid)

    write_claims_csv(run.path("claims_merged.csv"), merged)
    with open(run.path("claims_normalized.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["claim_id", "source", "building_id", "x", "y", "amount", "normalized"])
        for r, v in normalized:
            w.writerow([r.claim_id, r.source, r.building_id, repr(r.x), repr(r.y), repr(r.amount), repr(v)])
    write_grid_csv(run.path("grid.csv"), cells)
    run.plot("grid.png", "plot_grid", cells, [c.claim_sum for c in cells], "summed normalized claims")
    print(f"claims read: {len(records)} ({len(nfip)} NFIP, {len(ia)} IA)")
    print(f"claims after merge: {len(merged)}")
    print(f"grid cells: {len(cells)} ({sum(c.claim_count > 0 for c in cells)} with claims)")
    return run


def cmd_label(cfg: PipelineConfig) -> Run:
    """Cluster cell sums into ordinal damage classes; write the elbow curve."""
    run = Run("label", cfg)
    cells = read_grid_csv(run.need("grid.csv"))
    lab = cfg.labeling
    labels = label_cells(cells, lab.k, cfg.seed, lab.restarts)
    sums = [c.claim_sum for c in cells]
    max_k = min(lab.elbow_max_k, len(set(sums)))
    curve = elbow_curve(sums, (1, max_k), lab.restarts, cfg.seed)
    write_labels_csv(run.path("labels.csv"), cells, labels)
    write_elbow_csv(run.path("elbow.csv"), curve)
    run.plot("labels.png", "plot_grid", cells, [y for _, y in labels], "damage class", True)
    run.plot("elbow.png", "plot_elbow", curve)
    counts = np.bincount([y for _, y in labels], minlength=lab.k)
    for c, n in enumerate(counts):
        print(f"class {c}: {n} cells ({n / len(cells):.2%})")
    return run


def cmd_augment(cfg: PipelineConfig) -> Run:
    """Split real rows 80/20, fit the synthesizer and sample an augmented pool."""
    run = Run("augment", cfg)
    cell_ids, ds = _labeled_dataset(run)
    aug = cfg.augment
    part = stratified_split(ds.labels, aug.train_frac, cfg.seed)
    with open(run.path("split.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_col", "cell_row", "partition"])
        train_set = set(part.train.tolist())
        for i, (col, row) in enumerate(cell_ids):
            w.writerow([col, row, "train" if i in train_set else "test"])
    train80 = ds.subset(part.train)
    write_table_csv(run.path("real_train.csv"), train80, label_column=LABEL_COLUMN)
    write_table_csv(run.path("real_test.csv"), ds.subset(part.test), label_column=LABEL_COLUMN)

    ckpt_dir = run.out / "synth_checkpoints"
    every = cfg.synth.checkpoint_every
    epochs = set(range(every, cfg.synth.max_epochs + 1, every)) | ({aug.epoch} if aug.epoch else set())
    model = fit(train80, ds.n_classes, cfg.synth, checkpoint_epochs=sorted(epochs), checkpoint_dir=ckpt_dir)
    run.written += [f"synth_checkpoints/{p.name}" for p in sorted(ckpt_dir.glob("*.json"))]
    model.save(run.path("synth_model.json"))
    model.log.write_csv(run.path("loss_log.csv"))
    chosen = model.checkpoints[aug.epoch] if aug.epoch else model
    synthetic = sample(chosen, aug.n_rows, aug.class_ratios, seed=cfg.seed)
    write_table_csv(run.path("augmented.csv"), synthetic, label_column=LABEL_COLUMN)

    scores, mean = marginal_similarity(train80, synthetic)
    with open(run.path("similarity.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "similarity"])
        for f, s in zip(ds.schema.names, scores):
            w.writerow([f, repr(float(s))])
        w.writerow(["mean", repr(mean)])
    if cfg.plots:
        ma = TrainingLog.moving_average
        run.plot("loss_log.png", "plot_losses", model.log.gen_loss, model.log.disc_loss,
                 ma(model.log.gen_loss), ma(model.log.disc_loss))
    print(f"real rows: {ds.n_rows} (train {len(part.train)}, test {len(part.test)})")
    print(f"synthetic rows: {synthetic.n_rows}, class counts {synthetic.class_counts().tolist()}")
    print(f"mean marginal similarity: {mean:.4f}")
    return run


def cmd_tune(cfg: PipelineConfig) -> Run:
    """Synthesizer grid (optional) then GBDT random search over under-sampled pools."""
    run = Run("tune", cfg)
    cell_ids, ds = _labeled_dataset(run)
    train80, test20 = _split(run, cell_ids, ds)
    tune = cfg.tune
    if tune.synth_grid is not None:
        ranked = grid_search_synth(train80, test20, tune.synth_grid, cfg.synth, cfg.gbdt,
                                   n_rows=tune.grid_rows, ratios=cfg.augment.class_ratios,
                                   seed=cfg.seed, n_jobs=tune.n_jobs)
        write_synth_grid_csv(run.path("synth_grid.csv"), ranked)
        top = ranked[0]
        print(f"best synthesizer cell: gen_lr={top.gen_lr} disc_lr={top.disc_lr} epochs={top.epochs} "
              f"map_pretrain={top.map_pretrain:.4f} map_real={top.map_real:.4f}")
    pool = _read_augmented(run, ds.schema, ds.n_classes)
    best, trials = random_search(pool, test20, tune.space, tune.iterations, cfg.gbdt, cfg.seed, tune.n_jobs)
    write_trials_csv(run.path("trials.csv"), trials)
    write_best_trial(run.path("best_trial.json"), best)
    best.model.save(run.path("tuned_model.json"))
    n_failed = sum(not t.ok for t in trials)
    print(f"trials: {len(trials)} ({n_failed} failed)")
    print(f"best trial {best.index}: {best.params} map_eval={best.map_eval:.4f}")
    return run


def cmd_train(cfg: PipelineConfig) -> Run:
    """Train the GBDT on real or augmented rows."""
    run = Run("train", cfg)
    cell_ids, ds = _labeled_dataset(run)
    train80, _ = _split(run, cell_ids, ds)
    settings = cfg.train
    gbdt = cfg.gbdt
    counts = settings.class_counts
    if settings.use_tuned:
        best = read_best_trial(run.need("best_trial.json"))
        p = best["params"]
        gbdt = gbdt.replace(num_leaves=int(p["num_leaves"]), max_depth=int(p["max_depth"]),
                            min_data_in_leaf=int(p["min_data_in_leaf"]))
        if settings.source == "augmented" and counts is None:
            counts = (int(p["class0_count"]), int(p["class1_count"]), int(p["class2_count"]))
    data = train80 if settings.source == "real" else _read_augmented(run, ds.schema, ds.n_classes)
    if counts is not None:
        data = undersample(data, counts, seed=cfg.seed)
    model = train(data, gbdt, n_classes=ds.n_classes)
    model.save(run.path("model.json"))
    with open(run.path("train_loss.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "cross_entropy"])
        for i, v in enumerate(model.train_loss):
            w.writerow([i, repr(float(v))])
    print(f"trained on {data.n_rows} {settings.source} rows, class counts {data.class_counts().tolist()}")
    print(f"trees: {len(model.trees)}, final training loss {model.train_loss[-1]:.6f}")
    return run


def cmd_evaluate(cfg: PipelineConfig) -> Run:
    """Score the trained model on the real test rows."""
    run = Run("evaluate", cfg)
    model = GbdtModel.load(run.need("model.json"))
    cell_ids, ds = _labeled_dataset(run)
    _, test20 = _split(run, cell_ids, ds)
    probs = predict_proba(model, test20)
    ev = evaluate(probs, test20.labels)
    report = format_report(ev, "real test rows")
    run.path("report.txt").write_text(report, encoding="utf-8")
    write_pr_csv(run.path("pr_curves.csv"), ev.curves)
    with open(run.path("confusion.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["actual", "predicted", "count", "row_fraction"])
        norm = ev.confusion.normalized()
        for a in range(ev.confusion.k):
            for p in range(ev.confusion.k):
                w.writerow([a, p, int(ev.confusion.counts[a, p]), repr(float(norm[a, p]))])
    run.plot("pr_curves.png", "plot_pr_curves", ev.curves, ev.per_class_ap)
    run.plot("confusion.png", "plot_confusion", ev.confusion)
    sys.stdout.write(report)
    return run


def cmd_importance(cfg: PipelineConfig) -> Run:
    """Split-count feature importance of the trained model."""
    run = Run("importance", cfg)
    model = GbdtModel.load(run.need("model.json"))
    table = importance_table(model)
    with open(run.path("importance.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "split_count"])
        w.writerows(table)
    run.plot("importance.png", "plot_importance", table)
    for name, count in table:
        print(f"{name}: {count}")
    return run


COMMANDS = {
    "ingest": cmd_ingest,
    "label": cmd_label,
    "augment": cmd_augment,
    "train": cmd_train,
    "tune": cmd_tune,
    "evaluate": cmd_evaluate,
    "importance": cmd_importance,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="floodnow", description="Flood damage class nowcasting pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="pipeline YAML file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    demo = sub.add_parser("demo-data", help="write a synthetic claims/features/config set")
    demo.add_argument("--out", required=True)
    demo.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "demo-data":
            print(write_demo_project(args.out, seed=args.seed))
            return 0
        cfg = load_config(args.config, args.seed)
        COMMANDS[args.command](cfg).finish()
    except (ConfigError, IngestError, MissingArtifact, SynthDivergenceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

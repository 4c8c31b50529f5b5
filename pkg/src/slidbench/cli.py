"""``slid-bench`` command line.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import os
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfg
from . import dataset, dsp, evaluation, model, registry, stats
from ._io import atomic_write_text
from .errors import DataError, SlidError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="run seed (overrides train.seed)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--quiet", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="slid-bench", description="Spoken language identification benchmark toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("featurize", parents=[common], help="audio -> MFC1 feature files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--audio-root", default=".")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--out-manifest", default=None, help="default: OUT_DIR/manifest.tsv")

    p = sub.add_parser("prepare", parents=[common], help="select training data and build valid/test splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="audit report path (default: OUT.audit.txt)")

    p = sub.add_parser("train", parents=[common], help="train the CNN baseline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--dropout-grid", default=None, help="comma list of conv dropout values to tune over")

    p = sub.add_parser("predict", parents=[common], help="write predictions for one split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against gold labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("compare", parents=[common], help="significance tests and F1 correlations")
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--pred", action="append", default=[], metavar="NAME=PATH")
    p.add_argument("--f1-table", default=None, help="TSV: language column then one F1 column per system")
    p.add_argument("--out-dir", required=True)

    sub.add_parser("registry", parents=[common], help="print the language table")
    return parser


def _say(args, *msg):
    if not args.quiet:
        print(*msg)


def _resolve(args) -> cfg.RunConfig:
    overrides = cfg.parse_assignments(args.overrides)
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    return cfg.resolve(overrides)


def _seed(args, run: cfg.RunConfig) -> int:
    return run.train.seed if args.seed is None else args.seed


# ---------------------------------------------------------------------------


def cmd_featurize(args, run):
    manifest = dataset.load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_manifest = Path(args.out_manifest) if args.out_manifest else out_dir / "manifest.tsv"
    root = Path(args.audio_root)
    ds = run.dataset

    def work(record):
        audio = dsp.read_wav(root / record.path)
        decision, kept = dsp.trim_or_reject(audio.duration_s, ds.min_s, ds.max_s)
        if decision is dsp.Decision.REJECT:
            return record, decision, None, audio.duration_s
        audio = dsp.apply_duration_gate(audio, ds.min_s, ds.max_s)
        return record, decision, dsp.extract_mfcc(audio, run.mfcc, check_duration=False), audio.duration_s

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(work, manifest.records))

    records, counts = [], {d: 0 for d in dsp.Decision}
    feat_dir = out_dir / "features"
    for record, decision, seq, duration in results:
        counts[decision] += 1
        if seq is None:
            _say(args, f"reject {record.id}: {duration:.3f} s")
            continue
        feat_path = feat_dir / f"{record.id}.mfc"
        dsp.write_features(feat_path, seq)
        rel = os.path.relpath(feat_path.resolve(), out_manifest.parent.resolve())
        records.append(dataclasses.replace(record, path=rel, duration_s=duration))
    dataset.save_manifest(dataset.Manifest(tuple(records)), out_manifest)
    print(
        f"featurized={len(records)} accepted={counts[dsp.Decision.ACCEPT]} "
        f"trimmed={counts[dsp.Decision.TRIM]} rejected={counts[dsp.Decision.REJECT]}"
    )
    return 0


def cmd_prepare(args, run):
    manifest = dataset.load_manifest(args.manifest)
    ds = run.dataset
    seed = _seed(args, run)
    langs = ds.language_list()
    report_path = Path(args.report) if args.report else Path(str(args.out) + ".audit.txt")
    try:
        manifest = dataset.select_training(
            manifest, ds.train_per_language, seed, langs, ds.train_source or None, ds.min_s, ds.max_s
        )
        manifest = dataset.split_eval(
            manifest, ds.eval_per_language, seed, langs, ds.train_source or None, ds.min_s, ds.max_s
        )
    except DataError as exc:
        atomic_write_text(report_path, f"{exc}\n")
        raise
    report = dataset.audit_manifest(manifest, ds.train_per_language, ds.eval_per_language, langs, ds.min_s, ds.max_s)
    dataset.save_manifest(manifest, args.out)
    atomic_write_text(report_path, dataset.format_report(report))
    if report:
        sys.stderr.write(dataset.format_report(report))
        return 2
    _say(args, f"prepared {len(manifest)} records; audit clean")
    return 0


def _feature_sets(manifest_path, splits):
    manifest = dataset.load_manifest(manifest_path)
    root = Path(manifest_path).parent
    return [model.load_feature_set(manifest.split(s), root) for s in splits]


def cmd_train(args, run):
    train_set, valid_set = _feature_sets(args.manifest, ("train", "valid"))
    if len(train_set) == 0 or len(valid_set) == 0:
        raise DataError("manifest needs non-empty train and valid splits")
    k = train_set.sequences[0].shape[1]
    conf = run.train
    explicit_k = any(o.split("=", 1)[0].strip() == "train.n_coeffs_k" for o in args.overrides)
    if conf.n_coeffs_k != k:
        if explicit_k:
            raise DataError(f"features have k={k} but train.n_coeffs_k={conf.n_coeffs_k}")
        conf = dataclasses.replace(conf, n_coeffs_k=k)
    run_dir = Path(args.run_dir)

    def progress(rec):
        _say(
            args,
            f"epoch={rec.epoch} loss={rec.train_loss:.6f} train_macro_f1={rec.train_macro_f1:.6f} "
            f"valid_macro_f1={rec.valid_macro_f1:.6f}",
        )

    if args.dropout_grid:
        try:
            grid = [float(v) for v in args.dropout_grid.split(",")]
        except ValueError as exc:
            raise UsageError(f"bad --dropout-grid: {exc}") from exc
        best_conf, _, results = model.tune_dropout(conf, train_set, valid_set, grid, run_dir, progress=progress)
        shutil.copyfile(run_dir / f"dropout_{best_conf.conv_dropout_p:g}" / "best.ckpt", run_dir / "best.ckpt")
        atomic_write_text(run_dir / "config.txt", dataclasses.replace(run, train=best_conf).to_text())
        _say(args, f"selected conv_dropout_p={best_conf.conv_dropout_p:g}")
        return 0
    model.train(conf, train_set, valid_set, run_dir, progress=progress)
    atomic_write_text(run_dir / "config.txt", dataclasses.replace(run, train=conf).to_text())
    return 0


def cmd_predict(args, run):
    (data,) = _feature_sets(args.manifest, (args.split,))
    if len(data) == 0:
        raise DataError(f"split {args.split!r} is empty")
    net = model.BaselineModel.load(args.checkpoint)
    labels, probs = model.predict(net, data.sequences, net.config.batch_size)
    atomic_write_text(args.out, evaluation.format_predictions(data.ids, labels, probs))
    _say(args, f"wrote {len(labels)} predictions")
    return 0


def _gold(manifest_path, split):
    records = dataset.load_manifest(manifest_path).split(split)
    if not records:
        raise DataError(f"split {split!r} of {manifest_path} is empty")
    return {r.id: r.language for r in records}


def cmd_evaluate(args, run):
    gold = _gold(args.manifest, args.split)
    pred = evaluation.read_predictions(args.predictions)
    report, cm = evaluation.evaluate(gold, pred)
    evaluation.write_outputs(args.out_dir, report, cm)
    _say(args, evaluation.render_report(report).rstrip("\n"))
    print(f"MACRO_F1={report.macro.f1:.3f}")
    return 0


def _read_f1_table(path):
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"{path}: cannot read F1 table ({exc})") from exc
    header = lines[0].split("\t")
    if header[0] != "language" or len(header) < 3:
        raise DataError(f"{path}: header must be 'language' followed by at least two system names")
    table = {name: {} for name in header[1:]}
    for line in lines[1:]:
        cols = line.split("\t")
        if len(cols) != len(header):
            raise DataError(f"{path}: row {cols[0]!r} has {len(cols)} columns")
        for name, v in zip(header[1:], cols[1:]):
            table[name][cols[0]] = float(v)
    if any(set(col) != set(registry.LANGUAGES) for col in table.values()):
        raise DataError(f"{path}: rows must cover exactly the 16 task languages")
    return {name: [col[c] for c in registry.LANGUAGES] for name, col in table.items()}


def cmd_compare(args, run):
    out = Path(args.out_dir)
    seed = _seed(args, run)
    systems = {}
    for item in args.pred:
        name, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"--pred expects NAME=PATH, got {item!r}")
        systems[name] = evaluation.read_predictions(path).labels
    if systems and args.manifest is None:
        raise UsageError("--manifest is required with --pred")
    if not systems and not args.f1_table:
        raise UsageError("give at least two --pred systems or an --f1-table")

    f1_tables = {}
    if systems:
        if len(systems) < 2:
            raise UsageError("significance testing needs at least two --pred systems")
        gold = _gold(args.manifest, args.split)
        for name, labels in systems.items():
            report, _ = evaluation.evaluate(gold, evaluation.PredictionSet(labels))
            f1_tables[name] = [report.per_language[c].f1 for c in registry.LANGUAGES]
        rows = ["test_name\tlanguage\tstatistic\tobserved_diff\tp_value\tresamples\tseed"]
        for a, b in itertools.combinations(systems, 2):
            outcomes = stats.PairedOutcomes.from_predictions(gold, systems[a], systems[b])
            for lang in (*registry.LANGUAGES, None):
                res = stats.paired_permutation_test(outcomes, lang, run.stats.resamples, seed, run.stats.mode)
                resamples = "exhaustive" if res.exhaustive else str(res.resamples)
                rows.append(
                    f"{a}_vs_{b}\t{lang or 'ALL'}\t{res.statistic}\t{res.observed:.6f}\t{res.p_value:.6g}\t{resamples}\t{seed}"
                )
        atomic_write_text(out / "significance.tsv", "\n".join(rows) + "\n")
        _say(args, f"wrote {len(rows) - 1} significance tests")
    if args.f1_table:
        f1_tables = _read_f1_table(args.f1_table)
    if len(f1_tables) >= 2:
        names = list(f1_tables)
        fits = stats.correlate_all(f1_tables)
        r2, p = stats.correlation_matrices(fits, names)
        atomic_write_text(out / "correlation_r2.tsv", stats.matrix_tsv(names, r2))
        atomic_write_text(out / "correlation_p.tsv", stats.matrix_tsv(names, p))
        for a, b in itertools.combinations(names, 2):
            atomic_write_text(
                out / f"scatter_{a}__{b}.csv", stats.scatter_csv(registry.LANGUAGES, f1_tables[a], f1_tables[b])
            )
            fit = fits[a, b]
            _say(args, f"{a} vs {b}: R2={fit.r_squared:.3f} p={fit.p_value:.4g} slope={fit.slope:.4f}")
    return 0


def cmd_registry(args, run):
    sys.stdout.write(registry.format_table())
    return 0


COMMANDS = {
    "featurize": cmd_featurize,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "registry": cmd_registry,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        run = _resolve(args)
        return COMMANDS[args.command](args, run)
    except SlidError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        sys.stderr.write(f"error: numeric failure: {exc}\n")
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

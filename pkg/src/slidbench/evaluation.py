"""Scoring: confusion matrices, per-language P/R/F1, micro/macro/family
aggregates, and the report/JSON/CSV renderings.

Predictions outside the 16 task languages are counted in an extra
``OUT_OF_SET`` column: they are misses for the gold language and false
positives for no language.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from . import registry
from ._io import atomic_write_text
from .errors import DataError

N = registry.N_LANGUAGES
OOS = N  # column index of out-of-set predictions


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class PredictionSet:
    labels: dict[str, str]
    probabilities: dict[str, np.ndarray] | None = None


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (16, 17) int64, rows gold, columns predicted (+ OUT_OF_SET)

    @property
    def gold_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_out_of_set(self) -> int:
        return int(self.counts[:, OOS].sum())


@dataclass
class MetricsReport:
    per_language: dict[str, PRF]
    macro: PRF
    per_family: dict[str, float]
    micro: PRF | None = None
    accuracy: float | None = None
    n_samples: int | None = None
    n_out_of_set: int | None = None
    gold_counts: dict[str, int] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# prediction files
# ---------------------------------------------------------------------------


def read_predictions(path) -> PredictionSet:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: cannot read predictions ({exc})") from exc
    if not lines:
        raise DataError(f"{path}: empty predictions file")
    header = lines[0].split("\t")
    with_probs = header == ["id", "prediction", *registry.LANGUAGES]
    if header != ["id", "prediction"] and not with_probs:
        raise DataError(f"{path}: header must be 'id<TAB>prediction' optionally followed by the 16 ISO codes")
    labels, probs = {}, {}
    for lineno, line in enumerate(lines[1:], start=2):
        cols = line.split("\t")
        if len(cols) != len(header):
            raise DataError(f"{path}: row {lineno} has {len(cols)} columns, expected {len(header)}")
        if cols[0] in labels:
            raise DataError(f"{path}: duplicate id {cols[0]!r} on row {lineno}")
        labels[cols[0]] = cols[1]
        if with_probs:
            try:
                probs[cols[0]] = np.array([float(v) for v in cols[2:]])
            except ValueError as exc:
                raise DataError(f"{path}: row {lineno}: bad probability ({exc})") from exc
    return PredictionSet(labels, probs if with_probs else None)


def format_predictions(ids, labels, probabilities=None) -> str:
    header = ["id", "prediction"] + (list(registry.LANGUAGES) if probabilities is not None else [])
    rows = ["\t".join(header)]
    for i, (rid, label) in enumerate(zip(ids, labels)):
        cols = [rid, label]
        if probabilities is not None:
            cols += [f"{p:.6f}" for p in probabilities[i]]
        rows.append("\t".join(cols))
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# confusion and per-language scores
# ---------------------------------------------------------------------------


def label_index(label: str) -> int:
    return registry.INDEX.get(label, OOS)


def confusion_from_indices(gold, pred) -> ConfusionMatrix:
    """``gold`` in 0..15, ``pred`` in 0..16 (16 = out of set)."""
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    counts = np.zeros((N, N + 1), dtype=np.int64)
    np.add.at(counts, (gold, pred), 1)
    return ConfusionMatrix(counts)


def confusion(gold: Mapping[str, str], pred: PredictionSet) -> ConfusionMatrix:
    """``gold`` maps sample id -> gold ISO code."""
    missing = [i for i in gold if i not in pred.labels]
    extra = [i for i in pred.labels if i not in gold]
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"{len(missing)} missing id(s): {', '.join(missing[:10])}")
        if extra:
            parts.append(f"{len(extra)} extra id(s): {', '.join(extra[:10])}")
        raise DataError("prediction ids do not match gold ids; " + "; ".join(parts))
    bad_gold = [f"{i}={g}" for i, g in gold.items() if g not in registry.INDEX]
    if bad_gold:
        raise DataError(f"gold labels outside the task languages: {', '.join(bad_gold[:10])}")
    ids = list(gold)
    return confusion_from_indices(
        [registry.INDEX[gold[i]] for i in ids], [label_index(pred.labels[i]) for i in ids]
    )


def _ratio(num, den):
    return float(num) / float(den) if den > 0 else 0.0


def _f1(p, r):
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def per_language_prf(cm: ConfusionMatrix) -> dict[str, PRF]:
    counts = cm.counts
    tp = np.diag(counts[:, :N])
    predicted = counts[:, :N].sum(axis=0)
    gold = counts.sum(axis=1)
    out = {}
    for i, code in enumerate(registry.LANGUAGES):
        p = _ratio(tp[i], predicted[i])
        r = _ratio(tp[i], gold[i])
        out[code] = PRF(p, r, _f1(p, r))
    return out


def family_f1(f1: Mapping[str, float]) -> dict[str, float]:
    return {fam: float(np.mean([f1[c] for c in members])) for fam, members in registry.families().items()}


def aggregate(prf: Mapping[str, PRF], cm: ConfusionMatrix | None = None) -> MetricsReport:
    """Macro averages are unweighted over all 16 languages.

    Without a confusion matrix only the macro and family figures are
    available; P or R given as NaN propagate to the macro P or R.
    """
    missing = [c for c in registry.LANGUAGES if c not in prf]
    if missing:
        raise DataError(f"per-language scores missing for: {', '.join(missing)}")
    per_language = {c: PRF(*map(float, prf[c])) for c in registry.LANGUAGES}
    macro = PRF(*(float(np.mean([per_language[c][j] for c in registry.LANGUAGES])) for j in range(3)))
    report = MetricsReport(
        per_language=per_language,
        macro=macro,
        per_family=family_f1({c: v.f1 for c, v in per_language.items()}),
    )
    if cm is not None:
        total = cm.total
        tp = int(np.trace(cm.counts[:, :N]))
        in_set = total - cm.n_out_of_set
        micro_p = _ratio(tp, in_set)
        micro_r = _ratio(tp, total)
        report.micro = PRF(micro_p, micro_r, _f1(micro_p, micro_r))
        report.accuracy = _ratio(tp, total)
        report.n_samples = total
        report.n_out_of_set = cm.n_out_of_set
        report.gold_counts = {c: int(n) for c, n in zip(registry.LANGUAGES, cm.gold_counts)}
        empty = [c for c, n in report.gold_counts.items() if n == 0]
        if empty:
            warnings.warn(
                f"no gold samples for {', '.join(empty)}; their F1 counts as 0 in the macro average",
                stacklevel=2,
            )
    return report


def evaluate(gold: Mapping[str, str], pred: PredictionSet) -> tuple[MetricsReport, ConfusionMatrix]:
    cm = confusion(gold, pred)
    return aggregate(per_language_prf(cm), cm), cm


def macro_f1_from_indices(gold, pred) -> float:
    cm = confusion_from_indices(gold, pred)
    return float(np.mean([v.f1 for v in per_language_prf(cm).values()]))


def normalize_confusion(cm: ConfusionMatrix) -> np.ndarray:
    counts = cm.counts.astype(np.float64)
    rows = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _fmt(v):
    return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.3f}"


def render_report(report: MetricsReport) -> str:
    has_counts = bool(report.gold_counts)
    lines = [f"{'':<22}{'P':>7}{'R':>7}{'F1':>7}"]
    for fam, members in registry.families().items():
        lines.append(f"{fam:<22}{'':>7}{'':>7}{_fmt(report.per_family[fam]):>7}")
        for code in members:
            v = report.per_language[code]
            if has_counts and report.gold_counts[code] == 0:
                cells = ("n/a", "n/a", "n/a")
            else:
                cells = tuple(_fmt(x) for x in v)
            lines.append(f"  {code:<20}{cells[0]:>7}{cells[1]:>7}{cells[2]:>7}")
    lines.append(f"{'Macro avg.':<22}" + "".join(f"{_fmt(x):>7}" for x in report.macro))
    if report.micro is not None:
        lines.append(f"{'Micro avg.':<22}" + "".join(f"{_fmt(x):>7}" for x in report.micro))
        lines.append(f"{'Accuracy':<22}{'':>14}{_fmt(report.accuracy):>7}")
        lines.append(f"samples={report.n_samples} out_of_set={report.n_out_of_set}")
    return "\n".join(lines) + "\n"


def _prf_obj(v: PRF):
    return {"precision": v.precision, "recall": v.recall, "f1": v.f1}


def metrics_json(report: MetricsReport) -> str:
    obj = {
        "per_language": {c: _prf_obj(report.per_language[c]) for c in registry.LANGUAGES},
        "macro": _prf_obj(report.macro),
        "micro": None if report.micro is None else _prf_obj(report.micro),
        "accuracy": report.accuracy,
        "per_family": dict(report.per_family),
        "n_samples": report.n_samples,
        "n_out_of_set": report.n_out_of_set,
    }
    return json.dumps(obj, indent=2) + "\n"


def confusion_csv(cm: ConfusionMatrix, normalized: bool = False) -> str:
    header = ",".join(["gold", *registry.LANGUAGES, registry.OUT_OF_SET])
    values = normalize_confusion(cm) if normalized else cm.counts
    rows = [header]
    for code, row in zip(registry.LANGUAGES, values):
        cells = [f"{v:.6f}" for v in row] if normalized else [str(int(v)) for v in row]
        rows.append(",".join([code, *cells]))
    return "\n".join(rows) + "\n"


def write_outputs(out_dir, report: MetricsReport, cm: ConfusionMatrix):
    out = Path(out_dir)
    atomic_write_text(out / "metrics.json", metrics_json(report))
    atomic_write_text(out / "report.txt", render_report(report))
    atomic_write_text(out / "confusion.csv", confusion_csv(cm))
    atomic_write_text(out / "confusion_normalized.csv", confusion_csv(cm, normalized=True))

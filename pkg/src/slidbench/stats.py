"""System comparison statistics.

* paired permutation tests on accuracy or on one language's F1,
* least-squares fits with Pearson R^2 and a two-sided t-test p-value,
  evaluated through a continued-fraction regularised incomplete beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels, registry
from .errors import ConfigError, DataError, NumericError, ResourceError

DEFAULT_RESAMPLES = 100_000
EXHAUSTIVE_AUTO_MAX = 12
EXHAUSTIVE_MAX = 25

# ---------------------------------------------------------------------------
# incomplete beta and t distribution
# ---------------------------------------------------------------------------

_CF_EPS = 1e-15
_CF_TINY = 1e-300
_CF_MAX_ITER = 10_000


def _beta_cf(a, b, x):
    """Modified Lentz evaluation of the incomplete-beta continued fraction."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _CF_TINY else _CF_TINY)
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _CF_TINY else _CF_TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _CF_TINY else _CF_TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _CF_TINY else _CF_TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _CF_TINY else _CF_TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise NumericError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_regularized(a: float, b: float, x: float, complement: float | None = None) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1.

    ``complement`` may carry an accurately computed ``1 - x`` for x near 1.
    """
    if a <= 0 or b <= 0:
        raise ConfigError("incomplete beta needs a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise ConfigError(f"incomplete beta argument {x} outside [0, 1]")
    y = 1.0 - x if complement is None else complement
    if x == 0.0 or y == 0.0:
        return 0.0 if x == 0.0 else 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log(y)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _beta_cf(b, a, y) / b


def t_distribution_sf(t: float, df: float) -> float:
    """Two-sided tail ``P(|T| >= |t|)`` of Student's t with ``df`` degrees of freedom."""
    if df < 1:
        raise ConfigError(f"degrees of freedom must be >= 1, got {df}")
    if math.isinf(t):
        return 0.0
    t2 = t * t
    return betainc_regularized(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))


# ---------------------------------------------------------------------------
# linear fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r: float
    r_squared: float
    p_value: float
    n: int


def pearson_fit(x: Sequence[float], y: Sequence[float]) -> FitResult:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("x and y must be 1-D sequences of equal length")
    n = x.size
    if n < 3:
        raise DataError(f"a linear fit needs at least 3 points, got {n}")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy, sxy = float(dx @ dx), float(dy @ dy), float(dx @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise NumericError("degenerate fit: x or y is constant, correlation undefined")
    slope = sxy / sxx
    intercept = float(y.mean() - slope * x.mean())
    r = max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))
    r2 = r * r
    if r2 >= 1.0:
        p = float(np.finfo(float).tiny)
    else:
        p = t_distribution_sf(r * math.sqrt((n - 2) / (1.0 - r2)), n - 2)
        p = max(p, float(np.finfo(float).tiny))
    return FitResult(slope, intercept, r, r2, min(p, 1.0), n)


def correlate_all(tables: Mapping[str, Sequence[float]]) -> dict[tuple[str, str], FitResult]:
    """Fit every ordered pair of systems (x = first, y = second)."""
    names = list(tables)
    lengths = {len(v) for v in tables.values()}
    if len(lengths) > 1:
        raise DataError("all systems must share the same language index")
    return {(a, b): pearson_fit(tables[a], tables[b]) for a in names for b in names}


def correlation_matrices(fits, names):
    r2 = np.array([[fits[a, b].r_squared for b in names] for a in names])
    p = np.array([[fits[a, b].p_value for b in names] for a in names])
    return r2, p


def matrix_tsv(names, values) -> str:
    rows = ["\t".join(["system", *names])]
    for name, row in zip(names, values):
        rows.append("\t".join([name, *(f"{v:.6g}" for v in row)]))
    return "\n".join(rows) + "\n"


def scatter_csv(languages, xs, ys) -> str:
    rows = ["language,f1_system_a,f1_system_b"]
    rows += [f"{lang},{x:.6f},{y:.6f}" for lang, x, y in zip(languages, xs, ys)]
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# paired permutation test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairedOutcomes:
    ids: tuple[str, ...]
    gold: tuple[str, ...]
    pred_a: tuple[str, ...]
    pred_b: tuple[str, ...]

    def __post_init__(self):
        lengths = {len(self.ids), len(self.gold), len(self.pred_a), len(self.pred_b)}
        if len(lengths) != 1:
            raise DataError("ids, gold and both prediction lists must have equal length")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("sample ids must be unique")

    @classmethod
    def from_predictions(cls, gold: Mapping[str, str], pred_a: Mapping[str, str], pred_b: Mapping[str, str]):
        for name, pred in (("A", pred_a), ("B", pred_b)):
            if set(pred) != set(gold):
                missing = sorted(set(gold) - set(pred))[:10]
                extra = sorted(set(pred) - set(gold))[:10]
                raise DataError(f"system {name} ids misaligned with gold (missing {missing}, extra {extra})")
        ids = tuple(gold)
        return cls(ids, tuple(gold[i] for i in ids), tuple(pred_a[i] for i in ids), tuple(pred_b[i] for i in ids))


@dataclass(frozen=True)
class PermutationResult:
    statistic: str
    observed: float
    p_value: float
    resamples: int
    exhaustive: bool
    n_differing: int


def _contributions(outcomes: PairedOutcomes, language: str | None):
    gold = np.array(outcomes.gold, dtype=object)
    a = np.array(outcomes.pred_a, dtype=object)
    b = np.array(outcomes.pred_b, dtype=object)
    if language is None:
        tp_a = (a == gold).astype(np.float64)
        tp_b = (b == gold).astype(np.float64)
        pc_a = pc_b = np.zeros_like(tp_a)
        gold_n = float(len(gold))
    else:
        if language not in registry.INDEX:
            raise ConfigError(f"unknown language {language!r}")
        is_gold = gold == language
        tp_a = ((a == language) & is_gold).astype(np.float64)
        tp_b = ((b == language) & is_gold).astype(np.float64)
        pc_a = (a == language).astype(np.float64)
        pc_b = (b == language).astype(np.float64)
        gold_n = float(is_gold.sum())
    d_tp, d_pc = tp_b - tp_a, pc_b - pc_a
    # swapping a sample that moves neither count leaves the statistic unchanged
    # and halves hits and patterns alike, so such samples are dropped
    live = (a != b) & ((d_tp != 0) | (d_pc != 0))
    return (
        d_tp[live].copy(),
        d_pc[live].copy(),
        float(tp_a.sum()),
        float(pc_a.sum()),
        float(tp_b.sum()),
        float(pc_b.sum()),
        gold_n,
    )


def _observed(tp_a, pc_a, tp_b, pc_b, gold_n, n, mode):
    if mode == 0:
        return abs(tp_a - tp_b) / n

    def f1(tp, pc):
        return 2.0 * tp / (gold_n + pc) if gold_n + pc > 0 else 0.0

    return abs(f1(tp_a, pc_a) - f1(tp_b, pc_b))


def paired_permutation_test(
    outcomes: PairedOutcomes,
    language: str | None = None,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
    mode: str = "auto",
    chunk: int = 16384,
) -> PermutationResult:
    """Two-sided paired permutation test of |S(A) - S(B)|.

    ``language=None`` tests accuracy; otherwise the F1 of that language,
    recomputed from the swapped prediction sets. Swaps are drawn over the
    samples where A and B disagree in a way that moves the statistic's
    counts; dropping the others leaves the exact p unchanged.

    ``mode``: ``"exhaustive"`` enumerates all swap patterns (exact p);
    ``"monte_carlo"`` draws ``resamples`` random patterns and returns the
    add-one smoothed estimate; ``"auto"`` enumerates when there are at most
    2**12 patterns.
    """
    if mode not in ("auto", "exhaustive", "monte_carlo"):
        raise ConfigError(f"unknown permutation mode {mode!r}")
    n = len(outcomes.ids)
    if n == 0:
        raise DataError("no samples to compare")
    d_tp, d_pc, tp_a, pc_a, tp_b, pc_b, gold_n = _contributions(outcomes, language)
    kmode = 0 if language is None else 1
    stat_name = "accuracy" if language is None else "f1"
    observed = _observed(tp_a, pc_a, tp_b, pc_b, gold_n, float(n), kmode)
    d = d_tp.size
    exhaustive = mode == "exhaustive" or (mode == "auto" and d <= EXHAUSTIVE_AUTO_MAX)
    args = (d_tp, d_pc, tp_a, pc_a, tp_b, pc_b, gold_n, float(n), kmode, observed)

    if exhaustive:
        if d > EXHAUSTIVE_MAX:
            raise ResourceError(
                f"{d} differing samples means 2^{d} swap patterns; use Monte Carlo resampling instead"
            )
        total = 1 << d
        bits = np.arange(d, dtype=np.int64)
        count = 0
        for lo in range(0, total, chunk):
            codes = np.arange(lo, min(total, lo + chunk), dtype=np.int64)
            swaps = ((codes[:, None] >> bits[None, :]) & 1).astype(np.uint8)
            count += kernels.perm_count(swaps, *args)
        return PermutationResult(stat_name, observed, count / total, total, True, d)

    if resamples < 1:
        raise ConfigError("resamples must be >= 1")
    rng = np.random.default_rng(seed)
    count = 0
    for lo in range(0, resamples, chunk):
        size = min(chunk, resamples - lo)
        swaps = rng.integers(0, 2, size=(size, d), dtype=np.uint8)
        count += kernels.perm_count(swaps, *args)
    return PermutationResult(stat_name, observed, (1 + count) / (1 + resamples), resamples, False, d)


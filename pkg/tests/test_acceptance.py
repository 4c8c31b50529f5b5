"""Acceptance criteria, one test each; every test records a PASS/FAIL line."""

import dataclasses
import itertools
import math
import time
import warnings
from fractions import Fraction

import numpy as np

import gradcheck
import tables
from manifests import check_constraints, random_manifest
from oracles import exhaustive_permutation_p, naive_dft, reference_mfcc
from slidbench import dataset, dsp, evaluation, kernels, model, registry, stats, synthetic
from slidbench.dataset import DatasetWarning
from slidbench.evaluation import PRF
from slidbench.stats import PairedOutcomes
from verdicts import record

LANGS = registry.LANGUAGES


def _aggregate_printed(system, split):
    f1 = tables.language_f1(system, split)
    return evaluation.aggregate({c: PRF(0.0, 0.0, f1[c]) for c in LANGS})


def _test_vectors():
    return {s: [tables.language_f1(s, "test")[c] for c in LANGS] for s in tables.SYSTEMS}


# 1 ------------------------------------------------------------------------


def test_criterion_1_macro_rows():
    start = time.perf_counter()
    expected = {"anlirika": 0.282, "baseline": 0.122, "lipsia": 0.508, "ntr": 0.049}
    assert expected == {s: tables.summary("macro_f1", s, "test") for s in tables.SYSTEMS}
    errors = {s: abs(_aggregate_printed(s, "test").macro.f1 - v) for s, v in expected.items()}
    elapsed = time.perf_counter() - start
    ok = max(errors.values()) <= 0.0005 and elapsed < 1.0
    detail = ", ".join(f"{s} {_aggregate_printed(s, 'test').macro.f1:.4f}" for s in expected)
    assert record(1, "macro-F1 of printed per-language test F1s within 0.0005", ok, f"{detail}; {elapsed:.3f}s")


# 2 ------------------------------------------------------------------------


def test_criterion_2_family_rows():
    start = time.perf_counter()
    worst, where, n = 0.0, "", 0
    for system, split in itertools.product(tables.SYSTEMS, ("valid", "test")):
        got = _aggregate_printed(system, split).per_family
        for fam, printed in tables.family_f1(system, split).items():
            err = abs(got[fam] - printed)
            n += 1
            if err > worst:
                worst, where = err, f"{system}/{split}/{fam}"
    lipsia = _aggregate_printed("lipsia", "test").per_family
    elapsed = time.perf_counter() - start
    # means of 3-decimal inputs can sit exactly on the bound; recheck in exact arithmetic
    exact_worst = max(
        abs(sum(Fraction(str(f1[c])) for c in members) / len(members) - Fraction(str(tables.family_f1(system, split)[fam])))
        for system, split in itertools.product(tables.SYSTEMS, ("valid", "test"))
        for f1 in [tables.language_f1(system, split)]
        for fam, members in registry.families().items()
    )
    ok = worst <= 0.0005 + 1e-12 and exact_worst <= Fraction(5, 10000) and n == 56 and elapsed < 1.0
    detail = (
        f"{n} cells, worst {worst:.5f} at {where} (exact {float(exact_worst):.5f}); lipsia test Austronesian {lipsia['Austronesian']:.4f}, "
        f"Dravidian {lipsia['Dravidian']:.4f}; {elapsed:.3f}s"
    )
    assert record(2, "family rows within 0.0005 for all systems and splits", ok, detail)


# 3 ------------------------------------------------------------------------


def test_criterion_3_correlations():
    start = time.perf_counter()
    vecs = _test_vectors()
    targets = {
        ("anlirika", "lipsia"): 0.57,
        ("ntr", "baseline"): 0.15,
        ("ntr", "anlirika"): 0.11,
        ("ntr", "lipsia"): 0.19,
        ("anlirika", "baseline"): 0.00,
        ("lipsia", "baseline"): 0.02,
    }
    fits = {pair: stats.pearson_fit(vecs[pair[0]], vecs[pair[1]]) for pair in targets}
    r2_ok = all(abs(fits[p].r_squared - t) <= 0.03 for p, t in targets.items())
    p_ok = (
        fits["anlirika", "lipsia"].p_value < 0.001
        and fits["anlirika", "baseline"].p_value > 0.8
        and fits["ntr", "lipsia"].p_value > 0.05
    )
    elapsed = time.perf_counter() - start
    detail = ", ".join(f"{a}-{b} R2={fits[a, b].r_squared:.3f} p={fits[a, b].p_value:.3g}" for a, b in targets)
    assert record(3, "pairwise R2 within 0.03 and p-value inequalities", r2_ok and p_ok and elapsed < 1.0, f"{detail}; {elapsed:.3f}s")


# 4 ------------------------------------------------------------------------


def test_criterion_4_micro_equals_accuracy():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(16, 2000))
        gold = rng.integers(0, 16, size=n)
        pred = np.where(rng.random(n) < rng.random(), gold, rng.integers(0, 16, size=n))
        cm = evaluation.confusion_from_indices(gold, pred)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # small draws may miss a language
            rep = evaluation.aggregate(evaluation.per_language_prf(cm), cm)
        worst = max(worst, abs(rep.micro.f1 - rep.accuracy), abs(rep.micro.precision - rep.micro.recall))

    def interval(v, half):
        return v - half, v + half

    consistent = []
    for system in tables.SYSTEMS:
        micro = tables.summary("micro_f1", system, "test")
        acc = tables.summary("accuracy_pct", system, "test") / 100
        lo1, hi1 = interval(micro, 0.0005)
        lo2, hi2 = interval(acc, 0.0005)
        consistent.append(max(lo1, lo2) <= min(hi1, hi2) + 1e-12)
    ok = worst < 1e-12 and all(consistent)
    assert record(4, "micro-F1 equals accuracy; printed pairs consistent", ok, f"worst synthetic gap {worst:.1e}; pairs {consistent}")


# 5 ------------------------------------------------------------------------


def test_criterion_5_gradient_checks():
    start = time.perf_counter()
    results = {name: gradcheck.run_checks(check, 100) for name, check in gradcheck.LAYER_CHECKS.items()}
    elapsed = time.perf_counter() - start
    ok = all(w < 1e-4 and c == 100 for w, c, _ in results.values()) and elapsed < 120
    detail = ", ".join(f"{k} {w:.1e}/{c}" for k, (w, c, _) in results.items())
    assert record(5, "finite-difference gradient checks, 100 seeds per layer and composite", ok, f"{detail}; {elapsed:.1f}s")


# 6 ------------------------------------------------------------------------


TRAIN_EPOCHS = 3


def test_criterion_6_synthetic_training():
    start = time.perf_counter()
    train_set = synthetic.make_dataset(200, t_range=(50, 120), data_seed=1, prefix="tr")
    valid_set = synthetic.make_dataset(50, t_range=(50, 120), data_seed=2, prefix="va")
    config = dataclasses.replace(model.BaselineConfig(), epochs=TRAIN_EPOCHS)
    net, history = model.train(config, train_set, valid_set)
    train_f1 = model.evaluate_macro_f1(net, train_set)
    valid_f1 = model.evaluate_macro_f1(net, valid_set)
    elapsed = time.perf_counter() - start
    ok = train_f1 >= 0.95 and valid_f1 >= 0.90 and elapsed < 600
    detail = f"{TRAIN_EPOCHS} epochs, train {train_f1:.3f}, valid {valid_f1:.3f}, best epoch {history.best_epoch}; {elapsed:.0f}s"
    assert record(6, "baseline trains on synthetic 16-class data", ok, detail)


# 7 ------------------------------------------------------------------------


def _instance(rng):
    n = int(rng.integers(4, 40))
    langs = list(rng.choice(LANGS, size=int(rng.integers(2, 5)), replace=False))
    gold = [str(rng.choice(langs)) for _ in range(n)]
    a = [g if rng.random() < 0.6 else str(rng.choice(langs)) for g in gold]
    b = list(a)
    for i in rng.choice(n, size=min(n, int(rng.integers(1, 13))), replace=False):
        b[i] = str(rng.choice([l for l in langs if l != a[i]]))
    language = None if rng.random() < 0.5 else str(rng.choice(langs))
    return gold, a, b, language


def test_criterion_7_permutation_exactness():
    rng = np.random.default_rng(2024)
    resamples = 100_000
    worst_z, oracle_gap, n = 0.0, 0.0, 0
    while n < 50:
        gold, a, b, language = _instance(rng)
        outcomes = PairedOutcomes(tuple(map(str, range(len(gold)))), tuple(gold), tuple(a), tuple(b))
        exact = stats.paired_permutation_test(outcomes, language, mode="exhaustive")
        if exact.n_differing > 12:
            continue
        oracle_gap = max(oracle_gap, abs(exact.p_value - exhaustive_permutation_p(gold, a, b, language)))
        mc = stats.paired_permutation_test(outcomes, language, resamples=resamples, seed=n, mode="monte_carlo")
        se = math.sqrt(exact.p_value * (1 - exact.p_value) / resamples)
        gap = abs(mc.p_value - exact.p_value)
        worst_z = max(worst_z, gap / se if se > 0 else (0.0 if gap < 1e-12 else math.inf))
        n += 1
    same = PairedOutcomes(("a", "b", "c"), ("kab", "iba", "eng"), ("kab", "kab", "eng"), ("kab", "kab", "eng"))
    identical = all(
        stats.paired_permutation_test(same, lang, resamples=1000, mode=m).p_value == 1.0
        for lang in (None, "kab") for m in ("exhaustive", "monte_carlo")
    )
    ok = worst_z <= 3 and oracle_gap < 1e-12 and identical
    detail = f"{n} instances, worst |MC - exact| = {worst_z:.2f} SE, oracle gap {oracle_gap:.1e}, identical systems p=1: {identical}"
    assert record(7, "Monte Carlo p within 3 SE of exhaustive p", ok, detail)


# 8 ------------------------------------------------------------------------


def test_criterion_8_dsp_oracles():
    rng = np.random.default_rng(8)
    fft_err = 0.0
    for n in (8, 16, 32, 64, 128, 256, 512):
        x = rng.standard_normal((4, n)) + 1j * rng.standard_normal((4, n))
        ref = naive_dft(x)
        fft_err = max(fft_err, np.max(np.abs(kernels.fft_rows(x) - ref)) / np.max(np.abs(ref)))

    sr = 16000
    mfcc_err = 0.0
    for _ in range(20):
        length = int(rng.integers(400, 3 * sr))
        x = rng.uniform(-0.8, 0.8, length) * rng.uniform(0.01, 1)
        ours = dsp.extract_mfcc(dsp.RawAudio(x, sr), check_duration=False).frames
        ref = reference_mfcc(x, sr)
        mfcc_err = max(mfcc_err, float(np.max(np.abs(ours - ref) / np.abs(ref))))

    cfg = dsp.MfccConfig()
    tone = dsp.RawAudio(0.5 * np.sin(2 * np.pi * 1000 * np.arange(sr) / sr), sr)
    frames = dsp.frame_and_window(dsp.preemphasize(tone, 0.0), cfg)
    padded = np.zeros((frames.shape[0], 512))
    padded[:, :400] = frames
    energies = (np.abs(naive_dft(padded)[:, :257]) ** 2 / 512 @ dsp.mel_filterbank(cfg).T).sum(axis=0)
    top = 2595 * math.log10(1 + 8000 / 700)
    centres = [700 * (10 ** (top * i / 27 / 2595) - 1) for i in range(1, 27)]
    nearest = min(range(26), key=lambda i: abs(centres[i] - 1000))
    tone_ok = int(np.argmax(energies)) == nearest

    ok = fft_err < 1e-10 and mfcc_err < 1e-8 and tone_ok
    detail = f"FFT {fft_err:.1e}, MFCC {mfcc_err:.1e} over 20 utterances, tone filter {int(np.argmax(energies))} vs {nearest}"
    assert record(8, "FFT, MFCC and filterbank match naive oracles", ok, detail)


# 9 ------------------------------------------------------------------------


def _cli(*argv):
    from slidbench import cli

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return cli.main([str(a) for a in argv] + ["--quiet"])


def _snapshot(directory):
    out = {}
    for path in sorted(p for p in directory.rglob("*") if p.is_file()):
        data = path.read_bytes()
        if path.name == "history.tsv":  # wall-clock column
            data = b"\n".join(b"\t".join(line.split(b"\t")[:-1]) for line in data.splitlines())
        out[str(path.relative_to(directory))] = data
    return out


def test_criterion_9_determinism(tmp_path):
    from workspace import TOY_TRAIN, feature_workspace, gold_manifest, prediction_file

    m = random_manifest(np.random.default_rng(9), 4, 3, feasible=True)
    dataset.save_manifest(m, tmp_path / "raw.tsv")
    feats = feature_workspace(tmp_path / "feats")
    gold_path, gold = gold_manifest(tmp_path)
    pa = prediction_file(tmp_path / "a.tsv", gold, 0.7, 1)
    pb = prediction_file(tmp_path / "b.tsv", gold, 0.4, 2)

    codes, snaps = [], []
    for r in ("r1", "r2"):
        out = tmp_path / r
        out.mkdir()
        codes.append(_cli("prepare", "--manifest", tmp_path / "raw.tsv", "--out", out / "prepare" / "split.tsv", "--seed", 5,
                          "--set", "dataset.train_per_language=4", "--set", "dataset.eval_per_language=3"))
        codes.append(_cli("train", "--manifest", feats, "--run-dir", out / "train", "--seed", 5, *TOY_TRAIN))
        codes.append(_cli("evaluate", "--manifest", gold_path, "--predictions", pa, "--out-dir", out / "evaluate"))
        codes.append(_cli("compare", "--manifest", gold_path, "--pred", f"a={pa}", "--pred", f"b={pb}", "--out-dir", out / "compare",
                          "--seed", 5, "--set", "stats.resamples=2000"))
        snaps.append(_snapshot(out))
    stages = ("prepare", "train", "evaluate", "compare")
    per_stage = {s: sum(k.startswith(s) for k in snaps[0]) for s in stages}
    ok = codes == [0] * 8 and snaps[0] == snaps[1] and all(per_stage.values())
    detail = f"{sum(per_stage.values())} files identical across runs ({per_stage}); history seconds column excluded"
    assert record(9, "prepare/train/evaluate/compare outputs identical across seeded runs", ok, detail)


# 10 -----------------------------------------------------------------------


def _prepare(m, n_train, n_eval, seed):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DatasetWarning)
        return dataset.split_eval(dataset.select_training(m, n_train, seed), n_eval, seed)


def test_criterion_10_dataset_constraints():
    start = time.perf_counter()
    rng = np.random.default_rng(10)
    failures, cases = [], 0
    for case in range(1000):
        n_train, n_eval = int(rng.integers(1, 10)), int(rng.integers(1, 7))
        m = random_manifest(rng, n_train, n_eval, feasible=True)
        out = _prepare(m, n_train, n_eval, case)
        bad = check_constraints(out, n_train, n_eval) + [v.code for v in dataset.audit_manifest(out, n_train, n_eval)]
        if bad:
            failures.append((case, bad[:3]))
        cases += 1
    full_ok = True
    for case in range(2):
        m = random_manifest(rng, 4000, 500, max_speakers=12, feasible=True)
        out = _prepare(m, 4000, 500, case)
        full_ok &= check_constraints(out, 4000, 500) == [] and dataset.audit_manifest(out) == []
    elapsed = time.perf_counter() - start
    ok = not failures and cases == 1000 and full_ok
    detail = f"{cases} random manifests, {len(failures)} violations, default-size 4000/500/500 cases clean: {full_ok}; {elapsed:.0f}s"
    assert record(10, "speaker disjointness, exact counts and duration gate", ok, detail)

"""Manifests and dataset construction.

A manifest is a TSV listing one utterance per row. ``select_training``
draws a fixed number of training utterances per language,
``split_eval`` builds speaker-disjoint, gender-balanced validation and test
splits, and ``audit_manifest`` reports every constraint violation.
"""

from __future__ import annotations

import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from . import registry
from ._io import atomic_write_text
from .errors import ConfigError, DataError

HEADER = ("id", "path", "language", "speaker_id", "gender", "duration_s", "source", "split")
SPLITS = ("train", "valid", "test")
UNASSIGNED = "unassigned"
GENDERS = ("m", "f", "unknown")

_GENDER_TOKENS = {"m": "m", "f": "f", "u": "unknown"}
_SPLIT_TOKENS = {"train": "train", "valid": "valid", "test": "test", "-": UNASSIGNED}


class DatasetWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SampleRecord:
    id: str
    path: str
    language: str
    speaker_id: str | None
    gender: str
    duration_s: float
    source: str
    split: str = UNASSIGNED

    def speaker_key(self) -> str:
        # records without a speaker id are their own singleton speaker
        return self.speaker_id if self.speaker_id is not None else f"<unknown:{self.id}>"

    def to_row(self) -> str:
        gender = {"m": "m", "f": "f", "unknown": "u"}[self.gender]
        split = "-" if self.split == UNASSIGNED else self.split
        speaker = "-" if self.speaker_id is None else self.speaker_id
        fields = (self.id, self.path, self.language, speaker, gender, repr(float(self.duration_s)), self.source, split)
        return "\t".join(fields)


@dataclass(frozen=True)
class Manifest:
    records: tuple[SampleRecord, ...] = ()

    def __post_init__(self):
        records = tuple(self.records)
        dupes = [i for i, n in Counter(r.id for r in records).items() if n > 1]
        if dupes:
            raise DataError(f"duplicate record ids: {', '.join(sorted(dupes)[:10])}")
        object.__setattr__(self, "records", records)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def split(self, name: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == name]

    def counts(self) -> dict[tuple[str, str], int]:
        return dict(Counter((r.split, r.language) for r in self.records))

    def to_tsv(self) -> str:
        return "\t".join(HEADER) + "\n" + "".join(r.to_row() + "\n" for r in self.records)


def parse_manifest(text: str, name: str = "<manifest>") -> Manifest:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or tuple(lines[0].split("\t")) != HEADER:
        raise DataError(f"{name}: header must be exactly {' '.join(HEADER)!r} (tab separated)")
    problems = []
    records = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        cols = line.split("\t")
        if len(cols) != len(HEADER):
            problems.append(f"row {lineno}: expected {len(HEADER)} columns, found {len(cols)}")
            continue
        rid, path, lang, speaker, gender, dur, source, split = cols
        row_ok = True
        if lang not in registry.INDEX:
            problems.append(f"row {lineno}: unknown language {lang!r}")
            row_ok = False
        if gender not in _GENDER_TOKENS:
            problems.append(f"row {lineno}: bad gender token {gender!r} (expected m, f or u)")
            row_ok = False
        if split not in _SPLIT_TOKENS:
            problems.append(f"row {lineno}: bad split token {split!r}")
            row_ok = False
        try:
            duration = float(dur)
            if not duration > 0:
                raise ValueError
        except ValueError:
            problems.append(f"row {lineno}: duration must be a positive number, got {dur!r}")
            row_ok = False
        if rid in seen:
            problems.append(f"row {lineno}: duplicate id {rid!r}")
            row_ok = False
        seen.add(rid)
        if row_ok:
            records.append(
                SampleRecord(
                    rid,
                    path,
                    lang,
                    None if speaker == "-" else speaker,
                    _GENDER_TOKENS[gender],
                    duration,
                    source,
                    _SPLIT_TOKENS[split],
                )
            )
    if problems:
        raise DataError(f"{name}: {len(problems)} problem(s)\n" + "\n".join(problems))
    return Manifest(tuple(records))


def load_manifest(path) -> Manifest:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: cannot read manifest ({exc})") from exc
    return parse_manifest(text, str(path))


def save_manifest(manifest: Manifest, path):
    atomic_write_text(path, manifest.to_tsv())


def _languages(languages: Iterable[str] | None) -> list[str]:
    langs = list(registry.LANGUAGES if languages is None else languages)
    unknown = [code for code in langs if code not in registry.INDEX]
    if unknown:
        raise ConfigError(f"unknown language codes: {', '.join(unknown)}")
    return langs


def _in_gate(record: SampleRecord, min_s: float, max_s: float) -> bool:
    return min_s <= record.duration_s <= max_s


def _source_is(record: SampleRecord, source: str | None) -> bool:
    return source is None or record.source.lower() == source.lower()


def _lang_rng(seed: int, language: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), registry.INDEX[language]])


def _shuffled(records: list[SampleRecord], rng: np.random.Generator) -> list[SampleRecord]:
    ordered = sorted(records, key=lambda r: r.id)
    return [ordered[i] for i in rng.permutation(len(ordered))]


def select_training(
    manifest: Manifest,
    per_language: int = 4000,
    seed: int = 0,
    languages: Iterable[str] | None = None,
    train_source: str | None = registry.TRAIN_SOURCE,
    min_s: float = 3.0,
    max_s: float = 7.0,
) -> Manifest:
    """Mark exactly ``per_language`` records per language as ``train``.

    Candidates are unassigned (or previously train) records from
    ``train_source`` (``None``: any source) whose duration passes the gate.
    Selection is a seeded shuffle followed by a prefix take.
    """
    langs = _languages(languages)
    pools = defaultdict(list)
    for r in manifest:
        if r.split in (UNASSIGNED, "train") and _in_gate(r, min_s, max_s) and _source_is(r, train_source):
            pools[r.language].append(r)
    deficient = [f"{code} ({len(pools[code])} < {per_language})" for code in langs if len(pools[code]) < per_language]
    if deficient:
        raise DataError("not enough training candidates: " + ", ".join(deficient))

    chosen = set()
    for code in langs:
        chosen.update(r.id for r in _shuffled(pools[code], _lang_rng(seed, code))[:per_language])
    out = []
    for r in manifest:
        if r.id in chosen:
            out.append(replace(r, split="train"))
        elif r.split == "train":
            out.append(replace(r, split=UNASSIGNED))
        else:
            out.append(r)
    return Manifest(tuple(out))


# ---------------------------------------------------------------------------
# speaker-disjoint evaluation splits
# ---------------------------------------------------------------------------


def _two_way_partition(sizes: list[int], cap: int) -> list[bool] | None:
    """Find a speaker subset S with sum(S) >= cap and sum(rest) >= cap.

    Subset-sum over reachable totals; returns membership flags for S (the
    reachable total closest to half) or ``None`` if no such split exists.
    """
    total = sum(sizes)
    if total < 2 * cap:
        return None
    reach = {0: None}
    for i, s in enumerate(sizes):
        for t in list(reach):
            if t + s not in reach:
                reach[t + s] = (i, t)
    feasible = [t for t in reach if cap <= t <= total - cap]
    if not feasible:
        return None
    target = min(feasible, key=lambda t: (abs(2 * t - total), t))
    member = [False] * len(sizes)
    t = target
    while reach[t] is not None:
        i, prev = reach[t]
        member[i] = True
        t = prev
    return member


def _gender_counts(records) -> tuple[int, int]:
    m = sum(1 for r in records if r.gender == "m")
    f = sum(1 for r in records if r.gender == "f")
    return m, f


def _greedy_assign(speakers, cap):
    """speakers: list of (key, shuffled records), largest first.

    Each speaker goes whole (or truncated to the remaining capacity) into the
    split whose post-assignment total gender imbalance is smallest.
    """
    state = {"valid": [0, 0, 0], "test": [0, 0, 0]}  # n, m, f
    taken = {"valid": [], "test": []}
    for _key, recs in speakers:
        options = []
        for order, name in enumerate(("valid", "test")):
            n, m, f = state[name]
            if n >= cap:
                continue
            take = recs[: cap - n]
            dm, df = _gender_counts(take)
            other = state["test" if name == "valid" else "valid"]
            imbalance = abs(m + dm - f - df) + abs(other[1] - other[2])
            options.append((imbalance, len(take) < len(recs), n, order, name, take, dm, df))
        if not options:
            break
        *_, name, take, dm, df = min(options, key=lambda o: o[:4])
        state[name][0] += len(take)
        state[name][1] += dm
        state[name][2] += df
        taken[name].extend(take)
    if state["valid"][0] == cap and state["test"][0] == cap:
        return taken
    return None


def _fill(speakers, cap):
    out = []
    for _key, recs in speakers:
        out.extend(recs[: cap - len(out)])
        if len(out) == cap:
            break
    return out


def split_eval(
    manifest: Manifest,
    per_language: int = 500,
    seed: int = 0,
    languages: Iterable[str] | None = None,
    train_source: str | None = registry.TRAIN_SOURCE,
    min_s: float = 3.0,
    max_s: float = 7.0,
) -> Manifest:
    """Assign ``per_language`` records per language to ``valid`` and to ``test``.

    No speaker contributes to both splits. Speakers are visited largest first
    (ties by id) and placed to reduce |#m - #f| within the splits; if that
    greedy pass cannot fill both splits a subset-sum partition is used.
    """
    langs = _languages(languages)
    pools = defaultdict(list)
    for r in manifest:
        if r.split in (UNASSIGNED, "valid", "test") and _in_gate(r, min_s, max_s):
            if train_source is None or not _source_is(r, train_source):
                pools[r.language].append(r)

    assignment = {}
    for code in langs:
        rng = _lang_rng(seed, code)
        by_speaker = defaultdict(list)
        for r in pools[code]:
            by_speaker[r.speaker_key()].append(r)
        if any(r.speaker_id is None for r in pools[code]):
            warnings.warn(
                f"{code}: records without speaker id are treated as singleton speakers; "
                "their disjointness cannot be verified",
                DatasetWarning,
                stacklevel=2,
            )
        m, f = _gender_counts(pools[code])
        if (m == 0) != (f == 0):
            warnings.warn(f"{code}: evaluation pool is single-gender", DatasetWarning, stacklevel=2)
        speakers = sorted(
            ((key, _shuffled(recs, rng)) for key, recs in by_speaker.items()),
            key=lambda kv: (-len(kv[1]), kv[0]),
        )
        taken = _greedy_assign(speakers, per_language)
        if taken is None:
            member = _two_way_partition([len(recs) for _, recs in speakers], per_language)
            if member is None:
                histogram = ", ".join(f"{key}:{len(recs)}" for key, recs in speakers) or "no candidates"
                raise DataError(
                    f"SPK {code}: cannot form speaker-disjoint valid/test splits of {per_language} "
                    f"records each; speaker histogram: {histogram}"
                )
            taken = {
                "valid": _fill([s for s, keep in zip(speakers, member) if keep], per_language),
                "test": _fill([s for s, keep in zip(speakers, member) if not keep], per_language),
            }
        for name, recs in taken.items():
            for r in recs:
                assignment[r.id] = name

    out = []
    for r in manifest:
        if r.id in assignment:
            out.append(replace(r, split=assignment[r.id]))
        elif r.split in ("valid", "test"):
            out.append(replace(r, split=UNASSIGNED))
        else:
            out.append(r)
    return Manifest(tuple(out))


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------


class Violation(NamedTuple):
    code: str
    message: str

    def __str__(self):
        return f"{self.code} {self.message}"


def audit_manifest(
    manifest: Manifest,
    train_per_language: int = 4000,
    eval_per_language: int = 500,
    languages: Iterable[str] | None = None,
    min_s: float = 3.0,
    max_s: float = 7.0,
) -> list[Violation]:
    langs = _languages(languages)
    report = []
    for r in manifest:
        if r.language not in registry.INDEX:
            report.append(Violation("LANG", f"id={r.id} language={r.language!r} is not a task language"))
        if r.split in SPLITS and not _in_gate(r, min_s, max_s):
            report.append(Violation("DUR", f"id={r.id} split={r.split} duration={r.duration_s:g} outside [{min_s:g}, {max_s:g}]"))

    counts = manifest.counts()
    expected = {"train": train_per_language, "valid": eval_per_language, "test": eval_per_language}
    for split in SPLITS:
        for code in langs:
            n = counts.get((split, code), 0)
            if n != expected[split]:
                report.append(Violation("CNT", f"split={split} language={code} count={n} expected={expected[split]}"))

    speaker_splits = defaultdict(set)
    speaker_genders = defaultdict(set)
    for r in manifest:
        if r.speaker_id is None:
            continue
        if r.split in SPLITS:
            speaker_splits[r.speaker_id].add(r.split)
        if r.gender != "unknown":
            speaker_genders[r.speaker_id].add(r.gender)
    for speaker in sorted(speaker_splits):
        splits = speaker_splits[speaker]
        if len(splits) > 1:
            report.append(Violation("SPK", f"speaker={speaker} appears in splits {','.join(s for s in SPLITS if s in splits)}"))
    for speaker in sorted(speaker_genders):
        if len(speaker_genders[speaker]) > 1:
            report.append(Violation("GEN", f"speaker={speaker} has conflicting gender labels"))
    return report


def format_report(report: list[Violation]) -> str:
    return "".join(f"{v}\n" for v in report)

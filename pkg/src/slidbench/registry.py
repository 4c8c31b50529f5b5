"""The 16 task languages with their typological metadata and data sources."""

from __future__ import annotations

from typing import NamedTuple


class LanguageInfo(NamedTuple):
    iso639_3: str
    wilderness_id: str
    name: str
    family: str
    genus: str
    macroarea: str
    eval_source: str


# Hakha Chin's family/genus are kept exactly as published.
_TABLE = (
    LanguageInfo("kab", "KABCEB", "Kabyle", "Afro-Asiatic", "Berber", "Africa", "CV"),
    LanguageInfo("iba", "IBATIV", "Iban", "Austronesian", "Malayo-Sumbawan", "Papunesia", "SLR24"),
    LanguageInfo("ind", "INZTSI", "Indonesian", "Austronesian", "Malayo-Sumbawan", "Papunesia", "CV"),
    LanguageInfo("sun", "SUNIBS", "Sundanese", "Austronesian", "Malayo-Sumbawan", "Papunesia", "SLR36"),
    LanguageInfo("jav", "JAVNRF", "Javanese", "Austronesian", "Javanese", "Papunesia", "SLR35"),
    LanguageInfo("eus", "EUSEAB", "Euskara", "Basque", "Basque", "Eurasia", "CV"),
    LanguageInfo("tam", "TCVWTC", "Tamil", "Dravidian", "Southern Dravidian", "Eurasia", "SLR65"),
    LanguageInfo("kan", "ERVWTC", "Kannada", "Dravidian", "Southern Dravidian", "Eurasia", "SLR79"),
    LanguageInfo("tel", "TCWWTC", "Telugu", "Dravidian", "South-Central Dravidian", "Eurasia", "SLR66"),
    LanguageInfo("hin", "HNDSKV", "Hindi", "Indo-European", "Indic", "Eurasia", "SS"),
    LanguageInfo("por", "PORARA", "Portuguese", "Indo-European", "Romance", "Eurasia", "CV"),
    LanguageInfo("rus", "RUSS76", "Russian", "Indo-European", "Slavic", "Eurasia", "CV"),
    LanguageInfo("eng", "EN1NIV", "English", "Indo-European", "Germanic", "Eurasia", "CV"),
    LanguageInfo("mar", "MARWTC", "Marathi", "Indo-European", "Indic", "Eurasia", "SLR64"),
    LanguageInfo("cnh", "CNHBSM", "Chin, Hakha", "Niger-Congo", "Gur", "Africa", "CV"),
    LanguageInfo("tha", "THATSV", "Thai", "Tai-Kadai", "Kam-Tai", "Eurasia", "CV"),
)

TRAIN_SOURCE = "Wilderness"
LANGUAGES: tuple[str, ...] = tuple(info.iso639_3 for info in _TABLE)
INDEX = {code: i for i, code in enumerate(LANGUAGES)}
N_LANGUAGES = len(LANGUAGES)
OUT_OF_SET = "OUT_OF_SET"


def language_registry() -> list[LanguageInfo]:
    return list(_TABLE)


def lookup(code: str) -> LanguageInfo:
    try:
        return _TABLE[INDEX[code]]
    except KeyError:
        raise KeyError(f"unknown language code {code!r}") from None


def families() -> dict[str, list[str]]:
    """Family name -> member ISO codes, both in table order."""
    out: dict[str, list[str]] = {}
    for info in _TABLE:
        out.setdefault(info.family, []).append(info.iso639_3)
    return out


def format_table() -> str:
    header = ("ISO", "Wilderness ID", "Language name", "Family", "Genus", "Macroarea", "Train", "Eval")
    rows = [header] + [
        (i.iso639_3, i.wilderness_id, i.name, i.family, i.genus, i.macroarea, TRAIN_SOURCE, i.eval_source)
        for i in _TABLE
    ]
    widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows) + "\n"

"""Supported-tag dictionary loaded from the versioned data file."""
import json
from functools import lru_cache
from importlib import resources

Tag = tuple[int, int]


@lru_cache(maxsize=1)
def _load():
    text = resources.files("gridbox.dicom").joinpath("data/dictionary.json").read_text()
    raw = json.loads(text)
    by_tag = {}
    by_keyword = {}
    for key, (vr, keyword) in raw["tags"].items():
        tag = (int(key[:4], 16), int(key[4:], 16))
        by_tag[tag] = (vr, keyword)
        by_keyword[keyword] = tag
    return raw["version"], by_tag, by_keyword


def dictionary_version() -> str:
    return _load()[0]


def tag_for(key) -> Tag:
    """Accept a ``(group, element)`` pair or a keyword such as ``"PatientID"``."""
    if isinstance(key, str):
        try:
            return _load()[2][key]
        except KeyError:
            raise KeyError(f"unknown DICOM keyword {key!r}") from None
    group, element = key
    return (int(group), int(element))


def vr_for(tag: Tag) -> str | None:
    entry = _load()[1].get(tag)
    return entry[0] if entry else None


def keyword_for(tag: Tag) -> str | None:
    entry = _load()[1].get(tag)
    return entry[1] if entry else None


def format_tag(tag: Tag) -> str:
    return f"({tag[0]:04X},{tag[1]:04X})"

"""DICOM tags to catalogue rows, driven by the shipped tag-mapping table."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from gridbox.dicom.codec import DicomObject, validate_identity
from gridbox.errors import MalformedValue
from gridbox.mom.records import ImageRecord, PatientRecord, SeriesRecord, StudyRecord


@dataclass(frozen=True)
class Mapping:
    tag: tuple
    vr: str
    field: str
    transform: str


@lru_cache(maxsize=1)
def tag_mapping() -> tuple[Mapping, ...]:
    text = resources.files("gridbox.mom").joinpath("data/tag_mapping.csv").read_text()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        group, element = row["tag"].strip("()").split(",")
        out.append(Mapping((int(group, 16), int(element, 16)), row["vr"], row["mom_field"], row["transform"]))
    return tuple(out)


_AGE_RE = re.compile(r"^(\d{3})([DWMY])$")
_DATE_RE = re.compile(r"^\d{8}$")


def parse_age(text: str) -> int:
    """Age string such as ``"052Y"`` to whole years."""
    match = _AGE_RE.match(text)
    if not match:
        raise MalformedValue(f"unparseable PatientAge {text!r}")
    n, unit = int(match.group(1)), match.group(2)
    return {"Y": n, "M": n // 12, "W": n // 52, "D": n // 365}[unit]


def parse_date(text: str) -> str:
    if not _DATE_RE.match(text):
        raise MalformedValue(f"unparseable date {text!r}")
    month, day = int(text[4:6]), int(text[6:8])
    if not (1 <= month <= 12 and 1 <= day <= 31):
        raise MalformedValue(f"date out of range {text!r}")
    return text


def _transform(kind: str, raw):
    if kind in ("text", "uid"):
        return raw
    if kind == "sex":
        return raw if raw in ("M", "F", "O") else "UNKNOWN"
    if kind == "year":
        return int(parse_date(raw)[:4])
    if kind == "age":
        return parse_age(raw)
    if kind == "date":
        return parse_date(raw)
    if kind == "laterality":
        return raw
    if kind == "number":
        return int(raw)
    raise ValueError(f"unknown transform {kind!r}")


def _mapped_values(obj: DicomObject) -> dict:
    values = {}
    for m in tag_mapping():
        element = obj.elements._elements.get(m.tag)
        if element is None:
            continue
        raw = element.number() if m.transform == "number" else element.text()
        if raw == "":
            continue
        try:
            values[m.field] = _transform(m.transform, raw)
        except (ValueError, IndexError):
            raise MalformedValue(f"{m.field}: cannot read {raw!r}") from None
    return values


def extract_metadata(obj: DicomObject, lfn: str, origin: str) -> frozenset:
    """Patient, Study, Series and Image rows for one stored (pseudonymized) object."""
    validate_identity(obj)
    v = _mapped_values(obj)
    if "image.laterality" not in v:
        fallback = obj.get_text("Laterality")
        if fallback:
            v["image.laterality"] = fallback
    age = v.get("study.age_at_study")
    if age is None and "patient.birth_year" in v and "study.study_date" in v:
        age = int(v["study.study_date"][:4]) - v["patient.birth_year"]
    patient = PatientRecord(
        pseudonym_id=v["patient.pseudonym_id"],
        sex=v.get("patient.sex", "UNKNOWN"),
        birth_year=v.get("patient.birth_year"),
        origin_node=origin,
    )
    study = StudyRecord(
        study_uid=v["study.study_uid"],
        study_date=v.get("study.study_date", ""),
        description=v.get("study.description", ""),
        patient_id=patient.pseudonym_id,
        age_at_study=age,
    )
    series = SeriesRecord(
        series_uid=v["series.series_uid"],
        modality=v.get("series.modality", ""),
        manufacturer=v.get("series.manufacturer", ""),
        study_uid=study.study_uid,
    )
    image = ImageRecord(
        sop_uid=v["image.sop_uid"],
        sop_class_uid=v["image.sop_class_uid"],
        laterality=v.get("image.laterality", ""),
        view_position=v.get("image.view_position", ""),
        rows=v.get("image.rows"),
        columns=v.get("image.columns"),
        lfn=lfn,
        series_uid=series.series_uid,
    )
    return frozenset({patient, study, series, image})

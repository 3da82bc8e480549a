"""Catalogue row types of the object model.

Every record is a frozen dataclass so extraction results can be compared and
deduplicated as sets. ``to_dict``/``record_from_dict`` give the JSON form
carried in catalogue changes.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from gridbox.errors import UnknownVocabulary

SEXES = ("M", "F", "O", "UNKNOWN")
EVENT_KINDS = ("VISIT", "INTERPRETATION", "DRUG_TREATMENT", "PROCEDURE", "DIAGNOSIS")
RELATION_KINDS = ("CONSEQUENCE_OF", "FOLLOWS", "ASSOCIATED_WITH")
COMPOSITIONS = ("FATTY", "SCATTERED", "HETEROGENEOUSLY_DENSE", "EXTREMELY_DENSE")
FINDING_TYPES = ("MASS", "CALCIFICATION", "DISTORTION", "ASYMMETRY")
QUADRANTS = ("UOQ", "UIQ", "LOQ", "LIQ", "CENTRAL", "AXILLARY")


@dataclass(frozen=True)
class PatientRecord:
    TABLE = "patient"
    pseudonym_id: str
    sex: str
    birth_year: int | None
    origin_node: str

    @property
    def key(self) -> str:
        return self.pseudonym_id


@dataclass(frozen=True)
class StudyRecord:
    TABLE = "study"
    study_uid: str
    study_date: str
    description: str
    patient_id: str
    # age is denormalized per study, since one patient has studies at many ages
    age_at_study: int | None

    @property
    def key(self) -> str:
        return self.study_uid


@dataclass(frozen=True)
class SeriesRecord:
    TABLE = "series"
    series_uid: str
    modality: str
    manufacturer: str
    study_uid: str

    @property
    def key(self) -> str:
        return self.series_uid


@dataclass(frozen=True)
class ImageRecord:
    TABLE = "image"
    sop_uid: str
    sop_class_uid: str
    laterality: str
    view_position: str
    rows: int | None
    columns: int | None
    lfn: str
    series_uid: str

    @property
    def key(self) -> str:
        return self.sop_uid


@dataclass(frozen=True)
class ClinicalAttribute:
    TABLE = "clinical"
    patient_id: str
    name: str
    value: object
    recorded_at: float

    @property
    def key(self) -> str:
        return f"{self.patient_id}/{self.name}"


@dataclass(frozen=True)
class MedicalEvent:
    TABLE = "event"
    event_id: str
    kind: str
    patient_id: str
    timestamp: str
    relations: tuple = ()  # (target event_id, relation kind) pairs

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        rel = tuple((str(t), str(k)) for t, k in self.relations)
        for _, kind in rel:
            if kind not in RELATION_KINDS:
                raise ValueError(f"unknown relation kind {kind!r}")
        object.__setattr__(self, "relations", rel)

    @property
    def key(self) -> str:
        return self.event_id


@dataclass(frozen=True)
class Finding:
    finding_type: str
    laterality: str
    quadrant: str | None = None
    contour: tuple | None = None
    interpretation: str = ""

    def __post_init__(self):
        if self.laterality not in ("L", "R"):
            raise ValueError(f"finding laterality must be L or R, got {self.laterality!r}")
        if self.contour is not None:
            points = tuple((float(x), float(y)) for x, y in self.contour)
            if len(points) < 3:
                raise ValueError("a contour needs at least 3 points")
            object.__setattr__(self, "contour", points)

    @property
    def descriptor(self) -> tuple:
        return (self.finding_type, self.laterality, self.quadrant)


@dataclass(frozen=True)
class Assessment:
    TABLE = "assessment"
    assessment_id: str
    study_uid: str
    author: str
    authored_at: str
    equipment: str
    composition: str
    findings: tuple = ()
    category: int = 0
    recommendation: str = ""
    source_sr_lfn: str | None = None

    def __post_init__(self):
        if self.composition not in COMPOSITIONS:
            raise ValueError(f"unknown composition {self.composition!r}")
        if not 0 <= int(self.category) <= 5:
            raise ValueError("category is on a 0-5 scale")
        object.__setattr__(self, "findings", tuple(self.findings))

    @property
    def key(self) -> str:
        return self.assessment_id


@dataclass(frozen=True)
class IdentityMapEntry:
    pseudonym_id: str
    original_patient_id: str
    original_patient_name: str
    created_at: float


IDENTITY_FIELDS = frozenset({"original_patient_id", "original_patient_name"})

RECORD_TYPES = {
    cls.TABLE: cls
    for cls in (PatientRecord, StudyRecord, SeriesRecord, ImageRecord, ClinicalAttribute, MedicalEvent, Assessment)
}


def to_dict(record) -> dict:
    out = dataclasses.asdict(record)
    if isinstance(record, Assessment):
        for finding in out["findings"]:
            if finding["contour"] is not None:
                finding["contour"] = [list(p) for p in finding["contour"]]
    if isinstance(record, MedicalEvent):
        out["relations"] = [list(r) for r in record.relations]
    return out


def record_from_dict(table: str, data: dict):
    cls = RECORD_TYPES[table]
    data = dict(data)
    if cls is Assessment:
        data["findings"] = tuple(
            Finding(**{**f, "contour": tuple(map(tuple, f["contour"])) if f.get("contour") else None})
            for f in data.get("findings", ())
        )
    return cls(**data)


# ------------------------------------------------------- clinical vocabulary


@lru_cache(maxsize=1)
def clinical_vocabulary() -> dict:
    text = resources.files("gridbox.mom").joinpath("data/clinical_vocabulary.json").read_text()
    return json.loads(text)["attributes"]


def coerce_clinical(name: str, value):
    """Validate ``value`` against the vocabulary entry for ``name``."""
    vocab = clinical_vocabulary()
    if name not in vocab:
        raise UnknownVocabulary(f"clinical attribute {name!r} is not in the vocabulary")
    spec = vocab[name]
    if spec["type"] == "bool":
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise UnknownVocabulary(f"{name} expects a boolean, got {value!r}")
    if spec["type"] == "enum":
        if value not in spec["values"]:
            raise UnknownVocabulary(f"{name}={value!r} not in {spec['values']}")
        return value
    raise UnknownVocabulary(f"unsupported vocabulary type {spec['type']!r}")

"""Seeded synthetic mammography corpus with a ground-truth manifest.

Pixels are a small random payload and are never interpreted. The manifest is
one JSON object per image (``manifest.jsonl``) holding every generated
attribute, raw identifiers included, so oracles never need to parse files.
"""
from __future__ import annotations

import json
import random
import zlib
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from pathlib import Path

from gridbox.dicom import Dataset, Element, new_object, serialize_dicom
from gridbox.dicom.dictionary import tag_for

MAMMOGRAPHY_IMAGE = "1.2.840.10008.5.1.4.1.1.1.2"
UID_ROOT = "1.2.826.0.1.3680043.9.7433"
SURNAMES = ("Rossi", "Smith", "Bianchi", "Jones", "Ferrari", "Taylor", "Russo", "Brown", "Colombo", "Wilson")
GIVEN = ("Maria", "Anna", "Giulia", "Sarah", "Emma", "Laura", "Claire", "Sofia", "Helen", "Paola")
MANUFACTURERS = ("ACME Imaging", "Mammo Systems", "Radiant Medical")
VIEWS = (("L", "CC"), ("R", "CC"), ("L", "MLO"), ("R", "MLO"))


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    patients: int = 30
    studies_per_patient: int = 1
    series_per_study: int = 1
    images_per_series: int = 2
    age_min: int = 40
    age_max: int = 75
    male_fraction: float = 0.0
    hrt_fraction: float = 0.4
    diet_classes: tuple = ("MEDITERRANEAN", "WESTERN", "VEGETARIAN", "OTHER")
    lifestyle_classes: tuple = ("SEDENTARY", "ACTIVE", "VERY_ACTIVE")
    seed: int = 42
    id_prefix: str = "GB1"
    matrix: int = 16  # rows == columns of the synthetic pixel payload
    first_study_year: int = 2002
    last_study_year: int = 2004

    @property
    def site_number(self) -> int:
        return zlib.crc32(self.id_prefix.encode()) % 100000

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticCorpusSpec":
        data = dict(data)
        for key in ("diet_classes", "lifestyle_classes"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass
class CorpusImage:
    file: str
    patient_id: str
    patient_name: str
    sex: str
    birth_date: str
    age: int
    study_uid: str
    study_date: str
    description: str
    series_uid: str
    modality: str
    manufacturer: str
    sop_uid: str
    sop_class_uid: str
    laterality: str
    view_position: str
    rows: int
    columns: int
    clinical: dict = field(default_factory=dict)


def _image_dataset(img: CorpusImage, rng: random.Random, extras: dict) -> Dataset:
    ds = Dataset()
    ds.set_text("SpecificCharacterSet", "ISO_IR 100")
    ds.set_text("SOPClassUID", img.sop_class_uid)
    ds.set_text("SOPInstanceUID", img.sop_uid)
    ds.set_text("StudyDate", img.study_date)
    ds.set_text("SeriesDate", img.study_date)
    ds.set_text("StudyTime", "093000")
    ds.set_text("AccessionNumber", extras["accession"])
    ds.set_text("Modality", img.modality)
    ds.set_text("Manufacturer", img.manufacturer)
    ds.set_text("InstitutionName", extras["institution"])
    ds.set_text("ReferringPhysicianName", extras["referrer"])
    ds.set_text("StudyDescription", img.description)
    ds.set_text("PatientName", img.patient_name)
    ds.set_text("PatientID", img.patient_id)
    ds.set_text("PatientBirthDate", img.birth_date)
    ds.set_text("PatientSex", img.sex)
    ds.set_text("PatientAge", f"{img.age:03d}Y")
    ds.set_text("PatientAddress", extras["address"])
    ds.set_text("ViewPosition", img.view_position)
    ds.set_text("StudyInstanceUID", img.study_uid)
    ds.set_text("SeriesInstanceUID", img.series_uid)
    ds.set_text("StudyID", extras["study_id"])
    ds.set_text("SeriesNumber", "1")
    ds.set_text("InstanceNumber", str(extras["instance"]))
    ds.set_text("Laterality", img.laterality)
    ds.set_text("ImageLaterality", img.laterality)
    ds.set_us("SamplesPerPixel", 1)
    ds.set_text("PhotometricInterpretation", "MONOCHROME2")
    ds.set_us("Rows", img.rows)
    ds.set_us("Columns", img.columns)
    ds.set_us("BitsAllocated", 16)
    ds.set_us("BitsStored", 12)
    ds.set_us("HighBit", 11)
    ds.set_us("PixelRepresentation", 0)
    pixels = rng.randbytes(img.rows * img.columns * 2)
    ds.add(Element(tag_for("PixelData"), "OB", pixels))
    return ds


def _birth_date(rng: random.Random, study: date, age: int) -> date:
    """A birthday giving exactly ``age`` completed years on ``study``."""
    latest = date(study.year - age, study.month, study.day) if not (study.month == 2 and study.day == 29) \
        else date(study.year - age, 2, 28)
    earliest = latest.replace(year=latest.year - 1) + timedelta(days=1)
    return earliest + timedelta(days=rng.randrange((latest - earliest).days + 1))


def generate(spec: SyntheticCorpusSpec) -> list[tuple[CorpusImage, bytes]]:
    rng = random.Random(spec.seed)
    site = spec.site_number
    out = []
    counter = 0
    for p in range(1, spec.patients + 1):
        patient_id = f"{spec.id_prefix}-P{p:05d}"
        patient_name = f"{rng.choice(SURNAMES)}{p:03d}^{rng.choice(GIVEN)}"
        sex = "M" if rng.random() < spec.male_fraction else "F"
        age0 = rng.randint(spec.age_min, spec.age_max)
        first = date(rng.randint(spec.first_study_year, spec.last_study_year), rng.randint(1, 12), rng.randint(1, 28))
        birth = _birth_date(rng, first, age0)
        clinical = {
            "hrt_treatment": rng.random() < spec.hrt_fraction,
            "diet_class": rng.choice(spec.diet_classes),
            "lifestyle_class": rng.choice(spec.lifestyle_classes),
        }
        address = f"{rng.randint(1, 200)} {rng.choice(SURNAMES)} Street"
        for s in range(1, spec.studies_per_patient + 1):
            study_day = first + timedelta(days=365 * (s - 1) + rng.randrange(0, 30))
            age = study_day.year - birth.year - ((study_day.month, study_day.day) < (birth.month, birth.day))
            study_uid = f"{UID_ROOT}.{site}.{p}.{s}"
            manufacturer = rng.choice(MANUFACTURERS)
            for r in range(1, spec.series_per_study + 1):
                series_uid = f"{study_uid}.{r}"
                for i in range(1, spec.images_per_series + 1):
                    counter += 1
                    laterality, view = VIEWS[(i - 1) % len(VIEWS)]
                    img = CorpusImage(
                        file=f"img_{counter:05d}.dcm",
                        patient_id=patient_id,
                        patient_name=patient_name,
                        sex=sex,
                        birth_date=birth.strftime("%Y%m%d"),
                        age=age,
                        study_uid=study_uid,
                        study_date=study_day.strftime("%Y%m%d"),
                        description="SCREENING MAMMOGRAPHY",
                        series_uid=series_uid,
                        modality="MG",
                        manufacturer=manufacturer,
                        sop_uid=f"{series_uid}.{i}",
                        sop_class_uid=MAMMOGRAPHY_IMAGE,
                        laterality=laterality,
                        view_position=view,
                        rows=spec.matrix,
                        columns=spec.matrix,
                        clinical=dict(clinical),
                    )
                    extras = {
                        "accession": f"A{site}{counter:06d}",
                        "institution": f"{spec.id_prefix} Breast Unit",
                        "referrer": f"Dr^{rng.choice(SURNAMES)}",
                        "address": address,
                        "study_id": str(s),
                        "instance": i,
                    }
                    blob = serialize_dicom(new_object(_image_dataset(img, rng, extras)))
                    out.append((img, blob))
    return out


def gen_corpus(spec: SyntheticCorpusSpec, out_dir) -> Path:
    """Write the corpus files and ``manifest.jsonl``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for img, blob in generate(spec):
        (out_dir / img.file).write_bytes(blob)
        lines.append(json.dumps(asdict(img), sort_keys=True))
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("".join(line + "\n" for line in lines))
    (out_dir / "corpus.json").write_text(json.dumps(asdict(spec), sort_keys=True, indent=1))
    return manifest


def read_manifest(path) -> list[CorpusImage]:
    with open(path) as fh:
        return [CorpusImage(**json.loads(line)) for line in fh if line.strip()]

from gridbox.mom.aom import assessment_from_sr, sr_from_assessment
from gridbox.mom.deid import pseudonym_for, pseudonymize
from gridbox.mom.events import add_medical_event, related_events, validate_event
from gridbox.mom.extract import extract_metadata, parse_age, tag_mapping
from gridbox.mom.records import (
    COMPOSITIONS,
    IDENTITY_FIELDS,
    Assessment,
    ClinicalAttribute,
    Finding,
    IdentityMapEntry,
    ImageRecord,
    MedicalEvent,
    PatientRecord,
    SeriesRecord,
    StudyRecord,
    clinical_vocabulary,
    coerce_clinical,
    record_from_dict,
    to_dict,
)

__all__ = [
    "assessment_from_sr",
    "sr_from_assessment",
    "pseudonym_for",
    "pseudonymize",
    "add_medical_event",
    "related_events",
    "validate_event",
    "extract_metadata",
    "parse_age",
    "tag_mapping",
    "COMPOSITIONS",
    "IDENTITY_FIELDS",
    "Assessment",
    "ClinicalAttribute",
    "Finding",
    "IdentityMapEntry",
    "ImageRecord",
    "MedicalEvent",
    "PatientRecord",
    "SeriesRecord",
    "StudyRecord",
    "clinical_vocabulary",
    "coerce_clinical",
    "record_from_dict",
    "to_dict",
]

from gridbox.dicom.codec import (
    EXPLICIT_VR_LITTLE_ENDIAN,
    SUPPORTED_VRS,
    Dataset,
    DicomObject,
    Element,
    is_valid_uid,
    new_object,
    parse_dicom,
    serialize_dicom,
    text_element,
    validate_identity,
)
from gridbox.dicom.sr import (
    MAMMOGRAPHY_CAD_SR,
    SR_CLASSES,
    Code,
    Measurement,
    SrDocument,
    SrNode,
    build_sr,
    is_structured_report,
    parse_sr,
    sr_from_json,
    sr_to_json,
)

__all__ = [
    "EXPLICIT_VR_LITTLE_ENDIAN",
    "SUPPORTED_VRS",
    "Dataset",
    "DicomObject",
    "Element",
    "is_valid_uid",
    "new_object",
    "parse_dicom",
    "serialize_dicom",
    "text_element",
    "validate_identity",
    "MAMMOGRAPHY_CAD_SR",
    "SR_CLASSES",
    "Code",
    "Measurement",
    "SrDocument",
    "SrNode",
    "build_sr",
    "is_structured_report",
    "parse_sr",
    "sr_from_json",
    "sr_to_json",
]

"""Minimal Structured Report content tree: CONTAINER, TEXT, CODE, NUM, SCOORD.

Nodes are encoded as SR content items. Children go into ContentSequence
with relationship CONTAINS; SCOORD points are stored as FL GraphicData, so
coordinates round-trip at float32 precision.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

from gridbox.dicom.codec import Dataset, DicomObject, Element, is_valid_uid, new_object
from gridbox.errors import InvalidElement, NotStructuredReport

MAMMOGRAPHY_CAD_SR = "1.2.840.10008.5.1.4.1.1.88.50"
SR_CLASSES = frozenset(
    {
        "1.2.840.10008.5.1.4.1.1.88.11",  # Basic Text SR
        "1.2.840.10008.5.1.4.1.1.88.22",  # Enhanced SR
        "1.2.840.10008.5.1.4.1.1.88.33",  # Comprehensive SR
        MAMMOGRAPHY_CAD_SR,
    }
)
VALUE_TYPES = ("CONTAINER", "TEXT", "CODE", "NUM", "SCOORD")


@dataclass(frozen=True)
class Code:
    value: str
    scheme: str
    meaning: str


@dataclass(frozen=True)
class Measurement:
    number: float
    unit: str


@dataclass(frozen=True)
class SrNode:
    value_type: str
    concept: Code
    value: object = None  # str | Code | Measurement | tuple of (x, y)
    children: tuple = ()

    def __post_init__(self):
        if self.value_type not in VALUE_TYPES:
            raise ValueError(f"unsupported value type {self.value_type!r}")
        if self.value_type == "SCOORD":
            points = tuple((float(x), float(y)) for x, y in self.value or ())
            if not points:
                raise ValueError("SCOORD needs at least one point")
            object.__setattr__(self, "value", points)
        elif self.value_type == "NUM":
            if not isinstance(self.value, Measurement) or not self.value.unit:
                raise ValueError("NUM needs a Measurement with a unit")
        elif self.value_type == "CODE" and not isinstance(self.value, Code):
            raise ValueError("CODE needs a Code value")
        elif self.value_type == "TEXT" and not isinstance(self.value, str):
            raise ValueError("TEXT needs a string value")
        object.__setattr__(self, "children", tuple(self.children))

    def find(self, concept_value: str) -> list["SrNode"]:
        return [c for c in self.children if c.concept.value == concept_value]


@dataclass(frozen=True)
class SrDocument:
    root: SrNode
    referenced_sop_uids: tuple = field(default=())

    def __post_init__(self):
        if self.root.value_type != "CONTAINER":
            raise ValueError("SR root must be a CONTAINER")
        uids = tuple(self.referenced_sop_uids)
        for uid in uids:
            if not is_valid_uid(uid):
                raise ValueError(f"malformed referenced SOP UID {uid!r}")
        object.__setattr__(self, "referenced_sop_uids", uids)


def _code_item(code: Code) -> Dataset:
    ds = Dataset()
    ds.set_text("CodeValue", code.value)
    ds.set_text("CodingSchemeDesignator", code.scheme)
    ds.set_text("CodeMeaning", code.meaning)
    return ds


def _read_code(items) -> Code:
    if len(items) != 1:
        raise NotStructuredReport("code sequence must hold exactly one item")
    item = items[0]
    return Code(
        item.get_text("CodeValue", ""),
        item.get_text("CodingSchemeDesignator", ""),
        item.get_text("CodeMeaning", ""),
    )


def _format_number(number: float) -> str:
    text = repr(float(number))
    if len(text) > 16:
        text = f"{number:.10g}"
    return text


def _encode_node(node: SrNode, ds: Dataset) -> None:
    ds.set_text("ValueType", node.value_type)
    ds.set_sequence("ConceptNameCodeSequence", [_code_item(node.concept)])
    if node.value_type == "CONTAINER":
        ds.set_text("ContinuityOfContent", "SEPARATE")
    elif node.value_type == "TEXT":
        ds.set_text("TextValue", node.value)
    elif node.value_type == "CODE":
        ds.set_sequence("ConceptCodeSequence", [_code_item(node.value)])
    elif node.value_type == "NUM":
        measured = Dataset()
        measured.set_text("NumericValue", _format_number(node.value.number))
        measured.set_sequence(
            "MeasurementUnitsCodeSequence", [_code_item(Code(node.value.unit, "UCUM", node.value.unit))]
        )
        ds.set_sequence("MeasuredValueSequence", [measured])
    elif node.value_type == "SCOORD":
        flat = [c for point in node.value for c in point]
        ds.set_text("GraphicType", "POINT" if len(node.value) == 1 else "POLYLINE")
        ds.add(Element((0x0070, 0x0022), "FL", struct.pack(f"<{len(flat)}f", *flat)))
    if node.children:
        items = []
        for child in node.children:
            item = Dataset()
            item.set_text("RelationshipType", "CONTAINS")
            _encode_node(child, item)
            items.append(item)
        ds.set_sequence("ContentSequence", items)


def _decode_node(ds: Dataset) -> SrNode:
    value_type = ds.get_text("ValueType")
    if value_type not in VALUE_TYPES:
        raise NotStructuredReport(f"unsupported content item value type {value_type!r}")
    concept = _read_code(ds["ConceptNameCodeSequence"].items) if "ConceptNameCodeSequence" in ds else None
    if concept is None:
        raise NotStructuredReport("content item without concept name")
    value = None
    if value_type == "TEXT":
        value = ds.get_text("TextValue", "")
    elif value_type == "CODE":
        value = _read_code(ds["ConceptCodeSequence"].items)
    elif value_type == "NUM":
        measured = ds["MeasuredValueSequence"].items[0]
        unit = _read_code(measured["MeasurementUnitsCodeSequence"].items).value
        value = Measurement(float(measured.get_text("NumericValue")), unit)
    elif value_type == "SCOORD":
        raw = ds[(0x0070, 0x0022)].value
        if len(raw) % 8:
            raise NotStructuredReport("GraphicData is not a list of float32 pairs")
        flat = struct.unpack(f"<{len(raw) // 4}f", raw)
        value = tuple(zip(flat[0::2], flat[1::2]))
    children = ()
    if "ContentSequence" in ds:
        children = tuple(_decode_node(item) for item in ds["ContentSequence"].items)
    return SrNode(value_type, concept, value, children)


def build_sr(
    doc: SrDocument,
    *,
    sop_uid: str,
    study_uid: str,
    series_uid: str,
    patient_id: str,
    patient_name: str = "",
    sop_class_uid: str = MAMMOGRAPHY_CAD_SR,
) -> DicomObject:
    if sop_class_uid not in SR_CLASSES:
        raise NotStructuredReport(f"{sop_class_uid} is not an SR storage class")
    ds = Dataset()
    ds.set_text("SOPClassUID", sop_class_uid)
    ds.set_text("SOPInstanceUID", sop_uid)
    ds.set_text("StudyInstanceUID", study_uid)
    ds.set_text("SeriesInstanceUID", series_uid)
    ds.set_text("Modality", "SR")
    ds.set_text("PatientID", patient_id)
    ds.set_text("PatientName", patient_name)
    ds.set_text("CompletionFlag", "COMPLETE")
    ds.set_text("VerificationFlag", "UNVERIFIED")
    refs = []
    for uid in doc.referenced_sop_uids:
        item = Dataset()
        item.set_text("ReferencedSOPInstanceUID", uid)
        refs.append(item)
    ds.set_sequence("ReferencedSOPSequence", refs)
    try:
        _encode_node(doc.root, ds)
    except ValueError as exc:
        raise InvalidElement(str(exc)) from None
    return new_object(ds)


def is_structured_report(obj: DicomObject) -> bool:
    return obj.get_text("SOPClassUID") in SR_CLASSES


def parse_sr(obj: DicomObject) -> SrDocument:
    if not is_structured_report(obj):
        raise NotStructuredReport(f"SOP class {obj.get_text('SOPClassUID')!r} is not an SR class")
    ds = obj.elements
    refs = ()
    if "ReferencedSOPSequence" in ds:
        refs = tuple(i.get_text("ReferencedSOPInstanceUID") for i in ds["ReferencedSOPSequence"].items)
    try:
        root = _decode_node(ds)
        return SrDocument(root, refs)
    except (KeyError, IndexError, ValueError) as exc:
        raise NotStructuredReport(f"malformed content tree: {exc}") from None


# JSON form, used to carry inline exemplars inside query documents


def _node_to_json(node: SrNode) -> dict:
    out = {"type": node.value_type, "concept": [node.concept.value, node.concept.scheme, node.concept.meaning]}
    if node.value_type == "TEXT":
        out["value"] = node.value
    elif node.value_type == "CODE":
        out["value"] = [node.value.value, node.value.scheme, node.value.meaning]
    elif node.value_type == "NUM":
        out["value"] = [node.value.number, node.value.unit]
    elif node.value_type == "SCOORD":
        out["value"] = [list(p) for p in node.value]
    if node.children:
        out["children"] = [_node_to_json(c) for c in node.children]
    return out


def _node_from_json(data: dict) -> SrNode:
    value_type = data["type"]
    value = data.get("value")
    if value_type == "CODE":
        value = Code(*value)
    elif value_type == "NUM":
        value = Measurement(float(value[0]), value[1])
    elif value_type == "SCOORD":
        value = tuple(tuple(p) for p in value)
    children = tuple(_node_from_json(c) for c in data.get("children", ()))
    return SrNode(value_type, Code(*data["concept"]), value, children)


def sr_to_json(doc: SrDocument) -> dict:
    return {"root": _node_to_json(doc.root), "referenced_sop_uids": list(doc.referenced_sop_uids)}


def sr_from_json(data: dict) -> SrDocument:
    try:
        return SrDocument(_node_from_json(data["root"]), tuple(data.get("referenced_sop_uids", ())))
    except (KeyError, TypeError, ValueError) as exc:
        raise NotStructuredReport(f"malformed SR document: {exc}") from None

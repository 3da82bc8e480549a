"""Mapping between Assessment records and SR content trees.

Layout of the tree (all concepts in the local ``99GBX`` scheme)::

    CONTAINER ASSESSMENT
      TEXT  ASSESSMENT_ID | STUDY_UID | AUTHOR | AUTHORED_AT | EQUIPMENT
      CODE  COMPOSITION
      NUM   CATEGORY           (unit "{category}")
      TEXT  RECOMMENDATION
      TEXT  SOURCE_LFN         (optional)
      CONTAINER FINDING        (one per finding)
        CODE FINDING_TYPE, CODE LATERALITY, CODE QUADRANT (optional),
        SCOORD CONTOUR (optional), TEXT INTERPRETATION
"""
from __future__ import annotations

from gridbox.dicom.sr import Code, Measurement, SrDocument, SrNode
from gridbox.errors import UnmappableSr
from gridbox.mom.records import Assessment, Finding

SCHEME = "99GBX"


def concept(value: str, meaning: str | None = None) -> Code:
    return Code(value, SCHEME, meaning or value.replace("_", " ").title())


def _text(name: str, value: str) -> SrNode:
    return SrNode("TEXT", concept(name), value)


def _code(name: str, value: str) -> SrNode:
    return SrNode("CODE", concept(name), concept(value))


def _finding_node(f: Finding) -> SrNode:
    children = [_code("FINDING_TYPE", f.finding_type), _code("LATERALITY", f.laterality)]
    if f.quadrant is not None:
        children.append(_code("QUADRANT", f.quadrant))
    if f.contour is not None:
        children.append(SrNode("SCOORD", concept("CONTOUR"), f.contour))
    children.append(_text("INTERPRETATION", f.interpretation))
    return SrNode("CONTAINER", concept("FINDING"), None, tuple(children))


def sr_from_assessment(a: Assessment, referenced_sop_uids=()) -> SrDocument:
    children = [
        _text("ASSESSMENT_ID", a.assessment_id),
        _text("STUDY_UID", a.study_uid),
        _text("AUTHOR", a.author),
        _text("AUTHORED_AT", a.authored_at),
        _text("EQUIPMENT", a.equipment),
        _code("COMPOSITION", a.composition),
        SrNode("NUM", concept("CATEGORY"), Measurement(float(a.category), "{category}")),
        _text("RECOMMENDATION", a.recommendation),
    ]
    if a.source_sr_lfn is not None:
        children.append(_text("SOURCE_LFN", a.source_sr_lfn))
    children.extend(_finding_node(f) for f in a.findings)
    root = SrNode("CONTAINER", concept("ASSESSMENT"), None, tuple(children))
    return SrDocument(root, tuple(referenced_sop_uids))


def _single(node: SrNode, name: str, required: bool = True):
    hits = node.find(name)
    if len(hits) > 1:
        raise UnmappableSr(f"more than one {name} node")
    if not hits:
        if required:
            raise UnmappableSr(f"content tree has no {name} node")
        return None
    return hits[0]


def _text_of(node: SrNode, name: str, required: bool = True):
    hit = _single(node, name, required)
    if hit is None:
        return None
    if hit.value_type != "TEXT":
        raise UnmappableSr(f"{name} must be TEXT")
    return hit.value


def _code_of(node: SrNode, name: str, required: bool = True):
    hit = _single(node, name, required)
    if hit is None:
        return None
    if hit.value_type != "CODE":
        raise UnmappableSr(f"{name} must be CODE")
    return hit.value.value


def _finding_from(node: SrNode) -> Finding:
    contour_node = _single(node, "CONTOUR", required=False)
    try:
        return Finding(
            finding_type=_code_of(node, "FINDING_TYPE"),
            laterality=_code_of(node, "LATERALITY"),
            quadrant=_code_of(node, "QUADRANT", required=False),
            contour=contour_node.value if contour_node is not None else None,
            interpretation=_text_of(node, "INTERPRETATION", required=False) or "",
        )
    except ValueError as exc:
        raise UnmappableSr(str(exc)) from None


def assessment_from_sr(doc: SrDocument) -> Assessment:
    root = doc.root
    composition = _code_of(root, "COMPOSITION")
    category_node = _single(root, "CATEGORY", required=False)
    category = int(category_node.value.number) if category_node is not None else 0
    try:
        return Assessment(
            assessment_id=_text_of(root, "ASSESSMENT_ID"),
            study_uid=_text_of(root, "STUDY_UID"),
            author=_text_of(root, "AUTHOR"),
            authored_at=_text_of(root, "AUTHORED_AT"),
            equipment=_text_of(root, "EQUIPMENT", required=False) or "",
            composition=composition,
            findings=tuple(_finding_from(n) for n in root.find("FINDING")),
            category=category,
            recommendation=_text_of(root, "RECOMMENDATION", required=False) or "",
            source_sr_lfn=_text_of(root, "SOURCE_LFN", required=False),
        )
    except ValueError as exc:
        raise UnmappableSr(str(exc)) from None

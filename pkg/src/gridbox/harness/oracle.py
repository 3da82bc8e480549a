"""Ground-truth oracle: expected query answers computed from the corpus
manifest and the harness's own record of later edits, by a linear scan that
evaluates the raw predicate document directly (no catalogue, no parser).
"""
from __future__ import annotations

from dataclasses import dataclass, field

MULTI_PREFIXES = ("assessment.", "event.")


@dataclass
class OracleImage:
    vo: str
    lfn: str
    attrs: dict


@dataclass
class Oracle:
    images: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)  # (vo, pid) -> {path: value}
    assessments: dict = field(default_factory=dict)  # (vo, study_uid) -> [dict]
    events: dict = field(default_factory=dict)  # (vo, pid) -> [kind]

    def add_image(self, vo: str, lfn: str, origin: str, pid: str, img) -> None:
        attrs = {
            "patient.pseudonym_id": pid,
            "patient.sex": img.sex,
            "patient.birth_year": int(img.birth_date[:4]),
            "patient.age_at_study": img.age,
            "patient.origin_node": origin,
            "study.study_uid": img.study_uid,
            "study.study_date": img.study_date,
            "study.description": img.description,
            "series.series_uid": img.series_uid,
            "series.modality": img.modality,
            "series.manufacturer": img.manufacturer,
            "image.sop_uid": img.sop_uid,
            "image.sop_class_uid": img.sop_class_uid,
            "image.laterality": img.laterality,
            "image.view_position": img.view_position,
            "image.rows": img.rows,
            "image.columns": img.columns,
            "image.lfn": lfn,
        }
        self.images.append(OracleImage(vo, lfn, attrs))

    def update_meta(self, vo: str, pid: str, updates: dict) -> None:
        self.meta.setdefault((vo, pid), {}).update(updates)

    def add_assessment(self, vo: str, assessment: dict) -> None:
        self.assessments.setdefault((vo, assessment["study_uid"]), []).append(assessment)

    def add_event(self, vo: str, pid: str, kind: str) -> None:
        self.events.setdefault((vo, pid), []).append(kind)

    def fact(self, image: OracleImage) -> dict:
        fact = dict(image.attrs)
        pid = fact["patient.pseudonym_id"]
        fact.update(self.meta.get((image.vo, pid), {}))
        found = self.assessments.get((image.vo, fact["study.study_uid"]), [])
        findings = [f for a in found for f in a.get("findings", [])]
        fact["assessment.assessment_id"] = [a["assessment_id"] for a in found]
        fact["assessment.author"] = [a["author"] for a in found]
        fact["assessment.equipment"] = [a.get("equipment", "") for a in found]
        fact["assessment.composition"] = [a["composition"] for a in found]
        fact["assessment.category"] = [a.get("category", 0) for a in found]
        fact["assessment.finding_type"] = [f["finding_type"] for f in findings]
        fact["assessment.finding_laterality"] = [f["laterality"] for f in findings]
        fact["assessment.quadrant"] = [f["quadrant"] for f in findings if f.get("quadrant")]
        fact["event.kind"] = list(self.events.get((image.vo, pid), []))
        return fact

    def select(self, predicate_doc, vo_set, origins=None) -> list[str]:
        """LFNs matching ``predicate_doc`` among images visible to ``vo_set``."""
        vo_set = set(vo_set)
        out = set()
        for image in self.images:
            if image.vo not in vo_set:
                continue
            if origins is not None and image.attrs["patient.origin_node"] not in origins:
                continue
            if holds(predicate_doc, self.fact(image)):
                out.add(image.lfn)
        return sorted(out)


def _test(op: str, value, operands) -> bool:
    if op == "EXISTS":
        return value is not None
    if value is None:
        return False
    if op == "EQ":
        return value == operands[0]
    if op == "NE":
        return value != operands[0]
    if op == "CONTAINS":
        return isinstance(value, str) and value.find(operands[0]) >= 0
    if isinstance(value, bool):
        return False
    low = operands[0]
    if op == "LT":
        return value < low
    if op == "LE":
        return not value > low
    if op == "GT":
        return value > low
    if op == "GE":
        return not value < low
    if op == "BETWEEN":
        return not (value < operands[0] or value > operands[1])
    raise ValueError(op)


def holds(doc, fact: dict) -> bool:
    if doc is None:
        return True
    if "and" in doc:
        for child in doc["and"]:
            if not holds(child, fact):
                return False
        return True
    if "or" in doc:
        for child in doc["or"]:
            if holds(child, fact):
                return True
        return False
    if "not" in doc:
        return not holds(doc["not"], fact)
    path, op, operands = doc["path"], doc["op"].upper(), doc.get("operands", [])
    value = fact.get(path)
    if path.startswith(MULTI_PREFIXES):
        values = [v for v in (value or []) if v is not None]
        if op == "EXISTS":
            return len(values) > 0
        return any(_test(op, v, operands) for v in values)
    if value == "":
        value = None if path in ("image.laterality", "image.view_position", "study.study_date") else value
    return _test(op, value, operands)

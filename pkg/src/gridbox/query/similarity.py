"""'Find one like it' scoring: Jaccard overlap of coded finding descriptors.

A descriptor is ``(finding_type, laterality, quadrant)``; contour geometry is
not scored.
"""
from __future__ import annotations

from gridbox.dicom.sr import SrDocument
from gridbox.mom.aom import assessment_from_sr
from gridbox.mom.records import Assessment


def descriptors(assessment: Assessment) -> frozenset:
    return frozenset(f.descriptor for f in assessment.findings)


def jaccard(a: frozenset, b: frozenset) -> float:
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def similarity_score(exemplar: SrDocument | Assessment, candidate: Assessment) -> float:
    if isinstance(exemplar, SrDocument):
        exemplar = assessment_from_sr(exemplar)
    return jaccard(descriptors(exemplar), descriptors(candidate))


def best_score(exemplar: Assessment, candidates) -> float:
    return max((similarity_score(exemplar, c) for c in candidates), default=0.0)

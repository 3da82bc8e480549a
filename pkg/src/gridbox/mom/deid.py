"""Pseudonymization of patient identity before anything leaves the vault boundary."""
from __future__ import annotations

import hashlib
import hmac
import json
from functools import lru_cache
from importlib import resources

from gridbox.dicom.codec import DicomObject
from gridbox.errors import MissingPatientId
from gridbox.mom.records import IdentityMapEntry

PSEUDONYM_HEX_CHARS = 32


@lru_cache(maxsize=1)
def deid_profile() -> dict:
    text = resources.files("gridbox.mom").joinpath("data/deid_profile.json").read_text()
    return json.loads(text)


def pseudonym_for(node_secret: bytes, node_id: str, patient_id: str, patient_name: str = "") -> str:
    """Hex keyed digest of ``node_id || patient_id``.

    If the digest happens to contain the original ID or name, a counter is
    mixed in until it does not; this stays deterministic per input.
    """
    if isinstance(node_secret, str):
        node_secret = node_secret.encode()
    forbidden = [s.lower() for s in (patient_id, patient_name) if s]
    counter = 0
    while True:
        message = f"{node_id}\x00{patient_id}".encode()
        if counter:
            message += f"\x00{counter}".encode()
        digest = hmac.new(node_secret, message, hashlib.sha256).hexdigest()[:PSEUDONYM_HEX_CHARS]
        if not any(s in digest for s in forbidden):
            return digest
        counter += 1


def pseudonymize(
    obj: DicomObject, node_secret: bytes, node_id: str, now: float = 0.0
) -> tuple[DicomObject, IdentityMapEntry]:
    patient_id = obj.get_text("PatientID")
    if not patient_id:
        raise MissingPatientId("object carries no PatientID")
    patient_name = obj.get_text("PatientName", "")
    pid = pseudonym_for(node_secret, node_id, patient_id, patient_name)
    out = obj.copy()
    ds = out.elements
    profile = deid_profile()
    for keyword in profile["pseudonym"]:
        ds.set_text(keyword, pid)
    for keyword in profile["truncate_to_year"]:
        value = ds.get_text(keyword)
        if value:
            ds.set_text(keyword, value[:4] + "0101" if len(value) >= 4 else "")
    for keyword in profile["remove"]:
        if keyword in ds:
            del ds[keyword]
    return out, IdentityMapEntry(pid, patient_id, patient_name, now)

"""Explicit VR Little Endian Part-10 reader and writer.

Only the canonical encoding is produced: zero preamble unless one was parsed,
recomputed file-meta group length, and defined lengths for sequences and
items. Undefined-length sequences are accepted on input.
"""
from __future__ import annotations

import re
import struct
from collections.abc import Iterator, MutableMapping
from dataclasses import dataclass, field

from gridbox.dicom.dictionary import Tag, format_tag, tag_for, vr_for
from gridbox.errors import (
    InvalidElement,
    MissingRequiredTag,
    NotDicom,
    TruncatedElement,
    UnsupportedTransferSyntax,
)

EXPLICIT_VR_LITTLE_ENDIAN = "1.2.840.10008.1.2.1"
IMPLEMENTATION_CLASS_UID = "1.2.826.0.1.3680043.10.1099.1"
MAGIC = b"DICM"
PREAMBLE = bytes(128)

SUPPORTED_VRS = frozenset(
    "AE AS CS DA TM DS IS LO LT PN SH ST UI UL US UT OB SQ".split()
)
TEXT_VRS = frozenset("AE AS CS DA TM DS IS LO LT PN SH ST UT".split())
# VRs whose explicit encoding uses 2 reserved bytes and a 32-bit length.
LONG_VRS = frozenset("OB OD OF OL OV OW SQ SV UC UN UR UT UV".split())

REQUIRED_IDENTITY = (
    "SOPInstanceUID",
    "SOPClassUID",
    "StudyInstanceUID",
    "SeriesInstanceUID",
    "PatientID",
)

ITEM = (0xFFFE, 0xE000)
ITEM_DELIM = (0xFFFE, 0xE00D)
SEQ_DELIM = (0xFFFE, 0xE0DD)
UNDEFINED = 0xFFFFFFFF
MAX_DEPTH = 24

_UID_RE = re.compile(r"^(0|[1-9][0-9]*)(\.(0|[1-9][0-9]*))*$")


def is_valid_uid(uid: str) -> bool:
    return 0 < len(uid) <= 64 and _UID_RE.match(uid) is not None


@dataclass(frozen=True)
class Element:
    tag: Tag
    vr: str
    value: bytes | tuple = b""

    @property
    def is_sequence(self) -> bool:
        return self.vr == "SQ"

    @property
    def items(self) -> tuple:
        return self.value if self.is_sequence else ()

    def text(self) -> str:
        if self.is_sequence:
            raise TypeError(f"{format_tag(self.tag)} is a sequence")
        raw = self.value.decode("latin-1")
        if self.vr == "UI":
            return raw.rstrip("\0")
        if self.vr in TEXT_VRS:
            # Leading spaces are significant for UT/ST/LT.
            return raw.rstrip(" \0") if self.vr in ("UT", "ST", "LT") else raw.strip(" \0")
        return raw

    def number(self) -> int:
        if self.vr == "US":
            return struct.unpack("<H", self.value[:2])[0]
        if self.vr == "UL":
            return struct.unpack("<I", self.value[:4])[0]
        return int(self.text())


class Dataset(MutableMapping):
    """Tag-keyed element map that always iterates in ascending tag order."""

    def __init__(self, elements=()):
        self._elements: dict[Tag, Element] = {}
        for element in elements:
            self.add(element)

    def add(self, element: Element) -> None:
        self._elements[element.tag] = element

    def __getitem__(self, key) -> Element:
        return self._elements[tag_for(key)]

    def __setitem__(self, key, element: Element) -> None:
        tag = tag_for(key)
        if element.tag != tag:
            raise ValueError("element tag does not match key")
        self._elements[tag] = element

    def __delitem__(self, key) -> None:
        del self._elements[tag_for(key)]

    def __contains__(self, key) -> bool:
        try:
            return tag_for(key) in self._elements
        except KeyError:
            return False

    def __iter__(self) -> Iterator[Tag]:
        return iter(sorted(self._elements))

    def __len__(self) -> int:
        return len(self._elements)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self._elements == other._elements

    def __hash__(self):
        return hash(tuple(self.elements()))

    def __repr__(self) -> str:
        return f"Dataset({len(self)} elements)"

    def elements(self) -> list[Element]:
        return [self._elements[t] for t in sorted(self._elements)]

    def copy(self) -> "Dataset":
        return Dataset(self._elements.values())

    # convenience accessors
    def get_text(self, key, default=None):
        tag = tag_for(key)
        element = self._elements.get(tag)
        return default if element is None else element.text()

    def get_number(self, key, default=None):
        element = self._elements.get(tag_for(key))
        return default if element is None else element.number()

    def set_text(self, key, value: str, vr: str | None = None) -> None:
        tag = tag_for(key)
        self.add(text_element(tag, value, vr))

    def set_us(self, key, value: int) -> None:
        tag = tag_for(key)
        self.add(Element(tag, "US", struct.pack("<H", value)))

    def set_sequence(self, key, items) -> None:
        tag = tag_for(key)
        self.add(Element(tag, "SQ", tuple(items)))


def text_element(tag: Tag, value: str, vr: str | None = None) -> Element:
    vr = vr or vr_for(tag)
    if vr is None:
        raise InvalidElement(f"no VR known for {format_tag(tag)}")
    try:
        raw = value.encode("latin-1")
    except UnicodeEncodeError as exc:
        raise InvalidElement(f"{format_tag(tag)}: value not encodable: {exc}") from None
    return Element(tag, vr, _pad(raw, vr))


@dataclass
class DicomObject:
    elements: Dataset
    preamble: bytes = PREAMBLE
    raw_length: int = field(default=0, compare=False)

    @property
    def dataset(self) -> Dataset:
        return self.elements

    def get_text(self, key, default=None):
        return self.elements.get_text(key, default)

    def copy(self) -> "DicomObject":
        return DicomObject(self.elements.copy(), self.preamble, self.raw_length)


def new_object(dataset: Dataset, *, preamble: bytes = PREAMBLE) -> DicomObject:
    """Wrap a dataset with file meta derived from its SOP class/instance."""
    ds = dataset.copy()
    ds.add(Element((0x0002, 0x0001), "OB", b"\x00\x01"))
    if "SOPClassUID" in ds:
        ds.set_text("MediaStorageSOPClassUID", ds.get_text("SOPClassUID"))
    if "SOPInstanceUID" in ds:
        ds.set_text("MediaStorageSOPInstanceUID", ds.get_text("SOPInstanceUID"))
    ds.set_text("TransferSyntaxUID", EXPLICIT_VR_LITTLE_ENDIAN)
    ds.set_text("ImplementationClassUID", IMPLEMENTATION_CLASS_UID)
    return DicomObject(ds, preamble)


def validate_identity(obj: DicomObject) -> None:
    for keyword in REQUIRED_IDENTITY:
        value = obj.elements.get_text(keyword)
        if not value:
            raise MissingRequiredTag(keyword)


# ---------------------------------------------------------------- parsing


class _Reader:
    def __init__(self, data: bytes):
        self.data = data

    def need(self, pos: int, n: int, what: str) -> None:
        if pos + n > len(self.data):
            raise TruncatedElement(f"{what} at offset {pos} needs {n} bytes")

    def header(self, pos: int, end: int):
        """Return (tag, vr, length, value_offset) for the element at pos."""
        if pos + 8 > end:
            raise TruncatedElement(f"element header at offset {pos}")
        group, elem = struct.unpack_from("<HH", self.data, pos)
        tag = (group, elem)
        if group == 0xFFFE:
            length = struct.unpack_from("<I", self.data, pos + 4)[0]
            return tag, None, length, pos + 8
        vr_bytes = self.data[pos + 4 : pos + 6]
        if not (65 <= vr_bytes[0] <= 90 and 65 <= vr_bytes[1] <= 90):
            raise NotDicom(f"invalid VR bytes {vr_bytes!r} for {format_tag(tag)}")
        vr = vr_bytes.decode("ascii")
        if vr in LONG_VRS:
            if pos + 12 > end:
                raise TruncatedElement(f"long header for {format_tag(tag)}")
            length = struct.unpack_from("<I", self.data, pos + 8)[0]
            return tag, vr, length, pos + 12
        length = struct.unpack_from("<H", self.data, pos + 6)[0]
        return tag, vr, length, pos + 8

    def dataset(self, pos: int, end: int, depth: int, stop_at_item_delim: bool = False):
        """Parse elements in [pos, end). Returns (Dataset, next_pos)."""
        if depth > MAX_DEPTH:
            raise NotDicom("sequence nesting too deep")
        ds = Dataset()
        while pos < end:
            tag, vr, length, voff = self.header(pos, end)
            if vr is None:
                if stop_at_item_delim and tag == ITEM_DELIM:
                    return ds, voff
                raise NotDicom(f"unexpected delimiter {format_tag(tag)} at offset {pos}")
            if tag in ds._elements:
                raise NotDicom(f"duplicate element {format_tag(tag)}")
            if length == UNDEFINED:
                if vr != "SQ":
                    raise NotDicom(f"undefined length on {vr} element {format_tag(tag)}")
                items, pos = self.sequence_undefined(voff, end, depth + 1)
                ds.add(Element(tag, vr, items))
                continue
            if voff + length > end:
                raise TruncatedElement(
                    f"{format_tag(tag)} declares {length} bytes, {end - voff} remain"
                )
            if vr == "SQ":
                items = self.sequence_defined(voff, voff + length, depth + 1)
                ds.add(Element(tag, vr, items))
            else:
                ds.add(Element(tag, vr, bytes(self.data[voff : voff + length])))
            pos = voff + length
        if stop_at_item_delim:
            raise TruncatedElement("item without delimiter")
        return ds, pos

    def item(self, pos: int, end: int, depth: int):
        tag, vr, length, voff = self.header(pos, end)
        if vr is not None or tag != ITEM:
            raise NotDicom(f"expected item tag, found {format_tag(tag)}")
        if length == UNDEFINED:
            return self.dataset(voff, end, depth, stop_at_item_delim=True)
        if voff + length > end:
            raise TruncatedElement(f"item declares {length} bytes, {end - voff} remain")
        ds, _ = self.dataset(voff, voff + length, depth)
        return ds, voff + length

    def sequence_defined(self, pos: int, end: int, depth: int) -> tuple:
        items = []
        while pos < end:
            ds, pos = self.item(pos, end, depth)
            items.append(ds)
        return tuple(items)

    def sequence_undefined(self, pos: int, end: int, depth: int):
        items = []
        while True:
            if pos + 8 > end:
                raise TruncatedElement("sequence without delimiter")
            group, elem = struct.unpack_from("<HH", self.data, pos)
            if (group, elem) == SEQ_DELIM:
                return tuple(items), pos + 8
            ds, pos = self.item(pos, end, depth)
            items.append(ds)


def parse_dicom(data: bytes) -> DicomObject:
    """Parse Part-10 bytes. Raises only :class:`DicomError` subclasses."""
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise TypeError("parse_dicom expects bytes")
    data = bytes(data)
    if len(data) < 132 or data[128:132] != MAGIC:
        raise NotDicom("missing DICM magic at offset 128")
    reader = _Reader(data)
    try:
        # file meta: contiguous group 0002 elements
        pos = 132
        meta_end = pos
        while meta_end + 2 <= len(data) and struct.unpack_from("<H", data, meta_end)[0] == 0x0002:
            _, _, length, voff = reader.header(meta_end, len(data))
            if length == UNDEFINED or voff + length > len(data):
                raise TruncatedElement(f"file meta element at offset {meta_end}")
            meta_end = voff + length
        meta, _ = reader.dataset(pos, meta_end, 0)
        syntax = meta.get_text("TransferSyntaxUID")
        if syntax != EXPLICIT_VR_LITTLE_ENDIAN:
            raise UnsupportedTransferSyntax(f"transfer syntax {syntax!r}")
        body, _ = reader.dataset(meta_end, len(data), 0)
    except (struct.error, IndexError, UnicodeDecodeError, RecursionError) as exc:
        raise NotDicom(f"malformed stream: {exc}") from None
    elements = Dataset()
    for element in meta.elements():
        if element.tag != (0x0002, 0x0000):
            elements.add(element)
    for element in body.elements():
        if element.tag in elements._elements:
            raise NotDicom(f"duplicate element {format_tag(element.tag)}")
        elements.add(element)
    return DicomObject(elements, data[:128], raw_length=len(data))


# -------------------------------------------------------------- serializing


def _pad(raw: bytes, vr: str) -> bytes:
    if len(raw) % 2 == 0:
        return raw
    if vr in ("US", "UL"):
        raise InvalidElement(f"{vr} value of odd length {len(raw)}")
    return raw + (b" " if vr in TEXT_VRS else b"\0")


def _check_value(element: Element) -> bytes:
    vr = element.vr
    raw = _pad(element.value, vr)
    if vr == "US" and len(raw) % 2:
        raise InvalidElement(f"{format_tag(element.tag)}: US length {len(raw)}")
    if vr == "UL" and len(raw) % 4:
        raise InvalidElement(f"{format_tag(element.tag)}: UL length {len(raw)}")
    if vr == "UI" and raw:
        for uid in raw.rstrip(b"\0").decode("latin-1").split("\\"):
            if not is_valid_uid(uid):
                raise InvalidElement(f"{format_tag(element.tag)}: malformed UID {uid!r}")
    if vr not in LONG_VRS and len(raw) > 0xFFFE:
        raise InvalidElement(
            f"{format_tag(element.tag)}: {len(raw)} bytes exceed the 16-bit length of {vr}"
        )
    return raw


def _encode_element(element: Element, out: bytearray) -> None:
    group, elem = element.tag
    vr = element.vr
    if len(vr) != 2 or not vr.isascii() or not vr.isupper():
        raise InvalidElement(f"{format_tag(element.tag)}: bad VR {vr!r}")
    if vr == "SQ":
        body = bytearray()
        for item in element.value:
            encoded = _encode_dataset(item)
            body += struct.pack("<HHI", ITEM[0], ITEM[1], len(encoded))
            body += encoded
        value = bytes(body)
    else:
        if not isinstance(element.value, (bytes, bytearray)):
            raise InvalidElement(f"{format_tag(element.tag)}: non-bytes value")
        value = _check_value(element)
    out += struct.pack("<HH", group, elem) + vr.encode("ascii")
    if vr in LONG_VRS:
        out += struct.pack("<HI", 0, len(value))
    else:
        out += struct.pack("<H", len(value))
    out += value


def _encode_dataset(ds: Dataset) -> bytes:
    out = bytearray()
    for element in ds.elements():
        _encode_element(element, out)
    return bytes(out)


def serialize_dicom(obj: DicomObject) -> bytes:
    """Canonical explicit VR little endian encoding; deterministic."""
    meta = Dataset(e for e in obj.elements.elements() if e.tag[0] == 0x0002 and e.tag[1] != 0)
    body = Dataset(e for e in obj.elements.elements() if e.tag[0] != 0x0002)
    if meta.get_text("TransferSyntaxUID") != EXPLICIT_VR_LITTLE_ENDIAN:
        raise UnsupportedTransferSyntax("objects are written as explicit VR little endian only")
    meta_bytes = _encode_dataset(meta)
    header = bytearray()
    _encode_element(Element((0x0002, 0x0000), "UL", struct.pack("<I", len(meta_bytes))), header)
    preamble = obj.preamble if len(obj.preamble) == 128 else PREAMBLE
    return preamble + MAGIC + bytes(header) + meta_bytes + _encode_dataset(body)

import io
import random
import struct

import pydicom
import pytest
from hypothesis import given
from hypothesis import strategies as st
from pydicom.dataset import Dataset as PdDataset
from pydicom.dataset import FileMetaDataset
from pydicom.uid import ExplicitVRLittleEndian, ImplicitVRLittleEndian

from dicomgen import hostile_bytes, random_object
from gridbox.dicom import Dataset, Element, new_object, parse_dicom, serialize_dicom
from gridbox.errors import (
    DicomError,
    InvalidElement,
    NotDicom,
    TruncatedElement,
    UnsupportedTransferSyntax,
)


def _pydicom_bytes(ds: PdDataset, syntax=ExplicitVRLittleEndian) -> bytes:
    meta = FileMetaDataset()
    meta.MediaStorageSOPClassUID = ds.SOPClassUID
    meta.MediaStorageSOPInstanceUID = ds.SOPInstanceUID
    meta.TransferSyntaxUID = syntax
    ds.file_meta = meta
    buf = io.BytesIO()
    pydicom.dcmwrite(buf, ds, enforce_file_format=True)
    return buf.getvalue()


def _pd_sample() -> PdDataset:
    ds = PdDataset()
    ds.SOPClassUID = "1.2.840.10008.5.1.4.1.1.1.2"
    ds.SOPInstanceUID = "1.2.3.4.5.6"
    ds.PatientID = "PX-001"
    ds.PatientName = "Doe^Jane"
    ds.Rows = 4
    ds.StudyDescription = "odd"  # odd length, padded by the writer
    item = PdDataset()
    item.CodeValue = "T-04000"
    item.CodingSchemeDesignator = "SRT"
    ds.AnatomicRegionSequence = [item]
    return ds


# ------------------------------------------------------------ round trips


@given(st.integers(min_value=0, max_value=2**32))
def test_random_objects_round_trip_bit_exact(seed):
    obj = random_object(random.Random(seed))
    data = serialize_dicom(obj)
    back = parse_dicom(data)
    assert back == obj
    assert serialize_dicom(back) == data


def test_corpus_files_round_trip(small_corpus):
    for _, blob in small_corpus:
        assert serialize_dicom(parse_dicom(blob)) == blob


def test_serialize_is_deterministic(small_corpus):
    obj = parse_dicom(small_corpus[0][1])
    assert serialize_dicom(obj) == serialize_dicom(obj.copy())


def test_preamble_is_preserved():
    obj = random_object(random.Random(3))
    obj.preamble = bytes(range(128))
    assert parse_dicom(serialize_dicom(obj)).preamble == bytes(range(128))


def test_odd_values_are_padded():
    ds = Dataset()
    ds.set_text("SOPClassUID", "1.2.3")
    ds.set_text("SOPInstanceUID", "1.2.3.4")
    ds.add(Element((0x0008, 0x1030), "LO", b"abc"))
    data = serialize_dicom(new_object(ds))
    assert parse_dicom(data).elements[(0x0008, 0x1030)].value == b"abc "
    assert parse_dicom(data).get_text("SOPClassUID") == "1.2.3"


# ------------------------------------------------------------- pydicom oracle


def test_pydicom_reads_our_output(small_corpus):
    for img, blob in small_corpus:
        ds = pydicom.dcmread(io.BytesIO(blob))
        assert ds.file_meta.TransferSyntaxUID == ExplicitVRLittleEndian
        assert ds.PatientID == img.patient_id
        assert str(ds.PatientName) == img.patient_name
        assert ds.SOPInstanceUID == img.sop_uid
        assert ds.Rows == img.rows
        assert ds.PatientAge == f"{img.age:03d}Y"
        assert ds.PixelData == parse_dicom(blob).elements["PixelData"].value


def test_we_read_pydicom_output():
    data = _pydicom_bytes(_pd_sample())
    obj = parse_dicom(data)
    assert obj.get_text("PatientID") == "PX-001"
    assert obj.get_text("PatientName") == "Doe^Jane"
    assert obj.elements.get_number("Rows") == 4
    assert obj.get_text("StudyDescription") == "odd"
    (item,) = obj.elements[(0x0008, 0x2218)].items
    assert item.get_text("CodeValue") == "T-04000"
    # pydicom writes the sequence with undefined length; ours is canonical
    again = pydicom.dcmread(io.BytesIO(serialize_dicom(obj)))
    assert again.AnatomicRegionSequence[0].CodingSchemeDesignator == "SRT"
    assert again.PatientName == "Doe^Jane"


@pytest.mark.filterwarnings("ignore::UserWarning")  # random text is not valid IS/DS content
def test_random_objects_agree_with_pydicom():
    rng = random.Random(11)
    for _ in range(30):
        obj = random_object(rng)
        ds = pydicom.dcmread(io.BytesIO(serialize_dicom(obj)))
        ours = {e.tag: e for e in obj.elements.elements() if e.tag[0] != 0x0002}
        for elem in ds:
            tag = (elem.tag.group, elem.tag.element)
            assert tag in ours
            assert elem.VR == ours[tag].vr
            raw = ours[tag].value
            if elem.VR == "OB":
                assert elem.value == raw
            elif elem.VR in ("US", "UL"):
                fmt = "<H" if elem.VR == "US" else "<I"
                ints = [v for (v,) in struct.iter_unpack(fmt, raw)]
                assert (list(elem.value) if elem.VM > 1 else [elem.value]) == ints
        assert len(list(ds)) == len(ours)


# ------------------------------------------------------------ rejections


def test_not_dicom():
    with pytest.raises(NotDicom):
        parse_dicom(b"hello")
    with pytest.raises(NotDicom):
        parse_dicom(bytes(200))


def test_unsupported_transfer_syntax():
    with pytest.raises(UnsupportedTransferSyntax):
        parse_dicom(_pydicom_bytes(_pd_sample(), ImplicitVRLittleEndian))


def test_truncated(small_corpus):
    blob = small_corpus[0][1]
    with pytest.raises(TruncatedElement):
        parse_dicom(blob[:-7])


def test_duplicate_tag_rejected():
    obj = random_object(random.Random(5))
    data = serialize_dicom(obj)
    extra = struct.pack("<HH", 0x0008, 0x0016) + b"UI" + struct.pack("<H", 6) + b"1.2.3\0"
    with pytest.raises(NotDicom):
        parse_dicom(data + extra)


def test_invalid_uid_refused_on_write():
    ds = Dataset()
    ds.set_text("SOPClassUID", "1.2.3")
    ds.set_text("SOPInstanceUID", "1.02.3")
    with pytest.raises(InvalidElement):
        serialize_dicom(new_object(ds))


def test_too_long_short_vr_refused():
    ds = Dataset()
    ds.set_text("SOPClassUID", "1.2.3")
    ds.set_text("SOPInstanceUID", "1.2.3.4")
    ds.add(Element((0x0008, 0x1030), "LO", b"x" * 70000))
    with pytest.raises(InvalidElement):
        serialize_dicom(new_object(ds))


def test_deep_nesting_rejected():
    inner = Dataset([Element((0x0008, 0x0100), "SH", b"XX")])
    for _ in range(40):
        inner = Dataset([Element((0x0040, 0xA730), "SQ", (inner,))])
    ds = inner.copy()
    ds.set_text("SOPClassUID", "1.2.3")
    ds.set_text("SOPInstanceUID", "1.2.3.4")
    with pytest.raises(NotDicom):
        parse_dicom(serialize_dicom(new_object(ds)))


# ----------------------------------------------------------------- fuzzing


@given(st.binary(max_size=800))
def test_arbitrary_bytes_raise_only_dicom_errors(data):
    try:
        parse_dicom(data)
    except DicomError:
        pass


@given(st.binary(max_size=400))
def test_noise_behind_valid_header(data):
    try:
        parse_dicom(bytes(128) + b"DICM" + data)
    except DicomError:
        pass


def test_mutated_files_raise_only_dicom_errors(small_corpus):
    rng = random.Random(99)
    valid = [blob for _, blob in small_corpus[:4]]
    for _ in range(500):
        try:
            parse_dicom(hostile_bytes(rng, valid))
        except DicomError:
            pass

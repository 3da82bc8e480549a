"""Seeded generators of random DICOM objects and hostile byte strings for tests."""
import random
import string
import struct

from gridbox.dicom import Dataset, Element, new_object
from gridbox.dicom.codec import MAGIC, PREAMBLE

TEXT_VRS = ("AE", "AS", "CS", "DA", "TM", "DS", "IS", "LO", "LT", "PN", "SH", "ST", "UT")
LEAF_VRS = TEXT_VRS + ("UI", "US", "UL", "OB")
PRINTABLE = string.ascii_letters + string.digits + " .-^_"


def random_uid(rng: random.Random) -> str:
    parts = ["1", "2"] + [str(rng.choice([0, rng.randrange(1, 10**6)])) for _ in range(rng.randrange(1, 8))]
    return ".".join(parts)[:64].rstrip(".")


def _even(raw: bytes, pad: bytes) -> bytes:
    return raw if len(raw) % 2 == 0 else raw + pad


def random_value(rng: random.Random, vr: str) -> bytes:
    """Canonical (already padded) value bytes for ``vr``."""
    if vr in TEXT_VRS:
        text = "".join(rng.choice(PRINTABLE) for _ in range(rng.randrange(0, 40)))
        return _even(text.encode(), b" ")
    if vr == "UI":
        uids = "\\".join(random_uid(rng) for _ in range(rng.randrange(1, 3)))
        return _even(uids.encode(), b"\0")
    if vr == "US":
        return b"".join(struct.pack("<H", rng.randrange(65536)) for _ in range(rng.randrange(1, 4)))
    if vr == "UL":
        return b"".join(struct.pack("<I", rng.randrange(2**32)) for _ in range(rng.randrange(1, 3)))
    if vr == "OB":
        return rng.randbytes(2 * rng.randrange(0, 64))
    raise ValueError(vr)


def random_tag(rng: random.Random) -> tuple:
    group = rng.choice([0x0008, 0x0010, 0x0018, 0x0020, 0x0028, 0x0040, 0x0009, 0x0011, 0x7FE0])
    group = rng.randrange(0x0004, 0xFFFE) if rng.random() < 0.2 else group
    if group in (0x0002, 0xFFFE) or group < 0x0004:
        group = 0x0008
    return group, rng.randrange(0x0001, 0xFFFF)


def random_dataset(rng: random.Random, depth: int = 0, max_depth: int = 3) -> Dataset:
    ds = Dataset()
    for _ in range(rng.randrange(1 if depth else 3, 12)):
        tag = random_tag(rng)
        if depth < max_depth and rng.random() < 0.12:
            items = tuple(random_dataset(rng, depth + 1, max_depth) for _ in range(rng.randrange(0, 3)))
            ds.add(Element(tag, "SQ", items))
        else:
            vr = rng.choice(LEAF_VRS)
            ds.add(Element(tag, vr, random_value(rng, vr)))
    return ds


def random_object(rng: random.Random):
    ds = random_dataset(rng)
    ds.set_text("SOPClassUID", random_uid(rng))
    ds.set_text("SOPInstanceUID", random_uid(rng))
    preamble = rng.randbytes(128) if rng.random() < 0.3 else PREAMBLE
    return new_object(ds, preamble=preamble)


def mutate(rng: random.Random, data: bytes) -> bytes:
    """Flip, drop, duplicate or splice bytes of a valid file."""
    buf = bytearray(data)
    for _ in range(rng.randrange(1, 6)):
        choice = rng.random()
        pos = rng.randrange(len(buf)) if buf else 0
        if choice < 0.4 and buf:
            buf[pos] = rng.randrange(256)
        elif choice < 0.6:
            del buf[pos:pos + rng.randrange(1, 64)]
        elif choice < 0.8:
            buf[pos:pos] = rng.randbytes(rng.randrange(1, 16))
        else:
            # a huge or undefined length field
            buf[pos:pos + 4] = rng.choice([b"\xff\xff\xff\xff", b"\xfe\xff\x00\xe0", b"\x00\x00\x01\x00"])
    return bytes(buf)


def hostile_bytes(rng: random.Random, valid: list) -> bytes:
    """One fuzz input: pure noise, noise behind a valid header, or a mutated file."""
    kind = rng.random()
    if kind < 0.3:
        return rng.randbytes(rng.randrange(0, 600))
    if kind < 0.5:
        return PREAMBLE + MAGIC + rng.randbytes(rng.randrange(0, 400))
    return mutate(rng, rng.choice(valid))

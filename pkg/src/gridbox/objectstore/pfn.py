from __future__ import annotations

from dataclasses import dataclass

SCHEME = "DICOM://"
LFN_SCHEME = "mg://"


@dataclass(frozen=True)
class Pfn:
    host: str
    port: int
    aetitle: str
    sop_uid: str

    def __str__(self) -> str:
        return f"{SCHEME}{self.host}:{self.port}:{self.aetitle}:{self.sop_uid}"

    @classmethod
    def parse(cls, text: str) -> "Pfn":
        if not text.startswith(SCHEME):
            raise ValueError(f"not a PFN: {text!r}")
        parts = text[len(SCHEME):].split(":")
        if len(parts) != 4:
            raise ValueError(f"PFN needs host:port:aetitle:sopInstanceUid, got {text!r}")
        host, port, aetitle, sop_uid = parts
        return cls(host, int(port), aetitle, sop_uid)


def make_lfn(origin: str, sop_uid: str) -> str:
    return f"{LFN_SCHEME}{origin}/{sop_uid}"


def split_lfn(lfn: str) -> tuple[str, str]:
    if not lfn.startswith(LFN_SCHEME) or "/" not in lfn[len(LFN_SCHEME):]:
        raise ValueError(f"not an LFN: {lfn!r}")
    origin, sop_uid = lfn[len(LFN_SCHEME):].split("/", 1)
    return origin, sop_uid

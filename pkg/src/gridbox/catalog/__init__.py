from gridbox.catalog.changes import KINDS, CatalogChange, ChangeLog, canonical_json, check_no_leak
from gridbox.catalog.store import (
    PATIENT_META_FIELDS,
    Catalog,
    LfnEntry,
    StreamBatch,
    cursor_from_json,
    cursor_to_json,
    sync_round,
)

__all__ = [
    "KINDS",
    "CatalogChange",
    "ChangeLog",
    "canonical_json",
    "check_no_leak",
    "PATIENT_META_FIELDS",
    "Catalog",
    "LfnEntry",
    "StreamBatch",
    "cursor_from_json",
    "cursor_to_json",
    "sync_round",
]

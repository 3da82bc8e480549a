from gridbox.objectstore.pfn import Pfn, make_lfn, split_lfn
from gridbox.objectstore.runner import DeferredRunner, Task, ThreadedRunner
from gridbox.objectstore.store import (
    FETCHING,
    LOCAL,
    REMOTE,
    ObjectStore,
    ObjectStream,
    RetrieveEntry,
    TransferState,
    fetching_estimate,
)
from gridbox.objectstore.vault import StoredObject, Vault, digest_of

__all__ = [
    "Pfn",
    "make_lfn",
    "split_lfn",
    "DeferredRunner",
    "Task",
    "ThreadedRunner",
    "FETCHING",
    "LOCAL",
    "REMOTE",
    "ObjectStore",
    "ObjectStream",
    "RetrieveEntry",
    "TransferState",
    "fetching_estimate",
    "StoredObject",
    "Vault",
    "digest_of",
]

"""Exception hierarchy shared by every layer of a grid-box node.

Each class carries an HTTP status (used by the node daemon) and a process
exit code (used by the workstation CLI), so errors survive the wire with
their identity intact.
"""


class GridBoxError(Exception):
    http_status = 400
    exit_code = 1

    @property
    def code(self) -> str:
        return type(self).__name__


# dicom-io
class DicomError(GridBoxError):
    exit_code = 10


class NotDicom(DicomError):
    pass


class UnsupportedTransferSyntax(DicomError):
    pass


class TruncatedElement(DicomError):
    pass


class InvalidElement(DicomError):
    pass


class MissingRequiredTag(DicomError):
    pass


class NotStructuredReport(DicomError):
    pass


# mom-model
class ModelError(GridBoxError):
    exit_code = 11


class MalformedValue(ModelError):
    pass


class MissingPatientId(ModelError):
    pass


class UnmappableSr(ModelError):
    pass


class DanglingRelation(ModelError):
    pass


class CycleDetected(ModelError):
    pass


class UnknownVocabulary(ModelError):
    pass


class DuplicateAssessment(ModelError):
    http_status = 409


# catalog
class CatalogError(GridBoxError):
    exit_code = 12


class SequenceGap(CatalogError):
    http_status = 409


class VaultLeak(CatalogError):
    http_status = 500


class Unauthorized(CatalogError):
    http_status = 403
    exit_code = 3


class PeerUnreachable(CatalogError):
    http_status = 504
    exit_code = 4


class UnknownPatient(CatalogError):
    http_status = 404


class FieldNotUpdatable(CatalogError):
    pass


class DanglingReference(CatalogError):
    http_status = 404


# object-store
class ObjectStoreError(GridBoxError):
    exit_code = 13


class DigestConflict(ObjectStoreError):
    http_status = 409


class StorageFull(ObjectStoreError):
    http_status = 507


class UnknownLfn(ObjectStoreError):
    http_status = 404


class FetchFailed(ObjectStoreError):
    http_status = 504


class DigestMismatch(ObjectStoreError):
    http_status = 502


# query-engine
class QueryError(GridBoxError):
    exit_code = 14


class UnknownAttribute(QueryError):
    def __init__(self, path, message=None):
        super().__init__(message or f"unknown attribute path: {path!r}")
        self.path = path


class InvalidQuery(QueryError):
    pass


# service
class InvalidToken(GridBoxError):
    http_status = 401
    exit_code = 5


class AssertionFailed(GridBoxError):
    exit_code = 20

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class InjectedFault(GridBoxError):
    """Raised by fault-injection hooks inside tests and the harness."""

    http_status = 500


def error_by_code(code: str) -> type:
    """Find the exception class for a wire error code (falls back to the base)."""
    stack = [GridBoxError]
    while stack:
        cls = stack.pop()
        if cls.__name__ == code:
            return cls
        stack.extend(cls.__subclasses__())
    return GridBoxError

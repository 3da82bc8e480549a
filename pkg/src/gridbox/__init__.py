"""Federated grid-box node: DICOM vault, replicated catalogue, federated query."""

__version__ = "0.1.0"

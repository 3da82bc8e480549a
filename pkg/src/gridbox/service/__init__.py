from gridbox.service.audit import AuditEntry, AuditLog
from gridbox.service.config import NodeConfig, PeerSpec, load_config
from gridbox.service.node import GridBox, interim_uid
from gridbox.service.auth import FederationToken, issue_token, verify_token
from gridbox.service.wire import ApiClient, PeerLink, Request, Response, handle

__all__ = [
    "AuditEntry",
    "AuditLog",
    "NodeConfig",
    "PeerSpec",
    "load_config",
    "GridBox",
    "interim_uid",
    "FederationToken",
    "issue_token",
    "verify_token",
    "ApiClient",
    "PeerLink",
    "Request",
    "Response",
    "handle",
]

"""Federation tokens: a keyed-MAC stand-in for per-user certificates.

Wire form is ``base64url(canonical JSON)`` of all fields including ``mac``,
where ``mac = HMAC-SHA256(secret, canonical JSON of the other fields)``.
"""
from __future__ import annotations

import base64
import hashlib
import hmac
import json
from dataclasses import asdict, dataclass

from gridbox.errors import InvalidToken


def _canonical(data: dict) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(",", ":")).encode()


@dataclass(frozen=True)
class FederationToken:
    subject: str
    vo_set: tuple
    issued_at: float
    expires_at: float
    mac: str = ""

    def body(self) -> dict:
        data = asdict(self)
        data.pop("mac")
        data["vo_set"] = sorted(self.vo_set)
        return data

    def encode(self) -> str:
        data = self.body()
        data["mac"] = self.mac
        return base64.urlsafe_b64encode(_canonical(data)).decode().rstrip("=")

    @classmethod
    def decode(cls, text: str) -> "FederationToken":
        try:
            padded = text + "=" * (-len(text) % 4)
            data = json.loads(base64.urlsafe_b64decode(padded.encode()))
            return cls(
                subject=str(data["subject"]),
                vo_set=tuple(data["vo_set"]),
                issued_at=float(data["issued_at"]),
                expires_at=float(data["expires_at"]),
                mac=str(data["mac"]),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise InvalidToken(f"undecodable token: {exc}") from None


def _mac(secret: bytes, token: FederationToken) -> str:
    return hmac.new(secret, _canonical(token.body()), hashlib.sha256).hexdigest()


def issue_token(secret, subject: str, vo_set, now: float, ttl: float = 3600.0) -> FederationToken:
    if isinstance(secret, str):
        secret = secret.encode()
    token = FederationToken(subject, tuple(sorted(vo_set)), float(now), float(now) + ttl)
    return FederationToken(token.subject, token.vo_set, token.issued_at, token.expires_at, _mac(secret, token))


def verify_token(secret, token, now: float) -> FederationToken:
    if token is None or token == "":
        raise InvalidToken("no credentials presented")
    if isinstance(secret, str):
        secret = secret.encode()
    if isinstance(token, str):
        token = FederationToken.decode(token)
    if not hmac.compare_digest(token.mac, _mac(secret, token)):
        raise InvalidToken("token authentication code does not verify")
    if now >= token.expires_at:
        raise InvalidToken("token expired")
    if now < token.issued_at - 300:
        raise InvalidToken("token issued in the future")
    return token

"""Node configuration, loaded from an INI-style key/value file.

Example::

    [node]
    node_id = GB1
    host = 127.0.0.1
    port = 8401
    vault_root = /var/lib/gridbox/GB1
    vos = mammo-eu
    federation_secret_file = /etc/gridbox/federation.key
    node_secret = change-me
    capacity = 1000000000
    low_water = 0.7
    high_water = 0.9
    sync_interval = 5
    query_timeout = 5

    [peer.GB2]
    host = 127.0.0.1
    port = 8402
    vos = mammo-eu
    rate = 1250000
    rtt = 0.05

Secrets may be given inline (``federation_secret``) or by reference
(``federation_secret_file`` / ``federation_secret_env``); the same holds for
``node_secret``.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class PeerSpec:
    node_id: str
    host: str = "127.0.0.1"
    port: int = 0
    vos: tuple = ()
    rate: float = 1_250_000.0  # bytes per second
    rtt: float = 0.05  # seconds

    @property
    def vo_set(self) -> frozenset:
        return frozenset(self.vos)


@dataclass
class NodeConfig:
    node_id: str
    vos: tuple
    vault_root: str = ""
    host: str = "127.0.0.1"
    port: int = 0
    peers: tuple = ()
    federation_secret: str = "federation-secret"
    node_secret: str = "node-secret"
    capacity: int | None = None
    low_water: float = 0.7
    high_water: float = 0.9
    sync_interval: float = 5.0
    query_timeout: float = 5.0
    default_vo: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vos = tuple(self.vos)
        self.peers = tuple(self.peers)
        if not self.node_id or not self.vos:
            raise ValueError("a node needs an id and at least one VO")
        ids = [p.node_id for p in self.peers]
        if self.node_id in ids or len(set(ids)) != len(ids):
            raise ValueError(f"node ids must be unique across {self.node_id} and its peers")
        if not 0 < self.low_water < self.high_water <= 1:
            raise ValueError("cache watermarks must satisfy 0 < low < high <= 1")
        if not self.default_vo:
            self.default_vo = self.vos[0]
        if self.default_vo not in self.vos:
            raise ValueError(f"default VO {self.default_vo!r} is not one of {self.vos}")

    @property
    def vo_set(self) -> frozenset:
        return frozenset(self.vos)


def _split(value: str) -> tuple:
    return tuple(v.strip() for v in value.replace(";", ",").split(",") if v.strip())


def _secret(section, name: str, base: Path) -> str | None:
    if name in section:
        return section[name]
    if f"{name}_env" in section:
        return os.environ[section[f"{name}_env"]]
    if f"{name}_file" in section:
        path = Path(section[f"{name}_file"])
        return (path if path.is_absolute() else base / path).read_text().strip()
    return None


def load_config(path) -> NodeConfig:
    path = Path(path)
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(path)
    node = parser["node"]
    peers = []
    for name in parser.sections():
        if name.startswith("peer."):
            s = parser[name]
            peers.append(PeerSpec(
                node_id=name[len("peer."):],
                host=s.get("host", "127.0.0.1"),
                port=s.getint("port", 0),
                vos=_split(s.get("vos", "")),
                rate=s.getfloat("rate", 1_250_000.0),
                rtt=s.getfloat("rtt", 0.05),
            ))
    vault_root = node.get("vault_root", f"./{node['node_id']}")
    if not Path(vault_root).is_absolute():
        vault_root = str(path.parent / vault_root)
    kwargs = {}
    for name in ("federation_secret", "node_secret"):
        value = _secret(node, name, path.parent)
        if value is not None:
            kwargs[name] = value
    return NodeConfig(
        node_id=node["node_id"],
        vos=_split(node["vos"]),
        vault_root=vault_root,
        host=node.get("host", "127.0.0.1"),
        port=node.getint("port", 0),
        peers=tuple(peers),
        capacity=node.getint("capacity") if "capacity" in node else None,
        low_water=node.getfloat("low_water", 0.7),
        high_water=node.getfloat("high_water", 0.9),
        sync_interval=node.getfloat("sync_interval", 5.0),
        query_timeout=node.getfloat("query_timeout", 5.0),
        default_vo=node.get("default_vo", ""),
        **kwargs,
    )

"""Binary encoding for protocol messages crossing the fabric.

Frame layout: a 4-byte big-endian length prefix followed by the body; the
body is a 1-byte message tag followed by that message's fields in the
fixed order given by its dataclass definition.  Field encodings:

  str        u16 byte length + UTF-8 bytes
  int        u32 big-endian (ports, sequence numbers, millisecond spans)
  float      f64 big-endian
  hop list   u16 count, then per hop: str switch, u32 in port, u32 out port

The layout is stable for the lifetime of a run; see README for the full
field tables.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields


class WireError(Exception):
    pass


@dataclass(frozen=True)
class PathRequest:
    req_id: str
    src_host: str
    dst_host: str
    token: str

    def summary(self) -> str:
        return f"type=PathRequest req={self.req_id} src={self.src_host} dst={self.dst_host}"


@dataclass(frozen=True)
class PathReply:
    req_id: str
    status: str  # committed | rejected | torn-down
    path_id: str
    reason: str
    hops: tuple  # ((switch, in_port, out_port), ...)

    def summary(self) -> str:
        return f"type=PathReply req={self.req_id} status={self.status} path={self.path_id or '-'}"


@dataclass(frozen=True)
class PathTeardown:
    path_id: str
    token: str

    def summary(self) -> str:
        return f"type=PathTeardown path={self.path_id}"


@dataclass(frozen=True)
class XConnRequest:
    path_id: str
    initiator: str
    lease_ms: int
    hops: tuple

    def summary(self) -> str:
        return f"type=XConnRequest path={self.path_id} nhops={len(self.hops)}"


@dataclass(frozen=True)
class XConnAck:
    path_id: str
    switch: str
    purpose: str  # setup | renew

    def summary(self) -> str:
        return f"type=XConnAck path={self.path_id} switch={self.switch} purpose={self.purpose}"


@dataclass(frozen=True)
class XConnNack:
    path_id: str
    switch: str
    purpose: str
    reason: str

    def summary(self) -> str:
        return (f"type=XConnNack path={self.path_id} switch={self.switch} "
                f"purpose={self.purpose} reason={self.reason}")


@dataclass(frozen=True)
class Teardown:
    path_id: str
    hops: tuple  # empty tuple means "everything you hold for this path"

    def summary(self) -> str:
        return f"type=Teardown path={self.path_id} nhops={len(self.hops)}"


@dataclass(frozen=True)
class PathLeaseRenew:
    path_id: str
    lease_ms: int

    def summary(self) -> str:
        return f"type=PathLeaseRenew path={self.path_id}"


@dataclass(frozen=True)
class LossOfLightNotify:
    path_id: str
    span_id: str

    def summary(self) -> str:
        return f"type=LossOfLightNotify path={self.path_id} span={self.span_id}"


@dataclass(frozen=True)
class TopoAnnounce:
    origin: str
    origin_seq: int
    span_id: str
    state: str  # lit | cut
    cost: float

    def summary(self) -> str:
        return (f"type=TopoAnnounce origin={self.origin} seq={self.origin_seq} "
                f"span={self.span_id} state={self.state}")


@dataclass(frozen=True)
class RegistryEvent:
    kind: str  # registered | lease_expired | deregistered
    node: str
    groups: tuple
    service_kind: str

    def summary(self) -> str:
        return f"type=RegistryEvent kind={self.kind} node={self.node}"


_TAGS = {
    PathRequest: 1,
    PathReply: 2,
    PathTeardown: 3,
    XConnRequest: 4,
    XConnAck: 5,
    XConnNack: 6,
    Teardown: 7,
    PathLeaseRenew: 8,
    LossOfLightNotify: 9,
    TopoAnnounce: 10,
    RegistryEvent: 11,
}
_BY_TAG = {tag: cls for cls, tag in _TAGS.items()}
_HOP_FIELDS = {"hops"}
_STR_TUPLE_FIELDS = {"groups"}


def encode(msg) -> bytes:
    tag = _TAGS.get(type(msg))
    if tag is None:
        raise WireError(f"cannot encode {type(msg).__name__}")
    out = bytearray([tag])
    for f in fields(msg):
        value = getattr(msg, f.name)
        if f.name in _HOP_FIELDS:
            out += struct.pack(">H", len(value))
            for sw, p_in, p_out in value:
                out += _pack_str(sw)
                out += struct.pack(">II", p_in, p_out)
        elif f.name in _STR_TUPLE_FIELDS:
            out += struct.pack(">H", len(value))
            for item in value:
                out += _pack_str(item)
        elif f.type == "str":
            out += _pack_str(value)
        elif f.type == "int":
            out += struct.pack(">I", value)
        elif f.type == "float":
            out += struct.pack(">d", value)
        else:
            raise WireError(f"unencodable field {f.name}: {f.type}")
    return struct.pack(">I", len(out)) + bytes(out)


def decode(buf: bytes):
    if len(buf) < 5:
        raise WireError("frame too short")
    (length,) = struct.unpack_from(">I", buf, 0)
    if len(buf) != 4 + length:
        raise WireError(f"frame length mismatch: header says {length}, got {len(buf) - 4}")
    tag = buf[4]
    cls = _BY_TAG.get(tag)
    if cls is None:
        raise WireError(f"unknown message tag {tag}")
    pos = 5
    values = []
    for f in fields(cls):
        if f.name in _HOP_FIELDS:
            (count,) = struct.unpack_from(">H", buf, pos)
            pos += 2
            hops = []
            for _ in range(count):
                sw, pos = _unpack_str(buf, pos)
                p_in, p_out = struct.unpack_from(">II", buf, pos)
                pos += 8
                hops.append((sw, p_in, p_out))
            values.append(tuple(hops))
        elif f.name in _STR_TUPLE_FIELDS:
            (count,) = struct.unpack_from(">H", buf, pos)
            pos += 2
            items = []
            for _ in range(count):
                item, pos = _unpack_str(buf, pos)
                items.append(item)
            values.append(tuple(items))
        elif f.type == "str":
            value, pos = _unpack_str(buf, pos)
            values.append(value)
        elif f.type == "int":
            (value,) = struct.unpack_from(">I", buf, pos)
            pos += 4
            values.append(value)
        elif f.type == "float":
            (value,) = struct.unpack_from(">d", buf, pos)
            pos += 8
            values.append(value)
    if pos != len(buf):
        raise WireError(f"trailing bytes after {cls.__name__}")
    return cls(*values)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise WireError("string too long")
    return struct.pack(">H", len(raw)) + raw


def _unpack_str(buf: bytes, pos: int) -> tuple[str, int]:
    (n,) = struct.unpack_from(">H", buf, pos)
    pos += 2
    raw = buf[pos:pos + n]
    if len(raw) != n:
        raise WireError("truncated string")
    return raw.decode("utf-8"), pos + n

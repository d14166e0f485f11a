"""Binary wire format shared by clients, the server and the launcher.

Every frame is little-endian and starts with ``u8 tag, u32 sim_id``.  Payloads:

    HELLO         (0)  -
    SAMPLE        (1)  u32 t, u32 n, n x f32 field values
    DONE          (2)  -
    PARAM_UPDATE  (3)  5 x f64 temperatures
    JOB_QUERY     (4)  -
    JOB_STATUS    (5)  u32 k, u32 in_flight

``k`` is sent as ``0xFFFFFFFF`` before any submission.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from ..errors import MalformedMessage

HEADER = struct.Struct("<BI")
NO_SUBMISSION = 0xFFFFFFFF


class Tag(enum.IntEnum):
    HELLO = 0
    SAMPLE = 1
    DONE = 2
    PARAM_UPDATE = 3
    JOB_QUERY = 4
    JOB_STATUS = 5


@dataclass(frozen=True)
class Message:
    tag: Tag
    sim_id: int
    t: int = 0
    field: np.ndarray | None = None  # SAMPLE, float32
    temps: tuple[float, ...] | None = None  # PARAM_UPDATE
    k: int = 0  # JOB_STATUS
    in_flight: int = 0  # JOB_STATUS

    def __eq__(self, other):
        if not isinstance(other, Message):
            return NotImplemented
        same_field = (self.field is None and other.field is None) or (
            self.field is not None and other.field is not None
            and self.field.tobytes() == other.field.tobytes())
        return (self.tag == other.tag and self.sim_id == other.sim_id and self.t == other.t
                and same_field and self.temps == other.temps
                and self.k == other.k and self.in_flight == other.in_flight)

    __hash__ = None


def hello(sim_id: int) -> Message:
    return Message(Tag.HELLO, sim_id)


def sample(sim_id: int, t: int, field) -> Message:
    values = np.ascontiguousarray(np.ravel(field), dtype="<f4")
    return Message(Tag.SAMPLE, sim_id, t=t, field=values)


def done(sim_id: int) -> Message:
    return Message(Tag.DONE, sim_id)


def param_update(sim_id: int, temps) -> Message:
    return Message(Tag.PARAM_UPDATE, sim_id, temps=tuple(float(v) for v in temps))


def job_query() -> Message:
    return Message(Tag.JOB_QUERY, 0)


def job_status(k: int, in_flight: int) -> Message:
    return Message(Tag.JOB_STATUS, 0, k=k, in_flight=in_flight)


def encode(msg: Message) -> bytes:
    head = HEADER.pack(int(msg.tag), msg.sim_id)
    if msg.tag == Tag.SAMPLE:
        values = np.ascontiguousarray(msg.field, dtype="<f4")
        return head + struct.pack("<II", msg.t, values.size) + values.tobytes()
    if msg.tag == Tag.PARAM_UPDATE:
        return head + struct.pack("<5d", *msg.temps)
    if msg.tag == Tag.JOB_STATUS:
        k = NO_SUBMISSION if msg.k < 0 else msg.k
        return head + struct.pack("<II", k, msg.in_flight)
    return head


def _need(buf: bytes, offset: int, size: int) -> None:
    if len(buf) < offset + size:
        raise MalformedMessage(f"truncated frame: need {offset + size} bytes, have {len(buf)}")


def decode(buf: bytes) -> tuple[Message, int]:
    """Decode one frame from the start of ``buf``; returns (message, bytes used)."""
    _need(buf, 0, HEADER.size)
    raw_tag, sim_id = HEADER.unpack_from(buf, 0)
    try:
        tag = Tag(raw_tag)
    except ValueError:
        raise MalformedMessage(f"unknown tag {raw_tag}") from None
    pos = HEADER.size
    if tag == Tag.SAMPLE:
        _need(buf, pos, 8)
        t, n = struct.unpack_from("<II", buf, pos)
        pos += 8
        _need(buf, pos, 4 * n)
        values = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).copy()
        return Message(tag, sim_id, t=t, field=values), pos + 4 * n
    if tag == Tag.PARAM_UPDATE:
        _need(buf, pos, 40)
        return Message(tag, sim_id, temps=struct.unpack_from("<5d", buf, pos)), pos + 40
    if tag == Tag.JOB_STATUS:
        _need(buf, pos, 8)
        k, in_flight = struct.unpack_from("<II", buf, pos)
        return Message(tag, sim_id, k=-1 if k == NO_SUBMISSION else k, in_flight=in_flight), pos + 8
    return Message(tag, sim_id), pos


def decode_exact(buf: bytes) -> Message:
    msg, used = decode(buf)
    if used != len(buf):
        raise MalformedMessage(f"{len(buf) - used} trailing bytes after frame")
    return msg


def _read(stream: BinaryIO, size: int) -> bytes:
    data = b""
    while len(data) < size:
        chunk = stream.read(size - len(data))
        if not chunk:
            break
        data += chunk
    return data


def read_message(stream: BinaryIO) -> Message | None:
    """Read one frame from a blocking stream; ``None`` on clean EOF."""
    head = _read(stream, HEADER.size)
    if not head:
        return None
    _need(head, 0, HEADER.size)
    raw_tag = head[0]
    extra = 0
    if raw_tag == Tag.SAMPLE:
        counts = _read(stream, 8)
        _need(counts, 0, 8)
        _, n = struct.unpack("<II", counts)
        body = counts + _read(stream, 4 * n)
        return decode_exact(head + body)
    if raw_tag == Tag.PARAM_UPDATE:
        extra = 40
    elif raw_tag == Tag.JOB_STATUS:
        extra = 8
    return decode_exact(head + _read(stream, extra))

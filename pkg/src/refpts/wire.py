"""Binary payload codec and communication-cost accounting.

Layout (all little-endian, reals are IEEE-754 float32)::

    offset size field
    0      4    magic  b"RPF1"
    4      1    version (1)
    5      1    flags  bit0 velocity, bit1 size, bit2 confidence,
                       bit3 semantics, bits 4-7 reserved (zero)
    6      4    agent_id      u32
    10     8    frame_index   u64
    18     8    timestamp_us  u64
    26     2    count         u16
    28     2    embed_dim     u16 (0 unless semantics)
    30     2    padding (zero)
    32     ...  count records

Each record is position (3 f32), then velocity (2 f32), size (3 f32),
confidence (1 f32) and semantic embedding (embed_dim f32), each present only
when its flag is set.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from refpts.core import AgentFrame, ReferencePoint
from refpts.geometry import Point3
from refpts.query import Query

MAGIC = b"RPF1"
VERSION = 1
HEADER = struct.Struct("<4sBBIQQHH2x")
HEADER_SIZE = HEADER.size
MAX_COUNT = 0xFFFF
KIB = 1024

POSITION_BYTES = 12
VELOCITY_BYTES = 8
SIZE_BYTES = 12
CONFIDENCE_BYTES = 4
FLOAT_BYTES = 4


class WireError(ValueError):
    pass


class BadMagicError(WireError):
    pass


class UnsupportedVersionError(WireError):
    pass


class TruncatedError(WireError):
    pass


class ReservedBitsError(WireError):
    pass


class TrailingDataError(WireError):
    pass


class MixedAttributesError(WireError):
    pass


class CountOverflowError(WireError):
    pass


@dataclass(frozen=True)
class PayloadFlags:
    has_velocity: bool = False
    has_size: bool = False
    has_confidence: bool = False
    has_semantics: bool = False
    reserved: int = 0

    def __post_init__(self) -> None:
        if self.reserved:
            raise ReservedBitsError(f"reserved flag bits must be zero, got {self.reserved:#x}")

    def to_byte(self) -> int:
        return (
            int(self.has_velocity)
            | int(self.has_size) << 1
            | int(self.has_confidence) << 2
            | int(self.has_semantics) << 3
        )

    @classmethod
    def from_byte(cls, b: int) -> PayloadFlags:
        if b & 0xF0:
            raise ReservedBitsError(f"reserved flag bits set in {b:#04x}")
        return cls(bool(b & 1), bool(b & 2), bool(b & 4), bool(b & 8))

    @classmethod
    def from_attrs(cls, attrs: str, confidence: bool = False) -> PayloadFlags:
        """Parse the CLI attribute spelling ``p``, ``pv``, ``ps`` or ``pvs``."""
        attrs = attrs.lower()
        if attrs not in ("p", "pv", "ps", "pvs"):
            raise ValueError(f"attrs must be one of p, pv, ps, pvs; got {attrs!r}")
        return cls(has_velocity="v" in attrs, has_size="s" in attrs, has_confidence=confidence)

    @property
    def attrs(self) -> str:
        return "p" + "v" * self.has_velocity + "s" * self.has_size


def record_width(flags: PayloadFlags, embed_dim: int = 0) -> int:
    return (
        POSITION_BYTES
        + VELOCITY_BYTES * flags.has_velocity
        + SIZE_BYTES * flags.has_size
        + CONFIDENCE_BYTES * flags.has_confidence
        + FLOAT_BYTES * embed_dim * flags.has_semantics
    )


def payload_bytes(count: int, flags: PayloadFlags, embed_dim: int = 0,
                  include_header: bool = False) -> int:
    """Encoded size of ``count`` records.

    By default only the record body is counted, which is how per-frame
    payloads are reported; pass ``include_header`` for the on-wire length.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    body = count * record_width(flags, embed_dim)
    return body + HEADER_SIZE if include_header else body


def bandwidth_at_fps(bytes_per_frame: float, fps: float) -> float:
    if not fps > 0:
        raise ValueError("fps must be positive")
    return bytes_per_frame * fps


def to_kib(n_bytes: float) -> float:
    return n_bytes / KIB


@dataclass(frozen=True)
class Baseline:
    name: str
    bytes_per_frame: int
    note: str


def bev_feature_bytes(grid: int = 200, channels: int = 256, float_bytes: int = 4) -> int:
    return grid * grid * channels * float_bytes


def baseline_payloads() -> dict[str, Baseline]:
    """Per-frame payloads of the dense feature and full-query baselines."""
    return {
        "M3CAD": Baseline(
            "M3CAD", bev_feature_bytes(), "200x200 BEV grid, 256 float32 channels"
        ),
        # aggregate only: the query layout behind this figure is not published
        "UniV2X": Baseline("UniV2X", 939 * KIB, "full query set, opaque aggregate"),
    }


@dataclass(frozen=True, eq=False)
class WireMessage:
    """Decoded payload; attribute arrays are float32 and present per flags."""

    agent_id: int
    frame_index: int
    timestamp_us: int
    flags: PayloadFlags
    positions: np.ndarray
    velocities: Optional[np.ndarray] = None
    sizes: Optional[np.ndarray] = None
    confidences: Optional[np.ndarray] = None
    semantics: Optional[np.ndarray] = None
    embed_dim: int = 0
    version: int = VERSION

    def __post_init__(self) -> None:
        pos = np.ascontiguousarray(self.positions, dtype="<f4").reshape(-1, 3)
        n = pos.shape[0]
        object.__setattr__(self, "positions", pos)
        if n > MAX_COUNT:
            raise CountOverflowError(f"{n} records exceed the u16 count field")
        if not self.flags.has_semantics and self.embed_dim:
            raise WireError("embed_dim must be 0 without semantics")
        for name, flag, width in (
            ("velocities", self.flags.has_velocity, 2),
            ("sizes", self.flags.has_size, 3),
            ("confidences", self.flags.has_confidence, 1),
            ("semantics", self.flags.has_semantics, self.embed_dim),
        ):
            arr = getattr(self, name)
            if not flag:
                if arr is not None:
                    raise WireError(f"{name} given but its flag is clear")
                continue
            if arr is None:
                raise MixedAttributesError(f"flag set but {name} missing")
            arr = np.ascontiguousarray(arr, dtype="<f4").reshape(n, width)
            object.__setattr__(self, name, arr if name != "confidences" else arr.reshape(n))

    @property
    def count(self) -> int:
        return int(self.positions.shape[0])

    def __len__(self) -> int:
        return self.count

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WireMessage):
            return NotImplemented
        return encode(self) == encode(other)

    __hash__ = None  # type: ignore[assignment]


def _record_dtype(flags: PayloadFlags, embed_dim: int) -> np.dtype:
    fields = [("position", "<f4", (3,))]
    if flags.has_velocity:
        fields.append(("velocity", "<f4", (2,)))
    if flags.has_size:
        fields.append(("size", "<f4", (3,)))
    if flags.has_confidence:
        fields.append(("confidence", "<f4"))
    if flags.has_semantics:
        fields.append(("semantics", "<f4", (embed_dim,)))
    dt = np.dtype(fields)
    assert dt.itemsize == record_width(flags, embed_dim)
    return dt


def encode(msg: WireMessage) -> bytes:
    n, f = msg.count, msg.flags
    header = HEADER.pack(
        MAGIC, msg.version, f.to_byte(), msg.agent_id, msg.frame_index, msg.timestamp_us,
        n, msg.embed_dim,
    )
    rec = np.zeros(n, dtype=_record_dtype(f, msg.embed_dim))
    rec["position"] = msg.positions
    if f.has_velocity:
        rec["velocity"] = msg.velocities
    if f.has_size:
        rec["size"] = msg.sizes
    if f.has_confidence:
        rec["confidence"] = msg.confidences
    if f.has_semantics:
        rec["semantics"] = msg.semantics
    return header + rec.tobytes()


def decode(data: bytes) -> WireMessage:
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        if len(data) < 4 and MAGIC.startswith(data):
            raise TruncatedError(f"buffer of {len(data)} bytes is shorter than the header")
        raise BadMagicError(f"bad magic {data[:4]!r}")
    if len(data) < HEADER_SIZE:
        raise TruncatedError(f"buffer of {len(data)} bytes is shorter than the header")
    magic, version, fbyte, agent, frame, ts, count, dim = HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if data[30:32] != b"\x00\x00":
        raise ReservedBitsError("header padding must be zero")
    flags = PayloadFlags.from_byte(fbyte)
    if dim and not flags.has_semantics:
        raise WireError("embed_dim set without semantics flag")
    expected = HEADER_SIZE + payload_bytes(count, flags, dim)
    if len(data) < expected:
        raise TruncatedError(f"expected {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise TrailingDataError(f"{len(data) - expected} unexpected trailing bytes")
    rec = np.frombuffer(data, dtype=_record_dtype(flags, dim), count=count, offset=HEADER_SIZE)
    return WireMessage(
        agent_id=agent,
        frame_index=frame,
        timestamp_us=ts,
        flags=flags,
        positions=rec["position"].copy(),
        velocities=rec["velocity"].copy() if flags.has_velocity else None,
        sizes=rec["size"].copy() if flags.has_size else None,
        confidences=rec["confidence"].copy() if flags.has_confidence else None,
        semantics=rec["semantics"].copy() if flags.has_semantics else None,
        embed_dim=dim,
    )


def _attr_column(points: Sequence[ReferencePoint], attr: str, width: int) -> np.ndarray:
    vals = [getattr(p, attr) for p in points]
    missing = sum(v is None for v in vals)
    if missing:
        raise MixedAttributesError(
            f"{missing} of {len(vals)} points lack {attr} but the {attr} flag is set"
        )
    return np.array(vals, dtype=float).reshape(len(vals), width)


def message_from_frame(frame: AgentFrame, flags: PayloadFlags) -> WireMessage:
    if flags.has_semantics:
        raise WireError("reference-point frames carry no semantic embeddings")
    pts = frame.points
    if len(pts) > MAX_COUNT:
        raise CountOverflowError(f"{len(pts)} records exceed the u16 count field")
    return WireMessage(
        agent_id=frame.agent_id,
        frame_index=frame.frame_index,
        timestamp_us=int(round(frame.timestamp * 1e6)),
        flags=flags,
        positions=np.array([p.position for p in pts], dtype=float).reshape(-1, 3),
        velocities=_attr_column(pts, "velocity", 2) if flags.has_velocity else None,
        sizes=_attr_column(pts, "size", 3) if flags.has_size else None,
        confidences=np.array([p.confidence for p in pts]) if flags.has_confidence else None,
    )


def encode_frame(frame: AgentFrame, flags: PayloadFlags) -> bytes:
    return encode(message_from_frame(frame, flags))


def frame_from_message(msg: WireMessage) -> AgentFrame:
    """Rebuild a frame; ids become record indices, missing confidence reads 1."""
    pts = []
    for i in range(msg.count):
        pts.append(
            ReferencePoint(
                position=Point3(*msg.positions[i].tolist()),
                velocity=tuple(msg.velocities[i].tolist()) if msg.velocities is not None else None,
                size=tuple(msg.sizes[i].tolist()) if msg.sizes is not None else None,
                confidence=float(msg.confidences[i]) if msg.confidences is not None else 1.0,
                instance_id=i,
            )
        )
    return AgentFrame(
        agent_id=msg.agent_id,
        frame_index=msg.frame_index,
        timestamp=msg.timestamp_us / 1e6,
        points=tuple(pts),
        capacity=max(msg.count, 1),
    )


def message_from_queries(queries: Sequence[Query], agent_id: int, frame_index: int,
                         timestamp: float, confidence: bool = True) -> WireMessage:
    """Query payload: reference point, optional confidence, semantic half."""
    dims = {q.dim for q in queries}
    if len(dims) > 1:
        raise MixedAttributesError(f"queries of mixed widths {sorted(dims)}")
    dim = dims.pop() if dims else 0
    if dim > 0xFFFF:
        raise WireError("embedding width exceeds the u16 field")
    return WireMessage(
        agent_id=agent_id,
        frame_index=frame_index,
        timestamp_us=int(round(timestamp * 1e6)),
        flags=PayloadFlags(has_confidence=confidence, has_semantics=True),
        positions=np.array([q.reference_point for q in queries], dtype=float).reshape(-1, 3),
        confidences=np.array([q.confidence for q in queries]) if confidence else None,
        semantics=np.array([q.sem_embed for q in queries], dtype=float).reshape(len(queries), dim),
        embed_dim=dim,
    )


def queries_from_message(msg: WireMessage) -> list[Query]:
    """Rebuild queries; the positional half is not transmitted and reads as zeros."""
    if not msg.flags.has_semantics:
        raise WireError("message carries no semantic embeddings")
    out = []
    for i in range(msg.count):
        sem = msg.semantics[i].astype(float)
        out.append(
            Query(
                pos_embed=np.zeros_like(sem),
                sem_embed=sem,
                confidence=float(msg.confidences[i]) if msg.confidences is not None else 1.0,
                reference_point=Point3(*msg.positions[i].tolist()),
                instance_id=i,
            )
        )
    return out


def hexdump(data: bytes, width: int = 16) -> str:
    lines = []
    for off in range(0, len(data), width):
        chunk = data[off:off + width]
        lines.append(f"{off:08x}  {chunk.hex(' ')}")
    return "\n".join(lines)

"""
DNP3 subset codec.

Covers the link layer (FT3 framing with CRC blocks), a one-octet transport
header used for segmentation, and application fragments carrying 32-bit
analog inputs (group 30 variation 1) and operate/setpoint points (group 12).

Link frame on the wire:

    [0x05 0x64][len][ctrl][dst lo hi][src lo hi][crc lo hi]
    [up to 16 user octets][crc lo hi] ...

Application fragment (not counting the transport octet):

    [app_control][function][iin1][iin2] then object blocks

Object block:

    [group][variation][qualifier][count lo hi][point width] points...

Analog points are 5 octets (flag + int32), operate points 6 octets
(uint16 index + int32 setpoint), index points 2 octets (uint16 index).
All multi-octet integers are little-endian.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

START = b"\x05\x64"
HEADER_SIZE = 8
BLOCK_SIZE = 16
MAX_USER_DATA = 250
MAX_SEGMENT_PAYLOAD = MAX_USER_DATA - 1
MAX_FRAGMENT = 2048
APP_HEADER_SIZE = 4
BLOCK_HEADER_SIZE = 6

# link control octet
DIR = 0x80
PRM = 0x40
UNCONFIRMED_USER_DATA = 0x04
CONTROL_FROM_MASTER = DIR | PRM | UNCONFIRMED_USER_DATA
CONTROL_FROM_OUTSTATION = PRM | UNCONFIRMED_USER_DATA

# transport octet
FIN = 0x80
FIR = 0x40
TRANSPORT_SEQ_MASK = 0x3F

# application control octet
APP_FIR = 0x80
APP_FIN = 0x40
APP_SEQ_MASK = 0x0F

GROUP_ANALOG_INPUT = 30
GROUP_OPERATE = 12

QUALIFIER_COUNT16 = 0x08
QUALIFIER_COUNT16_INDEX16 = 0x28

FLAG_ONLINE = 0x01
INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1

_CRC_POLY_REFLECTED = 0xA6BC


class Dnp3Error(ValueError):
    """Base class for codec failures. ``offset`` locates the failing octet."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (offset {offset})")
        self.offset = offset


class UserDataTooLong(Dnp3Error):
    pass


class BadStartOctets(Dnp3Error):
    pass


class BadHeaderCrc(Dnp3Error):
    pass


class BadBlockCrc(Dnp3Error):
    pass


class TruncatedFrame(Dnp3Error):
    pass


class BadLength(Dnp3Error):
    pass


class FragmentTooLarge(Dnp3Error):
    pass


class MalformedFragment(Dnp3Error):
    pass


def _build_table() -> list[int]:
    table = []
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ _CRC_POLY_REFLECTED if crc & 1 else crc >> 1
        table.append(crc)
    return table


_CRC_TABLE = _build_table()


def crc_dnp(data: bytes | bytearray | Sequence[int]) -> int:
    """Table-driven DNP3 link CRC (reflected 0x3D65, init 0, complemented)."""
    crc = 0
    table = _CRC_TABLE
    for byte in data:
        crc = (crc >> 8) ^ table[(crc ^ byte) & 0xFF]
    return crc ^ 0xFFFF


def _crc_bytes(data: bytes) -> bytes:
    return (crc_dnp(data)).to_bytes(2, "little")


@dataclass(frozen=True)
class LinkFrame:
    control: int
    dest: int
    src: int
    user_data: bytes = b""

    @property
    def length(self) -> int:
        """Value of the length octet: control + addresses + user data."""
        return 5 + len(self.user_data)


def encoded_link_size(user_len: int) -> int:
    return HEADER_SIZE + 2 + user_len + 2 * (-(-user_len // BLOCK_SIZE))


def encode_link_frame(frame: LinkFrame) -> bytes:
    data = bytes(frame.user_data)
    if len(data) > MAX_USER_DATA:
        raise UserDataTooLong(f"user data is {len(data)} octets, limit {MAX_USER_DATA}")
    header = START + struct.pack("<BBHH", 5 + len(data), frame.control & 0xFF, frame.dest, frame.src)
    out = bytearray(header)
    out += _crc_bytes(header)
    for i in range(0, len(data), BLOCK_SIZE):
        block = data[i : i + BLOCK_SIZE]
        out += block
        out += _crc_bytes(block)
    return bytes(out)


def _parse_link_frame(octets: bytes, offset: int) -> tuple[LinkFrame, int]:
    n = len(octets)
    if n - offset < HEADER_SIZE + 2:
        raise TruncatedFrame("frame shorter than header", offset)
    if octets[offset : offset + 2] != START:
        raise BadStartOctets("expected 0x05 0x64", offset)
    header = octets[offset : offset + HEADER_SIZE]
    got = int.from_bytes(octets[offset + HEADER_SIZE : offset + HEADER_SIZE + 2], "little")
    if crc_dnp(header) != got:
        raise BadHeaderCrc("header CRC mismatch", offset + HEADER_SIZE)
    length, control, dest, src = struct.unpack_from("<BBHH", header, 2)
    if length < 5:
        raise BadLength(f"length octet {length} < 5", offset + 2)
    user_len = length - 5
    pos = offset + HEADER_SIZE + 2
    end = offset + encoded_link_size(user_len)
    if n < end:
        raise TruncatedFrame(f"need {end - offset} octets, have {n - offset}", n)
    user = bytearray()
    remaining = user_len
    while remaining:
        take = min(BLOCK_SIZE, remaining)
        block = octets[pos : pos + take]
        got = int.from_bytes(octets[pos + take : pos + take + 2], "little")
        if crc_dnp(block) != got:
            raise BadBlockCrc("user data block CRC mismatch", pos)
        user += block
        pos += take + 2
        remaining -= take
    return LinkFrame(control, dest, src, bytes(user)), pos


def decode_link_frame(octets: bytes | bytearray) -> LinkFrame:
    """Decode exactly one link frame; extra trailing octets are an error."""
    octets = bytes(octets)
    frame, end = _parse_link_frame(octets, 0)
    if end != len(octets):
        raise BadLength(f"{len(octets) - end} trailing octets after frame", end)
    return frame


def decode_link_frames(octets: bytes | bytearray) -> list[LinkFrame]:
    """Decode a back-to-back stream of link frames."""
    octets = bytes(octets)
    frames = []
    pos = 0
    while pos < len(octets):
        frame, pos = _parse_link_frame(octets, pos)
        frames.append(frame)
    return frames


class Function(enum.IntEnum):
    READ = 0x01
    WRITE = 0x02
    OPERATE = 0x04
    RESPONSE = 0x81


@dataclass(frozen=True)
class AnalogPoint:
    value: int
    flag: int = FLAG_ONLINE


@dataclass(frozen=True)
class OperatePoint:
    index: int
    setpoint: int


@dataclass(frozen=True)
class IndexPoint:
    index: int


Point = Union[AnalogPoint, OperatePoint, IndexPoint]

_POINT_WIDTH = {AnalogPoint: 5, OperatePoint: 6, IndexPoint: 2}
_WIDTH_TO_POINT = {5: AnalogPoint, 6: OperatePoint, 2: IndexPoint}


@dataclass(frozen=True)
class ObjectBlock:
    group: int
    variation: int
    points: tuple[Point, ...] = ()

    @property
    def count(self) -> int:
        return len(self.points)

    @property
    def qualifier(self) -> int:
        return QUALIFIER_COUNT16 if self.point_type is AnalogPoint else QUALIFIER_COUNT16_INDEX16

    @property
    def point_type(self) -> type:
        if self.points:
            return type(self.points[0])
        return IndexPoint if self.group == GROUP_OPERATE else AnalogPoint

    def encode(self) -> bytes:
        kind = self.point_type
        if any(type(p) is not kind for p in self.points):
            raise MalformedFragment("object block mixes point types")
        if self.count > 0xFFFF:
            raise MalformedFragment(f"too many points: {self.count}")
        out = bytearray(struct.pack("<BBBHB", self.group, self.variation, self.qualifier, self.count, _POINT_WIDTH[kind]))
        if kind is AnalogPoint:
            for p in self.points:
                out += struct.pack("<Bi", p.flag, p.value)
        elif kind is OperatePoint:
            for p in self.points:
                out += struct.pack("<Hi", p.index, p.setpoint)
        else:
            for p in self.points:
                out += struct.pack("<H", p.index)
        return bytes(out)


@dataclass(frozen=True)
class AppFragment:
    function: Function
    objects: tuple[ObjectBlock, ...] = ()
    app_seq: int = 0
    transport_seq: int = 0
    iin: int = 0

    @property
    def app_control(self) -> int:
        return APP_FIR | APP_FIN | (self.app_seq & APP_SEQ_MASK)

    def encode(self) -> bytes:
        out = bytearray((self.app_control, int(self.function), self.iin & 0xFF, (self.iin >> 8) & 0xFF))
        for block in self.objects:
            out += block.encode()
        return bytes(out)

    def encoded_size(self) -> int:
        return APP_HEADER_SIZE + sum(BLOCK_HEADER_SIZE + b.count * _POINT_WIDTH[b.point_type] for b in self.objects)


def decode_fragment(data: bytes, transport_seq: int = 0) -> AppFragment:
    if len(data) < APP_HEADER_SIZE:
        raise MalformedFragment("fragment shorter than application header", len(data))
    app_control, func, iin1, iin2 = data[:4]
    if app_control & (APP_FIR | APP_FIN) != APP_FIR | APP_FIN:
        raise MalformedFragment("multi-fragment messages are not supported", 0)
    try:
        function = Function(func)
    except ValueError:
        raise MalformedFragment(f"unknown function code 0x{func:02X}", 1) from None
    pos = APP_HEADER_SIZE
    blocks = []
    while pos < len(data):
        if len(data) - pos < BLOCK_HEADER_SIZE:
            raise MalformedFragment("truncated object header", pos)
        group, variation, qualifier, count, width = struct.unpack_from("<BBBHB", data, pos)
        kind = _WIDTH_TO_POINT.get(width)
        if kind is None:
            raise MalformedFragment(f"unknown point width {width}", pos + 5)
        expected_q = QUALIFIER_COUNT16 if kind is AnalogPoint else QUALIFIER_COUNT16_INDEX16
        if qualifier != expected_q:
            raise MalformedFragment(f"unexpected qualifier 0x{qualifier:02X}", pos + 2)
        pos += BLOCK_HEADER_SIZE
        if len(data) - pos < count * width:
            raise MalformedFragment("truncated object points", pos)
        if kind is AnalogPoint:
            points = tuple(AnalogPoint(v, f) for f, v in struct.iter_unpack("<Bi", data[pos : pos + 5 * count]))
        elif kind is OperatePoint:
            points = tuple(OperatePoint(i, s) for i, s in struct.iter_unpack("<Hi", data[pos : pos + 6 * count]))
        else:
            points = tuple(IndexPoint(i) for (i,) in struct.iter_unpack("<H", data[pos : pos + 2 * count]))
        blocks.append(ObjectBlock(group, variation, points))
        pos += count * width
    return AppFragment(function, tuple(blocks), app_control & APP_SEQ_MASK, transport_seq & TRANSPORT_SEQ_MASK, iin1 | (iin2 << 8))


def segment_fragment(frag: AppFragment, dest: int, src: int, control: int = CONTROL_FROM_MASTER) -> list[LinkFrame]:
    """Split a fragment into link frames with one transport octet each.

    Consecutive segments take consecutive transport sequence numbers
    starting at ``frag.transport_seq``.
    """
    data = frag.encode()
    if len(data) > MAX_FRAGMENT:
        raise FragmentTooLarge(f"fragment is {len(data)} octets, limit {MAX_FRAGMENT}")
    chunks = [data[i : i + MAX_SEGMENT_PAYLOAD] for i in range(0, len(data), MAX_SEGMENT_PAYLOAD)] or [b""]
    frames = []
    for k, chunk in enumerate(chunks):
        th = (frag.transport_seq + k) & TRANSPORT_SEQ_MASK
        if k == 0:
            th |= FIR
        if k == len(chunks) - 1:
            th |= FIN
        frames.append(LinkFrame(control, dest, src, bytes([th]) + chunk))
    return frames


def reassemble(frames: Iterable[LinkFrame]) -> AppFragment:
    frames = list(frames)
    if not frames:
        raise MalformedFragment("no segments")
    data = bytearray()
    first_seq = None
    expected = None
    for k, frame in enumerate(frames):
        if not frame.user_data:
            raise MalformedFragment("segment without transport header", k)
        th = frame.user_data[0]
        seq = th & TRANSPORT_SEQ_MASK
        if k == 0:
            if not th & FIR:
                raise MalformedFragment("first segment lacks FIR", k)
            first_seq = seq
        elif th & FIR or seq != expected:
            raise MalformedFragment("segment out of sequence", k)
        if bool(th & FIN) != (k == len(frames) - 1):
            raise MalformedFragment("FIN flag misplaced", k)
        expected = (seq + 1) & TRANSPORT_SEQ_MASK
        data += frame.user_data[1:]
    return decode_fragment(bytes(data), first_seq)


def encode_message(frag: AppFragment, dest: int, src: int, control: int = CONTROL_FROM_MASTER) -> bytes:
    """Fragment to wire octets: segment, then frame every segment."""
    return b"".join(encode_link_frame(f) for f in segment_fragment(frag, dest, src, control))


def decode_message(octets: bytes) -> tuple[AppFragment, LinkFrame]:
    """Inverse of :func:`encode_message`; also returns the first link frame for addressing."""
    frames = decode_link_frames(octets)
    if not frames:
        raise TruncatedFrame("empty message", 0)
    return reassemble(frames), frames[0]


def _clamp32(v: int) -> int:
    return max(INT32_MIN, min(INT32_MAX, int(v)))


def encode_analog_response(values: Sequence[int], seq: int = 0, transport_seq: int = 0, flags: Sequence[int] | None = None) -> AppFragment:
    if len(values) > 0xFFFF:
        raise MalformedFragment(f"too many values: {len(values)}")
    if flags is None:
        points = tuple(AnalogPoint(_clamp32(v)) for v in values)
    else:
        points = tuple(AnalogPoint(_clamp32(v), f) for v, f in zip(values, flags))
    block = ObjectBlock(GROUP_ANALOG_INPUT, 1, points)
    return AppFragment(Function.RESPONSE, (block,), seq, transport_seq)


def read_request(indices: Sequence[int], seq: int = 0, transport_seq: int = 0) -> AppFragment:
    block = ObjectBlock(GROUP_ANALOG_INPUT, 1, tuple(IndexPoint(i) for i in indices))
    return AppFragment(Function.READ, (block,), seq, transport_seq)


def operate_request(points: Sequence[tuple[int, int]], seq: int = 0, transport_seq: int = 0, function: Function = Function.OPERATE) -> AppFragment:
    block = ObjectBlock(GROUP_OPERATE, 1, tuple(OperatePoint(i, _clamp32(s)) for i, s in points))
    return AppFragment(function, (block,), seq, transport_seq)


def analog_values(frag: AppFragment) -> list[int]:
    return [p.value for b in frag.objects for p in b.points if isinstance(p, AnalogPoint)]


def requested_indices(frag: AppFragment) -> list[int]:
    return [p.index for b in frag.objects for p in b.points if isinstance(p, IndexPoint)]


def operate_points(frag: AppFragment) -> list[OperatePoint]:
    return [p for b in frag.objects for p in b.points if isinstance(p, OperatePoint)]

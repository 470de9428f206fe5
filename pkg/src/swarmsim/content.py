"""Content layout and wire-format arithmetic.

Everything here is pure: piece/subpiece geometry, metainfo file size and the
exact on-the-wire size of every peer-wire message.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

KB = 1024
MB = 1024 * 1024

HASH_BYTES = 20
DEFAULT_METAINFO_OVERHEAD = 400

# 4-byte length prefix + 1-byte message id
_MSG_HEADER = 5


class InvalidLayout(ValueError):
    pass


@dataclass(frozen=True)
class PieceLayout:
    index: int
    length: int
    subpiece_lengths: tuple[int, ...]

    @property
    def subpiece_count(self) -> int:
        return len(self.subpiece_lengths)

    def offset_of(self, sub: int) -> int:
        return sub * self.subpiece_lengths[0]


@dataclass(frozen=True)
class TorrentSpec:
    content_size: int
    piece_size: int
    subpiece_size: int = 16 * KB
    metainfo_fixed_overhead: int = DEFAULT_METAINFO_OVERHEAD

    piece_count: int = field(init=False, repr=False)
    last_piece_length: int = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.content_size < 1:
            raise InvalidLayout(f"content_size must be >= 1, got {self.content_size}")
        if self.subpiece_size < 1:
            raise InvalidLayout(f"subpiece_size must be >= 1, got {self.subpiece_size}")
        if self.subpiece_size > self.piece_size:
            raise InvalidLayout(
                f"subpiece_size ({self.subpiece_size}) exceeds piece_size ({self.piece_size})"
            )
        if self.metainfo_fixed_overhead < 0:
            raise InvalidLayout("metainfo_fixed_overhead must be non-negative")
        count = -(-self.content_size // self.piece_size)
        object.__setattr__(self, "piece_count", count)
        object.__setattr__(
            self, "last_piece_length", self.content_size - (count - 1) * self.piece_size
        )

    def piece_length(self, index: int) -> int:
        if not 0 <= index < self.piece_count:
            raise IndexError(f"piece {index} out of range [0, {self.piece_count})")
        if index == self.piece_count - 1:
            return self.last_piece_length
        return self.piece_size

    def subpiece_count(self, index: int) -> int:
        return -(-self.piece_length(index) // self.subpiece_size)


def piece_count(spec: TorrentSpec) -> int:
    return spec.piece_count


def subpiece_layout(spec: TorrentSpec, piece_index: int) -> PieceLayout:
    """Geometry of one piece: its length and the lengths of its subpieces.

    Every subpiece is ``subpiece_size`` long except possibly the last one,
    which carries the remainder.
    """
    length = spec.piece_length(piece_index)
    full, rest = divmod(length, spec.subpiece_size)
    subs = (spec.subpiece_size,) * full + ((rest,) if rest else ())
    return PieceLayout(piece_index, length, subs)


def all_layouts(spec: TorrentSpec) -> list[PieceLayout]:
    return [subpiece_layout(spec, i) for i in range(spec.piece_count)]


def metainfo_size(spec: TorrentSpec) -> int:
    return spec.metainfo_fixed_overhead + HASH_BYTES * spec.piece_count


class MessageKind(Enum):
    HANDSHAKE = "handshake"
    KEEPALIVE = "keepalive"
    CHOKE = "choke"
    UNCHOKE = "unchoke"
    INTERESTED = "interested"
    NOT_INTERESTED = "not_interested"
    HAVE = "have"
    BITFIELD = "bitfield"
    REQUEST = "request"
    PIECE_DATA = "piece_data"
    CANCEL = "cancel"


_FIXED_SIZES = {
    MessageKind.HANDSHAKE: 68,  # pstrlen + 19-byte pstr + 8 reserved + 20 info-hash + 20 peer-id
    MessageKind.KEEPALIVE: 4,
    MessageKind.CHOKE: _MSG_HEADER,
    MessageKind.UNCHOKE: _MSG_HEADER,
    MessageKind.INTERESTED: _MSG_HEADER,
    MessageKind.NOT_INTERESTED: _MSG_HEADER,
    MessageKind.HAVE: _MSG_HEADER + 4,
    MessageKind.REQUEST: _MSG_HEADER + 12,
    MessageKind.CANCEL: _MSG_HEADER + 12,
}

PIECE_DATA_HEADER = _MSG_HEADER + 8


def bitfield_size(n_pieces: int) -> int:
    return _MSG_HEADER + -(-n_pieces // 8)


def message_wire_size(
    kind: MessageKind, spec: TorrentSpec | None = None, payload_length: int = 0
) -> int:
    """Bytes a message occupies on the wire, length prefix included.

    ``spec`` is needed for bitfields, ``payload_length`` for piece data.
    """
    size = _FIXED_SIZES.get(kind)
    if size is not None:
        return size
    if kind is MessageKind.BITFIELD:
        if spec is None:
            raise ValueError("bitfield size depends on the torrent's piece count")
        return bitfield_size(spec.piece_count)
    if kind is MessageKind.PIECE_DATA:
        return PIECE_DATA_HEADER + payload_length
    raise ValueError(f"unknown message kind {kind!r}")


@dataclass(frozen=True, slots=True)
class WireMessage:
    kind: MessageKind
    wire_size: int
    piece: int = -1
    offset: int = 0
    length: int = 0
    bits: int = 0
    # Requests carry how many chokes the requester had seen on the
    # connection, so an uploader can discard ones sent before a re-unchoke.
    epoch: int = 0

    def __repr__(self) -> str:
        k = self.kind.value
        if self.kind in (MessageKind.REQUEST, MessageKind.PIECE_DATA, MessageKind.CANCEL):
            return f"{k}({self.piece}, {self.offset}, {self.length})"
        if self.kind is MessageKind.HAVE:
            return f"have({self.piece})"
        return k


_SIMPLE = {
    kind: WireMessage(kind, _FIXED_SIZES[kind])
    for kind in (
        MessageKind.HANDSHAKE,
        MessageKind.KEEPALIVE,
        MessageKind.CHOKE,
        MessageKind.UNCHOKE,
        MessageKind.INTERESTED,
        MessageKind.NOT_INTERESTED,
    )
}

HANDSHAKE = _SIMPLE[MessageKind.HANDSHAKE]
KEEPALIVE = _SIMPLE[MessageKind.KEEPALIVE]
CHOKE = _SIMPLE[MessageKind.CHOKE]
UNCHOKE = _SIMPLE[MessageKind.UNCHOKE]
INTERESTED = _SIMPLE[MessageKind.INTERESTED]
NOT_INTERESTED = _SIMPLE[MessageKind.NOT_INTERESTED]

_HAVE_SIZE = _FIXED_SIZES[MessageKind.HAVE]
_REQUEST_SIZE = _FIXED_SIZES[MessageKind.REQUEST]


def have(piece: int) -> WireMessage:
    return WireMessage(MessageKind.HAVE, _HAVE_SIZE, piece)


def bitfield(spec: TorrentSpec, bits: int) -> WireMessage:
    return WireMessage(MessageKind.BITFIELD, bitfield_size(spec.piece_count), bits=bits)


def request(piece: int, offset: int, length: int, epoch: int = 0) -> WireMessage:
    return WireMessage(MessageKind.REQUEST, _REQUEST_SIZE, piece, offset, length, 0, epoch)


def cancel(piece: int, offset: int, length: int) -> WireMessage:
    return WireMessage(MessageKind.CANCEL, _REQUEST_SIZE, piece, offset, length)


def piece_data(piece: int, offset: int, length: int) -> WireMessage:
    return WireMessage(MessageKind.PIECE_DATA, PIECE_DATA_HEADER + length, piece, offset, length)


def parse_size(text: str | int | float) -> int:
    """Parse ``'16kB'``, ``'5MB'``, ``'2048'`` (bytes) into a byte count.

    Units are binary (1 kB = 1024 B), matching the piece-size arithmetic.
    """
    if isinstance(text, (int, float)):
        return int(text)
    s = text.strip().replace(" ", "")
    lowered = s.lower()
    for suffix, mult in (("mb", MB), ("kb", KB), ("b", 1)):
        if lowered.endswith(suffix):
            num = s[: -len(suffix)]
            break
    else:
        num, mult = s, 1
    try:
        value = float(num)
    except ValueError:
        raise ValueError(f"cannot parse size {text!r}") from None
    result = value * mult
    if result != int(result):
        raise ValueError(f"size {text!r} is not a whole number of bytes")
    return int(result)

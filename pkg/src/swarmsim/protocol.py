"""Per-peer BitTorrent behaviour as a deterministic state machine.

A :class:`PeerState` consumes wire messages and emits wire messages; it never
touches time or bandwidth directly, that is the engine's job.  Emitted
messages are ``(destination, message)`` pairs where a destination of ``None``
means "every connected peer in my peer set".

Bitfields are Python ints used as bitsets (bit ``p`` set means piece ``p``).
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from . import content as c
from .content import MessageKind, PieceLayout, TorrentSpec, WireMessage

RATE_WINDOW = 20.0

Outbox = list  # list[tuple[int | None, WireMessage]]


class ProtocolViolation(RuntimeError):
    """A peer received something its protocol state says cannot happen."""


class SchedulerError(RuntimeError):
    pass


class Role(Enum):
    LEECHER = "leecher"
    SEED = "seed"


class OrderMode(str, Enum):
    DETERMINISTIC = "deterministic"
    RANDOM = "random"


@dataclass(frozen=True)
class ChokeConfig:
    upload_slots: int = 4
    rechoke_period: float = 10.0
    optimistic_slot: bool = True
    optimistic_rotation: int = 3

    def __post_init__(self) -> None:
        if self.upload_slots < 1:
            raise ValueError("upload_slots must be >= 1")
        if self.rechoke_period <= 0:
            raise ValueError("rechoke_period must be > 0")
        if self.optimistic_rotation < 1:
            raise ValueError("optimistic_rotation must be >= 1")


# ---------------------------------------------------------------------------
# availability index


def _lowest_bit(bits: int) -> int:
    return (bits & -bits).bit_length() - 1


def iter_bits(bits: int) -> Iterable[int]:
    while bits:
        low = bits & -bits
        yield low.bit_length() - 1
        bits ^= low


def _nth_bit(bits: int, n: int) -> int:
    if n < 32:
        while True:
            low = bits & -bits
            if not n:
                return low.bit_length() - 1
            bits ^= low
            n -= 1
    raw = np.frombuffer(bits.to_bytes((bits.bit_length() + 7) // 8, "little"), np.uint8)
    return int(np.flatnonzero(np.unpackbits(raw, bitorder="little"))[n])


def pick_piece(candidates: int, mode: OrderMode, rng: random.Random) -> int:
    """Tie-break among equally rare candidates."""
    if mode is OrderMode.DETERMINISTIC:
        return _lowest_bit(candidates)
    return _nth_bit(candidates, rng.randrange(candidates.bit_count()))


class PeerSetView:
    """Known bitfields of neighbours plus an availability index over them.

    ``buckets[a]`` is the bitset of pieces owned by exactly ``a`` known
    neighbours, so rarest-first is a scan over increasing ``a``.

    Updates are idempotent per announcement: applying the same have or
    bitfield twice is a no-op.  That lets one view be shared by every peer of
    a full mesh, where all peers learn each announcement at the same instant.
    A peer's own announcements may then be in the view; they never matter
    for selection because a peer only ever selects pieces it lacks.
    """

    def __init__(self, n_pieces: int):
        self.n_pieces = n_pieces
        self.full = (1 << n_pieces) - 1
        self.known: dict[Hashable, int] = {}
        self.known_count: dict[Hashable, int] = {}
        self.counts = [0] * n_pieces
        self.buckets = [self.full]

    def _inc(self, p: int) -> None:
        a = self.counts[p]
        b = 1 << p
        buckets = self.buckets
        buckets[a] ^= b
        if a + 1 == len(buckets):
            buckets.append(b)
        else:
            buckets[a + 1] |= b
        self.counts[p] = a + 1

    def _dec(self, p: int) -> None:
        a = self.counts[p]
        b = 1 << p
        self.buckets[a] ^= b
        self.buckets[a - 1] |= b
        self.counts[p] = a - 1

    def on_bitfield(self, peer: Hashable, bits: int) -> bool:
        if peer in self.known:
            return False
        self.known[peer] = bits
        self.known_count[peer] = bits.bit_count()
        if bits == self.full:
            self.buckets.insert(0, 0)
            self.counts = [a + 1 for a in self.counts]
        else:
            for p in iter_bits(bits):
                self._inc(p)
        return True

    def on_have(self, peer: Hashable, p: int) -> bool:
        k = self.known.get(peer)
        if k is None:
            k = 0
            self.known_count[peer] = 0
        b = 1 << p
        if k & b:
            return False
        self.known[peer] = k | b
        self.known_count[peer] += 1
        self._inc(p)
        return True

    def on_departed(self, peer: Hashable) -> bool:
        bits = self.known.pop(peer, None)
        if bits is None:
            return False
        del self.known_count[peer]
        if bits == self.full and self.buckets[0] == 0:
            del self.buckets[0]
            self.counts = [a - 1 for a in self.counts]
        else:
            for p in iter_bits(bits):
                self._dec(p)
        return True

    def availability(self, p: int, exclude: Hashable | None = None) -> int:
        n = self.counts[p]
        if exclude is not None and (self.known.get(exclude, 0) >> p) & 1:
            n -= 1
        return n

    def rarest(self, candidates: int, mode: OrderMode, rng: random.Random) -> int | None:
        buckets = self.buckets
        for level in range(1, len(buckets)):
            hit = candidates & buckets[level]
            if hit:
                return pick_piece(hit, mode, rng)
        return None


# ---------------------------------------------------------------------------
# connection and peer state


class ConnectionState:
    """One side's view of a connection to ``remote``.

    Download side: ``am_interested``, ``peer_choking``, ``current_piece`` and
    ``outstanding`` requests.  Upload side: ``am_choking``,
    ``peer_interested`` and the queue of requests to serve.
    """

    __slots__ = (
        "remote",
        "am_choking",
        "am_interested",
        "peer_choking",
        "peer_interested",
        "current_piece",
        "outstanding",
        "cursor",
        "upload_queue",
        "recv_log",
        "sent_log",
        "recv_window",
        "sent_window",
        "cancelled",
        "chokes_sent",
        "chokes_seen",
    )

    def __init__(self, remote: Hashable):
        self.remote = remote
        self.am_choking = True
        self.am_interested = False
        self.peer_choking = True
        self.peer_interested = False
        self.current_piece: int | None = None
        self.outstanding: list[tuple[int, int, int]] = []
        self.cursor = 0
        self.upload_queue: deque[tuple[int, int, int]] = deque()
        self.recv_log: deque[tuple[float, int]] = deque()
        self.sent_log: deque[tuple[float, int]] = deque()
        self.recv_window = 0
        self.sent_window = 0
        self.cancelled: set[tuple[int, int]] = set()
        self.chokes_sent = 0
        self.chokes_seen = 0

    def record_received(self, now: float, nbytes: int) -> None:
        self.recv_log.append((now, nbytes))
        self.recv_window += nbytes

    def record_sent(self, now: float, nbytes: int) -> None:
        self.sent_log.append((now, nbytes))
        self.sent_window += nbytes

    def rate_from_remote(self, now: float, window: float = RATE_WINDOW) -> float:
        log = self.recv_log
        cutoff = now - window
        while log and log[0][0] <= cutoff:
            self.recv_window -= log.popleft()[1]
        return self.recv_window / window

    def rate_to_remote(self, now: float, window: float = RATE_WINDOW) -> float:
        log = self.sent_log
        cutoff = now - window
        while log and log[0][0] <= cutoff:
            self.sent_window -= log.popleft()[1]
        return self.sent_window / window


def next_subpiece_requests(
    conn: ConnectionState,
    layout: PieceLayout,
    pipeline_depth: int,
    received: int = 0,
) -> list[tuple[int, int, int]]:
    """Top up ``conn.outstanding`` with requests inside ``conn.current_piece``.

    ``received`` is the bitmask of subpieces of the piece already held.
    Requests go out in offset order and never leave the current piece, so an
    exhausted piece yields an empty list until the engine assigns a new one.
    The new requests are appended to ``conn.outstanding`` and returned.
    """
    if conn.peer_choking:
        raise SchedulerError(f"requesting from {conn.remote!r} while choked")
    if conn.current_piece is None or conn.current_piece != layout.index:
        raise SchedulerError("layout does not match the connection's current piece")
    room = pipeline_depth - len(conn.outstanding)
    if room <= 0:
        return []
    subs = layout.subpiece_lengths
    n = len(subs)
    step = subs[0]
    p = layout.index
    s = conn.cursor
    new = []
    while room and s < n:
        if not (received >> s) & 1:
            new.append((p, s * step, subs[s]))
            room -= 1
        s += 1
    conn.cursor = s
    conn.outstanding.extend(new)
    return new


def rechoke_leecher(
    rates: Mapping[Hashable, float],
    cfg: ChokeConfig,
    tick: int,
    rng: random.Random,
    optimistic: Hashable | None = None,
) -> tuple[set, Hashable | None]:
    """Unchoke the fastest uploaders to us, plus one rotating optimistic slot.

    ``rates`` maps each interested peer to its download rate towards us.
    Returns the unchoke set and the (possibly re-drawn) optimistic peer.
    """
    ranked = sorted(rates, key=lambda r: (-rates[r], r))
    if not cfg.optimistic_slot:
        return set(ranked[: cfg.upload_slots]), None
    top = ranked[: cfg.upload_slots - 1]
    rest = sorted(ranked[cfg.upload_slots - 1 :])
    if not rest:
        return set(top), None
    if optimistic not in rest or tick % cfg.optimistic_rotation == 0:
        optimistic = rng.choice(rest)
    return set(top) | {optimistic}, optimistic


def rechoke_seed(rates: Mapping[Hashable, float], cfg: ChokeConfig) -> set:
    """A seed unchokes the interested peers it is sending to fastest."""
    ranked = sorted(rates, key=lambda r: (-rates[r], r))
    return set(ranked[: cfg.upload_slots])


SelectionHook = Callable[["PeerState", Hashable, int, int, bool], None]


class PeerState:
    """One peer: its pieces, connections, selection and choking state."""

    def __init__(
        self,
        peer_id: int,
        role: Role,
        spec: TorrentSpec,
        *,
        upload_capacity: float,
        choke: ChokeConfig | None = None,
        pipeline_depth: int = 5,
        order_mode: OrderMode | str = OrderMode.DETERMINISTIC,
        rng: random.Random | None = None,
        view: PeerSetView | None = None,
        endgame: bool = False,
    ):
        if not 1 <= pipeline_depth <= 64:
            raise ValueError("pipeline_depth must be in [1, 64]")
        self.peer_id = peer_id
        self.role = role
        self.spec = spec
        self.upload_capacity = upload_capacity
        self.choke = choke or ChokeConfig()
        self.pipeline_depth = pipeline_depth
        self.order_mode = OrderMode(order_mode)
        self.rng = rng or random.Random(peer_id)
        self.view = view or PeerSetView(spec.piece_count)
        self.endgame = endgame

        n = spec.piece_count
        self.layouts = c.all_layouts(spec)
        self._sub_full = [(1 << lay.subpiece_count) - 1 for lay in self.layouts]
        self.full = (1 << n) - 1
        self.have = self.full if role is Role.SEED else 0
        self.have_count = n if role is Role.SEED else 0
        self.partial = 0
        self.in_progress = 0
        self._progress_refs: dict[int, int] = {}
        self.received: dict[int, int] = {}

        self.conns: dict[Hashable, ConnectionState] = {}
        self.idle: set = set()
        self.listening: set = set()
        # Each interesting remote is filed under one piece it has and we lack;
        # completing that piece is the only event that can end our interest.
        self._witness: dict = {}
        self._watchers: dict[int, list] = {}
        self.unchoked: set = set()
        self.optimistic: Hashable | None = None
        self.rechoke_tick = 0
        self.connected = True

        self.selection_hook: SelectionHook | None = None
        self.max_outstanding = 0
        self.span_violations = 0
        self.duplicate_bytes = 0
        self.ignored_requests = 0

    # -- queries ---------------------------------------------------------

    @property
    def is_seed(self) -> bool:
        return self.role is Role.SEED

    @property
    def complete(self) -> bool:
        return self.have == self.full

    def availability(self, p: int) -> int:
        return self.view.availability(p, exclude=self.peer_id)

    def interested_in(self, remote: Hashable) -> bool:
        return bool(self.view.known.get(remote, 0) & ~self.have)

    # -- connection lifecycle ---------------------------------------------

    def connect(self, remote: Hashable) -> Outbox:
        if remote in self.conns:
            raise SchedulerError(f"{self.peer_id} already connected to {remote!r}")
        conn = ConnectionState(remote)
        self.conns[remote] = conn
        self._touch(conn)
        return [(remote, c.HANDSHAKE), (remote, c.bitfield(self.spec, self.have))]

    def handle_departure(self, remote: Hashable, now: float) -> Outbox:
        conn = self.conns.pop(remote, None)
        if conn is None:
            return []
        self.view.on_departed(remote)
        self._witness.pop(remote, None)
        self.idle.discard(remote)
        self.listening.discard(remote)
        out: Outbox = []
        released = self._release(conn)
        if remote == self.optimistic:
            self.optimistic = None
        if remote in self.unchoked:
            self.unchoked.discard(remote)
            self._refill(now, out)
        if released:
            self._retry_idle(out)
        return out

    # -- message handling -------------------------------------------------

    def handle_message(self, src: Hashable, msg: WireMessage, now: float = 0.0) -> Outbox:
        kind = msg.kind
        conn = self.conns.get(src)
        if conn is None:
            raise ProtocolViolation(f"peer {self.peer_id} has no connection to {src!r}")
        out: Outbox = []
        if kind is MessageKind.PIECE_DATA:
            self._on_piece_data(conn, msg, now, out)
        elif kind is MessageKind.REQUEST:
            self._on_request(conn, msg)
        elif kind is MessageKind.HAVE:
            self.view.on_have(src, msg.piece)
            self._on_news(conn, msg.piece, out)
        elif kind is MessageKind.BITFIELD:
            self.view.on_bitfield(src, msg.bits)
            self._on_bitfield(conn, out)
        elif kind is MessageKind.UNCHOKE:
            conn.peer_choking = False
            if conn.am_interested and conn.current_piece is None:
                self._start_piece(conn, out)
            self._touch(conn)
        elif kind is MessageKind.CHOKE:
            conn.peer_choking = True
            conn.chokes_seen += 1
            conn.outstanding.clear()
            if self._release(conn):
                self._retry_idle(out)
            self._touch(conn)
        elif kind is MessageKind.INTERESTED:
            conn.peer_interested = True
            if conn.am_choking and len(self.unchoked) < self.choke.upload_slots:
                self._unchoke(conn, out)
        elif kind is MessageKind.NOT_INTERESTED:
            conn.peer_interested = False
            if not conn.am_choking:
                self._choke(conn, out)
                self._refill(now, out)
        elif kind is MessageKind.CANCEL:
            try:
                conn.upload_queue.remove((msg.piece, msg.offset, msg.length))
            except ValueError:
                pass
        elif kind in (MessageKind.HANDSHAKE, MessageKind.KEEPALIVE):
            pass
        else:  # pragma: no cover
            raise ProtocolViolation(f"unhandled message {msg!r}")
        return out

    def on_announcement(self, src: Hashable, piece: int) -> Outbox:
        """React to a have whose effect on the shared view was already applied."""
        out: Outbox = []
        self._on_news(self.conns[src], piece, out)
        return out

    def on_bitfield_announcement(self, src: Hashable) -> Outbox:
        out: Outbox = []
        self._on_bitfield(self.conns[src], out)
        return out

    def _on_bitfield(self, conn: ConnectionState, out: Outbox) -> None:
        if not conn.am_interested and self.view.known.get(conn.remote, 0) & ~self.have:
            self._become_interested(conn, out)

    def _on_news(self, conn: ConnectionState, p: int, out: Outbox) -> None:
        if not conn.am_interested:
            if not (self.have >> p) & 1:
                self._become_interested(conn, out)
        elif conn.remote in self.idle:
            self._start_piece(conn, out)
            self._touch(conn)

    def _file_witness(self, remote: Hashable, missing: int) -> None:
        q = missing.bit_length() - 1
        self._witness[remote] = q
        w = self._watchers.get(q)
        if w is None:
            self._watchers[q] = [remote]
        else:
            w.append(remote)

    def _become_interested(self, conn: ConnectionState, out: Outbox) -> None:
        conn.am_interested = True
        self._file_witness(conn.remote, self.view.known.get(conn.remote, 0) & ~self.have)
        out.append((conn.remote, c.INTERESTED))
        if not conn.peer_choking and conn.current_piece is None:
            self._start_piece(conn, out)
        self._touch(conn)

    def _touch(self, conn: ConnectionState) -> None:
        # ``idle``: unchoked and interested but without a piece to fetch.
        # ``listening``: remotes whose next announcement may make us act.
        r = conn.remote
        if self.role is Role.SEED:
            return
        if conn.am_interested:
            if not conn.peer_choking and conn.current_piece is None:
                self.idle.add(r)
                self.listening.add(r)
            else:
                self.idle.discard(r)
                self.listening.discard(r)
        else:
            self.idle.discard(r)
            self.listening.add(r)

    # -- downloading -------------------------------------------------------

    def select_next_piece(self, remote: Hashable) -> int | None:
        """Rarest piece ``remote`` has that we lack and nobody else is fetching.

        Partially downloaded pieces win over fresh ones.  In endgame mode, once
        every missing piece is in progress somewhere, pieces already being
        fetched on other connections become eligible too.
        """
        known = self.view.known.get(remote, 0)
        missing = known & ~self.have
        cand = missing & ~self.in_progress
        if not cand:
            if not (self.endgame and missing and not (self.full & ~self.have & ~self.in_progress)):
                return None
            cand = missing
        part = cand & self.partial
        fresh = not part
        p = self.view.rarest(part or cand, self.order_mode, self.rng)
        if self.selection_hook is not None and p is not None:
            self.selection_hook(self, remote, part or cand, p, fresh)
        return p

    def _start_piece(self, conn: ConnectionState, out: Outbox) -> None:
        p = self.select_next_piece(conn.remote)
        if p is None:
            return
        conn.current_piece = p
        conn.cursor = 0
        refs = self._progress_refs.get(p, 0)
        self._progress_refs[p] = refs + 1
        if not refs:
            self.in_progress |= 1 << p
        self._request_more(conn, out)

    def _release(self, conn: ConnectionState) -> bool:
        p = conn.current_piece
        if p is None:
            return False
        conn.current_piece = None
        conn.outstanding.clear()
        refs = self._progress_refs[p] - 1
        if refs:
            self._progress_refs[p] = refs
            return False
        del self._progress_refs[p]
        self.in_progress &= ~(1 << p)
        return True

    def _retry_idle(self, out: Outbox) -> None:
        for r in sorted(self.idle):
            conn = self.conns[r]
            self._start_piece(conn, out)
            self._touch(conn)

    def _request_more(self, conn: ConnectionState, out: Outbox) -> None:
        p = conn.current_piece
        new = next_subpiece_requests(
            conn, self.layouts[p], self.pipeline_depth, self.received.get(p, 0)
        )
        outstanding = conn.outstanding
        n = len(outstanding)
        if n > self.max_outstanding:
            self.max_outstanding = n
        if n and (outstanding[0][0] != p or outstanding[-1][0] != p):
            self.span_violations += 1
        remote = conn.remote
        epoch = conn.chokes_seen
        for req in new:
            out.append((remote, c.request(*req, epoch)))

    def _on_piece_data(
        self, conn: ConnectionState, msg: WireMessage, now: float, out: Outbox
    ) -> None:
        p, off, length = msg.piece, msg.offset, msg.length
        key = (p, off, length)
        try:
            conn.outstanding.remove(key)
        except ValueError:
            if (p, off) in conn.cancelled:
                conn.cancelled.discard((p, off))
            else:
                raise ProtocolViolation(
                    f"peer {self.peer_id} got unrequested {msg!r} from {conn.remote!r}"
                ) from None
        conn.record_received(now, length)
        if (self.have >> p) & 1:
            self.duplicate_bytes += length
            return
        s = off // self.spec.subpiece_size
        mask = self.received.get(p, 0)
        bit = 1 << s
        if mask & bit:
            self.duplicate_bytes += length
            if conn.current_piece == p and not conn.peer_choking:
                self._request_more(conn, out)
            return
        mask |= bit
        if mask == self._sub_full[p]:
            self._complete_piece(p, conn, out)
            return
        if self.endgame and self._progress_refs.get(p, 0) > 1:
            for cc in self.conns.values():
                if cc is conn or cc.current_piece != p:
                    continue
                if key in cc.outstanding:
                    cc.outstanding.remove(key)
                    cc.cancelled.add((p, off))
                    out.append((cc.remote, c.cancel(*key)))
        if not mask & (mask - 1):
            self.partial |= 1 << p
        self.received[p] = mask
        if conn.current_piece == p:
            self._request_more(conn, out)

    def _complete_piece(self, p: int, via: ConnectionState, out: Outbox) -> None:
        self.received.pop(p, None)
        b = 1 << p
        self.partial &= ~b
        self.have |= b
        self.have_count += 1
        others = self._progress_refs.get(p, 0) - (via.current_piece == p)
        if others > 0:  # only in endgame can a piece be current on several connections
            for cc in list(self.conns.values()):
                if cc is via or cc.current_piece != p:
                    continue
                for req in cc.outstanding:
                    cc.cancelled.add((req[0], req[1]))
                    out.append((cc.remote, c.cancel(*req)))
                self._release(cc)
                self._touch(cc)
        if via.current_piece == p:
            self._release(via)
        out.append((None, c.have(p)))
        if self.have == self.full:
            self.connected = False
            return
        watchers = self._watchers.pop(p, None)
        if watchers:
            known = self.view.known
            have = self.have
            conns = self.conns
            witness = self._witness
            for r in watchers:
                cc = conns.get(r)
                if cc is None or not cc.am_interested or witness.get(r) != p:
                    continue
                missing = known.get(r, 0) & ~have
                if missing:
                    self._file_witness(r, missing)
                else:
                    del witness[r]
                    cc.am_interested = False
                    out.append((r, c.NOT_INTERESTED))
                    self._touch(cc)
        if via.am_interested and not via.peer_choking:
            self._start_piece(via, out)
        self._touch(via)
        if self.idle:
            self._retry_idle(out)

    # -- uploading ---------------------------------------------------------

    def _on_request(self, conn: ConnectionState, msg: WireMessage) -> None:
        if conn.am_choking or msg.epoch != conn.chokes_sent:
            # choked, or sent before the remote saw our latest choke
            self.ignored_requests += 1
            return
        if not (self.have >> msg.piece) & 1:
            raise ProtocolViolation(
                f"peer {self.peer_id} asked for piece {msg.piece} it does not have"
            )
        conn.upload_queue.append((msg.piece, msg.offset, msg.length))

    def _unchoke(self, conn: ConnectionState, out: Outbox) -> None:
        conn.am_choking = False
        self.unchoked.add(conn.remote)
        out.append((conn.remote, c.UNCHOKE))

    def _choke(self, conn: ConnectionState, out: Outbox) -> None:
        conn.am_choking = True
        conn.chokes_sent += 1
        conn.upload_queue.clear()
        self.unchoked.discard(conn.remote)
        out.append((conn.remote, c.CHOKE))

    def _rate_key(self, conn: ConnectionState, now: float) -> float:
        if self.is_seed:
            return conn.rate_to_remote(now)
        return conn.rate_from_remote(now)

    def _refill(self, now: float, out: Outbox) -> None:
        free = self.choke.upload_slots - len(self.unchoked)
        if free <= 0:
            return
        waiting = [cc for cc in self.conns.values() if cc.peer_interested and cc.am_choking]
        if not waiting:
            return
        waiting.sort(key=lambda cc: (-self._rate_key(cc, now), cc.remote))
        for cc in waiting[:free]:
            self._unchoke(cc, out)

    def rechoke(self, now: float) -> Outbox:
        """Periodic unchoke decision; returns the resulting choke/unchoke messages."""
        rates = {
            r: self._rate_key(cc, now) for r, cc in self.conns.items() if cc.peer_interested
        }
        if self.is_seed:
            keep = rechoke_seed(rates, self.choke)
        else:
            keep, self.optimistic = rechoke_leecher(
                rates, self.choke, self.rechoke_tick, self.rng, self.optimistic
            )
        self.rechoke_tick += 1
        out: Outbox = []
        for r in sorted(self.unchoked - keep):
            self._choke(self.conns[r], out)
        for r in sorted(keep - self.unchoked):
            self._unchoke(self.conns[r], out)
        return out


def handle_message(
    state: PeerState, src: Hashable, msg: WireMessage, now: float = 0.0
) -> tuple[PeerState, Outbox]:
    """Functional-style wrapper: the state is updated in place and returned."""
    return state, state.handle_message(src, msg, now)


def select_next_piece(
    state: PeerState,
    remote: Hashable,
    order_mode: OrderMode | str | None = None,
    rng: random.Random | None = None,
) -> int | None:
    if order_mode is not None:
        state.order_mode = OrderMode(order_mode)
    if rng is not None:
        state.rng = rng
    return state.select_next_piece(remote)


def brute_force_rarest(
    known: Mapping[Hashable, int],
    candidates: int,
    exclude: Hashable | None = None,
) -> tuple[int, list[int]]:
    """Recount owners of each candidate piece from scratch.

    Returns the minimal availability and the candidates attaining it.
    Used as an oracle against :meth:`PeerSetView.rarest`.
    """
    best = None
    winners: list[int] = []
    for p in iter_bits(candidates):
        n = sum(1 for r, bits in known.items() if r != exclude and (bits >> p) & 1)
        if best is None or n < best:
            best, winners = n, [p]
        elif n == best:
            winners.append(p)
    return (best if best is not None else 0), winners


def bits_from(pieces: Sequence[int]) -> int:
    out = 0
    for p in pieces:
        out |= 1 << p
    return out

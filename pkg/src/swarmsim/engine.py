"""Discrete-event kernel and fluid network model.

Each peer's upload capacity is shared equally among its active data flows
(one flow per directed connection, serving queued subpiece requests in
order); receivers are uncapped.  Control messages take ``one_way_delay`` to
arrive.  A subpiece occupies the sender's uplink for its transfer time and
arrives ``one_way_delay`` after the last byte leaves.

Rates are re-allocated only when a sender's set of active flows changes, so
the uplink is a processor-sharing server: a virtual clock advances at the
per-flow share and each flow finishes when the clock reaches its tag.
"""

from __future__ import annotations

import heapq
import itertools
import random
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Any, NamedTuple, Sequence

from . import content as c
from .content import MessageKind, TorrentSpec, WireMessage
from .metrics import MetricsBundle, PeerTraffic, UploadLog, utilization_series
from .protocol import ChokeConfig, OrderMode, PeerSetView, PeerState, Role

DEFAULT_HORIZON = 1e5


class SimulationStalled(RuntimeError):
    """Simulated time ran past the horizon with leechers still downloading."""


class AccountingError(RuntimeError):
    pass


class EventKind(IntEnum):
    MESSAGE_DELIVERY = 0
    MULTICAST_DELIVERY = 1
    FLOW_END = 2
    TRANSFER_COMPLETE = 3
    RECHOKE_TICK = 4
    METRIC_TICK = 5
    PEER_DEPARTED = 6


class SimEvent(NamedTuple):
    time: float
    seq: int
    kind: int
    src: Any
    dst: Any
    payload: Any


@dataclass(frozen=True)
class LinkModel:
    one_way_delay: float = 0.05
    tcp_model: str = "off"
    ramp_time: float = 2.0
    floor_fraction: float = 0.25
    idle_decay_after: float = 0.5

    def __post_init__(self) -> None:
        if self.one_way_delay < 0:
            raise ValueError("one_way_delay must be >= 0")
        if self.tcp_model not in ("off", "ramp"):
            raise ValueError(f"tcp_model must be 'off' or 'ramp', got {self.tcp_model!r}")
        if not 0 < self.floor_fraction <= 1:
            raise ValueError("floor_fraction must be in (0, 1]")
        if self.ramp_time <= 0:
            raise ValueError("ramp_time must be > 0")
        if self.idle_decay_after < 0:
            raise ValueError("idle_decay_after must be >= 0")


def tcp_multiplier(idle_for: float, continuous_active: float, model: LinkModel) -> float:
    """Fraction of its fair share a connection can use.

    Ramps linearly from ``floor_fraction`` to 1 over ``ramp_time`` seconds
    of continuous activity; an idle gap longer than ``idle_decay_after``
    restarts the ramp.
    """
    if model.tcp_model == "off":
        return 1.0
    if idle_for > model.idle_decay_after:
        continuous_active = 0.0
    floor = model.floor_fraction
    return min(1.0, floor + (1.0 - floor) * max(0.0, continuous_active) / model.ramp_time)


@dataclass
class Flow:
    sender: Any
    receiver: Any
    remaining: float
    rate: float = 0.0
    tcp_multiplier: float = 1.0


def allocate_rates(flows: Sequence[Flow], capacities: dict) -> list[Flow]:
    """Equal split of each sender's capacity, then scale by the TCP multiplier."""
    per_sender: dict = defaultdict(int)
    for f in flows:
        if f.remaining < 0:
            raise AccountingError(f"flow {f.sender}->{f.receiver} has negative remaining bytes")
        per_sender[f.sender] += 1
    return [
        replace(f, rate=capacities[f.sender] / per_sender[f.sender] * f.tcp_multiplier)
        for f in flows
    ]


class _Link:
    """Engine side of one directed connection ``sender -> receiver``."""

    __slots__ = (
        "sender",
        "receiver",
        "conn",
        "req",
        "finish_v",
        "mult",
        "started",
        "active_since",
        "idle_since",
        "deferred",
        "dead",
        "gaps",
        "last_piece",
    )

    def __init__(self, sender: int, receiver: int, conn):
        self.sender = sender
        self.receiver = receiver
        self.conn = conn
        self.req: tuple[int, int, int] | None = None
        self.finish_v = 0.0
        self.mult = 1.0
        self.started = 0.0
        self.active_since = 0.0
        self.idle_since: float | None = None
        self.deferred: list[WireMessage] = []
        self.dead = False
        # (idle from, idle until, piece before, piece after), when tracked
        self.gaps: list[tuple[float, float, int, int]] | None = None
        self.last_piece = -1


class _Uplink:
    __slots__ = ("peer", "capacity", "active", "v", "t", "version", "msum", "log")

    def __init__(self, peer: int, capacity: float, log: UploadLog):
        self.peer = peer
        self.capacity = capacity
        self.active: list[_Link] = []
        self.v = 0.0
        self.t = 0.0
        self.version = 0
        self.msum = 0.0
        self.log = log

    def advance(self, now: float) -> None:
        n = len(self.active)
        dt = now - self.t
        if n and dt > 0:
            share = self.capacity / n
            self.v += dt * share
            self.log.add(self.peer, self.t, now, share * self.msum)
        self.t = now

    def remaining(self, link: _Link) -> float:
        return (link.finish_v - self.v) * link.mult

    def rates(self) -> dict[int, float]:
        n = len(self.active)
        return {l.receiver: self.capacity / n * l.mult for l in self.active}


@dataclass
class SimConfig:
    """A fully resolved swarm: concrete capacities, no distributions."""

    spec: TorrentSpec
    leecher_caps: list[float]
    seed_cap: float = 200 * 1024
    choke: ChokeConfig = field(default_factory=ChokeConfig)
    link: LinkModel = field(default_factory=LinkModel)
    pipeline_depth: int = 5
    order_mode: OrderMode = OrderMode.DETERMINISTIC
    endgame: bool = False
    peer_set_size: int = 0
    horizon: float = DEFAULT_HORIZON
    share_view: bool = True
    metric_window: float = 5.0
    trace: bool = False
    track_gaps: bool = False

    def __post_init__(self) -> None:
        if any(cap <= 0 for cap in self.leecher_caps) or self.seed_cap <= 0:
            raise ValueError("all capacities must be > 0")
        if self.peer_set_size < 0:
            raise ValueError("peer_set_size must be >= 0")


SEED_ID = 0


class Simulation:
    def __init__(self, cfg: SimConfig, rng_seed: int = 0):
        self.cfg = cfg
        self.spec = cfg.spec
        self.rng = random.Random(rng_seed)
        self.delay = cfg.link.one_way_delay
        self.now = 0.0
        self._heap: list[tuple] = []
        self._seq = itertools.count()
        self.events_processed = 0
        self.trace: list[tuple] | None = [] if cfg.trace else None
        self.log = UploadLog(cfg.metric_window)

        spec = cfg.spec
        ids = [SEED_ID] + list(range(1, len(cfg.leecher_caps) + 1))
        self.leecher_ids = ids[1:]
        caps = {SEED_ID: float(cfg.seed_cap)}
        caps.update({i: float(cap) for i, cap in zip(self.leecher_ids, cfg.leecher_caps)})
        self.caps = caps

        self.neighbors = self._peer_sets(ids)
        self.full_mesh = all(len(v) == len(ids) - 1 for v in self.neighbors.values())
        self.shared = cfg.share_view and self.full_mesh
        shared_view = PeerSetView(spec.piece_count) if self.shared else None

        self.peers: dict[int, PeerState] = {}
        for pid in ids:
            self.peers[pid] = PeerState(
                pid,
                Role.SEED if pid == SEED_ID else Role.LEECHER,
                spec,
                upload_capacity=caps[pid],
                choke=cfg.choke,
                pipeline_depth=cfg.pipeline_depth,
                order_mode=cfg.order_mode,
                rng=random.Random(rng_seed * 1_000_003 + pid),
                view=shared_view,
                endgame=cfg.endgame,
            )
        self.uplinks = {pid: _Uplink(pid, caps[pid], self.log) for pid in ids}
        self.links: dict[tuple[int, int], _Link] = {}
        for pid, peer in self.peers.items():
            for other in self.neighbors[pid]:
                peer.connect(other)
                link = self.links[(pid, other)] = _Link(pid, other, peer.conns[other])
                if cfg.track_gaps:
                    link.gaps = []

        self.traffic = {pid: PeerTraffic() for pid in ids}
        self.completion: dict[int, float] = {}
        self.delivered_bytes = 0
        self.dropped = 0
        self.dropped_bytes = 0
        self.seed_piece_log: list[tuple[float, int, bool]] = []
        self._seed_progress: dict[tuple[int, int], int] = {}
        self._seed_uploaded: set[int] = set()
        self._sub_counts = [spec.subpiece_count(p) for p in range(spec.piece_count)]
        self.remaining_leechers = len(self.leecher_ids)
        self.progress: list[tuple[float, int]] = []

    # -- setup ---------------------------------------------------------

    def _peer_sets(self, ids: list[int]) -> dict[int, list[int]]:
        k = self.cfg.peer_set_size
        if k == 0 or k >= len(ids) - 1:
            return {i: [j for j in ids if j != i] for i in ids}
        # Each peer draws k random neighbours; links are symmetric.  The seed
        # is in every peer set so no leecher can be stranded without a source.
        edges: dict[int, set[int]] = {i: set() for i in ids}
        for i in ids:
            others = [j for j in ids if j != i]
            for j in self.rng.sample(others, k):
                edges[i].add(j)
                edges[j].add(i)
        for i in ids[1:]:
            edges[i].add(SEED_ID)
            edges[SEED_ID].add(i)
        return {i: sorted(v) for i, v in edges.items()}

    def _push(self, t: float, kind: int, a, b, payload) -> SimEvent:
        ev = (t, next(self._seq), kind, a, b, payload)
        heapq.heappush(self._heap, ev)
        return SimEvent(*ev)

    def _start(self) -> None:
        period = self.cfg.choke.rechoke_period
        for pid, peer in self.peers.items():
            self._emit(pid, [(None, c.HANDSHAKE), (None, c.bitfield(self.spec, peer.have))], 0.0)
        for pid in self.peers:
            self._push(self.rng.random() * period, EventKind.RECHOKE_TICK, pid, None, None)
        self._push(0.0, EventKind.METRIC_TICK, None, None, None)

    # -- sending ---------------------------------------------------------

    def _account(self, src: int, msg: WireMessage, copies: int) -> None:
        t = self.traffic[src]
        kind = msg.kind
        size = msg.wire_size * copies
        if kind is MessageKind.HAVE:
            t.have_bytes += size
        elif kind is MessageKind.BITFIELD:
            t.bitfield_bytes += size
        else:
            t.other_control_bytes += size

    def _emit(self, src: int, out: list, now: float) -> None:
        t = now + self.delay
        push = heapq.heappush
        heap = self._heap
        seq = self._seq
        for dst, msg in out:
            if dst is None:
                recips = list(self.peers[src].conns)
                if not recips:
                    continue
                self._account(src, msg, len(recips))
                push(heap, (t, next(seq), 1, src, recips, msg))
                continue
            self._account(src, msg, 1)
            kind = msg.kind
            if kind is MessageKind.CHOKE or kind is MessageKind.UNCHOKE:
                link = self.links[(src, dst)]
                if link.deferred or (kind is MessageKind.CHOKE and link.req is not None):
                    link.deferred.append(msg)
                    continue
            push(heap, (t, next(seq), 0, src, dst, msg))

    def deliver(self, msg: WireMessage, src: int, dst: int, now: float) -> SimEvent | None:
        """Schedule ``msg`` from ``src`` to ``dst``; returns the arrival event.

        Piece data becomes a flow on the sender's uplink (bypassing choke
        state) and the returned event carries the arrival time projected
        under the current allocation.  A message for a departed peer is
        dropped, counted, and ``None`` returned.
        """
        if not self.peers[dst].connected:
            self.dropped += 1
            return None
        if msg.kind is not MessageKind.PIECE_DATA:
            self._account(src, msg, 1)
            return self._push(now + self.delay, EventKind.MESSAGE_DELIVERY, src, dst, msg)
        link = self.links[(src, dst)]
        if link.req is not None:
            raise ValueError(f"link {src}->{dst} already carries a flow")
        self._start_flow(link, (msg.piece, msg.offset, msg.length), now)
        up = self.uplinks[src]
        finish = now + (link.finish_v - up.v) / (up.capacity / len(up.active))
        return SimEvent(finish + self.delay, -1, EventKind.TRANSFER_COMPLETE, src, dst, msg)

    # -- flows -----------------------------------------------------------

    def _kick(self, link: _Link, now: float) -> None:
        if link.req is not None or link.dead:
            return
        conn = link.conn
        if not conn.upload_queue or conn.am_choking:
            return
        self._start_flow(link, conn.upload_queue.popleft(), now)

    def _start_flow(self, link: _Link, req: tuple[int, int, int], now: float) -> None:
        link.req = req
        model = self.cfg.link
        if model.tcp_model == "off":
            mult = 1.0
        else:
            idle_for = float("inf") if link.idle_since is None else now - link.idle_since
            if idle_for > model.idle_decay_after:
                link.active_since = now
            mult = tcp_multiplier(idle_for, now - link.active_since, model)
        if link.gaps is not None and link.idle_since is not None:
            link.gaps.append((link.idle_since, now, link.last_piece, req[0]))
        up = self.uplinks[link.sender]
        up.advance(now)
        link.mult = mult
        link.started = now
        link.finish_v = up.v + req[2] / mult
        up.active.append(link)
        up.msum = sum(l.mult for l in up.active)
        self._reschedule(up, now)

    def _reschedule(self, up: _Uplink, now: float) -> None:
        up.version += 1
        active = up.active
        if not active:
            return
        share = up.capacity / len(active)
        best = min(active, key=_finish_key)
        dt = (best.finish_v - up.v) / share
        if dt < 0:
            if dt < -1e-6:
                raise AccountingError(f"flow overshot on uplink {up.peer}: {dt}")
            dt = 0.0
        heapq.heappush(self._heap, (now + dt, next(self._seq), 2, up, up.version, best))

    def _flow_end(self, up: _Uplink, link: _Link, now: float) -> None:
        up.advance(now)
        active = up.active
        active.remove(link)
        up.msum = sum(l.mult for l in active)
        req = link.req
        link.req = None
        link.idle_since = now
        p, off, length = req
        link.last_piece = p
        src, dst = link.sender, link.receiver
        link.conn.record_sent(now, length)
        t = self.traffic[src]
        t.payload_bytes += length
        t.data_header_bytes += c.PIECE_DATA_HEADER
        if src == SEED_ID:
            self._seed_account(dst, p, now)
        arrive = now + self.delay
        heapq.heappush(self._heap, (arrive, next(self._seq), 3, src, dst, c.piece_data(p, off, length)))
        if self.trace is not None:
            self.trace.append((now, "flow_end", src, dst, p, off, 0))
        if link.deferred:
            for msg in link.deferred:
                heapq.heappush(self._heap, (arrive, next(self._seq), 0, src, dst, msg))
            link.deferred.clear()
        self._kick(link, now)
        if link.req is None:
            self._reschedule(up, now)

    def _seed_account(self, leecher: int, p: int, now: float) -> None:
        key = (leecher, p)
        got = self._seed_progress.get(key, 0) + 1
        if got < self._sub_counts[p]:
            self._seed_progress[key] = got
            return
        self._seed_progress.pop(key, None)
        first = p not in self._seed_uploaded
        if first:
            self._seed_uploaded.add(p)
        self.seed_piece_log.append((now, p, first))

    def _abort_uplink(self, pid: int, now: float) -> None:
        up = self.uplinks[pid]
        up.advance(now)
        for link in up.active:
            link.req = None
        up.active.clear()
        up.msum = 0.0
        up.version += 1

    def _abort_link(self, link: _Link, now: float) -> None:
        link.dead = True
        link.deferred.clear()
        if link.req is None:
            return
        up = self.uplinks[link.sender]
        up.advance(now)
        up.active.remove(link)
        up.msum = sum(l.mult for l in up.active)
        link.req = None
        self._reschedule(up, now)

    def _depart(self, pid: int, now: float) -> None:
        peer = self.peers[pid]
        self.completion[pid] = now
        self.remaining_leechers -= 1
        self._abort_uplink(pid, now)
        for other in peer.conns:
            self.links[(pid, other)].dead = True
            self.links[(pid, other)].deferred.clear()
        recips = list(peer.conns)
        if recips:
            self._push(now + self.delay, EventKind.PEER_DEPARTED, pid, recips, None)

    # -- main loop ---------------------------------------------------------

    def run(self) -> MetricsBundle:
        if self.leecher_ids:
            self._start()
        heap = self._heap
        peers = self.peers
        pop = heapq.heappop
        shared = self.shared
        view = peers[SEED_ID].view
        emit = self._emit
        trace = self.trace
        horizon = self.cfg.horizon
        HAVE = MessageKind.HAVE
        REQUEST = MessageKind.REQUEST
        BITFIELD = MessageKind.BITFIELD
        links = self.links
        n = 0
        while heap and self.remaining_leechers > 0:
            ev = pop(heap)
            now, _, kind, a, b, payload = ev
            if now > horizon:
                raise SimulationStalled(self._diagnostic(now))
            self.now = now
            n += 1
            if kind == 2:  # flow end; a=uplink, b=version, payload=link
                if b == a.version:
                    self._flow_end(a, payload, now)
                continue
            if kind == 1:  # multicast
                msg = payload
                if shared and msg.kind is HAVE:
                    p = msg.piece
                    view.on_have(a, p)
                    for r in b:
                        peer = peers[r]
                        if not peer.connected:
                            self.dropped += 1
                        elif a in peer.listening:
                            out = peer.on_announcement(a, p)
                            if out:
                                emit(r, out, now)
                    continue
                if shared and msg.kind is BITFIELD:
                    view.on_bitfield(a, msg.bits)
                    for r in b:
                        peer = peers[r]
                        if not peer.connected:
                            self.dropped += 1
                            continue
                        out = peer.on_bitfield_announcement(a)
                        if out:
                            emit(r, out, now)
                    continue
                for r in b:
                    peer = peers[r]
                    if not peer.connected or a not in peer.conns:
                        self.dropped += 1
                        continue
                    out = peer.handle_message(a, msg, now)
                    if out:
                        emit(r, out, now)
                continue
            if kind == 0 or kind == 3:
                peer = peers[b]
                if not peer.connected or a not in peer.conns:
                    self.dropped += 1
                    if kind == 3:
                        self.dropped_bytes += payload.length
                    continue
                if trace is not None:
                    trace.append(
                        (now, payload.kind.value, a, b, payload.piece, payload.offset, payload.epoch)
                    )
                if kind == 3:
                    self.delivered_bytes += payload.length
                out = peer.handle_message(a, payload, now)
                if out:
                    emit(b, out, now)
                if kind == 3:
                    if not peer.connected:
                        self._depart(b, now)
                elif payload.kind is REQUEST:
                    self._kick(links[(b, a)], now)
                continue
            if kind == 4:
                peer = peers[a]
                if peer.connected:
                    out = peer.rechoke(now)
                    if out:
                        emit(a, out, now)
                    self._push(now + self.cfg.choke.rechoke_period, 4, a, None, None)
                continue
            if kind == 6:
                for r in b:
                    peer = peers[r]
                    if not peer.connected:
                        continue
                    out = peer.handle_departure(a, now)
                    self._abort_link(links[(r, a)], now)
                    if out:
                        emit(r, out, now)
                continue
            if kind == 5:
                held = sum(peers[i].have_count for i in self.leecher_ids)
                self.progress.append((now, held))
                self._push(now + self.cfg.metric_window, 5, None, None, None)
                continue
        self.events_processed = n
        for pid in list(self.uplinks):
            self.uplinks[pid].advance(self.now)
        return self._bundle()

    def link_gaps(self) -> dict[tuple[int, int], list[tuple[float, float, int, int]]]:
        """Idle periods between consecutive flows on each link (``track_gaps``)."""
        return {k: list(l.gaps) for k, l in self.links.items() if l.gaps}

    def _diagnostic(self, now: float) -> str:
        lines = [f"simulated time {now:.1f}s passed horizon {self.cfg.horizon:.1f}s"]
        for pid in self.leecher_ids:
            peer = self.peers[pid]
            if peer.connected:
                lines.append(
                    f"  leecher {pid}: {peer.have_count}/{self.spec.piece_count} pieces, "
                    f"unchoked by {sum(not cc.peer_choking for cc in peer.conns.values())}"
                )
        lines.append(f"  {len(self._heap)} queued events, next: {sorted(self._heap)[:5]}")
        return "\n".join(lines)

    def _bundle(self) -> MetricsBundle:
        leecher_caps = {i: self.caps[i] for i in self.leecher_ids}
        util = utilization_series(self.log, leecher_caps, self.completion, self.cfg.metric_window)
        spec = self.spec
        dup = sum(p.duplicate_bytes for p in self.peers.values())
        return MetricsBundle(
            content_size=spec.content_size,
            piece_size=spec.piece_size,
            leecher_caps=leecher_caps,
            completion_times=dict(sorted(self.completion.items())),
            departure_times=dict(sorted(self.completion.items())),
            utilization=util,
            seed_piece_log=self.seed_piece_log,
            traffic=self.traffic,
            # payload that arrived at a live peer, less endgame duplicates
            delivered_bytes=self.delivered_bytes - dup,
            duplicate_bytes_received=dup,
            dropped_deliveries=self.dropped,
            dropped_bytes=self.dropped_bytes,
            max_outstanding=max((p.max_outstanding for p in self.peers.values()), default=0),
            span_violations=sum(p.span_violations for p in self.peers.values()),
            all_complete=all(self.peers[i].complete for i in self.leecher_ids),
            end_time=self.now,
            events_processed=self.events_processed,
            seed_ids=[SEED_ID],
        )


def _finish_key(link: _Link) -> float:
    return link.finish_v


def run(cfg: SimConfig, rng_seed: int = 0) -> MetricsBundle:
    return Simulation(cfg, rng_seed).run()

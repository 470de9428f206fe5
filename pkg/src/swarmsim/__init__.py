"""Discrete-event BitTorrent swarm simulator for piece-size experiments."""

from .content import KB, MB, TorrentSpec, metainfo_size, message_wire_size, subpiece_layout
from .engine import LinkModel, SimConfig, Simulation, SimulationStalled, run
from .metrics import MetricsBundle, RunAggregate, aggregate
from .protocol import ChokeConfig, OrderMode, PeerState, Role

__all__ = [
    "KB",
    "MB",
    "ChokeConfig",
    "LinkModel",
    "MetricsBundle",
    "OrderMode",
    "PeerState",
    "Role",
    "RunAggregate",
    "SimConfig",
    "Simulation",
    "SimulationStalled",
    "TorrentSpec",
    "aggregate",
    "message_wire_size",
    "metainfo_size",
    "run",
    "subpiece_layout",
]

__version__ = "0.1.0"

"""Node registry: heartbeats, failure detection, failure injection.

Nodes only ever transition ALIVE -> DEAD. A machine that comes back must
register again and gets a fresh id, so block accounting never resurrects
stale replicas. Failure listeners (block re-replication, task rescheduling)
run synchronously before detect_failures/inject_node_failure returns, but
outside the registry lock so they may take their own locks freely.
"""

from __future__ import annotations

import logging
import threading
import time
from typing import Callable, Iterable

from .errors import AlreadyDead, BadRequest, UnknownNode
from .models import NodeId, NodeInfo, NodeState

log = logging.getLogger(__name__)


class Cluster:
    def __init__(self, heartbeat_timeout_ms: int = 5000,
                 clock: Callable[[], float] = time.monotonic):
        self._timeout = heartbeat_timeout_ms / 1000.0
        self._clock = clock
        self._lock = threading.RLock()
        self._nodes: dict[NodeId, NodeInfo] = {}
        self._next_id = 1
        self._failure_listeners: list[Callable[[NodeId], None]] = []

    # -- registration / info --

    def register_node(self, capacity: int) -> NodeId:
        if capacity < 1:
            raise BadRequest(f"capacity must be >= 1, got {capacity}")
        with self._lock:
            node_id = self._next_id
            self._next_id += 1
            self._nodes[node_id] = NodeInfo(
                id=node_id, state=NodeState.ALIVE,
                last_heartbeat=self._clock(), capacity=capacity)
            return node_id

    def list_nodes(self) -> list[NodeInfo]:
        with self._lock:
            return sorted(self._nodes.values(), key=lambda n: n.id)

    def live_nodes(self) -> list[NodeId]:
        with self._lock:
            return sorted(n.id for n in self._nodes.values()
                          if n.state is NodeState.ALIVE)

    def is_alive(self, node: NodeId) -> bool:
        with self._lock:
            info = self._nodes.get(node)
            return info is not None and info.state is NodeState.ALIVE

    def capacity(self, node: NodeId) -> int:
        with self._lock:
            return self._node(node).capacity

    def _node(self, node: NodeId) -> NodeInfo:
        info = self._nodes.get(node)
        if info is None:
            raise UnknownNode(f"node {node} is not registered")
        return info

    # -- liveness --

    def heartbeat(self, node: NodeId) -> None:
        with self._lock:
            info = self._node(node)
            # No resurrection: a DEAD node's heartbeat refreshes nothing.
            if info.state is NodeState.DEAD:
                return
            info.last_heartbeat = self._clock()

    def heartbeat_all(self) -> None:
        """Driver convenience: refresh every live node (simulated self-heartbeat)."""
        with self._lock:
            now = self._clock()
            for info in self._nodes.values():
                if info.state is NodeState.ALIVE:
                    info.last_heartbeat = now

    def detect_failures(self, now: float | None = None) -> list[NodeId]:
        with self._lock:
            if now is None:
                now = self._clock()
            newly_dead = []
            for info in self._nodes.values():
                if (info.state is NodeState.ALIVE
                        and now - info.last_heartbeat > self._timeout):
                    info.state = NodeState.DEAD
                    newly_dead.append(info.id)
            newly_dead.sort()
        for node in newly_dead:
            self._notify_failure(node)
        return newly_dead

    def inject_node_failure(self, node: NodeId) -> None:
        with self._lock:
            info = self._node(node)
            if info.state is NodeState.DEAD:
                raise AlreadyDead(f"node {node} is already DEAD")
            info.state = NodeState.DEAD
        self._notify_failure(node)

    # -- failure propagation --

    def add_failure_listener(self, fn: Callable[[NodeId], None]) -> None:
        self._failure_listeners.append(fn)

    def _notify_failure(self, node: NodeId) -> None:
        log.warning("node %d marked DEAD", node)
        for fn in self._failure_listeners:
            fn(node)

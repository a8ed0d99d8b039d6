"""Central mediator: session registry and graph-driven routing."""

from __future__ import annotations

import itertools
import logging
import threading
from dataclasses import dataclass, field, replace
from typing import Callable

from .broker import Broker
from .core import PORTS, GraphError, Message, SessionGraph, SessionId, validate_graph

logger = logging.getLogger(__name__)

USER_OUT = "user-out"


class SessionError(RuntimeError):
    """Unknown, closing or closed session, or a message the graph cannot carry."""


def component_topic(component: str) -> str:
    return f"{component}-in"


@dataclass
class SessionRecord:
    graph: SessionGraph
    created_at: float
    state: str = "open"  # open | closing | closed
    pending_eos: set[tuple[str, str]] = field(default_factory=set)


class Mediator:
    """Registers sessions and forwards every message along its graph edges.

    ``workers`` maps a component name to the worker ids of its consumer group;
    topics are provisioned on first use with one partition per worker.
    """

    def __init__(
        self,
        broker: Broker,
        workers: dict[str, list[str]] | None = None,
        clock: Callable[[], float] | None = None,
        id_prefix: str = "s",
    ) -> None:
        self.broker = broker
        self.workers = workers or {}
        self.clock = clock or (lambda: 0.0)
        self.sessions: dict[SessionId, SessionRecord] = {}
        self._ids = itertools.count(1)
        self._id_prefix = id_prefix
        self._seq: dict[tuple[SessionId, str], int] = {}
        self._lock = threading.Lock()
        self._closed_listeners: list[Callable[[SessionId], None]] = []
        if not broker.has_topic(USER_OUT):
            broker.create_topic(USER_OUT, 1, ["gateway"])

    def on_closed(self, callback: Callable[[SessionId], None]) -> None:
        self._closed_listeners.append(callback)

    def create_session(self, graph: SessionGraph, session_id: SessionId | None = None) -> SessionId:
        validate_graph(graph)
        with self._lock:
            if session_id is None:
                session_id = f"{self._id_prefix}{next(self._ids):04d}"
            if session_id in self.sessions:
                raise SessionError(f"session {session_id!r} already exists")
            sinks = {n.id for n in graph.nodes if n.kind == "gateway_out"}
            self.sessions[session_id] = SessionRecord(
                graph, self.clock(),
                pending_eos={e for e in graph.edges if e[1] in sinks},
            )
        for n in graph.nodes:
            if n.kind in ("speech", "text"):
                topic = component_topic(n.component)
                if not self.broker.has_topic(topic):
                    ws = self.workers.get(n.component, [f"{n.component}-w0"])
                    self.broker.create_topic(topic, len(ws), ws)
        logger.debug("created session %s", session_id)
        return session_id

    def graph(self, session: SessionId) -> SessionGraph:
        return self._record(session).graph

    def state(self, session: SessionId) -> str:
        return self._record(session).state

    def is_closed(self, session: SessionId) -> bool:
        return self._record(session).state == "closed"

    def route(self, message: Message) -> list[tuple[str, Message]]:
        """Deliver ``message`` on every outgoing edge of its producing node.

        A message without ``source`` is treated as user input from the
        graph's ``gateway_in`` node. Returns the ``(topic, message)`` pairs
        that were published.
        """
        rec = self._record(message.session)
        g = rec.graph
        if not message.source:
            src = next(n.id for n in g.nodes if n.kind == "gateway_in")
            message = replace(message, source=src)
        try:
            node = g.node(message.source)
        except KeyError:
            raise SessionError(f"unknown source node {message.source!r}") from None
        if rec.state == "closed":
            raise SessionError(f"session {message.session!r} is closed")
        if node.kind == "gateway_in" and rec.state != "open" and not message.eos:
            raise SessionError(f"session {message.session!r} accepts no further input")
        out_kind = PORTS[node.kind][1]
        if out_kind is None or (message.kind != out_kind and not message.eos):
            raise SessionError(
                f"{message.kind} message cannot leave {node.kind} node {node.id!r}"
            )

        deliveries: list[tuple[str, Message]] = []
        done = False
        for dst_id in g.successors(node.id):
            dst = g.node(dst_id)
            topic = USER_OUT if dst.kind == "gateway_out" else component_topic(dst.component)
            with self._lock:
                key = (message.session, topic)
                seq = self._seq.get(key, 0)
                self._seq[key] = seq + 1
            delivered = replace(message, seq=seq)
            self.broker.publish(topic, delivered)
            deliveries.append((topic, delivered))
            if message.eos and dst.kind == "gateway_out":
                with self._lock:
                    rec.pending_eos.discard((node.id, dst_id))
                    if not rec.pending_eos and rec.state == "closing":
                        rec.state = "closed"
                        done = True
        if done:
            logger.debug("session %s closed", message.session)
            for cb in self._closed_listeners:
                cb(message.session)
        return deliveries

    def close_session(self, session: SessionId) -> list[tuple[str, Message]]:
        """Route an end-of-stream marker from the gateway; the session closes
        once the marker has reached every sink edge."""
        rec = self._record(session)
        with self._lock:
            if rec.state != "open":
                raise SessionError(f"session {session!r} is already {rec.state}")
            rec.state = "closing"
        t = self.clock()
        src = next(n.id for n in rec.graph.nodes if n.kind == "gateway_in")
        eos = Message(session, "audio", (), True, t, t, t, source=src, eos=True)
        return self.route(eos)

    def _record(self, session: SessionId) -> SessionRecord:
        try:
            return self.sessions[session]
        except KeyError:
            raise SessionError(f"unknown session {session!r}") from None


__all__ = ["Mediator", "SessionError", "USER_OUT", "component_topic", "GraphError"]

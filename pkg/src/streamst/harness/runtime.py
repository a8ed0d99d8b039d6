"""Simulated deployment: broker, mediator, middleware workers and batching
backends wired onto one :class:`VirtualClock`.

A worker drains everything queued on its partitions, then handles the
drained sessions one after another. Handling a session costs middleware CPU
time and blocks on each backend request until the batching server answers.
The middleware runs eagerly against a recording backend; its calls are then
replayed through the server, and every emitted message is released at the
completion time of the last call that preceded it.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable

from ..backend import (
    DEFAULT_COSTS,
    BackendRequest,
    BatchingServer,
    ContractViolation,
    CostModel,
    Decoder,
    TimedHypothesis,
)
from ..broker import Broker
from ..core import FRAME_S, AudioFrame, Message, Node, SessionGraph, SessionId
from ..mediator import USER_OUT, Mediator, component_topic
from ..speech import La2Config, SpeechMiddleware, VadConfig
from ..text import TextMiddleware
from .clock import VirtualClock

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RuntimeConfig:
    workers: int = 1
    cpu_step_s: float = 0.01
    cpu_per_message_s: float = 0.002
    packet_frames: int = 4
    max_batch: int = 8
    replicas: int = 1
    chunk_size_s: float = 1.0
    max_input_s: float = 20.0
    trigger_words: int = 1
    vad: VadConfig = field(default_factory=VadConfig)
    costs: dict[str, CostModel] = field(default_factory=lambda: dict(DEFAULT_COSTS))

    def __post_init__(self) -> None:
        if min(self.workers, self.packet_frames, self.max_batch, self.replicas) < 1:
            raise ValueError("workers, packet_frames, max_batch and replicas must be >= 1")
        if self.cpu_step_s < 0 or self.cpu_per_message_s < 0:
            raise ValueError("cpu costs must be >= 0")


class RecordingBackend:
    """Pass-through decoder that remembers every request and response."""

    def __init__(self, model: Decoder) -> None:
        self.model = model
        self.calls: list[tuple[BackendRequest, TimedHypothesis]] = []

    def __call__(self, request: BackendRequest) -> TimedHypothesis:
        resp = self.model(request)
        self.calls.append((request, resp))
        return resp


class Worker:
    def __init__(self, runtime: Runtime, component: str, wid: str, middleware) -> None:
        self.rt = runtime
        self.component = component
        self.id = wid
        self.topic = component_topic(component)
        self.middleware = middleware
        self.busy = False
        self.drains = 0
        self._todo: list[tuple[SessionId, list[Message]]] = []

    def notify(self) -> None:
        if not self.busy:
            self.busy = True
            self.rt.clock.call_later(0.0, self._drain)

    def _drain(self) -> None:
        msgs = self.rt.broker.poll_pending(self.id, self.topic)
        if not msgs:
            self.busy = False
            return
        self.drains += 1
        by_session: dict[SessionId, list[Message]] = {}
        for m in msgs:
            by_session.setdefault(m.session, []).append(m)
        self._todo = list(by_session.items())
        self._next()

    def _next(self) -> None:
        if not self._todo:
            self.rt.clock.call_later(0.0, self._drain)
            return
        sid, msgs = self._todo.pop(0)
        node = self.rt.node_for(sid, self.component)
        rec = RecordingBackend(self.rt.models[node.backend])
        emitted: list[tuple[int, Message]] = []
        self.middleware.process(sid, node, msgs, rec, lambda m: emitted.append((len(rec.calls), m)))
        cpu = self.rt.cfg.cpu_step_s + self.rt.cfg.cpu_per_message_s * len(msgs)
        self.rt.clock.call_later(cpu, lambda: self._advance(sid, rec.calls, emitted, 0))

    def _advance(self, sid, calls, emitted, done: int) -> None:
        while emitted and emitted[0][0] <= done:
            _, m = emitted.pop(0)
            self.rt.emit(replace(m, t_r=self.rt.session_time(sid)))
        if done == len(calls):
            self._next()
            return
        req, expected = calls[done]

        def on_reply(resp: TimedHypothesis) -> None:
            if resp != expected:
                raise ContractViolation(f"backend replied differently to a replayed request of {sid!r}")
            self._advance(sid, calls, emitted, done + 1)

        self.rt.servers[req.kind].submit(req, on_reply)


class Runtime:
    """One simulated deployment serving many sessions."""

    def __init__(self, cfg: RuntimeConfig, models: dict[str, Decoder],
                 clock: VirtualClock | None = None) -> None:
        self.cfg = cfg
        self.clock = clock or VirtualClock()
        self.models = models
        self.broker = Broker()
        components = ("asr", "mt", "st")
        self.worker_ids = {c: [f"{c}-w{i}" for i in range(cfg.workers)] for c in components}
        self.mediator = Mediator(self.broker, self.worker_ids, self.clock.now)
        self.servers = {
            kind: BatchingServer(self.clock, model, cfg.costs[kind], cfg.max_batch, cfg.replicas)
            for kind, model in models.items()
        }
        self.workers: dict[str, Worker] = {}
        self.offsets: dict[SessionId, float] = {}
        self.received: dict[SessionId, list[Message]] = defaultdict(list)
        self._closed_cbs: list[Callable[[SessionId], None]] = []
        self._subscribed: set[str] = set()
        self._sinks: list[Callable[[Message], None]] = []
        self.broker.subscribe(USER_OUT, lambda w, p: self._deliver())
        self.mediator.on_closed(self._on_closed)

    # wiring

    def _middleware(self, node: Node):
        la2 = La2Config(self.cfg.chunk_size_s, node.mode, self.cfg.max_input_s)
        if node.kind == "speech":
            return SpeechMiddleware(node.component, node.backend, self.cfg.vad, la2)
        return TextMiddleware(node.component, self.cfg.trigger_words)

    def _ensure_workers(self, graph: SessionGraph) -> None:
        for node in graph.nodes:
            if node.kind not in ("speech", "text"):
                continue
            topic = component_topic(node.component)
            for wid in self.worker_ids[node.component]:
                if wid not in self.workers:
                    self.workers[wid] = Worker(self, node.component, wid, self._middleware(node))
            if topic not in self._subscribed:
                self._subscribed.add(topic)
                self.broker.subscribe(topic, lambda w, p: self.workers[w].notify())

    def node_for(self, session: SessionId, component: str) -> Node:
        for n in self.mediator.graph(session).nodes:
            if n.component == component:
                return n
        raise KeyError(component)

    def session_time(self, session: SessionId) -> float:
        return self.clock.now() - self.offsets[session]

    def on_closed(self, cb: Callable[[SessionId], None]) -> None:
        self._closed_cbs.append(cb)

    def _on_closed(self, session: SessionId) -> None:
        for cb in self._closed_cbs:
            cb(session)

    # traffic

    def open_session(self, graph: SessionGraph, session_id: SessionId | None = None) -> SessionId:
        sid = self.mediator.create_session(graph, session_id)
        self.offsets[sid] = self.clock.now()
        self._ensure_workers(graph)
        return sid

    def emit(self, message: Message) -> None:
        self.mediator.route(message)

    def add_sink(self, cb: Callable[[Message], None]) -> None:
        """Call ``cb`` with every message delivered to the user, in order."""
        self._sinks.append(cb)

    def _deliver(self) -> None:
        for m in self.broker.poll_pending("gateway", USER_OUT):
            self.received[m.session].append(m)
            for cb in self._sinks:
                cb(m)

    def send_audio(self, session: SessionId, frames: list[AudioFrame], t_s: float) -> None:
        t_e = t_s + len(frames) * FRAME_S
        self.emit(Message(session, "audio", tuple(frames), True, t_s, t_e, self.session_time(session)))

    def close(self, session: SessionId) -> None:
        self.mediator.close_session(session)

    def stream(self, session: SessionId, frames: list[AudioFrame]) -> None:
        """Pace ``frames`` at real time from now, sending ``packet_frames`` per
        packet as soon as the packet's audio is complete, then close."""
        k = self.cfg.packet_frames
        packets = [frames[i:i + k] for i in range(0, len(frames), k)]
        start = self.clock.now()
        offset = 0
        for pkt in packets:
            pkt_start = offset * FRAME_S
            offset += len(pkt)
            self.clock.call_at(start + offset * FRAME_S,
                               lambda p=pkt, ts=pkt_start: self.send_audio(session, p, ts))
        self.clock.call_at(start + offset * FRAME_S, lambda: self.close(session))

    def user_messages(self, session: SessionId, node_id: str) -> list[Message]:
        return [m for m in self.received[session] if m.source == node_id and not m.eos]

    # stats

    def middleware_stat(self, component: str, name: str) -> int:
        return sum(getattr(w.middleware, name) for w in self.workers.values()
                   if w.component == component)

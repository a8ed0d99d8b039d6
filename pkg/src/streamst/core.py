"""Shared domain types, token helpers and session-graph validation."""

from __future__ import annotations

import graphlib
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence, Union

SessionId = Union[str, int]
Token = str

FRAME_S = 0.03
SAMPLE_RATE = 16000
FRAME_SAMPLES = 480
SILENCE_LABEL = None

Kind = Literal["audio", "text"]

# node kind -> (input port kind, output port kind); None means no port
PORTS: dict[str, tuple[str | None, str | None]] = {
    "gateway_in": (None, "audio"),
    "speech": ("audio", "text"),
    "text": ("text", "text"),
    "gateway_out": ("text", None),
}


class GraphError(ValueError):
    """A session graph violates an invariant."""


@dataclass(frozen=True)
class AudioFrame:
    """One 30 ms frame of 16 kHz mono PCM.

    ``label`` is the synthetic token whose audio ends in this frame (mock
    corpus channel); ``speech`` is the per-frame speech/non-speech flag that
    travels with the audio in place of an acoustic classifier.
    """

    pcm: bytes = b""
    label: Token | None = SILENCE_LABEL
    speech: bool = False

    @property
    def duration(self) -> float:
        return FRAME_S

    @property
    def samples(self):
        import numpy as np

        return np.frombuffer(self.pcm, dtype="<i2")


@dataclass(frozen=True)
class Message:
    """A unit of pipeline traffic.

    Timestamps are seconds on the per-session clock: ``t_s``/``t_e`` bound the
    aligned audio segment and ``t_r`` is the time the message was emitted or
    received. ``source`` names the graph node that produced the message.
    """

    session: SessionId
    kind: Kind
    payload: tuple = ()
    stable: bool = True
    t_s: float = 0.0
    t_e: float = 0.0
    t_r: float = 0.0
    seq: int = 0
    source: str = ""
    eos: bool = False

    def __post_init__(self) -> None:
        if self.t_s > self.t_e:
            raise ValueError(f"t_s {self.t_s} > t_e {self.t_e}")

    @property
    def tokens(self) -> tuple[Token, ...]:
        if self.kind != "text":
            raise TypeError("audio messages carry no tokens")
        return self.payload

    @property
    def text(self) -> str:
        return " ".join(self.payload) if self.kind == "text" else ""


@dataclass(frozen=True)
class Node:
    """A component descriptor in a session graph.

    ``component`` names the shared component instance (and hence its input
    topic), e.g. ``"asr"``, ``"mt"`` or ``"st"``. ``mode`` is ``fixed`` or
    ``revision`` for middleware nodes.
    """

    id: str
    kind: str
    component: str = ""
    mode: str = "fixed"
    backend: str = ""


@dataclass(frozen=True)
class SessionGraph:
    nodes: tuple[Node, ...]
    edges: tuple[tuple[str, str], ...] = field(default=())

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def successors(self, node_id: str) -> list[str]:
        return [dst for src, dst in self.edges if src == node_id]

    def predecessors(self, node_id: str) -> list[str]:
        return [src for src, dst in self.edges if dst == node_id]

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"id": n.id, "kind": n.kind, "component": n.component,
                 "mode": n.mode, "backend": n.backend}
                for n in self.nodes
            ],
            "edges": [list(e) for e in self.edges],
        }

    @classmethod
    def from_dict(cls, data: dict) -> SessionGraph:
        nodes = tuple(
            Node(
                id=str(n["id"]),
                kind=str(n["kind"]),
                component=str(n.get("component", "")),
                mode=str(n.get("mode", "fixed")),
                backend=str(n.get("backend", "")),
            )
            for n in data["nodes"]
        )
        edges = tuple((str(a), str(b)) for a, b in data.get("edges", ()))
        return cls(nodes, edges)


def common_token_prefix(a: Sequence[Token], b: Sequence[Token]) -> list[Token]:
    """Longest common prefix of two token sequences (exact, case-sensitive)."""
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return list(a[:n])


def tokenize(text: str) -> list[Token]:
    return text.split()


def validate_graph(g: SessionGraph) -> None:
    """Raise :class:`GraphError` unless ``g`` is a well-formed session graph.

    Checks: unique node ids, known node kinds, no dangling edges, port-type
    compatibility on every edge, exactly one ``gateway_in`` source, at least
    one ``gateway_out`` sink, and acyclicity.
    """
    ids = [n.id for n in g.nodes]
    seen: set[str] = set()
    for node_id in ids:
        if node_id in seen:
            raise GraphError(f"duplicate node id {node_id!r}")
        seen.add(node_id)
    for n in g.nodes:
        if n.kind not in PORTS:
            raise GraphError(f"node {n.id!r} has unknown kind {n.kind!r}")
        if n.kind in ("speech", "text"):
            if n.mode not in ("fixed", "revision"):
                raise GraphError(f"node {n.id!r} has unknown mode {n.mode!r}")
            if not n.component:
                raise GraphError(f"node {n.id!r} names no component")

    kinds = {n.id: n.kind for n in g.nodes}
    for src, dst in g.edges:
        if src not in kinds or dst not in kinds:
            raise GraphError(f"dangling edge {src!r}->{dst!r}")
        out_port = PORTS[kinds[src]][1]
        in_port = PORTS[kinds[dst]][0]
        if out_port is None or in_port is None or out_port != in_port:
            raise GraphError(
                f"port-type mismatch on edge {src!r}->{dst!r}: "
                f"{kinds[src]} emits {out_port}, {kinds[dst]} accepts {in_port}"
            )

    sources = [n.id for n in g.nodes if n.kind == "gateway_in"]
    if len(sources) != 1:
        raise GraphError(f"expected exactly one gateway_in node, found {len(sources)}")
    if not any(n.kind == "gateway_out" for n in g.nodes):
        raise GraphError("graph has no gateway_out sink")

    sorter = graphlib.TopologicalSorter({i: set() for i in ids})
    for src, dst in g.edges:
        sorter.add(dst, src)
    try:
        tuple(sorter.static_order())
    except graphlib.CycleError as exc:
        cycle = exc.args[1]
        raise GraphError(f"cycle detected through nodes {cycle}") from None

    for n in g.nodes:
        if n.kind in ("speech", "text") and not g.predecessors(n.id):
            raise GraphError(f"node {n.id!r} is unreachable (no input edge)")


def cascaded_graph(asr_mode: str = "fixed", mt_mode: str | None = None) -> SessionGraph:
    """gateway -> ASR -> MT -> gateway, with the transcript also sent to the user."""
    mt_mode = mt_mode or asr_mode
    return SessionGraph(
        nodes=(
            Node("in", "gateway_in"),
            Node("asr", "speech", component="asr", mode=asr_mode, backend="asr"),
            Node("mt", "text", component="mt", mode=mt_mode, backend="mt"),
            Node("out", "gateway_out"),
        ),
        edges=(("in", "asr"), ("asr", "out"), ("asr", "mt"), ("mt", "out")),
    )


def e2e_graph(mode: str = "fixed") -> SessionGraph:
    """gateway -> ST -> gateway."""
    return SessionGraph(
        nodes=(
            Node("in", "gateway_in"),
            Node("st", "speech", component="st", mode=mode, backend="st"),
            Node("out", "gateway_out"),
        ),
        edges=(("in", "st"), ("st", "out")),
    )


def translation_node(g: SessionGraph) -> str:
    """Id of the node whose output is the final translation (last before the sink)."""
    order = _topological(g)
    mids = [i for i in order if g.node(i).kind in ("speech", "text")]
    return mids[-1]


def transcript_node(g: SessionGraph) -> str | None:
    """Id of the ASR node in a cascaded graph, else None."""
    for n in g.nodes:
        if n.kind == "speech" and n.backend == "asr":
            return n.id
    return None


def _topological(g: SessionGraph) -> list[str]:
    sorter = graphlib.TopologicalSorter({n.id: set() for n in g.nodes})
    for src, dst in g.edges:
        sorter.add(dst, src)
    return list(sorter.static_order())


def join(tokens: Iterable[Token]) -> str:
    return " ".join(tokens)

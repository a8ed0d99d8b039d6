"""Line-delimited JSON session protocol.

Client records::

    {"op": "create", "graph": {...}}            or {"op": "create", "preset": "e2e", "mode": "revision"}
    {"op": "audio", "session": "s0001", "pcm": "<base64 int16 LE>", "speech": "1110...",
     "labels": [null, "a3", ...], "t": 0.12}
    {"op": "eos", "session": "s0001"}

Server records::

    {"op": "created", "session": "s0001"}
    {"op": "output", "session": ..., "node": ..., "seq": ..., "stable": ..., "t_s": ..., "t_e": ..., "t_r": ..., "text": ...}
    {"op": "closed", "session": "s0001"}
    {"op": "error", "session": ..., "error": "..."}

``pcm`` holds whole 30 ms frames of 16 kHz mono PCM (960 bytes each);
``speech`` has one ``0``/``1`` flag per frame (a JSON list of booleans is also
accepted). ``labels`` is the optional mock-model channel and ``t`` the
session time of the first frame (defaults to the end of the previous audio
record). Unknown fields are ignored.
"""

from __future__ import annotations

import asyncio
import base64
import binascii
import json
import logging
import sys
from dataclasses import dataclass, field
from typing import Callable, Iterable, TextIO

from .core import FRAME_S, FRAME_SAMPLES, AudioFrame, GraphError, Message, SessionGraph, cascaded_graph, e2e_graph
from .eval.report import message_record, record_message
from .harness.clock import AsyncioClock, VirtualClock
from .harness.runtime import Runtime, RuntimeConfig
from .mediator import SessionError

logger = logging.getLogger(__name__)

FRAME_BYTES = 2 * FRAME_SAMPLES
CLIENT_OPS = ("create", "audio", "eos")
SERVER_OPS = ("created", "output", "closed", "error")


class ProtocolError(ValueError):
    """A malformed client record."""


@dataclass
class WireRecord:
    op: str
    session: str | None = None
    payload: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, line: str | bytes | dict) -> WireRecord:
        if isinstance(line, dict):
            data = line
        else:
            try:
                data = json.loads(line)
            except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                raise ProtocolError(f"not a JSON record: {exc}") from None
        if not isinstance(data, dict) or not isinstance(data.get("op"), str):
            raise ProtocolError("record must be an object with a string 'op'")
        payload = {k: v for k, v in data.items() if k not in ("op", "session")}
        session = data.get("session")
        return cls(data["op"], None if session is None else str(session), payload)

    def to_dict(self) -> dict:
        d = {"op": self.op}
        if self.session is not None:
            d["session"] = self.session
        d.update(self.payload)
        return d

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def encode_frames(frames: Iterable[AudioFrame], with_labels: bool = True) -> dict:
    """Audio-record payload for ``frames``."""
    frames = list(frames)
    pcm = b"".join(f.pcm if len(f.pcm) == FRAME_BYTES else bytes(FRAME_BYTES) for f in frames)
    out = {
        "pcm": base64.b64encode(pcm).decode("ascii"),
        "speech": "".join("1" if f.speech else "0" for f in frames),
    }
    if with_labels:
        out["labels"] = [f.label for f in frames]
    return out


def decode_frames(payload: dict) -> list[AudioFrame]:
    try:
        pcm = base64.b64decode(payload["pcm"], validate=True)
    except KeyError:
        raise ProtocolError("audio record needs 'pcm'") from None
    except (binascii.Error, TypeError, ValueError):
        raise ProtocolError("'pcm' is not valid base64") from None
    if len(pcm) % FRAME_BYTES:
        raise ProtocolError(f"pcm length {len(pcm)} is not a whole number of 30 ms frames")
    n = len(pcm) // FRAME_BYTES
    flags = payload.get("speech")
    if isinstance(flags, str):
        if set(flags) - {"0", "1"}:
            raise ProtocolError("'speech' string may only contain 0 and 1")
        flags = [c == "1" for c in flags]
    elif isinstance(flags, list):
        flags = [bool(f) for f in flags]
    else:
        raise ProtocolError("audio record needs per-frame 'speech' flags")
    if len(flags) != n:
        raise ProtocolError(f"{len(flags)} speech flags for {n} frames")
    labels = payload.get("labels") or [None] * n
    if len(labels) != n:
        raise ProtocolError(f"{len(labels)} labels for {n} frames")
    return [
        AudioFrame(pcm[i * FRAME_BYTES:(i + 1) * FRAME_BYTES], labels[i], flags[i])
        for i in range(n)
    ]


def output_record(m: Message) -> dict:
    return {"op": "output", **message_record(m)}


def parse_output(rec: dict) -> Message:
    """Inverse of :func:`output_record`."""
    return record_message(rec)


def _error(session, msg: str) -> dict:
    return {"op": "error", "session": session, "error": msg}


class Gateway:
    """Protocol front of one :class:`Runtime`.

    Responses to a client record are returned by :meth:`handle_record`;
    output and ``closed`` records are pushed to the session's subscriber as
    the mediator delivers them.
    """

    def __init__(self, runtime: Runtime, push: Callable[[dict], None] | None = None) -> None:
        self.rt = runtime
        self.push = push or (lambda rec: None)
        self._next_t: dict[str, float] = {}
        self._ended: set[str] = set()
        self._subscribers: dict[str, Callable[[dict], None]] = {}
        runtime.add_sink(self._on_output)
        runtime.on_closed(self._on_closed)

    def _send(self, session, rec: dict) -> None:
        self._subscribers.get(session, self.push)(rec)

    def _on_output(self, m: Message) -> None:
        if not m.eos:
            self._send(m.session, output_record(m))

    def _on_closed(self, session) -> None:
        self._send(session, {"op": "closed", "session": session})

    def handle_record(self, record: str | bytes | dict,
                      subscriber: Callable[[dict], None] | None = None) -> list[dict]:
        try:
            rec = WireRecord.parse(record)
            handler = {"create": self._create, "audio": self._audio, "eos": self._eos}.get(rec.op)
            if handler is None:
                raise ProtocolError(f"unknown op {rec.op!r}")
            return handler(rec, subscriber)
        except (ProtocolError, SessionError, GraphError, KeyError, TypeError, ValueError) as exc:
            session = rec.session if "rec" in locals() else None
            logger.info("rejecting record: %s", exc)
            return [_error(session, str(exc))]

    def _create(self, rec: WireRecord, subscriber) -> list[dict]:
        p = rec.payload
        if "graph" in p:
            graph = SessionGraph.from_dict(p["graph"])
        else:
            preset = p.get("preset", "cascaded")
            mode = p.get("mode", "fixed")
            if preset == "cascaded":
                graph = cascaded_graph(mode)
            elif preset == "e2e":
                graph = e2e_graph(mode)
            else:
                raise ProtocolError(f"unknown preset {preset!r}")
        sid = self.rt.open_session(graph, rec.session)
        self._next_t[sid] = 0.0
        if subscriber is not None:
            self._subscribers[sid] = subscriber
        return [{"op": "created", "session": sid}]

    def _known(self, rec: WireRecord) -> str:
        if rec.session is None:
            raise ProtocolError(f"{rec.op} record needs a session")
        if rec.session not in self._next_t:
            raise SessionError(f"unknown session {rec.session!r}")
        if rec.session in self._ended:
            raise SessionError(f"session {rec.session!r} already received eos")
        return rec.session

    def _audio(self, rec: WireRecord, subscriber) -> list[dict]:
        sid = self._known(rec)
        frames = decode_frames(rec.payload)
        if not frames:
            return []
        t_s = float(rec.payload.get("t", self._next_t[sid]))
        self._next_t[sid] = t_s + len(frames) * FRAME_S
        self.rt.send_audio(sid, frames, t_s)
        return []

    def _eos(self, rec: WireRecord, subscriber) -> list[dict]:
        sid = self._known(rec)
        self._ended.add(sid)
        self.rt.close(sid)
        return []


def serve_stdio(stdin: TextIO = sys.stdin, stdout: TextIO = sys.stdout,
                cfg: RuntimeConfig | None = None, models=None) -> int:
    """Replay client records from ``stdin`` on a virtual clock.

    Audio records are released at the session time ``t + duration`` (the
    instant their audio is complete); outputs are written as they happen.
    """
    from .harness.experiment import ExperimentConfig, models_for

    clock = VirtualClock()

    def write(rec: dict) -> None:
        stdout.write(json.dumps(rec, sort_keys=True) + "\n")

    rt = Runtime(cfg or RuntimeConfig(), models or models_for(ExperimentConfig()), clock)
    gw = Gateway(rt, write)
    for line in stdin:
        if not line.strip():
            continue
        try:
            rec = WireRecord.parse(line)
        except ProtocolError as exc:
            write(_error(None, str(exc)))
            continue
        if rec.op == "audio" and rec.session in rt.offsets:
            n = len(rec.payload.get("speech") or ())
            t = float(rec.payload.get("t", gw._next_t.get(rec.session, 0.0)))
            clock.run_until(rt.offsets[rec.session] + t + n * FRAME_S)
        for resp in gw.handle_record(rec.to_dict()):
            write(resp)
    clock.run()
    stdout.flush()
    return 0


async def serve_tcp(host: str = "127.0.0.1", port: int = 8765,
                    cfg: RuntimeConfig | None = None, models=None) -> None:
    """Real-time server: wall clock, simulated model delays actually waited."""
    from .harness.experiment import ExperimentConfig, models_for

    rt = Runtime(cfg or RuntimeConfig(), models or models_for(ExperimentConfig()),
                 AsyncioClock(asyncio.get_running_loop()))
    gw = Gateway(rt)

    async def handle(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        def push(rec: dict) -> None:
            writer.write((json.dumps(rec, sort_keys=True) + "\n").encode())

        while line := await reader.readline():
            for resp in gw.handle_record(line, push):
                push(resp)
            await writer.drain()
        writer.close()

    server = await asyncio.start_server(handle, host, port)
    async with server:
        await server.serve_forever()

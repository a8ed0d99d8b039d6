"""Streaming speech middleware: VAD segmentation and LA2 stability detection.

Per session the middleware keeps a moving-average VAD, the currently open
speech segment and any ended segments waiting for their final decode. Each
segment runs local agreement over successive chunks of ``chunk_size_s``
seconds: the common prefix of two consecutive hypotheses is committed as
stable text and forced as a decoding prefix from then on.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .backend import BackendRequest, ContractViolation, Decoder, TimedHypothesis
from .core import FRAME_S, AudioFrame, Message, Node, SessionId, Token, common_token_prefix

logger = logging.getLogger(__name__)

_EPS = 1e-9

Emit = Callable[[Message], None]


class SequenceGap(RuntimeError):
    """Pending audio messages are not seq-contiguous (broker contract broken)."""


@dataclass(frozen=True)
class VadConfig:
    window_frames: int = 10
    start_threshold: float = 0.9
    end_threshold: float = 0.1
    frame_ms: int = 30

    def __post_init__(self) -> None:
        if self.window_frames < 1:
            raise ValueError("window_frames must be >= 1")
        if not (0 <= self.end_threshold <= self.start_threshold <= 1):
            raise ValueError("need 0 <= end_threshold <= start_threshold <= 1")
        if self.frame_ms != 30:
            raise ValueError("frames are fixed at 30 ms")


@dataclass(frozen=True)
class La2Config:
    chunk_size_s: float = 1.0
    mode: str = "fixed"
    max_input_s: float = 20.0

    def __post_init__(self) -> None:
        if self.chunk_size_s <= 0:
            raise ValueError("chunk_size_s must be > 0")
        if self.mode not in ("fixed", "revision"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.max_input_s < 2 * self.chunk_size_s - _EPS:
            raise ValueError("max_input_s must be >= 2 * chunk_size_s")


@dataclass
class VadState:
    """Moving average over the last ``window_frames`` speech decisions.

    The window starts out filled with non-speech. ``preroll`` keeps the
    frames of the current window so a new segment includes the audio that
    pushed the average over the start threshold.
    """

    cfg: VadConfig = field(default_factory=VadConfig)
    window: deque = field(default=None)
    preroll: deque = field(default=None)
    in_segment: bool = False

    def __post_init__(self) -> None:
        n = self.cfg.window_frames
        if self.window is None:
            self.window = deque([False] * n, maxlen=n)
        if self.preroll is None:
            self.preroll = deque(maxlen=n)

    @property
    def average(self) -> float:
        return sum(self.window) / self.cfg.window_frames


def vad_step(state: VadState, frame: AudioFrame, is_speech: bool, t: float = 0.0) -> str:
    """Feed one frame; returns ``none``, ``segment_start``, ``segment_continue``
    or ``segment_end``. ``t`` is the frame's start time."""
    state.window.append(bool(is_speech))
    state.preroll.append((frame, t))
    avg = state.average
    if not state.in_segment:
        if avg > state.cfg.start_threshold + _EPS:
            state.in_segment = True
            return "segment_start"
        return "none"
    if avg < state.cfg.end_threshold - _EPS:
        state.in_segment = False
        return "segment_end"
    return "segment_continue"


@dataclass
class CombinedAudio:
    frames: list[AudioFrame]
    times: list[float]
    skipped: int
    last_seq: int


def combine_pending_audio(messages: Sequence[Message], expected_seq: int | None = None) -> CombinedAudio:
    """Concatenate the audio of several pending messages of one session.

    Combining n messages into one input skips n - 1 intermediate steps.
    """
    if not messages:
        return CombinedAudio([], [], 0, -1 if expected_seq is None else expected_seq - 1)
    session = messages[0].session
    frames: list[AudioFrame] = []
    times: list[float] = []
    prev = None if expected_seq is None else expected_seq - 1
    for m in messages:
        if m.session != session or m.kind != "audio":
            raise ValueError("combine_pending_audio needs audio messages of one session")
        if prev is not None and m.seq != prev + 1:
            raise SequenceGap(f"session {session!r}: seq {m.seq} follows {prev}")
        prev = m.seq
        for i, fr in enumerate(m.payload):
            frames.append(fr)
            times.append(m.t_s + i * FRAME_S)
    return CombinedAudio(frames, times, len(messages) - 1, prev)


@dataclass
class SpeechSegmentState:
    """LA2 state of one speech segment.

    Token lists cover the whole segment; the first ``dropped`` stable tokens
    (and ``truncation_offset_s`` seconds of audio) have been cut from the
    model input but stay in the bookkeeping so timestamps remain absolute.
    """

    start_s: float
    frames: list[AudioFrame] = field(default_factory=list)
    session: SessionId = ""
    source: str = ""
    kind: str = "asr"
    consumed_chunks: int = 0
    total_frames: int = 0
    prev_hypothesis: tuple[Token, ...] | None = None
    stable: list[Token] = field(default_factory=list)
    stable_end_s: list[float] = field(default_factory=list)
    dropped: int = 0
    truncation_offset_s: float = 0.0
    ended: bool = False
    finalized: bool = False
    frames_at_last_call: int = 0
    truncation_warnings: int = 0
    backend_calls: int = 0

    def append(self, frame: AudioFrame) -> None:
        self.frames.append(frame)
        self.total_frames += 1

    @property
    def duration_s(self) -> float:
        """Audio since segment start, including truncated audio."""
        return self.total_frames * FRAME_S

    @property
    def buffered_s(self) -> float:
        return len(self.frames) * FRAME_S

    @property
    def audio_start_s(self) -> float:
        return self.start_s + self.truncation_offset_s

    @property
    def forced_prefix(self) -> tuple[Token, ...]:
        return tuple(self.stable[self.dropped:])

    def token_start(self, index: int, ends: Sequence[float]) -> float:
        return ends[index - 1] if index > 0 else self.start_s


def _decode(state: SpeechSegmentState, backend: Decoder, ended: bool) -> tuple[list[Token], list[float]]:
    req = BackendRequest(
        kind=state.kind,
        input=tuple(state.frames),
        forced_prefix=state.forced_prefix,
        session=state.session,
        input_start_s=state.audio_start_s,
        ended=ended,
    )
    hyp: TimedHypothesis = backend(req)
    state.backend_calls += 1
    state.frames_at_last_call = state.total_frames
    if hyp.tokens[: len(req.forced_prefix)] != req.forced_prefix:
        raise ContractViolation(
            f"session {state.session!r}: backend ignored forced prefix {list(req.forced_prefix)}"
        )
    tokens = state.stable[: state.dropped] + list(hyp.tokens)
    ends = state.stable_end_s[: state.dropped] + list(hyp.token_end_s or ())
    return tokens, ends


def _message(state: SpeechSegmentState, tokens, t_s: float, t_e: float, stable: bool) -> Message:
    return Message(
        session=state.session, kind="text", payload=tuple(tokens), stable=stable,
        t_s=t_s, t_e=max(t_s, t_e), source=state.source,
    )


def _commit(state: SpeechSegmentState, tokens: list[Token], ends: list[float], upto: int) -> Message | None:
    first = len(state.stable)
    if upto <= first:
        return None
    t_s = state.token_start(first, ends)
    state.stable.extend(tokens[first:upto])
    state.stable_end_s.extend(ends[first:upto])
    return _message(state, tokens[first:upto], t_s, ends[upto - 1], True)


def _unstable(state: SpeechSegmentState, tokens: list[Token], ends: list[float]) -> Message | None:
    first = len(state.stable)
    if len(tokens) <= first:
        return None
    return _message(state, tokens[first:], state.token_start(first, ends), ends[-1], False)


def la2_step(
    state: SpeechSegmentState,
    backend: Decoder,
    cfg: La2Config,
    interim: bool = True,
) -> list[Message]:
    """Advance local agreement for one segment by at most one backend call.

    Returned messages carry ``t_r = 0``; the caller stamps emission time.
    ``interim`` permits a revision-mode call between chunk boundaries.
    """
    if state.finalized:
        return []
    out: list[Message] = []

    if state.ended:
        if state.buffered_s > cfg.max_input_s + _EPS:
            truncate_context(state, cfg)
        tokens, ends = _decode(state, backend, ended=True)
        msg = _commit(state, tokens, ends, len(tokens))
        if msg is not None:
            out.append(msg)
        state.prev_hypothesis = tuple(tokens)
        state.finalized = True
        return out

    if state.duration_s + _EPS >= cfg.chunk_size_s * (state.consumed_chunks + 1):
        if state.buffered_s > cfg.max_input_s + _EPS:
            truncate_context(state, cfg)
        tokens, ends = _decode(state, backend, ended=False)
        state.consumed_chunks = int(math.floor(state.duration_s / cfg.chunk_size_s + _EPS))
        if state.prev_hypothesis is not None:
            base = len(state.stable)
            agreed = common_token_prefix(state.prev_hypothesis[base:], tokens[base:])
            msg = _commit(state, tokens, ends, base + len(agreed))
            if msg is not None:
                out.append(msg)
        state.prev_hypothesis = tuple(tokens)
        if cfg.mode == "revision":
            msg = _unstable(state, tokens, ends)
            if msg is not None:
                out.append(msg)
        return out

    if cfg.mode == "revision" and interim and state.total_frames > state.frames_at_last_call:
        if state.buffered_s > cfg.max_input_s + _EPS:
            truncate_context(state, cfg)
        tokens, ends = _decode(state, backend, ended=False)
        msg = _unstable(state, tokens, ends)
        if msg is not None:
            out.append(msg)
    return out


def truncate_context(state: SpeechSegmentState, cfg: La2Config) -> SpeechSegmentState:
    """Cut the oldest audio (and the matching forced prefix) at a stable token
    boundary so that at most ``max_input_s`` seconds remain.

    If no stable boundary is late enough, cut at the latest one available and
    count a warning; with no stable tokens at all nothing is cut.
    """
    if state.buffered_s <= cfg.max_input_s + _EPS:
        return state
    audio_end = state.audio_start_s + state.buffered_s
    candidates = range(state.dropped, len(state.stable))
    chosen = None
    for i in candidates:
        if audio_end - state.stable_end_s[i] <= cfg.max_input_s + _EPS:
            chosen = i
            break
    if chosen is None:
        state.truncation_warnings += 1
        if not candidates:
            logger.warning("session %s: input over %.1fs with no stable boundary; not truncating",
                           state.session, cfg.max_input_s)
            return state
        chosen = candidates[-1]
        logger.warning("session %s: cannot truncate below %.1fs without cutting uncommitted audio",
                       state.session, cfg.max_input_s)
    cut = state.stable_end_s[chosen]
    n_cut = int(round((cut - state.audio_start_s) / FRAME_S))
    if n_cut <= 0:
        return state
    del state.frames[:n_cut]
    state.truncation_offset_s += n_cut * FRAME_S
    state.dropped = chosen + 1
    return state


@dataclass
class SpeechSession:
    vad: VadState
    la2: La2Config
    source: str
    current: SpeechSegmentState | None = None
    ended: list[SpeechSegmentState] = field(default_factory=list)
    next_seq: int | None = None
    skipped: int = 0
    drains: int = 0
    segments: int = 0
    closed: bool = False


class SpeechMiddleware:
    """Stateful speech component for many sessions.

    The backend is any callable ``BackendRequest -> TimedHypothesis``; the
    session's mode comes from its graph node.
    """

    def __init__(self, component: str, kind: str, vad: VadConfig | None = None,
                 la2: La2Config | None = None) -> None:
        self.component = component
        self.kind = kind
        self.vad_cfg = vad or VadConfig()
        self.la2_cfg = la2 or La2Config()
        self.sessions: dict[SessionId, SpeechSession] = {}

    def session(self, session: SessionId, node: Node) -> SpeechSession:
        s = self.sessions.get(session)
        if s is None:
            la2 = La2Config(self.la2_cfg.chunk_size_s, node.mode, self.la2_cfg.max_input_s)
            s = SpeechSession(VadState(self.vad_cfg), la2, node.id)
            self.sessions[session] = s
        return s

    @property
    def skipped(self) -> int:
        return sum(s.skipped for s in self.sessions.values())

    def process(self, session: SessionId, node: Node, messages: Sequence[Message],
                backend: Decoder, emit: Emit) -> None:
        """Handle everything drained for one session in one worker step."""
        s = self.session(session, node)
        if s.closed:
            raise RuntimeError(f"session {session!r} already finished in {self.component}")
        s.drains += 1
        audio = [m for m in messages if not m.eos]
        eos = [m for m in messages if m.eos]
        if audio:
            combined = combine_pending_audio(audio, s.next_seq)
            s.next_seq = combined.last_seq + 1
            s.skipped += combined.skipped
            for fr, t in zip(combined.frames, combined.times):
                self._feed(s, session, fr, t)
        if eos:
            s.next_seq = eos[-1].seq + 1
            if s.current is not None:
                s.current.ended = True
                s.ended.append(s.current)
                s.current = None
        for seg in s.ended:
            for m in la2_step(seg, backend, s.la2):
                emit(m)
        s.ended.clear()
        if s.current is not None:
            for m in la2_step(s.current, backend, s.la2, interim=True):
                emit(m)
        if eos:
            s.closed = True
            t = eos[-1].t_r
            emit(Message(session, "text", (), True, t, t, source=s.source, eos=True))

    def _feed(self, s: SpeechSession, session: SessionId, frame: AudioFrame, t: float) -> None:
        event = vad_step(s.vad, frame, frame.speech, t)
        if event == "segment_start":
            pre = list(s.vad.preroll)
            seg = SpeechSegmentState(start_s=pre[0][1], session=session, source=s.source,
                                     kind=self.kind)
            for f, _ in pre:
                seg.append(f)
            s.current = seg
            s.segments += 1
        elif event == "segment_continue":
            s.current.append(frame)
        elif event == "segment_end":
            s.current.append(frame)
            s.current.ended = True
            s.ended.append(s.current)
            s.current = None

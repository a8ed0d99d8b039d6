"""Streaming text middleware: sentence splitting and per-sentence translation.

Fixed mode runs local agreement per sentence on its stable source words and
only ever emits stable text. Revision mode translates complete stable
sentences once and re-translates everything after them as unstable text.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .backend import TERMINATORS, BackendRequest, ContractViolation, Decoder
from .core import Message, Node, SessionId, Token, common_token_prefix

logger = logging.getLogger(__name__)

Emit = Callable[[Message], None]


@dataclass(frozen=True)
class SourceToken:
    text: Token
    stable: bool
    t_s: float
    t_e: float


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[SourceToken, ...]
    complete: bool

    @property
    def words(self) -> tuple[Token, ...]:
        return tuple(t.text for t in self.tokens)

    @property
    def stable(self) -> bool:
        return all(t.stable for t in self.tokens)

    @property
    def t_s(self) -> float:
        return min(t.t_s for t in self.tokens)

    @property
    def t_e(self) -> float:
        return max(t.t_e for t in self.tokens)


def ends_sentence(token: Token, terminators=TERMINATORS) -> bool:
    return bool(token) and token.rstrip("~")[-1:] in terminators


def spread_times(tokens: Sequence[Token], t_s: float, t_e: float, stable: bool) -> list[SourceToken]:
    """Give each token an equal share of the message's ``[t_s, t_e]`` span."""
    n = len(tokens)
    step = (t_e - t_s) / n if n else 0.0
    return [
        SourceToken(tok, stable, t_s + i * step, t_s + (i + 1) * step if i < n - 1 else t_e)
        for i, tok in enumerate(tokens)
    ]


def split_sentences(tokens: Sequence[SourceToken], terminators=TERMINATORS) -> tuple[list[Sentence], list[SourceToken]]:
    """Split at terminator tokens into complete sentences and a remainder."""
    complete: list[Sentence] = []
    cur: list[SourceToken] = []
    for tok in tokens:
        cur.append(tok)
        if ends_sentence(tok.text, terminators):
            complete.append(Sentence(tuple(cur), True))
            cur = []
    return complete, cur


@dataclass
class SentenceBuffer:
    """Pending source text of one session.

    ``stable`` holds committed tokens after the last finished sentence;
    ``unstable`` is the revisable tail, replaced wholesale by each unstable
    upstream message and dropped when new stable text arrives.
    """

    stable: list[SourceToken] = field(default_factory=list)
    unstable: list[SourceToken] = field(default_factory=list)
    terminators: frozenset = TERMINATORS

    def add(self, message: Message) -> tuple[list[Sentence], list[SourceToken]]:
        toks = spread_times(message.payload, message.t_s, message.t_e, message.stable)
        if message.stable:
            self.stable.extend(toks)
            self.unstable = []
        else:
            self.unstable = toks
        return self.split()

    def split(self) -> tuple[list[Sentence], list[SourceToken]]:
        return split_sentences(self.stable + self.unstable, self.terminators)

    def pop_sentence(self, n_tokens: int) -> None:
        del self.stable[:n_tokens]


def target_span(source: Sequence[SourceToken], n_target: int, j0: int, j1: int) -> tuple[float, float]:
    """Source-aligned time span of target positions ``[j0, j1)``, mapping
    target position j to source position ``j * n_source / n_target``."""
    n = len(source)
    if n == 0 or n_target == 0:
        return 0.0, 0.0

    def at(x: float) -> float:
        k = int(x)
        if k >= n:
            return source[-1].t_e
        f = x - k
        tok = source[k]
        return tok.t_s + f * (tok.t_e - tok.t_s)

    scale = n / n_target
    return at(j0 * scale), at(j1 * scale)


@dataclass
class SentenceLA:
    """Local-agreement state of the open sentence in fixed mode."""

    committed: list[Token] = field(default_factory=list)
    prev: tuple[Token, ...] | None = None
    n_source: int = 0


@dataclass
class TextSession:
    source: str
    mode: str
    buffer: SentenceBuffer
    la: SentenceLA = field(default_factory=SentenceLA)
    finished_sentences: int = 0
    translated: set[int] = field(default_factory=set)
    last_region: tuple[Token, ...] = ()
    skipped: int = 0
    drains: int = 0
    next_seq: int = 0
    closed: bool = False


class TextMiddleware:
    def __init__(self, component: str = "mt", trigger_words: int = 1,
                 terminators: Sequence[str] = tuple(sorted(TERMINATORS))) -> None:
        if trigger_words < 1:
            raise ValueError("trigger_words must be >= 1")
        self.component = component
        self.trigger_words = trigger_words
        self.terminators = frozenset(terminators)
        self.sessions: dict[SessionId, TextSession] = {}

    def session(self, session: SessionId, node: Node) -> TextSession:
        s = self.sessions.get(session)
        if s is None:
            s = TextSession(node.id, node.mode, SentenceBuffer(terminators=self.terminators))
            self.sessions[session] = s
        return s

    @property
    def skipped(self) -> int:
        return sum(s.skipped for s in self.sessions.values())

    def process(self, session: SessionId, node: Node, messages: Sequence[Message],
                backend: Decoder, emit: Emit) -> None:
        s = self.session(session, node)
        if s.closed:
            raise RuntimeError(f"session {session!r} already finished in {self.component}")
        s.drains += 1
        fresh = [m for m in messages if m.seq >= s.next_seq]
        if fresh:
            s.next_seq = max(m.seq for m in fresh) + 1
        messages = fresh
        text = [m for m in messages if not m.eos]
        s.skipped += max(0, len(text) - 1)
        for m in text:
            s.buffer.add(m)
        eos = any(m.eos for m in messages)
        if not messages:
            return
        step = self._fixed if s.mode == "fixed" else self._revision
        step(s, session, backend, emit, final=eos)
        if eos:
            s.closed = True
            t = max(m.t_r for m in messages)
            emit(Message(session, "text", (), True, t, t, source=s.source, eos=True))

    # fixed mode

    def _fixed(self, s: TextSession, session, backend, emit, final: bool) -> None:
        complete, _ = s.buffer.split()
        for sent in complete:
            if not sent.stable:
                break
            msg = self.finish_sentence(s, session, sent, backend)
            if msg is not None:
                emit(msg)
        # after finishing stable sentences, buffer.stable is the open sentence's stable part
        remainder = list(s.buffer.stable)
        if not remainder:
            return
        if final:
            msg = self.finish_sentence(s, session, Sentence(tuple(remainder), False), backend)
            if msg is not None:
                emit(msg)
            return
        msg = la_text_fixed_step(s, session, remainder, backend, self.trigger_words)
        if msg is not None:
            emit(msg)

    def finish_sentence(self, s: TextSession, session, sent: Sentence, backend) -> Message | None:
        """Final call on a finished sentence: commit the whole remaining hypothesis."""
        key = s.finished_sentences
        s.buffer.pop_sentence(len(sent.tokens))
        s.finished_sentences += 1
        if key in s.translated:
            return None
        s.translated.add(key)
        committed = s.la.committed
        s.la = SentenceLA()
        if not sent.tokens:
            return None
        hyp = _call(backend, session, sent.words, committed)
        return _target_message(s, session, sent.tokens, hyp, len(committed), len(hyp), True)

    # revision mode

    def _revision(self, s: TextSession, session, backend, emit, final: bool) -> None:
        complete, remainder = s.buffer.split()
        region: list[SourceToken] = []
        for i, sent in enumerate(complete):
            if not sent.stable:
                region = [t for later in complete[i:] for t in later.tokens]
                break
            msg = translate_stable_sentence(s, session, sent, backend)
            if msg is not None:
                emit(msg)
        region += remainder
        if final:
            stable = list(s.buffer.stable)
            if stable:
                msg = translate_stable_sentence(s, session, Sentence(tuple(stable), False), backend)
                if msg is not None:
                    emit(msg)
            return
        msg = revision_translate(s, session, region, backend)
        if msg is not None:
            emit(msg)


def _call(backend: Decoder, session, source: Sequence[Token], forced: Sequence[Token]) -> tuple[Token, ...]:
    req = BackendRequest("mt", tuple(source), tuple(forced), session)
    hyp = backend(req).tokens
    if hyp[: len(forced)] != tuple(forced):
        raise ContractViolation(f"session {session!r}: MT ignored forced prefix {list(forced)}")
    return hyp


def _target_message(s: TextSession, session, source: Sequence[SourceToken], hyp: Sequence[Token],
                    j0: int, j1: int, stable: bool) -> Message | None:
    if j1 <= j0:
        return None
    t_s, t_e = target_span(source, len(hyp), j0, j1)
    return Message(session, "text", tuple(hyp[j0:j1]), stable, t_s, max(t_s, t_e), source=s.source)


def translate_stable_sentence(s: TextSession, session, sent: Sentence, backend: Decoder) -> Message | None:
    """Translate a finished, fully stable sentence exactly once."""
    key = s.finished_sentences
    s.buffer.pop_sentence(len(sent.tokens))
    s.finished_sentences += 1
    s.last_region = ()
    if key in s.translated or not sent.tokens:
        return None
    s.translated.add(key)
    hyp = _call(backend, session, sent.words, ())
    return _target_message(s, session, sent.tokens, hyp, 0, len(hyp), True)


def la_text_fixed_step(s: TextSession, session, stable_words: Sequence[SourceToken],
                       backend: Decoder, trigger_words: int = 1) -> Message | None:
    """Local agreement on the stable part of the open sentence.

    Runs only when at least ``trigger_words`` new stable words arrived; the
    common prefix of the previous and current hypotheses beyond the committed
    target prefix is emitted as stable text.
    """
    la = s.la
    if len(stable_words) - la.n_source < trigger_words:
        return None
    hyp = _call(backend, session, [t.text for t in stable_words], la.committed)
    la.n_source = len(stable_words)
    msg = None
    if la.prev is not None:
        base = len(la.committed)
        agreed = common_token_prefix(la.prev[base:], hyp[base:])
        if agreed:
            msg = _target_message(s, session, stable_words, hyp, base, base + len(agreed), True)
            la.committed.extend(agreed)
    la.prev = hyp
    return msg


def revision_translate(s: TextSession, session, region: Sequence[SourceToken],
                       backend: Decoder) -> Message | None:
    """Translate the open region (stable-but-unfinished plus unstable text)
    and emit the full hypothesis as unstable; skipped when unchanged."""
    words = tuple(t.text for t in region)
    if not words or words == s.last_region:
        return None
    s.last_region = words
    hyp = _call(backend, session, words, ())
    return _target_message(s, session, region, hyp, 0, len(hyp), False)

"""Block-based latency and flicker metrics over received message logs.

Received messages are grouped into unstable-to-stable blocks. Within a block
every message is compared against the block's final stable message: a message
is *first-unchanged* when its common prefix with the final text reaches
further than that of any earlier message, and it is credited with exactly the
extension. Those credited spans feed the length-weighted delay.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from ..core import Message, Token, common_token_prefix

WORD_DURATION_S = 0.3


@dataclass(frozen=True)
class MessageBlock:
    messages: tuple[Message, ...]
    closed: bool = True

    @property
    def final(self) -> Message | None:
        return self.messages[-1] if self.closed else None


@dataclass(frozen=True)
class Commitment:
    """The part of a first-unchanged message that survived into the final text."""

    message: Message
    start: int  # token positions in the final stable message, [start, end)
    end: int
    t_s: float
    t_e: float
    t_r: float


def split_blocks(messages: Iterable[Message]) -> list[MessageBlock]:
    """Group messages (in receive order) into blocks that end with a stable one;
    trailing unstable messages form a final block flagged ``closed=False``."""
    blocks: list[MessageBlock] = []
    cur: list[Message] = []
    for m in messages:
        cur.append(m)
        if m.stable:
            blocks.append(MessageBlock(tuple(cur)))
            cur = []
    if cur:
        blocks.append(MessageBlock(tuple(cur), closed=False))
    return blocks


def _time_at(m: Message, k: int) -> float:
    n = len(m.payload)
    if n == 0:
        return m.t_s
    return m.t_s + (m.t_e - m.t_s) * k / n


def extract_first_unchanged(block: MessageBlock) -> list[Commitment]:
    if not block.closed:
        return []
    final = block.messages[-1].payload
    out: list[Commitment] = []
    reach = 0
    for m in block.messages:
        overlap = len(common_token_prefix(m.payload, final))
        if overlap > reach:
            out.append(Commitment(m, reach, overlap, _time_at(m, reach), _time_at(m, overlap), m.t_r))
            reach = overlap
    return out


def delay(t_s: float, t_e: float, t_r: float) -> float:
    """Delay of a message: receive time minus the midpoint of its audio span."""
    return t_r - (t_s + t_e) / 2


def latency(entries: Iterable[Commitment | tuple[float, float, float]]) -> float | None:
    """Span-length-weighted mean delay; None when there is nothing to weigh."""
    num = den = 0.0
    for e in entries:
        t_s, t_e, t_r = (e.t_s, e.t_e, e.t_r) if isinstance(e, Commitment) else e
        w = t_e - t_s
        if w <= 0:
            continue
        num += delay(t_s, t_e, t_r) * w
        den += w
    if den <= 0:
        return None
    return num / den


def first_unchanged(messages: Iterable[Message]) -> list[Commitment]:
    return [c for b in split_blocks(messages) for c in extract_first_unchanged(b)]


def session_latency(messages: Sequence[Message]) -> float | None:
    return latency(first_unchanged(messages))


def model_independent_commitments(messages: Sequence[Message],
                                  word_duration_s: float = WORD_DURATION_S) -> list[Commitment]:
    """First-unchanged commitments on a synthetic audio clock that places the
    n-th output word at ``[n * word_duration_s, (n + 1) * word_duration_s]``."""
    synthetic: list[Message] = []
    committed = 0
    for block in split_blocks(messages):
        t0 = committed * word_duration_s
        for m in block.messages:
            t_e = t0 + len(m.payload) * word_duration_s
            synthetic.append(Message(m.session, m.kind, m.payload, m.stable, t0, t_e, m.t_r, m.seq))
        if block.closed:
            committed += len(block.messages[-1].payload)
    return first_unchanged(synthetic)


def model_independent_latency(messages: Sequence[Message],
                              word_duration_s: float = WORD_DURATION_S) -> float | None:
    """Latency from receive times only (see :func:`model_independent_commitments`)."""
    return latency(model_independent_commitments(messages, word_duration_s))


def count_flickers(block: MessageBlock | Sequence[Message]) -> int:
    """Positions that change between consecutive messages of a block;
    appended or dropped positions are not flickers."""
    msgs = block.messages if isinstance(block, MessageBlock) else block
    total = 0
    for a, b in zip(msgs, msgs[1:]):
        total += sum(1 for x, y in zip(a.payload, b.payload) if x != y)
    return total


def flicker_rate(blocks: Iterable[MessageBlock], n_reference_words: int) -> float | None:
    if n_reference_words <= 0:
        return None
    return sum(count_flickers(b) for b in blocks) / n_reference_words


def final_stable_text(messages: Iterable[Message]) -> list[Token]:
    return [tok for m in messages if m.stable for tok in m.payload]

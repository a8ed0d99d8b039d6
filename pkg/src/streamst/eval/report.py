"""Session logs and the B/W/L/F metrics report."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from ..core import Message, Token, tokenize
from .latency import (
    Commitment,
    count_flickers,
    first_unchanged,
    latency,
    model_independent_commitments,
    model_independent_latency,
    split_blocks,
    final_stable_text,
)
from .scoring import bleu, resegment, wer

LOG_FIELDS = ("session", "node", "seq", "stable", "t_s", "t_e", "t_r", "text")


@dataclass(frozen=True)
class LatencyReport:
    delays: tuple[float, ...]
    m: int
    D: float | None
    model_independent: float | None


@dataclass
class MetricsReport:
    """Quality, latency and flicker of one session or an aggregate.

    ``B`` is BLEU in [0, 100], ``W`` a WER fraction, ``L`` latency in seconds
    and ``F`` flickers per reference word. Absent values are ``None``.
    """

    B: float | None = None
    W: float | None = None
    L: float | None = None
    F: float | None = None
    L_mi: float | None = None
    first_unchanged: int = 0
    flickers: int = 0
    ref_words: int = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.W is not None and self.W < 0:
            raise ValueError("W must be >= 0")
        if self.B is not None and not 0 <= self.B <= 100:
            raise ValueError("B must be within [0, 100]")
        if self.F is not None and self.F < 0:
            raise ValueError("F must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def latency_report(messages: Sequence[Message]) -> LatencyReport:
    commits = first_unchanged(messages)
    return LatencyReport(
        tuple(c.t_r - (c.t_s + c.t_e) / 2 for c in commits),
        len(commits),
        latency(commits),
        model_independent_latency(messages),
    )


@dataclass
class SessionOutput:
    """What the user received for one session, split by producing node."""

    translation: list[Message]
    transcript: list[Message] | None
    ref_translation: list[list[Token]]
    ref_transcript: list[list[Token]]
    extras: dict = field(default_factory=dict)


@dataclass
class _Parts:
    hyp_t: list[list[Token]]
    ref_t: list[list[Token]]
    hyp_w: list[list[Token]]
    ref_w: list[list[Token]]
    commits: list[Commitment]
    flickers: int
    ref_words: int
    mi_commits: list[Commitment]


def _parts(out: SessionOutput) -> _Parts:
    hyp_t = resegment(final_stable_text(out.translation), out.ref_translation)
    if out.transcript is not None:
        ref_w = out.ref_transcript
        hyp_w = resegment(final_stable_text(out.transcript), ref_w)
    else:
        ref_w, hyp_w = out.ref_translation, hyp_t
    blocks = split_blocks(out.translation)
    return _Parts(
        hyp_t, list(out.ref_translation), hyp_w, list(ref_w),
        first_unchanged(out.translation),
        sum(count_flickers(b) for b in blocks),
        sum(len(r) for r in out.ref_translation),
        model_independent_commitments(out.translation),
    )


def evaluate_session(out: SessionOutput) -> MetricsReport:
    """W is the transcript WER when a transcript is present, otherwise the
    WER of the translation."""
    return _report([_parts(out)], out.extras)


def aggregate(outputs: Iterable[SessionOutput], extras: dict | None = None) -> MetricsReport:
    """Corpus-level metrics over many sessions; L pools all first-unchanged
    commitments (synthetic ones for L_mi) and F pools flickers and reference words."""
    return _report([_parts(o) for o in outputs], extras or {})


def _report(parts: list[_Parts], extras: dict) -> MetricsReport:
    hyp_t = [s for p in parts for s in p.hyp_t]
    ref_t = [s for p in parts for s in p.ref_t]
    hyp_w = [s for p in parts for s in p.hyp_w]
    ref_w = [s for p in parts for s in p.ref_w]
    commits = [c for p in parts for c in p.commits]
    flickers = sum(p.flickers for p in parts)
    ref_words = sum(p.ref_words for p in parts)
    return MetricsReport(
        B=bleu(hyp_t, ref_t) if ref_t else None,
        W=wer(hyp_w, ref_w) if ref_w else None,
        L=latency(commits),
        F=flickers / ref_words if ref_words else None,
        L_mi=latency([c for p in parts for c in p.mi_commits]),
        first_unchanged=len(commits),
        flickers=flickers,
        ref_words=ref_words,
        extras=dict(extras),
    )


# log files


def message_record(m: Message, node: str | None = None) -> dict:
    return {
        "session": m.session,
        "node": node if node is not None else m.source,
        "seq": m.seq,
        "stable": m.stable,
        "t_s": m.t_s,
        "t_e": m.t_e,
        "t_r": m.t_r,
        "text": m.text,
    }


def record_message(rec: dict) -> Message:
    return Message(
        session=rec.get("session", ""),
        kind="text",
        payload=tuple(tokenize(rec.get("text", ""))),
        stable=bool(rec["stable"]),
        t_s=float(rec["t_s"]),
        t_e=float(rec["t_e"]),
        t_r=float(rec["t_r"]),
        seq=int(rec.get("seq", 0)),
        source=str(rec.get("node", "")),
    )


def write_log(path: str | Path, messages: Iterable[Message]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in messages:
            fh.write(json.dumps(message_record(m), sort_keys=True) + "\n")


def read_log(path: str | Path) -> list[Message]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(record_message(json.loads(line)))
    return out


def read_references(path: str | Path) -> list[list[Token]]:
    """One reference sentence per line."""
    with open(path, encoding="utf-8") as fh:
        return [tokenize(line) for line in fh if line.strip()]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def reports_csv(rows: Sequence[tuple[dict, MetricsReport]]) -> str:
    """CSV text with the given key columns followed by B, W, L, F."""
    keys: list[str] = []
    for k, _ in rows:
        for name in k:
            if name not in keys:
                keys.append(name)
    metrics = ["B", "W", "L", "F", "L_mi", "first_unchanged", "flickers", "ref_words"]
    extra: list[str] = []
    for _, r in rows:
        for name in r.extras:
            if name not in extra:
                extra.append(name)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys + metrics + extra)
    for k, r in rows:
        d = r.to_dict()
        w.writerow([_fmt(k.get(n)) for n in keys] + [_fmt(d[n]) for n in metrics]
                   + [_fmt(r.extras.get(n)) for n in extra])
    return buf.getvalue()

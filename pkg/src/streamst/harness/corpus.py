"""Synthetic labelled speech corpus.

Each talk is a sequence of utterances separated by silence. An utterance is
one sentence of random ``aK`` words closed by a terminator; every word has
``token_s`` seconds of audio and the frame in which a word's audio ends
carries that word as its label.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..backend import mock_mt_translate
from ..core import FRAME_S, FRAME_SAMPLES, AudioFrame, Token

_SILENCE_PCM = bytes(2 * FRAME_SAMPLES)


@dataclass(frozen=True)
class CorpusParams:
    """``tokens_per_sentence`` counts the closing terminator."""

    talks: int = 10
    utterances: int = 3
    tokens_per_sentence: int = 24
    token_s: float = 0.4
    gap_s: float = 1.2
    lead_s: float = 0.6
    tail_s: float = 1.2
    vocab: int = 50

    def __post_init__(self) -> None:
        if min(self.talks, self.utterances, self.vocab) < 1:
            raise ValueError("talks, utterances and vocab must be >= 1")
        if self.tokens_per_sentence < 2:
            raise ValueError("tokens_per_sentence must be >= 2 (words plus terminator)")
        if self.token_s < FRAME_S:
            raise ValueError("token_s must cover at least one frame")
        if min(self.gap_s, self.lead_s, self.tail_s) < 0:
            raise ValueError("silence durations must be >= 0")


@dataclass
class Talk:
    id: str
    frames: list[AudioFrame]
    transcript: list[list[Token]]
    translation: list[list[Token]]

    @property
    def duration_s(self) -> float:
        return len(self.frames) * FRAME_S

    @property
    def speech_s(self) -> float:
        return sum(FRAME_S for f in self.frames if f.speech)


@dataclass
class Corpus:
    seed: int
    params: CorpusParams
    talks: list[Talk] = field(default_factory=list)

    def to_json(self) -> str:
        """Canonical serialisation (labels and speech flags; PCM is regenerated
        deterministically and not stored)."""
        return json.dumps(
            {
                "seed": self.seed,
                "params": asdict(self.params),
                "talks": [
                    {
                        "id": t.id,
                        "labels": [f.label for f in t.frames],
                        "speech": "".join("1" if f.speech else "0" for f in t.frames),
                        "transcript": [" ".join(s) for s in t.transcript],
                        "translation": [" ".join(s) for s in t.translation],
                    }
                    for t in self.talks
                ],
            },
            sort_keys=True,
            indent=1,
        )


def _silence(seconds: float) -> list[AudioFrame]:
    return [AudioFrame(_SILENCE_PCM, None, False) for _ in range(int(round(seconds / FRAME_S)))]


def _tone(rng: np.random.Generator, n_frames: int) -> list[bytes]:
    t = np.arange(n_frames * FRAME_SAMPLES) / 16000.0
    f0 = rng.uniform(120.0, 240.0)
    wave = 6000 * np.sin(2 * np.pi * f0 * t) + rng.normal(0, 200, t.size)
    pcm = np.clip(wave, -32768, 32767).astype("<i2").tobytes()
    step = 2 * FRAME_SAMPLES
    return [pcm[i * step:(i + 1) * step] for i in range(n_frames)]


def _utterance(rng: np.random.Generator, words: list[Token], token_s: float) -> list[AudioFrame]:
    ends = [int(round((k + 1) * token_s / FRAME_S)) for k in range(len(words))]
    pcm = _tone(rng, ends[-1])
    labels: list[Token | None] = [None] * ends[-1]
    for w, e in zip(words, ends):
        labels[e - 1] = w
    return [AudioFrame(p, lab, True) for p, lab in zip(pcm, labels)]


def generate_corpus(seed: int = 1, params: CorpusParams | None = None) -> Corpus:
    p = params or CorpusParams()
    rng = np.random.default_rng(seed)
    corpus = Corpus(seed, p)
    for k in range(p.talks):
        frames = _silence(p.lead_s)
        transcript: list[list[Token]] = []
        for u in range(p.utterances):
            ids = rng.integers(1, p.vocab + 1, size=p.tokens_per_sentence - 1)
            words = [f"a{i}" for i in ids] + ["."]
            transcript.append(words)
            frames += _utterance(rng, words, p.token_s)
            frames += _silence(p.gap_s if u < p.utterances - 1 else p.tail_s)
        translation = [mock_mt_translate(s) for s in transcript]
        corpus.talks.append(Talk(f"talk{k:03d}", frames, transcript, translation))
    return corpus

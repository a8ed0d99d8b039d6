"""Stateless backend layer: mock ASR/MT/ST models, cost model and batching.

The mocks are deterministic stand-ins for neural models that support forced
prefix decoding. Audio frames carry the token they complete as a label, so
"recognition" reads labels back; instability is injected by
:class:`MockNoiseModel` on tokens that have little right context.
"""

from __future__ import annotations

import logging
import zlib
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

from .core import FRAME_S, AudioFrame, SessionId, Token

logger = logging.getLogger(__name__)

PERTURB_MARK = "~"
TERMINATORS = frozenset(".!?")


class ContractViolation(RuntimeError):
    """A request or response broke the forced-prefix contract."""


class BackendError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimedHypothesis:
    """Decoder output. ``token_end_s`` holds per-token audio end times
    (session clock) for speech backends and is ``None`` for text backends."""

    tokens: tuple[Token, ...]
    token_end_s: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        times = self.token_end_s
        if times is not None:
            if len(times) != len(self.tokens):
                raise ValueError("token_end_s length must match tokens")
            if any(b < a for a, b in zip(times, times[1:])):
                raise ValueError("token_end_s must be nondecreasing")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class BackendRequest:
    kind: str  # asr | mt | st
    input: tuple
    forced_prefix: tuple[Token, ...] = ()
    session: SessionId = ""
    input_start_s: float = 0.0
    ended: bool = False

    @property
    def units(self) -> float:
        """Cost units: input seconds for audio requests, tokens for text."""
        if self.kind == "mt":
            return float(len(self.input))
        return len(self.input) * FRAME_S


@dataclass(frozen=True)
class CostModel:
    """Simulated compute time of one batch.

    A single request costs ``base_s + per_unit_s * units``; a batch of ``n > 1``
    costs ``base_s + batch_discount * per_unit_s * sum(units)``.
    """

    base_s: float = 0.1
    per_unit_s: float = 0.05
    batch_discount: float = 0.5

    def __post_init__(self) -> None:
        if min(self.base_s, self.per_unit_s, self.batch_discount) < 0:
            raise ValueError("cost components must be >= 0")

    def delay(self, units: Sequence[float]) -> float:
        if not units:
            return 0.0
        if len(units) == 1:
            return self.base_s + self.per_unit_s * units[0]
        return self.base_s + self.batch_discount * self.per_unit_s * sum(units)


DEFAULT_COSTS = {
    "asr": CostModel(0.1, 0.05, 0.5),
    "st": CostModel(0.1, 0.05, 0.5),
    "mt": CostModel(0.05, 0.01, 0.5),
}


def stable_hash(*parts: object) -> int:
    return zlib.crc32("\x1f".join(map(str, parts)).encode())


@dataclass(frozen=True)
class MockNoiseModel:
    """Deterministic perturbation of tokens that lack right context.

    A token with fewer than ``horizon_s`` seconds of audio after its start is
    perturbed iff ``stable_hash(seed, token, context_frames) % perturb_period
    == 0``. ``horizon_s = 0`` disables noise.
    """

    horizon_s: float = 1.5
    perturb_period: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.perturb_period < 1:
            raise ValueError("perturb_period must be >= 1")

    def perturbs(self, token: Token, context_frames: int) -> bool:
        if context_frames * FRAME_S >= self.horizon_s - 1e-9:
            return False
        return stable_hash(self.seed, token, context_frames) % self.perturb_period == 0

    def apply(self, token: Token, context_frames: int) -> Token:
        return perturb(token) if self.perturbs(token, context_frames) else token


NO_NOISE = MockNoiseModel(horizon_s=0.0)


def perturb(token: Token) -> Token:
    return token + PERTURB_MARK


def clean(token: Token) -> Token:
    return token.rstrip(PERTURB_MARK)


def is_terminator(token: Token, terminators=TERMINATORS) -> bool:
    base = clean(token)
    return bool(base) and base[-1] in terminators


def target_word(token: Token) -> Token:
    """Mock lexicon: ``aK -> bK``; terminators map to themselves; the
    perturbation mark is carried over."""
    base = clean(token)
    mark = token[len(base):]
    if base and all(ch in TERMINATORS for ch in base):
        return token
    return "b" + (base[1:] if base.startswith("a") else base) + mark


def _pair_groups(tokens: Sequence[Token], offset: int = 0) -> list[list[int]]:
    """Source index groups in target order: adjacent pairs swap, an unpaired
    token before a terminator (or at the end) stays, terminators stand alone."""
    groups: list[list[int]] = []
    run: list[int] = []

    def flush() -> None:
        for i in range(0, len(run) - 1, 2):
            groups.append([run[i + 1], run[i]])
        if len(run) % 2:
            groups.append([run[-1]])
        run.clear()

    for i, tok in enumerate(tokens, offset):
        if is_terminator(tok):
            flush()
            groups.append([i])
        else:
            run.append(i)
    flush()
    return groups


def pair_swap(tokens: Sequence[Token]) -> list[Token]:
    return [target_word(tokens[i]) for grp in _pair_groups(tokens) for i in grp]


def _consistent(forced: Sequence[Token], words: Sequence[Token]) -> bool:
    return len(forced) <= len(words) and all(clean(f) == clean(w) for f, w in zip(forced, words))


def _aligned(source: Sequence[Token], forced: Sequence[Token]) -> list[tuple[Token, int]]:
    """Target words with the source index of their pair's latest token, such
    that the first ``len(forced)`` entries match ``forced``.

    When the forced prefix agrees with the translation of the whole source
    that translation is used. Otherwise the forced prefix is read as covering
    some source prefix of length m (its first m words translate exactly those
    source words, in any order) followed by the start of the fresh mapping
    of ``source[m:]``; the largest such m wins.
    """

    def aligned(groups):
        return [(target_word(source[i]), max(g)) for g in groups for i in g]

    forced_clean = [clean(f) for f in forced]
    for m in [0, *range(min(len(forced), len(source)), 0, -1)]:
        if m and Counter(forced_clean[:m]) != Counter(clean(target_word(t)) for t in source[:m]):
            continue
        tail = aligned(_pair_groups(source[m:], offset=m))
        if _consistent(forced[m:], [w for w, _ in tail]):
            return aligned(_pair_groups(source[:m])) + tail
    raise ContractViolation(
        f"forced prefix {list(forced)} is no continuation of a translation of {list(source)}"
    )


def _check_forced(forced: Sequence[Token], expected: Sequence[Token], what: str) -> None:
    if not _consistent(forced, expected):
        raise ContractViolation(
            f"forced prefix {list(forced)} is inconsistent with {what} {list(expected)}"
        )


def mock_mt_translate(source: Sequence[Token], forced_prefix: Sequence[Token] = ()) -> list[Token]:
    """Pair-swap mock MT with forced-prefix continuation.

    The forced prefix is reproduced verbatim and the mapping continues from
    the source position it covers.
    """
    forced = list(forced_prefix)
    if len(forced) > len(source):
        raise ContractViolation("forced prefix longer than the source")
    return forced + [w for w, _ in _aligned(source, forced)[len(forced):]]


def _read_labels(frames: Sequence[AudioFrame]) -> list[tuple[Token, int, int]]:
    """(token, start frame, end frame exclusive) for each labelled token."""
    out = []
    start = 0
    for i, fr in enumerate(frames):
        if fr.label is not None:
            out.append((fr.label, start, i + 1))
            start = i + 1
    return out


def mock_asr_decode(
    frames: Sequence[AudioFrame],
    forced_prefix: Sequence[Token] = (),
    noise: MockNoiseModel = NO_NOISE,
    start_s: float = 0.0,
    ended: bool = False,
) -> TimedHypothesis:
    labels = _read_labels(frames)
    forced = tuple(forced_prefix)
    _check_forced(forced, [tok for tok, _, _ in labels], "audio labels")
    n = len(frames)
    tokens = list(forced)
    for tok, s, _ in labels[len(forced):]:
        tokens.append(tok if ended else noise.apply(tok, n - s))
    times = tuple(start_s + e * FRAME_S for _, _, e in labels)
    return TimedHypothesis(tuple(tokens), times)


def mock_st_decode(
    frames: Sequence[AudioFrame],
    forced_prefix: Sequence[Token] = (),
    noise: MockNoiseModel = NO_NOISE,
    start_s: float = 0.0,
    ended: bool = False,
) -> TimedHypothesis:
    """Labels -> pair-swap translation, with noise applied on the target side.

    A target token's alignment (end time, right context) is taken from the
    latest source token of its pair.
    """
    labels = _read_labels(frames)
    source = [tok for tok, _, _ in labels]
    forced = tuple(forced_prefix)
    if len(forced) > len(source):
        raise ContractViolation("forced prefix longer than the recognised source")
    aligned = _aligned(source, forced)
    n = len(frames)
    tokens = list(forced)
    for word, last in aligned[len(forced):]:
        tokens.append(word if ended else noise.apply(word, n - labels[last][1]))
    times = _monotone([start_s + labels[last][2] * FRAME_S for _, last in aligned])
    return TimedHypothesis(tuple(tokens), tuple(times))


def _monotone(times: list[float]) -> list[float]:
    out = []
    hi = float("-inf")
    for t in times:
        hi = max(hi, t)
        out.append(hi)
    return out


class Decoder(Protocol):
    def __call__(self, request: BackendRequest) -> TimedHypothesis: ...


@dataclass
class MockBackend:
    """Callable mock model of one kind; pure function of the request."""

    kind: str
    noise: MockNoiseModel = NO_NOISE
    calls: int = field(default=0, compare=False)

    def __call__(self, request: BackendRequest) -> TimedHypothesis:
        if request.kind != self.kind:
            raise BackendError(f"{self.kind} backend got a {request.kind} request")
        self.calls += 1
        if self.kind == "asr":
            hyp = mock_asr_decode(request.input, request.forced_prefix, self.noise,
                                  request.input_start_s, request.ended)
        elif self.kind == "st":
            hyp = mock_st_decode(request.input, request.forced_prefix, self.noise,
                                 request.input_start_s, request.ended)
        elif self.kind == "mt":
            hyp = TimedHypothesis(tuple(mock_mt_translate(request.input, request.forced_prefix)))
        else:
            raise BackendError(f"unknown backend kind {self.kind!r}")
        if hyp.tokens[: len(request.forced_prefix)] != tuple(request.forced_prefix):
            raise ContractViolation("response does not start with the forced prefix")
        return hyp

    def offline(self, request: BackendRequest) -> TimedHypothesis:
        """Full-context decode without forced prefix."""
        full = BackendRequest(request.kind, request.input, (), request.session,
                              request.input_start_s, ended=True)
        return self(full)


def process_batch(
    requests: Sequence[BackendRequest], cost: CostModel, model: Decoder
) -> tuple[list[TimedHypothesis], float]:
    """Run a homogeneous batch; returns positionally matched responses and the
    simulated compute delay."""
    if not requests:
        return [], 0.0
    kinds = {r.kind for r in requests}
    if len(kinds) != 1:
        raise BackendError(f"mixed request kinds in one batch: {sorted(kinds)}")
    responses = [model(r) for r in requests]
    for req, resp in zip(requests, responses):
        if resp.tokens[: len(req.forced_prefix)] != tuple(req.forced_prefix):
            raise ContractViolation(f"forced prefix not reproduced for session {req.session!r}")
    return responses, cost.delay([r.units for r in requests])


class Clock(Protocol):
    def now(self) -> float: ...

    def call_later(self, delay: float, fn: Callable[[], None]) -> None: ...


class BatchingServer:
    """Shared batching front of one hosted model.

    Requests queue up; whenever a replica is free the server takes up to
    ``max_batch`` queued requests (after a zero-length window, so requests
    submitted at the same instant share a batch) and completes them after the
    cost-model delay.
    """

    def __init__(
        self,
        clock: Clock,
        model: Decoder,
        cost: CostModel,
        max_batch: int = 8,
        replicas: int = 1,
    ) -> None:
        if max_batch < 1 or replicas < 1:
            raise ValueError("max_batch and replicas must be >= 1")
        self.clock = clock
        self.model = model
        self.cost = cost
        self.max_batch = max_batch
        self.replicas = replicas
        self._free = replicas
        self._queue: deque[tuple[BackendRequest, Callable[[TimedHypothesis], None]]] = deque()
        self._dispatch_pending = False
        self.requests = 0
        self.batches = 0
        self.busy_s = 0.0

    def submit(self, request: BackendRequest, callback: Callable[[TimedHypothesis], None]) -> None:
        self._queue.append((request, callback))
        self.requests += 1
        self._schedule_dispatch()

    def _schedule_dispatch(self) -> None:
        if not self._dispatch_pending and self._free and self._queue:
            self._dispatch_pending = True
            self.clock.call_later(0.0, self._dispatch)

    def _dispatch(self) -> None:
        self._dispatch_pending = False
        while self._free and self._queue:
            batch = [self._queue.popleft() for _ in range(min(self.max_batch, len(self._queue)))]
            responses, delay = process_batch([r for r, _ in batch], self.cost, self.model)
            self._free -= 1
            self.batches += 1
            self.busy_s += delay
            self.clock.call_later(delay, lambda b=batch, rs=responses: self._complete(b, rs))

    def _complete(self, batch, responses) -> None:
        self._free += 1
        for (_, cb), resp in zip(batch, responses):
            cb(resp)
        self._schedule_dispatch()

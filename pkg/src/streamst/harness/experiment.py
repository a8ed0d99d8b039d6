"""Experiment configurations, runs and sweeps."""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

from ..backend import DEFAULT_COSTS, CostModel, MockBackend, MockNoiseModel
from ..core import SessionGraph, SessionId, cascaded_graph, e2e_graph, transcript_node, translation_node
from ..eval import MetricsReport, SessionOutput, aggregate, evaluate_session, reports_csv, write_log
from ..eval.scoring import bleu
from .clock import VirtualClock
from .corpus import Corpus, CorpusParams, generate_corpus
from .runtime import Runtime, RuntimeConfig

logger = logging.getLogger(__name__)

MAX_EVENTS = 5_000_000


@dataclass(frozen=True)
class NoiseParams:
    """Mock instability knobs. The end-to-end model gets the smaller period,
    i.e. it perturbs more often than the cascaded ASR."""

    horizon_s: float = 1.5
    asr_perturb_period: int = 3
    st_perturb_period: int = 2
    seed: int = 0

    def model(self, kind: str) -> MockNoiseModel:
        period = self.st_perturb_period if kind == "st" else self.asr_perturb_period
        return MockNoiseModel(self.horizon_s, period, self.seed)


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "fixed"
    path: str = "cascaded"
    chunk_size_s: float = 1.0
    workers: int = 1
    parallel_sessions: int = 1
    seed: int = 1
    corpus: CorpusParams = field(default_factory=CorpusParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    costs: dict[str, CostModel] = field(default_factory=lambda: dict(DEFAULT_COSTS))
    max_input_s: float = 20.0
    trigger_words: int = 1
    packet_frames: int = 4
    cpu_step_s: float = 0.01
    cpu_per_message_s: float = 0.002
    max_batch: int = 8
    replicas: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "chunk_size_s", float(self.chunk_size_s))
        if self.mode not in ("fixed", "revision"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.path not in ("cascaded", "e2e"):
            raise ValueError(f"unknown path {self.path!r}")
        if self.chunk_size_s <= 0:
            raise ValueError("chunk_size_s must be > 0")
        if min(self.workers, self.parallel_sessions) < 1:
            raise ValueError("workers and parallel_sessions must be >= 1")

    def graph(self) -> SessionGraph:
        if self.path == "cascaded":
            return cascaded_graph(self.mode)
        return e2e_graph(self.mode)

    def runtime_config(self) -> RuntimeConfig:
        return RuntimeConfig(
            workers=self.workers,
            cpu_step_s=self.cpu_step_s,
            cpu_per_message_s=self.cpu_per_message_s,
            packet_frames=self.packet_frames,
            max_batch=self.max_batch,
            replicas=self.replicas,
            chunk_size_s=self.chunk_size_s,
            max_input_s=max(self.max_input_s, 2 * self.chunk_size_s),
            trigger_words=self.trigger_words,
            costs=dict(self.costs),
        )

    def key(self) -> dict:
        return {"path": self.path, "mode": self.mode, "C": self.chunk_size_s,
                "w": self.workers, "s": self.parallel_sessions, "seed": self.seed}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["costs"] = {k: asdict(v) for k, v in self.costs.items()}
        return d

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment fields: {sorted(unknown)}")
        kw = dict(data)
        if "corpus" in kw:
            kw["corpus"] = CorpusParams(**kw["corpus"])
        if "noise" in kw:
            kw["noise"] = NoiseParams(**kw["noise"])
        if "costs" in kw:
            costs = dict(DEFAULT_COSTS)
            for k, v in kw["costs"].items():
                costs[k] = CostModel(**v)
            kw["costs"] = costs
        return cls(**kw)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    sessions: dict[SessionId, MetricsReport]
    aggregate: MetricsReport
    logs: dict[SessionId, list]
    talks: dict[SessionId, str]
    end_time_s: float


def models_for(config: ExperimentConfig) -> dict[str, MockBackend]:
    return {k: MockBackend(k, config.noise.model(k) if k != "mt" else MockNoiseModel(0.0))
            for k in ("asr", "mt", "st")}


def offline_bleu(config: ExperimentConfig, corpus: Corpus) -> float | None:
    """BLEU of whole-utterance decoding with full context."""
    from ..backend import BackendRequest

    models = models_for(config)
    hyps, refs = [], []
    for talk in corpus.talks:
        frames = talk.frames
        start = 0
        for ref in talk.translation:
            # each utterance is the run of speech frames up to its last label
            while not frames[start].speech:
                start += 1
            end = start
            while end < len(frames) and frames[end].speech:
                end += 1
            utt = tuple(frames[start:end])
            start = end
            if config.path == "e2e":
                hyp = models["st"].offline(BackendRequest("st", utt)).tokens
            else:
                src = models["asr"].offline(BackendRequest("asr", utt)).tokens
                hyp = models["mt"](BackendRequest("mt", src)).tokens
            hyps.append(list(hyp))
            refs.append(ref)
    return bleu(hyps, refs)


def run_experiment(config: ExperimentConfig, corpus: Corpus | None = None) -> ExperimentResult:
    """Play every talk as one session, ``parallel_sessions`` at a time; a new
    wave starts when the previous one has fully closed."""
    corpus = corpus or generate_corpus(config.seed, config.corpus)
    clock = VirtualClock()
    rt = Runtime(config.runtime_config(), models_for(config), clock)
    graph = config.graph()
    talks = list(corpus.talks)
    waves = [talks[i:i + config.parallel_sessions] for i in range(0, len(talks), config.parallel_sessions)]
    session_talk: dict[SessionId, object] = {}
    open_now: set[SessionId] = set()
    state = {"wave": 0}

    def start_wave(k: int) -> None:
        if k >= len(waves):
            return
        for talk in waves[k]:
            sid = rt.open_session(graph)
            session_talk[sid] = talk
            open_now.add(sid)
            rt.stream(sid, talk.frames)
        state["wave"] = k

    def closed(sid: SessionId) -> None:
        open_now.discard(sid)
        if not open_now:
            clock.call_later(0.0, lambda: start_wave(state["wave"] + 1))

    rt.on_closed(closed)
    start_wave(0)
    clock.run(MAX_EVENTS)
    if open_now or len(session_talk) != len(talks):
        raise RuntimeError(f"simulation stalled with open sessions {sorted(open_now)}")

    tr_node = translation_node(graph)
    asr_node = transcript_node(graph)
    outputs: dict[SessionId, SessionOutput] = {}
    per_session: dict[SessionId, MetricsReport] = {}
    for sid, talk in session_talk.items():
        out = SessionOutput(
            translation=rt.user_messages(sid, tr_node),
            transcript=rt.user_messages(sid, asr_node) if asr_node else None,
            ref_translation=talk.translation,
            ref_transcript=talk.transcript,
        )
        outputs[sid] = out
        per_session[sid] = evaluate_session(out)
    speech = "st" if config.path == "e2e" else "asr"
    extras = {
        "skipped": rt.middleware_stat(speech, "skipped"),
        "backend_requests": sum(s.requests for s in rt.servers.values()),
        "backend_batches": sum(s.batches for s in rt.servers.values()),
        "offline_B": offline_bleu(config, corpus),
    }
    agg = aggregate(outputs.values(), extras)
    logs = {sid: [m for m in rt.received[sid] if not m.eos] for sid in session_talk}
    return ExperimentResult(config, per_session, agg, logs,
                            {sid: t.id for sid, t in session_talk.items()}, clock.now())


def write_results(result: ExperimentResult, outdir: str | Path) -> Path:
    """JSON report per session plus the session logs, under ``outdir``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for sid, rep in result.sessions.items():
        doc = {"session": sid, "talk": result.talks[sid], "config": result.config.to_dict(),
               "metrics": rep.to_dict()}
        (out / f"{sid}.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
        write_log(out / f"{sid}.log.jsonl", result.logs[sid])
    summary = {"config": result.config.to_dict(), "aggregate": result.aggregate.to_dict()}
    (out / "aggregate.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return out


def grid(base: ExperimentConfig, **axes: Sequence) -> list[ExperimentConfig]:
    """Cross product of ``axes`` (ExperimentConfig field -> values) over ``base``."""
    names = list(axes)
    return [replace(base, **dict(zip(names, values)))
            for values in itertools.product(*(axes[n] for n in names))]


def sweep(configs: Iterable[ExperimentConfig]) -> tuple[list[ExperimentResult], str]:
    """Run every config, sharing one corpus per (seed, corpus params); returns
    the results and the CSV table (one row per config)."""
    cache: dict[tuple, Corpus] = {}
    results = []
    for cfg in configs:
        key = (cfg.seed, cfg.corpus)
        if key not in cache:
            cache[key] = generate_corpus(cfg.seed, cfg.corpus)
        logger.info("running %s", cfg.key())
        results.append(run_experiment(cfg, cache[key]))
    csv_text = reports_csv([(r.config.key(), r.aggregate) for r in results])
    return results, csv_text


def standard_configs(base: ExperimentConfig | None = None) -> list[ExperimentConfig]:
    """The eight-system comparison suite: path x mode x C in {1, 2}."""
    return grid(base or ExperimentConfig(), path=["cascaded", "e2e"],
                mode=["fixed", "revision"], chunk_size_s=[1.0, 2.0])

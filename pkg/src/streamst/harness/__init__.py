"""Simulation harness: virtual clock, synthetic corpus, runtime and experiments."""

from .clock import AsyncioClock, VirtualClock
from .corpus import Corpus, CorpusParams, Talk, generate_corpus
from .experiment import (
    ExperimentConfig,
    ExperimentResult,
    NoiseParams,
    grid,
    offline_bleu,
    run_experiment,
    standard_configs,
    sweep,
    write_results,
)
from .runtime import Runtime, RuntimeConfig

__all__ = [
    "AsyncioClock", "VirtualClock", "Corpus", "CorpusParams", "Talk", "generate_corpus",
    "ExperimentConfig", "ExperimentResult", "NoiseParams", "grid", "offline_bleu",
    "run_experiment", "standard_configs", "sweep", "write_results", "Runtime", "RuntimeConfig",
]

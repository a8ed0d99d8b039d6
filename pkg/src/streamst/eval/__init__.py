"""Latency, flicker and quality metrics over received message logs."""

from .latency import (
    WORD_DURATION_S,
    Commitment,
    MessageBlock,
    count_flickers,
    delay,
    extract_first_unchanged,
    final_stable_text,
    first_unchanged,
    flicker_rate,
    latency,
    model_independent_commitments,
    model_independent_latency,
    session_latency,
    split_blocks,
)
from .report import (
    LatencyReport,
    MetricsReport,
    SessionOutput,
    aggregate,
    evaluate_session,
    latency_report,
    read_log,
    read_references,
    reports_csv,
    write_log,
)
from .scoring import bleu, edit_distance, resegment, segmentation_cost, wer

__all__ = [
    "WORD_DURATION_S", "Commitment", "MessageBlock", "count_flickers", "delay",
    "extract_first_unchanged", "final_stable_text", "first_unchanged", "flicker_rate",
    "latency", "model_independent_commitments", "model_independent_latency", "session_latency",
    "split_blocks",
    "LatencyReport", "MetricsReport", "SessionOutput", "aggregate", "evaluate_session",
    "latency_report", "read_log", "read_references", "reports_csv", "write_log",
    "bleu", "edit_distance", "resegment", "segmentation_cost", "wer",
]

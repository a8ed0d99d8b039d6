"""Acceptance suite: metric oracles, policy properties and trend checks.

Every test records one PASS/FAIL line (listed again in the terminal summary)
and then asserts on it at the stated tolerance.
"""

from __future__ import annotations

import itertools
import math
import random
import time

from conftest import labelled_frames
from streamst.backend import NO_NOISE, BackendRequest, MockBackend, MockNoiseModel
from streamst.broker import Broker
from streamst.core import Message, e2e_graph
from streamst.eval import (
    MessageBlock,
    bleu,
    delay,
    extract_first_unchanged,
    latency,
    resegment,
    segmentation_cost,
    wer,
)
from streamst.harness import ExperimentConfig, grid, run_experiment, standard_configs, sweep
from streamst.mediator import Mediator
from streamst.speech import La2Config, SpeechSegmentState, la2_step

C_SWEEP = (0.5, 1.0, 2.0, 3.0)


def _fmt(xs):
    return "[" + ", ".join(f"{x:.3f}" for x in xs) + "]"


def _agg(**kw):
    return run_experiment(ExperimentConfig(**kw)).aggregate


def test_criterion_01_delay_exactness(verdict):
    t0 = time.perf_counter()
    d = delay(10, 12, 13)
    lat = latency([(0, 2, 3), (2, 3, 5)])
    dt = time.perf_counter() - t0
    ok = d == 2.0 and abs(lat - 6.5 / 3) <= 1e-9 and dt < 1
    assert verdict(1, "delay and latency oracles", ok, f"delay={d}, latency={lat:.12f}, {dt:.3f}s")


def _dp_oracle(a, b):
    """Full-matrix Levenshtein."""
    m = [[i + j if i * j == 0 else 0 for j in range(len(b) + 1)] for i in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            m[i][j] = min(m[i - 1][j] + 1, m[i][j - 1] + 1, m[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return m[-1][-1]


def test_criterion_02_wer_bleu_exactness(verdict):
    t0 = time.perf_counter()
    rng = random.Random(20)
    vocab = ["w1", "w2", "w3", "W1", "w4"]
    mismatches = 0
    for _ in range(200):
        r = [rng.choice(vocab) for _ in range(rng.randint(1, 50))]
        h = [rng.choice(vocab) for _ in range(rng.randint(0, 50))]
        if wer([h], [r]) != _dp_oracle(h, r) / len(r):
            mismatches += 1
    x = [["b2", "b1", "b3", "."], ["b5", "b4", "!"]]
    identity = bleu(x, x)
    empty = bleu([[], []], x)
    refs = [["the", "cat", "sat", "on", "the", "mat"], ["a", "b", "c", "d"], ["x", "y", "z"]]
    hyps = [["the", "cat", "sat", "on", "mat"], ["a", "b", "c", "d"], ["x", "y", "w"]]
    p = [11 / 12, 7 / 9, 4 / 6, 2 / 3]
    textbook = 100 * math.exp(1 - 13 / 12) * math.exp(sum(map(math.log, p)) / 4)
    got = bleu(hyps, refs)
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and identity == 100.0 and empty == 0.0 and abs(got - textbook) <= 1e-6 and dt < 10
    assert verdict(2, "WER and BLEU oracles", ok,
                   f"wer mismatches={mismatches}/200, bleu(x,x)={identity}, bleu(empty)={empty}, "
                   f"hand corpus {got:.8f} vs {textbook:.8f}, {dt:.2f}s")


def test_criterion_03_resegmentation_optimality(verdict):
    t0 = time.perf_counter()
    rng = random.Random(30)
    vocab = ["b1", "b2", "b3", "."]
    bad = 0
    for _ in range(100):
        refs = [[rng.choice(vocab) for _ in range(rng.randint(0, 5))] for _ in range(rng.randint(1, 4))]
        hyp = [rng.choice(vocab) for _ in range(rng.randint(0, 12))]
        best = min(
            segmentation_cost([hyp[a:b] for a, b in zip((0, *cuts), (*cuts, len(hyp)))], refs)
            for cuts in itertools.combinations_with_replacement(range(len(hyp) + 1), len(refs) - 1)
        )
        if segmentation_cost(resegment(hyp, refs), refs) != best:
            bad += 1
    dt = time.perf_counter() - t0
    assert verdict(3, "resegmentation equals exhaustive minimum", bad == 0 and dt < 30,
                   f"{bad}/100 suboptimal, {dt:.2f}s")


def test_criterion_04_first_unchanged_tiling(verdict):
    t0 = time.perf_counter()
    rng = random.Random(40)
    bad = 0
    for _ in range(1000):
        final = tuple(rng.choice("abc") for _ in range(rng.randint(0, 6)))
        msgs = [Message("s", "text", tuple(rng.choice("abc") for _ in range(rng.randint(0, 6))), False)
                for _ in range(rng.randint(0, 5))]
        msgs.append(Message("s", "text", final, True))
        pos = 0
        for c in extract_first_unchanged(MessageBlock(tuple(msgs))):
            if c.start != pos or c.end <= c.start:
                bad += 1
                break
            pos = c.end
        else:
            bad += pos != len(final)
    words = lambda t: tuple(t.split())  # noqa: E731
    block = MessageBlock(tuple(Message("s", "text", words(t), st) for t, st in
                               [("the dog", False), ("the cat", False), ("the cat sat", False),
                                ("the cat sat", True)]))
    example = [(c.message.payload, c.start, c.end) for c in extract_first_unchanged(block)]
    expected = [(words("the dog"), 0, 1), (words("the cat"), 1, 2), (words("the cat sat"), 2, 3)]
    dt = time.perf_counter() - t0
    ok = bad == 0 and example == expected and dt < 5
    assert verdict(4, "first-unchanged spans tile the final message", ok,
                   f"{bad}/1000 bad blocks, worked example {'ok' if example == expected else example}, "
                   f"{dt:.2f}s")


def _run_fixed(frames, chunk, noise, packet):
    seg = SpeechSegmentState(start_s=0.0, session="s", source="asr", kind="asr")
    backend = MockBackend("asr", noise)
    cfg = La2Config(chunk, "fixed")
    history, unstable = [], 0
    stable: list[str] = []
    n = 0
    while n < len(frames):
        step = frames[n:n + packet]
        n += len(step)
        for f in step:
            seg.append(f)
        for m in la2_step(seg, backend, cfg):
            unstable += not m.stable
            stable += m.payload
        history.append(tuple(stable))
    seg.ended = True
    for m in la2_step(seg, backend, cfg):
        unstable += not m.stable
        stable += m.payload
    history.append(tuple(stable))
    return history, unstable, backend


def test_criterion_05_stability_policy(verdict):
    t0 = time.perf_counter()
    rng = random.Random(50)
    noisy = MockNoiseModel(1.5, 3, seed=5)
    not_append, unstable_msgs, offline_mismatch = 0, 0, 0
    for _ in range(1000):
        words = [f"a{rng.randint(1, 50)}" for _ in range(rng.randint(1, 24))]
        frames = labelled_frames(words, token_s=rng.choice([0.3, 0.4, 0.5]))
        packet = rng.randint(1, 8)
        for chunk in (0.5, 1.0, 2.0):
            hist, unstable, _ = _run_fixed(frames, chunk, noisy, packet)
            not_append += any(b[: len(a)] != a for a, b in zip(hist, hist[1:]))
            unstable_msgs += unstable
            hist, unstable, backend = _run_fixed(frames, chunk, NO_NOISE, packet)
            offline = backend.offline(BackendRequest("asr", tuple(frames))).tokens
            offline_mismatch += hist[-1] != offline
            unstable_msgs += unstable
    dt = time.perf_counter() - t0
    ok = not_append == 0 and unstable_msgs == 0 and offline_mismatch == 0 and dt < 60
    assert verdict(5, "fixed-mode LA2 append-only, stable-only, offline-consistent", ok,
                   f"3000 runs per noise setting: {not_append} non-append-only, {unstable_msgs} unstable "
                   f"messages, {offline_mismatch} offline mismatches, {dt:.1f}s")


def test_criterion_06_fixed_mode_trend(verdict):
    t0 = time.perf_counter()
    ok = True
    parts = []
    for path in ("cascaded", "e2e"):
        rows = [_agg(path=path, mode="fixed", chunk_size_s=c) for c in C_SWEEP]
        L = [r.L for r in rows]
        W = [r.W for r in rows]
        inc = all(a < b for a, b in zip(L, L[1:]))
        nonincr = W[0] >= W[1] >= W[2]
        ok &= inc and nonincr
        parts.append(f"{path} L={_fmt(L)} W={_fmt(W)}")
    dt = time.perf_counter() - t0
    ok &= dt < 120
    assert verdict(6, "fixed-mode latency rises and WER falls with C", ok, "; ".join(parts) + f", {dt:.1f}s")


def test_criterion_07_revision_vs_fixed(verdict):
    t0 = time.perf_counter()
    fixed = [_agg(mode="fixed", chunk_size_s=c) for c in C_SWEEP]
    rev = [_agg(mode="revision", chunk_size_s=c) for c in C_SWEEP]
    lat = all(r.L >= f.L for r, f in zip(rev, fixed))
    qual = all(r.B >= f.B for r, f in zip(rev, fixed))
    flick = all(r.F > 0 for r in rev) and all(f.F == 0 for f in fixed)
    dt = time.perf_counter() - t0
    ok = lat and qual and flick and dt < 120
    detail = (f"cascaded, C={list(C_SWEEP)}: L fixed={_fmt([f.L for f in fixed])} "
              f"revision={_fmt([r.L for r in rev])} [{'ok' if lat else 'violated'}]; "
              f"B fixed={_fmt([f.B for f in fixed])} revision={_fmt([r.B for r in rev])} "
              f"[{'ok' if qual else 'violated'}]; F revision={_fmt([r.F for r in rev])} "
              f"fixed={_fmt([f.F for f in fixed])} [{'ok' if flick else 'violated'}]; {dt:.1f}s")
    assert verdict(7, "revision mode is slower, better and flickers", ok, detail)


def test_criterion_08_e2e_vs_cascaded(verdict):
    t0 = time.perf_counter()
    casc = [_agg(path="cascaded", mode="revision", chunk_size_s=c).L for c in C_SWEEP]
    e2e = [_agg(path="e2e", mode="revision", chunk_size_s=c).L for c in C_SWEEP]
    dt = time.perf_counter() - t0
    ok = all(e < c for e, c in zip(e2e, casc)) and dt < 60
    info_c = [_agg(path="cascaded", chunk_size_s=c).L for c in C_SWEEP]
    info_e = [_agg(path="e2e", chunk_size_s=c).L for c in C_SWEEP]
    assert verdict(8, "e2e latency below cascaded (revision mode)", ok,
                   f"C={list(C_SWEEP)}: e2e={_fmt(e2e)} cascaded={_fmt(casc)}, {dt:.1f}s; "
                   f"not counted, fixed mode: e2e={_fmt(info_e)} cascaded={_fmt(info_c)}")


def test_criterion_09_load_scaling(verdict):
    t0 = time.perf_counter()
    base = ExperimentConfig(path="e2e", mode="revision", chunk_size_s=2.0)
    results, _ = sweep(grid(base, workers=[1, 5], parallel_sessions=[1, 2, 5]))
    cell = {(r.config.workers, r.config.parallel_sessions): r.aggregate for r in results}
    lat = cell[1, 5].L > cell[5, 5].L
    flick = all(cell[w, 1].F > cell[w, 2].F > cell[w, 5].F for w in (1, 5))
    skipped = all(cell[w, 5].extras["skipped"] > 0 for w in (1, 5))
    dt = time.perf_counter() - t0
    ok = lat and flick and skipped and dt < 180
    F = {w: _fmt([cell[w, s].F for s in (1, 2, 5)]) for w in (1, 5)}
    assert verdict(9, "load grid trends", ok,
                   f"L(w=1,s=5)={cell[1, 5].L:.3f} vs L(w=5,s=5)={cell[5, 5].L:.3f}; F over s=1,2,5: "
                   f"w=1 {F[1]}, w=5 {F[5]}; skipped at s=5: {cell[1, 5].extras['skipped']}, "
                   f"{cell[5, 5].extras['skipped']}; {dt:.1f}s")


def _order(a, b, tol=1e-9):
    return 0 if abs(a - b) < tol else (1 if a > b else -1)


def test_criterion_10_ranking_cross_check(verdict):
    results, _ = sweep(standard_configs())
    rows = [(r.config.key(), r.aggregate.L, r.aggregate.L_mi) for r in results]
    disagree = []
    for (ka, la, ma), (kb, lb, mb) in itertools.combinations(rows, 2):
        if _order(la, lb) != _order(ma, mb):
            name = lambda k: f"{k['path']}/{k['mode']}/C={k['C']:g}"  # noqa: E731
            disagree.append(f"{name(ka)} vs {name(kb)}: L {la:.3f}/{lb:.3f}, L_mi {ma:.3f}/{mb:.3f}")
    assert verdict(10, "model-independent latency ranks systems like latency", not disagree,
                   f"{len(disagree)} of 28 pairs disagree" + (": " + "; ".join(disagree) if disagree else ""))


def test_criterion_11_sweep_determinism(verdict):
    _, first = sweep(standard_configs())
    _, second = sweep(standard_configs())
    same = first.encode() == second.encode()
    assert verdict(11, "identical seeds give byte-identical CSV", same,
                   f"{len(first.encode())} bytes, {len(first.splitlines()) - 1} rows")


def test_criterion_12_sticky_queue(verdict):
    t0 = time.perf_counter()
    rng = random.Random(120)
    violations = 0
    total = 0
    for n_workers in range(1, 9):
        broker = Broker()
        workers = [f"st-w{i}" for i in range(n_workers)]
        med = Mediator(broker, {"st": workers})
        sids = [med.create_session(e2e_graph()) for _ in range(rng.randint(5, 40))]
        owner: dict = {}
        last: dict = {}

        def drain(w):
            nonlocal violations
            for m in broker.poll_pending(w, "st-in"):
                violations += owner.setdefault(m.session, w) != w
                violations += m.seq <= last.get(m.session, -1)
                last[m.session] = m.seq

        for _ in range(1250):
            med.route(Message(rng.choice(sids), "audio", ()))
            total += 1
            if rng.random() < 0.3:
                drain(rng.choice(workers))
        for w in workers:
            drain(w)
    dt = time.perf_counter() - t0
    ok = violations == 0 and total == 10_000 and dt < 10
    assert verdict(12, "sticky per-session routing and order", ok,
                   f"{total} messages over 1-8 workers, {violations} violations, {dt:.2f}s")

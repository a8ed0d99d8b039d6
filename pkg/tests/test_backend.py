from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import labelled_frames
from streamst.backend import (
    NO_NOISE,
    BackendError,
    BackendRequest,
    BatchingServer,
    ContractViolation,
    CostModel,
    MockBackend,
    MockNoiseModel,
    TimedHypothesis,
    clean,
    mock_asr_decode,
    mock_mt_translate,
    mock_st_decode,
    process_batch,
)
from streamst.core import FRAME_S
from streamst.harness.clock import VirtualClock

ALWAYS = MockNoiseModel(horizon_s=0.6, perturb_period=1)

words = st.lists(st.integers(1, 30).map(lambda k: f"a{k}"), max_size=12)


def test_cost_model_formulas():
    c = CostModel(0.1, 0.05, 0.5)
    assert c.delay([2.0]) == pytest.approx(0.1 + 0.05 * 2.0)
    assert c.delay([2.0] * 4) == pytest.approx(0.1 + 0.5 * 4 * 0.05 * 2.0)
    assert c.delay([]) == 0.0


def test_process_batch_delays():
    model = MockBackend("mt")
    cost = CostModel(0.05, 0.01, 0.5)
    req = BackendRequest("mt", ("a1", "a2", "."))
    out, d = process_batch([req], cost, model)
    assert out[0].tokens == ("b2", "b1", ".") and d == pytest.approx(0.08)
    out, d = process_batch([req] * 4, cost, model)
    assert len(out) == 4 and d == pytest.approx(0.05 + 0.5 * 4 * 0.01 * 3)
    assert process_batch([], cost, model) == ([], 0.0)


def test_process_batch_rejects_mixed_kinds():
    with pytest.raises(BackendError):
        process_batch([BackendRequest("mt", ()), BackendRequest("asr", ())], CostModel(), MockBackend("mt"))


def test_mt_examples():
    assert mock_mt_translate(["a1", "a2", "a3", "."]) == ["b2", "b1", "b3", "."]
    assert mock_mt_translate(["a1"]) == ["b1"]
    assert mock_mt_translate(["a1", "a2", "a3", "."], ["b2", "b1"]) == ["b2", "b1", "b3", "."]


def test_mt_terminators_reset_pairing():
    assert mock_mt_translate(["a1", "!", "a2", "a3", "?"]) == ["b1", "!", "b3", "b2", "?"]


def test_mt_forced_prefix_continues_after_committed_unpaired_word():
    # "b1" was committed while a1 had no partner; the mapping continues at a2
    assert mock_mt_translate(["a1", "a2", "a3"], ["b1"]) == ["b1", "b3", "b2"]
    # the first word of an unfinished pair
    assert mock_mt_translate(["a24", "a26"], ["b26"]) == ["b26", "b24"]


def test_mt_inconsistent_forced_prefix():
    with pytest.raises(ContractViolation):
        mock_mt_translate(["a1", "a2"], ["b7"])
    with pytest.raises(ContractViolation):
        mock_mt_translate(["a1"], ["b1", "b2"])


@given(words)
def test_pair_swap_is_its_own_forced_prefix(src):
    full = mock_mt_translate(src)
    for k in range(len(full) + 1):
        assert mock_mt_translate(src, full[:k]) == full


@given(words, st.data())
def test_forced_prefix_is_reproduced(src, data):
    prefix = data.draw(st.integers(0, len(src)))
    forced = mock_mt_translate(src[:prefix])
    assert mock_mt_translate(src, forced)[: len(forced)] == forced


def test_asr_examples():
    frames = labelled_frames(["t1", "t2", "t3", "t4"])
    hyp = mock_asr_decode(frames, noise=ALWAYS)
    assert hyp.tokens == ("t1", "t2", "t3", "t4~")
    assert mock_asr_decode(frames, noise=ALWAYS, ended=True).tokens == ("t1", "t2", "t3", "t4")
    assert hyp.token_end_s == pytest.approx((0.51, 0.99, 1.5, 2.01))


def test_asr_forced_prefix_against_labels():
    frames = labelled_frames(["t1", "t2"])
    assert mock_asr_decode(frames, ["t1", "t2~"]).tokens == ("t1", "t2~")
    with pytest.raises(ContractViolation):
        mock_asr_decode(frames, ["t1", "x"])


def test_asr_times_follow_input_start():
    hyp = mock_asr_decode(labelled_frames(["t1"]), start_s=3.0)
    assert hyp.token_end_s == pytest.approx((3.0 + 17 * FRAME_S,))


def test_st_examples():
    frames = labelled_frames(["a1", "a2", "."])
    assert mock_st_decode(frames, ended=True).tokens == ("b2", "b1", ".")
    noise = MockNoiseModel(1.5, 2, seed=0)
    part = labelled_frames(["a1"])
    out = mock_st_decode(part, noise=noise).tokens
    assert clean(out[0]) == "b1" and out == mock_st_decode(part, noise=noise).tokens
    assert mock_st_decode(frames, ["b2"], ended=True).tokens == ("b2", "b1", ".")


def test_st_pair_time_is_the_later_source_token():
    hyp = mock_st_decode(labelled_frames(["a1", "a2", "a3"]), ended=True)
    assert hyp.tokens == ("b2", "b1", "b3")
    assert hyp.token_end_s == pytest.approx((0.99, 0.99, 1.5))


def test_noise_model_rule():
    n = MockNoiseModel(horizon_s=1.5, perturb_period=1)
    assert n.apply("a1", 10) == "a1~"
    assert n.apply("a1", 50) == "a1"
    assert NO_NOISE.apply("a1", 0) == "a1"
    with pytest.raises(ValueError):
        MockNoiseModel(perturb_period=0)


def test_timed_hypothesis_validation():
    with pytest.raises(ValueError):
        TimedHypothesis(("a",), (1.0, 2.0))
    with pytest.raises(ValueError):
        TimedHypothesis(("a", "b"), (2.0, 1.0))


def test_backend_kind_guard():
    with pytest.raises(BackendError):
        MockBackend("mt")(BackendRequest("asr", ()))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 9), min_size=1, max_size=8), st.integers(0, 2**16))
def test_statelessness_under_shuffled_replay(lens, seed):
    model = MockBackend("st", MockNoiseModel(1.5, 2))
    frames = labelled_frames([f"a{k}" for k in range(1, 10)] + ["."])
    log = []
    for n in lens:
        req = BackendRequest("st", tuple(frames[: n * 17]), (), "s", 0.0, n == 9)
        log.append((req, model(req)))
    random.Random(seed).shuffle(log)
    for req, resp in log:
        assert model(req) == resp


@given(st.lists(st.integers(1, 20).map(lambda k: f"a{k}"), min_size=1, max_size=10), st.data())
def test_asr_label_prefix_monotonicity_on_ended_segments(src, data):
    frames = labelled_frames(src)
    full = mock_asr_decode(frames, ended=True).tokens
    cut = data.draw(st.integers(0, len(frames)))
    part = mock_asr_decode(frames[:cut], ended=True).tokens
    assert full[: len(part)] == part


def test_batching_server_shares_a_batch():
    clock = VirtualClock()
    cost = CostModel(0.1, 0.0, 0.5)
    server = BatchingServer(clock, MockBackend("mt"), cost, max_batch=8)
    done = []
    for k in range(3):
        server.submit(BackendRequest("mt", (f"a{k}",)), lambda r, k=k: done.append((k, clock.now())))
    clock.run()
    assert done == [(0, 0.1), (1, 0.1), (2, 0.1)]
    assert server.batches == 1 and server.requests == 3


def test_batching_server_queues_beyond_max_batch():
    clock = VirtualClock()
    server = BatchingServer(clock, MockBackend("mt"), CostModel(0.1, 0.0, 0.5), max_batch=2)
    done = []
    for k in range(3):
        server.submit(BackendRequest("mt", ("a1",)), lambda r: done.append(clock.now()))
    clock.run()
    assert done == pytest.approx([0.1, 0.1, 0.2])

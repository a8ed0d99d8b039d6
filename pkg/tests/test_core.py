from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from streamst.core import (
    GraphError,
    Message,
    Node,
    SessionGraph,
    cascaded_graph,
    common_token_prefix,
    e2e_graph,
    tokenize,
    transcript_node,
    translation_node,
    validate_graph,
)

tokens = st.lists(st.sampled_from(["a", "b", "c", "A"]), max_size=8)


def test_common_prefix_examples():
    assert common_token_prefix(["the", "cat", "sat"], ["the", "cat", "sits"]) == ["the", "cat"]
    assert common_token_prefix(["a"], ["b"]) == []
    assert common_token_prefix(["x", "y"], ["x", "y"]) == ["x", "y"]


def test_common_prefix_is_case_sensitive():
    assert common_token_prefix(["The"], ["the"]) == []


@given(tokens, tokens)
def test_common_prefix_properties(a, b):
    p = common_token_prefix(a, b)
    assert p == common_token_prefix(b, a)
    assert common_token_prefix(p, p) == p
    assert len(p) <= min(len(a), len(b))
    assert (p == a) == (b[: len(a)] == a)


def test_tokenize_splits_on_whitespace():
    assert tokenize("  a1  a2\t. ") == ["a1", "a2", "."]


def test_message_rejects_reversed_span():
    with pytest.raises(ValueError):
        Message("s", "text", ("x",), True, 2.0, 1.0)


def test_audio_message_has_no_tokens():
    with pytest.raises(TypeError):
        Message("s", "audio").tokens


def test_preset_graphs_validate():
    validate_graph(cascaded_graph())
    validate_graph(cascaded_graph("revision"))
    validate_graph(e2e_graph("revision"))


def test_preset_graph_nodes():
    assert translation_node(cascaded_graph()) == "mt"
    assert transcript_node(cascaded_graph()) == "asr"
    assert translation_node(e2e_graph()) == "st"
    assert transcript_node(e2e_graph()) is None


def _graph(nodes, edges):
    return SessionGraph(tuple(nodes), tuple(edges))


IN, OUT = Node("in", "gateway_in"), Node("out", "gateway_out")
ASR = Node("asr", "speech", "asr", backend="asr")
MT = Node("mt", "text", "mt", backend="mt")


def test_text_into_speech_is_a_port_mismatch():
    g = _graph([IN, ASR, MT, OUT], [("in", "asr"), ("asr", "mt"), ("mt", "asr"), ("mt", "out")])
    with pytest.raises(GraphError, match="port-type mismatch"):
        validate_graph(g)


@pytest.mark.parametrize(
    "nodes, edges, match",
    [
        ([IN, ASR, ASR, OUT], [("in", "asr"), ("asr", "out")], "duplicate"),
        ([IN, ASR, OUT], [("in", "asr"), ("asr", "nowhere")], "dangling"),
        ([IN, ASR], [("in", "asr")], "no gateway_out"),
        ([ASR, OUT], [("asr", "out")], "exactly one gateway_in"),
        ([IN, ASR, OUT, Node("x", "weird")], [("in", "asr"), ("asr", "out")], "unknown kind"),
        ([IN, Node("asr", "speech", "asr", mode="eager"), OUT], [("in", "asr"), ("asr", "out")], "mode"),
        ([IN, ASR, MT, OUT], [("in", "asr"), ("asr", "out")], "unreachable"),
    ],
)
def test_invalid_graphs(nodes, edges, match):
    with pytest.raises(GraphError, match=match):
        validate_graph(_graph(nodes, edges))


def test_cycle_between_text_nodes_is_rejected():
    mt2 = Node("mt2", "text", "mt2")
    g = _graph([IN, ASR, MT, mt2, OUT],
               [("in", "asr"), ("asr", "mt"), ("mt", "mt2"), ("mt2", "mt"), ("mt2", "out")])
    with pytest.raises(GraphError, match="cycle"):
        validate_graph(g)


@st.composite
def text_chains(draw):
    """A valid graph: in -> asr -> chain of text nodes (a DAG) -> out."""
    n = draw(st.integers(1, 6))
    nodes = [IN, ASR, OUT] + [Node(f"t{i}", "text", f"t{i}") for i in range(n)]
    edges = [("in", "asr"), ("asr", "t0"), (f"t{n - 1}", "out")]
    for j in range(1, n):
        for i in sorted(draw(st.sets(st.integers(0, j - 1), min_size=1))):
            edges.append((f"t{i}", f"t{j}"))
    return nodes, edges, n


@given(text_chains(), st.data())
def test_random_dags_validate_and_back_edge_breaks_them(chain, data):
    nodes, edges, n = chain
    validate_graph(_graph(nodes, edges))
    if n < 2:
        return
    j = data.draw(st.integers(1, n - 1))
    i = data.draw(st.integers(0, j - 1))
    if (f"t{i}", f"t{j}") not in edges:
        edges = edges + [(f"t{i}", f"t{j}")]
    with pytest.raises(GraphError, match="cycle"):
        validate_graph(_graph(nodes, edges + [(f"t{j}", f"t{i}")]))


def test_graph_dict_round_trip():
    g = cascaded_graph("revision")
    assert SessionGraph.from_dict(g.to_dict()) == g

"""Streaming speech translation server with a deterministic simulation harness."""

from .core import AudioFrame, Message, Node, SessionGraph, cascaded_graph, e2e_graph, validate_graph

__all__ = ["AudioFrame", "Message", "Node", "SessionGraph", "cascaded_graph", "e2e_graph",
           "validate_graph"]
__version__ = "0.1.0"

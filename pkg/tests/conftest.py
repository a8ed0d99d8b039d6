from __future__ import annotations

import pytest

from streamst.core import FRAME_S, AudioFrame, Message


def labelled_frames(tokens, token_s=0.5, speech=True):
    """Speech frames where token k's audio ends at ``(k + 1) * token_s``."""
    ends = [int(round((k + 1) * token_s / FRAME_S)) for k in range(len(tokens))]
    labels = [None] * (ends[-1] if ends else 0)
    for tok, e in zip(tokens, ends):
        labels[e - 1] = tok
    return [AudioFrame(bytes(960), lab, speech) for lab in labels]


def silence(n):
    return [AudioFrame(bytes(960), None, False) for _ in range(n)]


def text_msg(text, stable=True, t_s=0.0, t_e=0.0, t_r=0.0, seq=0, session="s", source="n"):
    return Message(session, "text", tuple(text.split()), stable, t_s, t_e, t_r, seq, source)


@pytest.fixture
def frames_of():
    return labelled_frames


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one acceptance line; the test then asserts on ``ok``."""

    def record(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {name} ({detail})"
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)

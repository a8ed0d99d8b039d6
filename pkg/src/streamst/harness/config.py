"""YAML experiment files and dotted-key overrides."""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .experiment import ExperimentConfig


def set_dotted(data: dict, key: str, value) -> None:
    """``set_dotted(d, "corpus.talks", 4)`` sets ``d["corpus"]["talks"]``."""
    parts = key.split(".")
    cur = data
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
        if not isinstance(cur, dict):
            raise ValueError(f"{key!r}: {p!r} is not a section")
    cur[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    """``"corpus.talks=4"`` -> ``("corpus.talks", 4)``; the value is read as YAML."""
    if "=" not in text:
        raise ValueError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_document(path: str | Path | None) -> dict:
    if path is None:
        return {}
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return data


def build_config(data: dict, overrides: list[str] = ()) -> ExperimentConfig:
    data = copy.deepcopy(data)
    data.pop("sweep", None)
    for text in overrides:
        set_dotted(data, *parse_override(text))
    return ExperimentConfig.from_dict(data)


def sweep_axes(data: dict) -> dict[str, list]:
    """The optional ``sweep:`` section, mapping config fields to value lists."""
    axes = data.get("sweep") or {}
    if not isinstance(axes, dict) or not all(isinstance(v, list) for v in axes.values()):
        raise ValueError("'sweep' must map field names to lists of values")
    return axes


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)

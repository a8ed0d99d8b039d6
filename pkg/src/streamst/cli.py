"""Command line: gen-corpus, run, sweep, eval-log, serve."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path

from .eval import SessionOutput, evaluate_session, read_log, read_references
from .harness.config import build_config, load_document, sweep_axes
from .harness.corpus import generate_corpus
from .harness.experiment import grid, run_experiment, sweep, write_results

# flag -> config key
_FLAGS = {
    "mode": "mode", "path": "path", "chunk_size": "chunk_size_s", "workers": "workers",
    "sessions": "parallel_sessions", "seed": "seed",
}


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, dotted for sections (corpus.talks=4)")
    p.add_argument("--mode", choices=["fixed", "revision"])
    p.add_argument("--path", choices=["cascaded", "e2e"])
    p.add_argument("--chunk-size", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--sessions", type=int)
    p.add_argument("--seed", type=int)


def _config_data(args) -> tuple[dict, list[str]]:
    data = load_document(args.config)
    overrides = list(args.set)
    for flag, key in _FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"{key}={value}")
    return data, overrides


def cmd_gen_corpus(args) -> int:
    data, overrides = _config_data(args)
    cfg = build_config(data, overrides)
    corpus = generate_corpus(cfg.seed, cfg.corpus)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(corpus.to_json())
    print(f"wrote {len(corpus.talks)} talks to {out}")
    return 0


def cmd_run(args) -> int:
    data, overrides = _config_data(args)
    cfg = build_config(data, overrides)
    result = run_experiment(cfg)
    write_results(result, args.out)
    print(result.aggregate.to_json())
    return 0


def cmd_sweep(args) -> int:
    data, overrides = _config_data(args)
    base = build_config(data, overrides)
    axes = sweep_axes(data)
    for text in args.axis:
        name, _, values = text.partition("=")
        axes[name] = [json.loads(v) if v[:1].isdigit() or v[:1] == "-" else v
                      for v in values.split(",")]
    configs = grid(base, **axes) if axes else [base]
    results, csv_text = sweep(configs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, r in enumerate(results):
        write_results(r, out / f"cell{k:03d}")
    (out / "sweep.csv").write_text(csv_text)
    sys.stdout.write(csv_text)
    return 0


def cmd_eval_log(args) -> int:
    msgs = read_log(args.log)
    translation = [m for m in msgs if m.source == args.node] if args.node else msgs
    transcript = [m for m in msgs if m.source == args.transcript_node] if args.transcript_node else None
    out = SessionOutput(
        translation=translation,
        transcript=transcript,
        ref_translation=read_references(args.ref),
        ref_transcript=read_references(args.transcript_ref) if args.transcript_ref else [],
    )
    print(evaluate_session(out).to_json())
    return 0


def cmd_serve(args) -> int:
    from .gateway import serve_stdio, serve_tcp

    if args.tcp:
        host, _, port = args.tcp.rpartition(":")
        asyncio.run(serve_tcp(host or "127.0.0.1", int(port)))
        return 0
    return serve_stdio()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="streamst", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-corpus", help="write the synthetic corpus as JSON")
    _add_config_args(p)
    p.add_argument("--out", default="results/corpus.json")
    p.set_defaults(fn=cmd_gen_corpus)

    p = sub.add_parser("run", help="run one experiment")
    _add_config_args(p)
    p.add_argument("--out", default="results/run")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="run a config grid and write sweep.csv")
    _add_config_args(p)
    p.add_argument("--axis", action="append", default=[], metavar="FIELD=V1,V2",
                   help="sweep axis, e.g. chunk_size_s=0.5,1,2")
    p.add_argument("--out", default="results/sweep")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("eval-log", help="score a session log file")
    p.add_argument("log")
    p.add_argument("--ref", required=True, help="reference translations, one sentence per line")
    p.add_argument("--node", help="only score messages from this node")
    p.add_argument("--transcript-node")
    p.add_argument("--transcript-ref")
    p.set_defaults(fn=cmd_eval_log)

    p = sub.add_parser("serve", help="gateway over stdio (virtual clock) or TCP (real time)")
    p.add_argument("--tcp", metavar="HOST:PORT")
    p.set_defaults(fn=cmd_serve)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

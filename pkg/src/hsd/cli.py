"""Command line entry point: ``hsd run``, ``hsd trace`` and ``hsd gen-corpus``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from hsd.bench import run_experiment, write_reports
from hsd.config import CorpusConfig, ExperimentConfig, format_validation_error, generate_corpus, load_config
from hsd.docsim import ConfigError, DocumentParseError, save_document
from hsd.dsv import StepRecord
from hsd.hierarchy import PageResult, RunMode, run_page
from hsd.pipeline import NoiseSpec
from hsd.tokens import Vocabulary

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

log = logging.getLogger("hsd")


def _add_noise_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("noise overrides (replace the config's noise grid)")
    g.add_argument("--sub-rate", type=float, nargs="+", metavar="R")
    g.add_argument("--del-rate", type=float, nargs="+", metavar="R")
    g.add_argument("--jitter", type=int, nargs="+", metavar="D")
    g.add_argument("--drafts-per-region", type=int, metavar="K")


def _load(args):
    cfg = load_config(args.config)
    overrides = {
        "sub_rate": args.sub_rate,
        "del_rate": args.del_rate,
        "jitter": args.jitter,
        "drafts_per_region": args.drafts_per_region,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if not overrides:
        return cfg
    data = cfg.model_dump(mode="json")
    data["noise"].update(overrides)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc)) from None


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hsd", description="Hierarchical speculative decoding benchmark")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment matrix of a config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--jobs", type=int, default=1, help="documents processed concurrently")
    run.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
    _add_noise_flags(run)

    trace = sub.add_parser("trace", help="print a step-by-step verification trace for one document")
    trace.add_argument("--config", required=True, type=Path)
    trace.add_argument("--doc", required=True, help="document id")
    trace.add_argument("--mode", choices=[m.value for m in RunMode if m is not RunMode.AR],
                       default=RunMode.HIERARCHICAL.value)
    _add_noise_flags(trace)

    gen = sub.add_parser("gen-corpus", help="write a synthetic document corpus as JSON files")
    gen.add_argument("--seed", required=True, type=int)
    gen.add_argument("--docs", required=True, type=int)
    gen.add_argument("--out", required=True, type=Path)
    gen.add_argument("--regions", type=int, nargs=2, metavar=("LO", "HI"), default=(2, 4))
    gen.add_argument("--region-len", type=int, nargs=2, metavar=("LO", "HI"), default=(20, 60))
    return parser


def cmd_run(args) -> int:
    cfg = _load(args)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    vocab = Vocabulary.builtin()
    result = run_experiment(cfg, vocab, jobs=args.jobs, base=args.config.parent)
    out = args.out if args.out is not None else Path(cfg.out)
    paths = write_reports(result, out)
    failures = result.failures
    print(f"{len(result.records) - len(failures)} runs ok, {len(failures)} failed; reports in {paths['csv'].parent}")
    for rec in failures:
        print(f"  FAILED {rec.doc_id} {rec.mode.value} tau={rec.tau} n={rec.n}: {rec.error}", file=sys.stderr)
    return EXIT_PARTIAL if failures else EXIT_OK


def _format_step(i: int, rec: StepRecord, vocab: Vocabulary) -> list[str]:
    window = vocab.decode(rec.window) if rec.window else "<empty>"
    lines = [f"  step {i}: window=[{window}] matches={rec.n_matches} "
             f"candidates={rec.candidates_found} tree={rec.packed_size}"]
    if rec.candidates_found == 0:
        lines.append("    no candidates, AR fallback")
    for d in rec.decisions:
        verdict = "accept" if d.accepted else "reject"
        lines.append(f"    u*={vocab.forms[d.u_star]!r} u^={vocab.forms[d.u_hat]!r} "
                     f"ratio={d.ratio:.3f} {verdict}")
    lines.append(f"    +{rec.a_i} accepted, bonus {rec.bonus}: [{vocab.decode(rec.appended)}]")
    return lines


def render_trace(result: PageResult, vocab: Vocabulary) -> str:
    lines = []
    for r, trace in enumerate(result.stage1_traces):
        flag = " (degraded)" if result.stage1_degraded[r] else ""
        lines.append(f"stage 1, region {r}{flag}: {len(trace)} steps")
        for i, rec in enumerate(trace):
            lines += _format_step(i, rec, vocab)
    lines.append(f"stage 2 (page): {len(result.stage2_trace)} steps")
    for i, rec in enumerate(result.stage2_trace):
        lines += _format_step(i, rec, vocab)
    lines.append(f"output ({len(result.output)} tokens): {vocab.decode(result.output)}")
    return "\n".join(lines)


def cmd_trace(args) -> int:
    cfg = _load(args)
    vocab = Vocabulary.builtin()
    docs = {d.doc_id: d for d in cfg.build_documents(vocab, args.config.parent)}
    doc = docs.get(args.doc)
    if doc is None:
        print(f"unknown document id {args.doc!r}", file=sys.stderr)
        return EXIT_PARTIAL
    model = cfg.build_model(doc, vocab, args.config.parent)
    noise: NoiseSpec = cfg.noise_grid()[0]
    params = cfg.align_params(cfg.align.tau[0], cfg.align.n[0])
    result = run_page(model, doc, RunMode(args.mode), noise, params, vocab=vocab)
    print(f"document {doc.doc_id}, mode {args.mode}, tau={params.tau} n={params.n}, "
          f"sub_rate={noise.sub_rate} del_rate={noise.del_rate} jitter={noise.jitter}")
    print(render_trace(result, vocab))
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    if args.docs < 0:
        raise ConfigError("--docs must be >= 0")
    try:
        corpus = CorpusConfig(n_docs=args.docs, n_regions=tuple(args.regions), region_len=tuple(args.region_len))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    docs = generate_corpus(args.seed, corpus, Vocabulary.builtin())
    args.out.mkdir(parents=True, exist_ok=True)
    for doc in docs:
        save_document(doc, args.out / f"{doc.doc_id}.json")
    print(f"wrote {len(docs)} documents to {args.out}")
    return EXIT_OK


_COMMANDS = {"run": cmd_run, "trace": cmd_trace, "gen-corpus": cmd_gen_corpus}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DocumentParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point."""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Callable, Dict, List, Optional, Sequence

from .checkpoint import load_checkpoint
from .config import ExperimentConfig, ModelConfig, load_config
from .const import (
    ALIGN_FORMAT_CSV,
    ALIGN_FORMATS,
    EXIT_FAILURE,
    EXIT_OK,
    GRAD_CHECK_TOLERANCE,
    VERSION,
)
from .core.model import Seq2Seq
from .corpus import read_lines, split_synthetic, write_lines, write_parallel
from .decode import translate_corpus
from .evaluation import (
    bleu,
    diagnose,
    export_alignment,
    flag_rates,
    load_alignment_csv,
)
from .exceptions import CheckpointIOError, InputError, NmtLabError, UsageError
from .experiments import DEFAULT_MODELS, compare_models, format_table
from .monitor import ResourceMonitor
from .training import grad_check, tiny_batch, train

_LOGGER = logging.getLogger(__name__)

GRADCHECK_EMBED = 6
GRADCHECK_HIDDEN = 8
GRADCHECK_CONDITION = 5
GRADCHECK_VOCAB = 11


def _write_json(path: Optional[str], data: object) -> None:
    text = json.dumps(data, indent=2, sort_keys=True)
    if not path or path == "-":
        print(text)
        return
    try:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
    except OSError as err:
        raise CheckpointIOError(path, f"cannot write report: {err.strerror}") from err


def _experiment(args: argparse.Namespace) -> ExperimentConfig:
    return load_config(args.config, args.set)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    """Write train / valid / test parallel files for the synthetic task."""
    config = _experiment(args)
    spec = config.data.synth
    if args.n is not None:
        held_out = args.n // 10
        spec = replace(
            spec,
            train_size=args.n - 2 * held_out,
            valid_size=held_out,
            test_size=held_out,
        )
    try:
        splits = split_synthetic(spec)
    except InputError as err:
        raise UsageError(f"invalid synthetic task: {err}") from err
    os.makedirs(args.out, exist_ok=True)
    for name, pairs in splits.items():
        count = write_parallel(
            os.path.join(args.out, f"{name}.src"),
            os.path.join(args.out, f"{name}.tgt"),
            pairs,
        )
        print(f"{name}: {count} pairs")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """Train one configuration, writing the checkpoint and the JSONL log."""
    config = _experiment(args)
    checkpoint = train(
        config,
        checkpoint_path=args.checkpoint,
        log_path=args.log,
        monitor=ResourceMonitor(),
    )
    best = checkpoint.best_record()
    print(
        f"{config.model.label}: {checkpoint.update} updates, "
        f"{len(checkpoint.history)} validations, best BLEU "
        f"{best.get('valid_bleu', 'n/a')}"
    )
    return EXIT_OK


def cmd_translate(args: argparse.Namespace) -> int:
    """Translate a tokenised file with a trained checkpoint."""
    checkpoint = load_checkpoint(args.checkpoint)
    decode_config = checkpoint.config.decode
    changes: Dict[str, object] = {}
    if args.beam is not None:
        changes["beam"] = args.beam
    if args.post_process:
        changes["post_process"] = True
    if args.workers is not None:
        changes["workers"] = args.workers
    decode_config = replace(decode_config, **changes)
    if decode_config.beam < 1 or decode_config.workers < 1:
        raise UsageError("--beam and --workers must be positive")

    sources = read_lines(args.input)
    for lineno, tokens in enumerate(sources, start=1):
        if not tokens:
            raise InputError(f"{args.input}: empty sentence at line {lineno}")
    model = Seq2Seq.from_checkpoint(checkpoint)
    translations = translate_corpus(
        model,
        sources,
        checkpoint.src_vocab,
        checkpoint.tgt_vocab,
        decode_config,
        checkpoint.translation_table,
    )
    write_lines(args.output, (t.tokens for t in translations))
    if args.align:
        os.makedirs(args.align, exist_ok=True)
        for index, item in enumerate(translations, start=1):
            export_alignment(
                item.alignment,
                item.src_tokens,
                item.tokens,
                os.path.join(args.align, f"{index:05d}.{args.align_format}"),
                args.align_format,
            )
    _LOGGER.info("Wrote %d translations to %s", len(translations), args.output)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Corpus BLEU of a hypothesis file against one or more reference files."""
    hypotheses = read_lines(args.hypotheses)
    reference_sets = [read_lines(path) for path in args.references]
    for path, refs in zip(args.references, reference_sets):
        if len(refs) != len(hypotheses):
            raise InputError(
                f"{args.hypotheses} has {len(hypotheses)} lines but {path} has "
                f"{len(refs)}"
            )
    references = (
        reference_sets[0]
        if len(reference_sets) == 1
        else [list(group) for group in zip(*reference_sets)]
    )
    report = bleu(hypotheses, references, args.max_n, args.smoothing)
    print(report.describe())
    if args.json:
        _write_json(args.json, report.to_dict())
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    """Repetition and coverage report over csv alignment sidecars."""
    paths: List[str] = []
    for target in args.paths:
        if os.path.isdir(target):
            pattern = os.path.join(target, f"*.{ALIGN_FORMAT_CSV}")
            paths.extend(sorted(glob.glob(pattern)))
        else:
            paths.append(target)
    config = _experiment(args)
    run_threshold = args.run_threshold or config.eval.run_threshold
    mass_threshold = config.eval.mass_threshold
    if args.mass_threshold is not None:
        mass_threshold = args.mass_threshold
    reports = {}
    for path in paths:
        alignment, _, _ = load_alignment_csv(path)
        name = os.path.basename(path)
        reports[name] = diagnose(alignment, run_threshold, mass_threshold)
    repetition, coverage = flag_rates(list(reports.values()))
    for name, report in reports.items():
        flags = [
            flag
            for flag, raised in (
                ("repetition", report.repetition),
                ("coverage", report.coverage),
            )
            if raised
        ]
        print(f"{name}: {', '.join(flags) or 'ok'}")
    print(
        f"{len(reports)} alignments: repetition {repetition:.1%}, "
        f"coverage {coverage:.1%}"
    )
    if args.out:
        _write_json(
            args.out,
            {
                "alignments": {n: r.to_dict() for n, r in reports.items()},
                "repetition_rate": repetition,
                "coverage_rate": coverage,
            },
        )
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    """Finite-difference check of every parameter block at tiny dimensions."""
    config = _experiment(args)
    model = config.model
    model_config = ModelConfig(
        attention=model.attention,
        decoder=model.decoder,
        embed_dim=args.embed,
        hidden=args.hidden,
        condition_dim=args.condition,
        maxout_pool=model.maxout_pool,
        kernel_width=model.kernel_width,
        conv_features=model.conv_features,
        experimental=model.experimental,
    )
    batch = tiny_batch(args.vocab, args.vocab, config.seed)
    report = grad_check(
        model_config,
        batch,
        args.tolerance,
        src_vocab_size=args.vocab,
        tgt_vocab_size=args.vocab,
        seed=config.seed,
        max_entries_per_block=args.max_entries or None,
        train_config=config.train,
    )
    for line in report.describe():
        print(line)
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{report.label}: {verdict} (worst {report.worst:.3e})")
    if args.json:
        _write_json(args.json, report.to_dict())
    return EXIT_OK if report.passed else EXIT_FAILURE


def cmd_compare(args: argparse.Namespace) -> int:
    """Train several variants on one synthetic corpus and tabulate them."""
    config = _experiment(args)
    os.makedirs(args.out, exist_ok=True)
    rows = compare_models(config, args.models or DEFAULT_MODELS, args.out)
    print(format_table(rows))
    if args.json:
        _write_json(args.json, [row.to_dict() for row in rows])
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one configuration key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per operation."""
    parser = argparse.ArgumentParser(
        prog="nmtlab", description="Desk-scale attention-based translation lab"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    gen = commands.add_parser("gen-data", help="write a synthetic parallel corpus")
    _add_config_options(gen)
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--n", type=int, help="total pairs, split 80/10/10")
    gen.set_defaults(func=cmd_gen_data)

    trn = commands.add_parser("train", help="train a model")
    _add_config_options(trn)
    trn.add_argument("--checkpoint", help="checkpoint path (default train.checkpoint)")
    trn.add_argument("--log", help="JSONL training log (default train.log)")
    trn.set_defaults(func=cmd_train)

    tra = commands.add_parser("translate", help="translate a tokenised file")
    tra.add_argument("checkpoint")
    tra.add_argument("input")
    tra.add_argument("output")
    tra.add_argument("--beam", type=int, help="beam size")
    tra.add_argument("--post-process", action="store_true", help="replace UNK tokens")
    tra.add_argument("--workers", type=int, help="decoding threads")
    tra.add_argument("--align", metavar="DIR", help="write alignment sidecars to DIR")
    tra.add_argument(
        "--align-format", choices=ALIGN_FORMATS, default=ALIGN_FORMAT_CSV
    )
    tra.set_defaults(func=cmd_translate)

    evl = commands.add_parser("evaluate", help="corpus BLEU")
    evl.add_argument("hypotheses")
    evl.add_argument("references", nargs="+")
    evl.add_argument("--max-n", type=int, default=4)
    evl.add_argument("--smoothing", action="store_true")
    evl.add_argument(
        "--json", metavar="FILE", help="machine-readable report ('-' for stdout)"
    )
    evl.set_defaults(func=cmd_evaluate)

    dia = commands.add_parser("diagnose", help="alignment pathology report")
    _add_config_options(dia)
    dia.add_argument("paths", nargs="+", help="csv sidecars or directories of them")
    dia.add_argument("--run-threshold", type=int)
    dia.add_argument("--mass-threshold", type=float)
    dia.add_argument("--out", metavar="FILE", help="JSON report ('-' for stdout)")
    dia.set_defaults(func=cmd_diagnose)

    grd = commands.add_parser("gradcheck", help="finite-difference gradient check")
    _add_config_options(grd)
    grd.add_argument("--tolerance", type=float, default=GRAD_CHECK_TOLERANCE)
    grd.add_argument("--embed", type=int, default=GRADCHECK_EMBED)
    grd.add_argument("--hidden", type=int, default=GRADCHECK_HIDDEN)
    grd.add_argument("--condition", type=int, default=GRADCHECK_CONDITION)
    grd.add_argument("--vocab", type=int, default=GRADCHECK_VOCAB)
    grd.add_argument("--max-entries", type=int, default=0, help="0 checks every entry")
    grd.add_argument("--json", metavar="FILE")
    grd.set_defaults(func=cmd_gradcheck)

    cmp_ = commands.add_parser("compare", help="train and compare model variants")
    _add_config_options(cmp_)
    cmp_.add_argument(
        "--models", nargs="+", help=f"labels (default {' '.join(DEFAULT_MODELS)})"
    )
    cmp_.add_argument(
        "--out", default="compare", help="directory for checkpoints and logs"
    )
    cmp_.add_argument("--json", metavar="FILE")
    cmp_.set_defaults(func=cmd_compare)
    return parser


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Single stderr handler on the root logger."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose, args.quiet)
    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return func(args)
    except NmtLabError as err:
        _LOGGER.error("%s", err)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())

"""Side-by-side comparison of model variants on one corpus."""
from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .config import EvalConfig, ExperimentConfig
from .const import AttentionKind, DecoderKind
from .core.model import Seq2Seq
from .decode import Translation, translate_corpus
from .evaluation import BleuReport, bleu, diagnose, flag_rates, post_processing_gain
from .exceptions import ConfigError, InputError
from .training import TrainingData, load_training_data, train

_LOGGER = logging.getLogger(__name__)

DEFAULT_MODELS = (
    "base+base",
    "recatt+base",
    "rnnatt+base",
    "hybrid2+base",
    "base+inputfeed",
    "base+conddec",
)


def parse_model_label(label: str) -> Tuple[AttentionKind, DecoderKind]:
    """Split ``attention+decoder`` into its variant tags."""
    attention, sep, decoder = label.strip().partition("+")
    try:
        return AttentionKind(attention), DecoderKind(decoder if sep else "base")
    except ValueError as err:
        raise ConfigError(
            f"Invalid model label {label!r}: expected <attention>+<decoder> with "
            f"attention in {[k.value for k in AttentionKind]} and decoder in "
            f"{[k.value for k in DecoderKind]}"
        ) from err


@dataclass
class ComparisonRow:
    """Held-out results of one trained variant."""

    model: str
    bleu: float
    bleu_post: float
    gain: float
    repetition_rate: float
    coverage_rate: float
    updates: int

    def to_dict(self) -> Dict[str, object]:
        """Machine-readable form."""
        return asdict(self)


def score_translations(
    translations: Sequence[Translation],
    references: Sequence[Sequence[str]],
    eval_config: EvalConfig,
) -> Tuple[BleuReport, BleuReport, float, float]:
    """BLEU before and after post-processing plus the two flag rates."""
    smoothing = eval_config.smoothing
    raw = bleu([t.raw_tokens for t in translations], references, smoothing=smoothing)
    post = bleu([t.tokens for t in translations], references, smoothing=smoothing)
    reports = [
        diagnose(t.alignment, eval_config.run_threshold, eval_config.mass_threshold)
        for t in translations
    ]
    repetition, coverage = flag_rates(reports)
    return raw, post, repetition, coverage


def compare_models(
    config: ExperimentConfig,
    labels: Sequence[str] = DEFAULT_MODELS,
    workdir: str = ".",
    data: Optional[TrainingData] = None,
) -> List[ComparisonRow]:
    """Train every listed variant on the same data and score its held-out decodes."""
    data = data if data is not None else load_training_data(config)
    held_out = data.test or data.valid
    if not held_out:
        raise InputError("comparison needs a test or validation set")
    sources = [p.src_tokens for p in held_out]
    references = [p.tgt_tokens for p in held_out]
    decode_config = replace(config.decode, post_process=True)

    rows: List[ComparisonRow] = []
    for label in labels:
        attention, decoder = parse_model_label(label)
        model_config = replace(config.model, attention=attention, decoder=decoder)
        model_config.check()
        run_config = replace(config, model=model_config)
        stem = os.path.join(workdir, label.replace("+", "_"))
        _LOGGER.info("Training %s for comparison", model_config.label)
        checkpoint = train(run_config, data, f"{stem}.ckpt", f"{stem}.log.jsonl")
        model = Seq2Seq.from_checkpoint(checkpoint)
        translations = translate_corpus(
            model,
            sources,
            data.src_vocab,
            data.tgt_vocab,
            decode_config,
            checkpoint.translation_table,
        )
        raw, post, repetition, coverage = score_translations(
            translations, references, config.eval
        )
        rows.append(
            ComparisonRow(
                model=model_config.label,
                bleu=raw.score,
                bleu_post=post.score,
                gain=post_processing_gain(raw, post),
                repetition_rate=repetition,
                coverage_rate=coverage,
                updates=checkpoint.update,
            )
        )
    return rows


def format_table(rows: Sequence[ComparisonRow]) -> str:
    """Plain-text table, BLEU in percent."""
    header = f"{'model':<18}{'BLEU':>8}{'+post':>8}{'gain':>8}{'rep%':>8}{'cov%':>8}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row.model:<18}{row.bleu * 100:>8.2f}{row.bleu_post * 100:>8.2f}"
            f"{row.gain * 100:>8.2f}{row.repetition_rate * 100:>8.1f}"
            f"{row.coverage_rate * 100:>8.1f}"
        )
    return "\n".join(lines)

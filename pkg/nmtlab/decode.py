"""Greedy and beam-search decoding, translation tables and UNK replacement."""
from __future__ import annotations

import asyncio
import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .attention.base_attention import AlignmentMatrix, collect_alignment
from .config import DecodeConfig
from .const import BOS_ID, EOS_ID, PAD_ID, UNK_TOKEN
from .core.decoder import DecoderState
from .core.model import Seq2Seq
from .corpus import SentencePair, Vocab, decode_sentence, encode_sentence
from .exceptions import ContractError, InputError

_LOGGER = logging.getLogger(__name__)


def default_max_len(src_length: int) -> int:
    """Decoding length limit for a source of ``src_length`` tokens."""
    return 3 * src_length + 5


@dataclass
class Hypothesis:
    """Partial or finished target sequence (ids exclude BOS)."""

    tokens: List[int] = field(default_factory=list)
    score: float = 0.0
    state: Optional[DecoderState] = field(default=None, repr=False)
    rows: List[np.ndarray] = field(default_factory=list, repr=False)
    step_scores: List[float] = field(default_factory=list, repr=False)

    @property
    def finished(self) -> bool:
        """True once EOS was emitted."""
        return bool(self.tokens) and self.tokens[-1] == EOS_ID

    @property
    def last(self) -> int:
        """Token fed to the next step."""
        return self.tokens[-1] if self.tokens else BOS_ID

    @property
    def content(self) -> List[int]:
        """Ids without the closing EOS."""
        return self.tokens[:-1] if self.finished else list(self.tokens)

    @property
    def alignment(self) -> AlignmentMatrix:
        """One row per emitted token, EOS included."""
        return collect_alignment(self.rows)

    def normalized_score(self) -> float:
        """Score divided by the number of emitted tokens."""
        return self.score / max(len(self.tokens), 1)

    def extend(
        self, token: int, log_prob: float, state: DecoderState, row: np.ndarray
    ) -> "Hypothesis":
        """Child hypothesis with one more token."""
        return Hypothesis(
            tokens=self.tokens + [token],
            score=self.score + log_prob,
            state=state,
            rows=self.rows + [row],
            step_scores=self.step_scores + [log_prob],
        )


def _check_source(src_ids: Sequence[int]) -> np.ndarray:
    ids = np.asarray(src_ids, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        raise InputError("cannot decode an empty source sentence")
    return ids


def _step_scores(log_probs: np.ndarray) -> np.ndarray:
    scores = np.array(log_probs, dtype=np.float64)
    scores[[PAD_ID, BOS_ID]] = -np.inf
    return scores


def greedy_decode(
    model: Seq2Seq, src_ids: Sequence[int], max_len: Optional[int] = None
) -> Hypothesis:
    """Most probable token at every step (lowest id on ties) until EOS.

    PAD and BOS are never emitted.
    """
    ids = _check_source(src_ids)
    limit = default_max_len(ids.size) if max_len is None else max_len
    source = model.encode(ids)
    hyp = Hypothesis(state=model.initial_state(source))
    for _ in range(limit):
        state, log_probs, weights = model.step(hyp.state, [hyp.last], source)
        scores = _step_scores(log_probs.data[:, 0])
        token = int(np.argmax(scores))
        hyp = hyp.extend(token, float(scores[token]), state, weights.data[:, 0].copy())
        if token == EOS_ID:
            break
    return hyp


def beam_search(
    model: Seq2Seq,
    src_ids: Sequence[int],
    beam: int,
    max_len: Optional[int] = None,
    length_norm: bool = False,
) -> List[Hypothesis]:
    """Beam search by cumulative log-probability.

    All live hypotheses are expanded over the vocabulary together and the
    ``beam`` best expansions kept; those ending in EOS retire to the
    completed pool. Search stops when the pool holds ``beam`` entries, no
    live hypothesis remains or ``max_len`` steps were taken. Completed
    hypotheses are returned best first, or the live ones when none finished.
    """
    if beam < 1:
        raise ContractError(f"beam must be >= 1, got {beam}")
    ids = _check_source(src_ids)
    limit = default_max_len(ids.size) if max_len is None else max_len
    source = model.encode(ids)
    live = [Hypothesis(state=model.initial_state(source))]
    completed: List[Hypothesis] = []

    for _ in range(limit):
        if not live or len(completed) >= beam:
            break
        merged = DecoderState.merge([h.state for h in live])
        state, log_probs, weights = model.step(
            merged, [h.last for h in live], source.select([0] * len(live))
        )
        totals = np.stack(
            [
                h.score + _step_scores(log_probs.data[:, col])
                for col, h in enumerate(live)
            ],
            axis=1,
        )
        toks, cols = np.indices(totals.shape)
        flat = totals.reshape(-1)
        order = np.lexsort((toks.reshape(-1), cols.reshape(-1), -flat))

        survivors: List[Hypothesis] = []
        for index in order[:beam]:
            if not np.isfinite(flat[index]):
                break
            tok, col = int(toks.reshape(-1)[index]), int(cols.reshape(-1)[index])
            parent = live[col]
            child = parent.extend(
                tok,
                float(flat[index] - parent.score),
                state.select([col]),
                weights.data[:, col].copy(),
            )
            # keep the exact cumulative value used for ranking
            child.score = float(flat[index])
            (completed if tok == EOS_ID else survivors).append(child)
        live = survivors

    pool = completed or live
    key = (lambda h: h.normalized_score()) if length_norm else (lambda h: h.score)
    return sorted(pool, key=lambda h: (-key(h), h.tokens))


# ---------------------------------------------------------------------------
# Post-processing
# ---------------------------------------------------------------------------


@dataclass
class TranslationTable:
    """Source token -> most frequently co-occurring target token."""

    entries: Dict[str, str] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)

    def __contains__(self, token: object) -> bool:
        return token in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, token: str, default: str) -> str:
        """Translation of ``token`` or ``default``."""
        return self.entries.get(token, default)

    def to_dict(self) -> Dict[str, List]:
        """JSON-friendly form (stored in checkpoints)."""
        return {s: [t, self.counts.get(s, 0)] for s, t in sorted(self.entries.items())}

    @classmethod
    def from_dict(cls, data: Dict[str, List]) -> "TranslationTable":
        """Inverse of :meth:`to_dict`."""
        return cls(
            entries={s: str(v[0]) for s, v in data.items()},
            counts={s: int(v[1]) for s, v in data.items()},
        )


def build_translation_table(
    pairs: Sequence[SentencePair], tgt_vocab: Optional[Vocab] = None
) -> TranslationTable:
    """Sentence-level co-occurrence table.

    Ties go to the target token that is most frequent overall, then to the
    lowest target id (then alphabetical for tokens outside ``tgt_vocab``).
    """
    if not pairs:
        raise InputError("cannot build a translation table from an empty corpus")
    cooc: Dict[str, Counter] = defaultdict(Counter)
    frequency: Counter = Counter()
    for pair in pairs:
        frequency.update(pair.tgt_tokens)
        targets = set(pair.tgt_tokens)
        for src in set(pair.src_tokens):
            cooc[src].update(targets)

    def rank(item):
        token, count = item
        tid = tgt_vocab.stoi.get(token, len(tgt_vocab)) if tgt_vocab else 0
        return (-count, -frequency[token], tid, token)

    table = TranslationTable()
    for src in sorted(cooc):
        token, count = min(cooc[src].items(), key=rank)
        table.entries[src] = token
        table.counts[src] = count
    _LOGGER.debug("Built translation table with %d entries", len(table))
    return table


def replace_unk(
    tokens: Sequence[str],
    alignment: AlignmentMatrix,
    src_tokens: Sequence[str],
    table: TranslationTable,
) -> List[str]:
    """Replace each UNK by the translation of its most attended source word.

    Untabled source words are copied through; argmax ties go to the lowest
    source position.
    """
    if alignment.shape[0] != len(tokens):
        raise ContractError(
            f"alignment has {alignment.shape[0]} rows for {len(tokens)} tokens"
        )
    output = []
    for token, row in zip(tokens, alignment.weights):
        if token != UNK_TOKEN:
            output.append(token)
            continue
        source = src_tokens[int(np.argmax(row))]
        if source not in table:
            _LOGGER.debug("No table entry for %r, copying it through", source)
        output.append(table.get(source, source))
    return output


# ---------------------------------------------------------------------------
# Sentence and corpus translation
# ---------------------------------------------------------------------------


@dataclass
class Translation:
    """Decoded sentence with its alignment."""

    src_tokens: List[str]
    ids: List[int]
    raw_tokens: List[str]
    tokens: List[str]
    alignment: AlignmentMatrix
    score: float


def translate_sentence(
    model: Seq2Seq,
    src_tokens: Sequence[str],
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    decode_config: DecodeConfig,
    table: Optional[TranslationTable] = None,
) -> Translation:
    """Beam-search one tokenised sentence and optionally post-process it."""
    src_ids = encode_sentence(src_tokens, src_vocab)
    max_len = decode_config.max_len or None
    best = beam_search(
        model, src_ids, decode_config.beam, max_len, decode_config.length_norm
    )[0]
    ids = best.content
    raw = decode_sentence(ids, tgt_vocab)
    alignment = best.alignment.rows(len(ids))
    tokens = raw
    if decode_config.post_process and table is not None:
        tokens = replace_unk(raw, alignment, src_tokens, table)
    return Translation(
        src_tokens=list(src_tokens),
        ids=ids,
        raw_tokens=raw,
        tokens=tokens,
        alignment=alignment,
        score=best.score,
    )


async def async_translate_corpus(
    model: Seq2Seq,
    sentences: Sequence[Sequence[str]],
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    decode_config: DecodeConfig,
    table: Optional[TranslationTable] = None,
) -> List[Translation]:
    """Translate sentences on a worker pool; results keep input order.

    Workers only read the parameters, so they share ``model``.
    """
    loop = asyncio.get_running_loop()
    semaphore = asyncio.Semaphore(decode_config.workers)

    with ThreadPoolExecutor(max_workers=decode_config.workers) as pool:

        async def run(tokens: Sequence[str]) -> Translation:
            async with semaphore:
                return await loop.run_in_executor(
                    pool,
                    translate_sentence,
                    model,
                    tokens,
                    src_vocab,
                    tgt_vocab,
                    decode_config,
                    table,
                )

        results = await asyncio.gather(*(run(s) for s in sentences))
    _LOGGER.info("Translated %d sentences", len(results))
    return list(results)


def translate_corpus(
    model: Seq2Seq,
    sentences: Sequence[Sequence[str]],
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    decode_config: DecodeConfig,
    table: Optional[TranslationTable] = None,
) -> List[Translation]:
    """Blocking wrapper around :func:`async_translate_corpus`."""
    if not sentences:
        return []
    return asyncio.run(
        async_translate_corpus(
            model, sentences, src_vocab, tgt_vocab, decode_config, table
        )
    )


def greedy_tokens(
    model: Seq2Seq, src_ids: Sequence[int], tgt_vocab: Vocab
) -> List[str]:
    """Greedy translation as target tokens, markers removed."""
    return decode_sentence(greedy_decode(model, src_ids).content, tgt_vocab)

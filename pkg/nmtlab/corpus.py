"""Vocabularies, parallel corpora, synthetic tasks and batching."""
from __future__ import annotations

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import SynthTaskSpec
from .const import (
    BOS_ID,
    DEFAULT_SORT_WINDOW,
    EOS_ID,
    FERTILITY_RULES,
    FILTER_EITHER,
    FILTER_SOURCE,
    FILTER_TARGET,
    LENGTH_FILTERS,
    PAD_ID,
    PERMUTATION_RULES,
    RESERVED_TOKENS,
    UNK_ID,
)
from .exceptions import CheckpointIOError, ConfigError, ContractError, InputError

_LOGGER = logging.getLogger(__name__)

# Resampling attempts per pair before the task is declared unsatisfiable
_MAX_RESAMPLE = 1000


class Vocab:
    """Token <-> id map; ids 0..3 are PAD, BOS, EOS and UNK."""

    def __init__(self, tokens: Sequence[str], max_size: Optional[int] = None) -> None:
        """Build from the full id -> token list (reserved tokens first)."""
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise InputError(
                f"vocabulary must start with {list(RESERVED_TOKENS)}, got "
                f"{list(tokens[:len(RESERVED_TOKENS)])}"
            )
        self.itos: List[str] = list(tokens)
        self.stoi: Dict[str, int] = {}
        for index, token in enumerate(self.itos):
            if token in self.stoi:
                raise InputError(f"duplicate vocabulary token: {token!r}")
            self.stoi[token] = index
        self.max_size = max_size if max_size is not None else len(self.itos)
        self.coverage = 1.0

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: object) -> bool:
        return token in self.stoi

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        """Id of ``token``; UNK for out-of-vocabulary tokens."""
        return self.stoi.get(token, UNK_ID)

    def token(self, index: int) -> str:
        """Surface form of ``index``."""
        if not 0 <= index < len(self.itos):
            raise InputError(f"unknown token id {index} (vocabulary size {len(self)})")
        return self.itos[index]

    def content_hash(self) -> str:
        """SHA-256 over the id -> token list."""
        digest = hashlib.sha256()
        for token in self.itos:
            digest.update(token.encode("utf-8"))
            digest.update(b"\n")
        return digest.hexdigest()


def build_vocab(corpus: Iterable[Sequence[str]], max_size: int) -> Vocab:
    """Keep the ``max_size - 4`` most frequent tokens; ties by first occurrence."""
    if max_size < len(RESERVED_TOKENS):
        raise ConfigError(
            f"vocabulary size must be >= {len(RESERVED_TOKENS)}, got {max_size}"
        )
    counts: Counter = Counter()
    first_seen: Dict[str, int] = {}
    total = 0
    for sentence in corpus:
        for token in sentence:
            counts[token] += 1
            first_seen.setdefault(token, len(first_seen))
            total += 1
    if total == 0:
        raise InputError("cannot build a vocabulary from an empty corpus")

    ranked = sorted(
        (t for t in counts if t not in RESERVED_TOKENS),
        key=lambda t: (-counts[t], first_seen[t]),
    )
    kept = ranked[: max_size - len(RESERVED_TOKENS)]
    vocab = Vocab(list(RESERVED_TOKENS) + kept, max_size)
    vocab.coverage = sum(counts[t] for t in kept) / total
    _LOGGER.debug(
        "Built vocabulary of %d entries covering %.4f of %d tokens",
        len(vocab),
        vocab.coverage,
        total,
    )
    return vocab


def encode_sentence(
    tokens: Sequence[str], vocab: Vocab, add_markers: bool = False
) -> List[int]:
    """Map tokens to ids (OOV -> UNK); markers add BOS ... EOS."""
    ids = [vocab.id(t) for t in tokens]
    if add_markers:
        ids = [BOS_ID] + ids + [EOS_ID]
    return ids


def decode_sentence(ids: Sequence[int], vocab: Vocab) -> List[str]:
    """Inverse of :func:`encode_sentence`; BOS, EOS and PAD are dropped."""
    return [vocab.token(int(i)) for i in ids if int(i) not in (PAD_ID, BOS_ID, EOS_ID)]


@dataclass
class SentencePair:
    """One aligned sentence pair; target ids carry no markers."""

    src_tokens: List[str]
    tgt_tokens: List[str]
    src_ids: List[int] = field(default_factory=list)
    tgt_ids: List[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.src_tokens or not self.tgt_tokens:
            raise InputError("sentence pairs must have two non-empty sides")

    def index(self, src_vocab: Vocab, tgt_vocab: Vocab) -> "SentencePair":
        """Pair with ids filled in from the given vocabularies."""
        return SentencePair(
            self.src_tokens,
            self.tgt_tokens,
            encode_sentence(self.src_tokens, src_vocab),
            encode_sentence(self.tgt_tokens, tgt_vocab),
        )


@dataclass
class Batch:
    """Padded id matrices (length x batch) with masks.

    ``tgt`` holds BOS, the target ids and EOS, so a sentence of n target
    tokens occupies n + 2 rows and yields n + 1 prediction steps.
    """

    src: np.ndarray
    tgt: np.ndarray
    src_mask: np.ndarray
    tgt_mask: np.ndarray
    src_lengths: np.ndarray
    tgt_lengths: np.ndarray
    pairs: List[SentencePair] = field(default_factory=list, repr=False)

    @property
    def size(self) -> int:
        """Number of sentence pairs."""
        return self.src.shape[1]

    @property
    def decoder_inputs(self) -> np.ndarray:
        """Rows fed to the decoder (BOS first)."""
        return self.tgt[:-1]

    @property
    def decoder_targets(self) -> np.ndarray:
        """Rows the decoder must predict (EOS last)."""
        return self.tgt[1:]

    @property
    def target_mask(self) -> np.ndarray:
        """Mask over :attr:`decoder_targets`."""
        return self.tgt_mask[1:]

    @property
    def target_steps(self) -> np.ndarray:
        """Prediction steps per sentence (target length + 1)."""
        return self.tgt_lengths - 1


def make_batch(pairs: Sequence[SentencePair]) -> Batch:
    """Pad one group of indexed pairs into a Batch."""
    if not pairs:
        raise ContractError("cannot batch zero sentence pairs")
    src_rows = [p.src_ids for p in pairs]
    tgt_rows = [[BOS_ID] + list(p.tgt_ids) + [EOS_ID] for p in pairs]
    src, src_mask = _pad(src_rows)
    tgt, tgt_mask = _pad(tgt_rows)
    return Batch(
        src=src,
        tgt=tgt,
        src_mask=src_mask,
        tgt_mask=tgt_mask,
        src_lengths=src_mask.sum(axis=0),
        tgt_lengths=tgt_mask.sum(axis=0),
        pairs=list(pairs),
    )


def _pad(rows: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
    width = max(len(r) for r in rows)
    ids = np.full((width, len(rows)), PAD_ID, dtype=np.int64)
    mask = np.zeros((width, len(rows)), dtype=bool)
    for col, row in enumerate(rows):
        ids[: len(row), col] = row
        mask[: len(row), col] = True
    return ids, mask


def keep_pair(
    pair: SentencePair, max_len: int, length_filter: str = FILTER_EITHER
) -> bool:
    """Whether ``pair`` survives the length filter."""
    if length_filter not in LENGTH_FILTERS:
        raise ConfigError(f"unknown length filter: {length_filter}")
    src_ok = len(pair.src_tokens) <= max_len
    tgt_ok = len(pair.tgt_tokens) <= max_len
    if length_filter == FILTER_SOURCE:
        return src_ok
    if length_filter == FILTER_TARGET:
        return tgt_ok
    return src_ok and tgt_ok


def make_batches(
    pairs: Sequence[SentencePair],
    batch_size: int,
    max_len: int,
    shuffle_seed: Optional[int],
    sort_window: int = DEFAULT_SORT_WINDOW,
    length_filter: str = FILTER_EITHER,
) -> List[Batch]:
    """Filter, shuffle and cut pairs into length-sorted batches.

    Pairs are shuffled (unless ``shuffle_seed`` is None), then taken in
    windows of ``sort_window * batch_size`` pairs that are sorted by length
    before being cut, so padding stays small while every pair still appears
    exactly once.
    """
    if batch_size < 1:
        raise ContractError(f"batch size must be >= 1, got {batch_size}")
    kept = [p for p in pairs if keep_pair(p, max_len, length_filter)]
    if not kept:
        raise InputError(
            f"no sentence pairs left after filtering {len(pairs)} pairs at "
            f"max_len={max_len}"
        )
    dropped = len(pairs) - len(kept)
    if dropped:
        _LOGGER.info(
            "Dropped %d of %d pairs longer than %d", dropped, len(pairs), max_len
        )

    order = np.arange(len(kept))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(kept))
    window = max(1, sort_window) * batch_size

    batches: List[Batch] = []
    for start in range(0, len(order), window):
        chunk = [kept[i] for i in order[start : start + window]]
        chunk.sort(key=lambda p: (len(p.src_tokens), len(p.tgt_tokens)))
        for offset in range(0, len(chunk), batch_size):
            batches.append(make_batch(chunk[offset : offset + batch_size]))
    return batches


# ---------------------------------------------------------------------------
# Synthetic tasks
# ---------------------------------------------------------------------------


def permute(tokens: Sequence[str], rule: str) -> List[str]:
    """Apply a reordering rule."""
    items = list(tokens)
    if rule == "identity":
        return items
    if rule == "reverse":
        return items[::-1]
    if rule == "swap_pairs":
        for i in range(0, len(items) - 1, 2):
            items[i], items[i + 1] = items[i + 1], items[i]
        return items
    if rule == "rotate":
        return items[1:] + items[:1]
    raise ConfigError(f"unknown permutation rule: {rule} (known: {PERMUTATION_RULES})")


def fertility_of(token: str, rule: str) -> int:
    """Number of target copies a source token produces (0, 1 or 2).

    Synthetic tokens are ``w<k>``; the doubling class is ``k % 3 == 0`` and
    under ``mixed`` the dropping class is ``k % 3 == 2``.
    """
    if rule not in FERTILITY_RULES:
        raise ConfigError(f"unknown fertility rule: {rule} (known: {FERTILITY_RULES})")
    if rule == "identity":
        return 1
    index = token_index(token)
    if index % 3 == 0:
        return 2
    if rule == "mixed" and index % 3 == 2:
        return 0
    return 1


def token_index(token: str) -> int:
    """Index ``k`` of a synthetic token ``w<k>``."""
    if not token.startswith("w") or not token[1:].isdigit():
        raise InputError(f"not a synthetic token: {token!r}")
    return int(token[1:])


def apply_rules(src_tokens: Sequence[str], spec: SynthTaskSpec) -> List[str]:
    """Target sentence the task's rules produce for ``src_tokens``."""
    target: List[str] = []
    for token in permute(src_tokens, spec.permutation):
        target.extend([token] * fertility_of(token, spec.fertility))
    return target


def synthetic_token(index: int) -> str:
    """Surface form of synthetic token ``index``."""
    return f"w{index}"


def gen_synthetic(
    spec: SynthTaskSpec, n: int, seed: Optional[int] = None
) -> List[SentencePair]:
    """Draw ``n`` source sentences and derive their targets from the rules.

    Lengths and tokens are uniform; sources whose target would be empty are
    redrawn from the same stream, so output depends only on the seed.
    """
    if n < 1:
        raise InputError(f"number of pairs must be >= 1, got {n}")
    if spec.max_len < spec.min_len:
        raise InputError(
            f"synthetic max_len {spec.max_len} is below min_len {spec.min_len}"
        )
    if spec.min_len < 1 or spec.vocab_size < 1:
        raise InputError("synthetic lengths and vocabulary size must be positive")
    # reject unknown rule names before drawing
    permute([], spec.permutation)
    fertility_of(synthetic_token(0), spec.fertility)

    rng = np.random.default_rng(spec.seed if seed is None else seed)
    pairs: List[SentencePair] = []
    for _ in range(n):
        for _attempt in range(_MAX_RESAMPLE):
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            draws = rng.integers(0, spec.vocab_size, length)
            src = [synthetic_token(int(k)) for k in draws]
            tgt = apply_rules(src, spec)
            if tgt:
                pairs.append(SentencePair(src, tgt))
                break
        else:
            raise InputError("synthetic task keeps producing empty targets")
    return pairs


def split_synthetic(spec: SynthTaskSpec) -> Dict[str, List[SentencePair]]:
    """Train / valid / test splits drawn from one seeded stream."""
    sizes = {"train": spec.train_size, "valid": spec.valid_size, "test": spec.test_size}
    total = sum(sizes.values())
    pairs = gen_synthetic(spec, total) if total else []
    splits: Dict[str, List[SentencePair]] = {}
    start = 0
    for name, size in sizes.items():
        splits[name] = pairs[start : start + size]
        start += size
    return splits


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def read_lines(path: str) -> List[List[str]]:
    """Whitespace-tokenised lines of a UTF-8 file."""
    try:
        with open(path, encoding="utf-8") as handle:
            return [line.split() for line in handle.read().splitlines()]
    except OSError as err:
        raise CheckpointIOError(path, f"cannot read: {err.strerror}") from err
    except UnicodeDecodeError as err:
        raise InputError(f"{path}: not valid UTF-8 ({err.reason})") from err


def write_lines(path: str, sentences: Iterable[Sequence[str]]) -> int:
    """Write one space-joined sentence per line; returns the line count."""
    lines = [" ".join(s) for s in sentences]
    try:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("".join(f"{line}\n" for line in lines))
    except OSError as err:
        raise CheckpointIOError(path, f"cannot write: {err.strerror}") from err
    return len(lines)


def read_parallel(src_path: str, tgt_path: str) -> List[SentencePair]:
    """Read two aligned files; counts must match and no side may be empty."""
    src_lines = read_lines(src_path)
    tgt_lines = read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise InputError(
            f"{src_path} has {len(src_lines)} lines but {tgt_path} has "
            f"{len(tgt_lines)}"
        )
    pairs = []
    for lineno, (src, tgt) in enumerate(zip(src_lines, tgt_lines), start=1):
        if not src or not tgt:
            raise InputError(
                f"empty sentence at line {lineno} of {src_path}/{tgt_path}"
            )
        pairs.append(SentencePair(src, tgt))
    return pairs


def write_parallel(
    src_path: str, tgt_path: str, pairs: Sequence[SentencePair]
) -> int:
    """Write pairs as two aligned files; returns the pair count."""
    write_lines(src_path, (p.src_tokens for p in pairs))
    return write_lines(tgt_path, (p.tgt_tokens for p in pairs))

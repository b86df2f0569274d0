"""BLEU scoring, alignment diagnostics and alignment export."""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .attention.base_attention import AlignmentMatrix
from .const import (
    ALIGN_FORMAT_CSV,
    ALIGN_FORMAT_PGM,
    ALIGN_FORMATS,
    DEFAULT_MASS_THRESHOLD,
    DEFAULT_MAX_NGRAM,
    DEFAULT_RUN_THRESHOLD,
)
from .exceptions import CheckpointIOError, ContractError, InputError

_LOGGER = logging.getLogger(__name__)

Tokens = Sequence[str]
Reference = Union[Tokens, Sequence[Tokens]]


@dataclass
class BleuReport:
    """Corpus-level BLEU with its ingredients."""

    score: float
    precisions: List[float]
    matches: List[int]
    totals: List[int]
    brevity_penalty: float
    hyp_length: int
    ref_length: int
    smoothed: bool = False

    def to_dict(self) -> Dict[str, object]:
        """Machine-readable form."""
        return asdict(self)

    def describe(self) -> str:
        """One-line human-readable summary."""
        precisions = "/".join(f"{p * 100:.1f}" for p in self.precisions)
        return (
            f"BLEU = {self.score * 100:.2f}, {precisions} "
            f"(BP={self.brevity_penalty:.3f}, hyp_len={self.hyp_length}, "
            f"ref_len={self.ref_length})"
        )


def ngrams(tokens: Tokens, n: int) -> Counter:
    """Counts of the n-grams of ``tokens``."""
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _reference_set(reference: Reference) -> List[List[str]]:
    if reference and not isinstance(reference[0], str):
        return [list(r) for r in reference]  # type: ignore[arg-type]
    return [list(reference)]  # type: ignore[arg-type]


def bleu(
    hypotheses: Sequence[Tokens],
    references: Sequence[Reference],
    max_n: int = DEFAULT_MAX_NGRAM,
    smoothing: bool = False,
) -> BleuReport:
    """Corpus BLEU with clipped n-gram precision and brevity penalty.

    A reference may be a token list or a list of token lists; clipping takes
    the maximum count over references and the closest reference length
    (shorter on ties) enters the brevity penalty. With ``smoothing`` the
    precisions for n >= 2 use add-one counts.
    """
    if not hypotheses:
        raise InputError("BLEU needs at least one hypothesis")
    if len(hypotheses) != len(references):
        raise InputError(
            f"{len(hypotheses)} hypotheses but {len(references)} references"
        )
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_length = ref_length = 0
    for hyp, reference in zip(hypotheses, references):
        refs = _reference_set(reference)
        hyp_length += len(hyp)
        ref_length += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            counts = ngrams(hyp, n)
            ceiling: Counter = Counter()
            for ref in refs:
                ceiling |= ngrams(ref, n)
            matches[n - 1] += sum(min(c, ceiling[g]) for g, c in counts.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)

    precisions = []
    for n, (m, t) in enumerate(zip(matches, totals), start=1):
        if smoothing and n >= 2:
            precisions.append((m + 1) / (t + 1))
        else:
            precisions.append(m / t if t else 0.0)

    if hyp_length == 0:
        penalty = 0.0
    elif hyp_length > ref_length:
        penalty = 1.0
    else:
        penalty = math.exp(1.0 - ref_length / hyp_length)

    # orders with no n-grams anywhere in the hypotheses do not take part
    effective = [p for p, t in zip(precisions, totals) if t > 0]
    if effective and min(effective) > 0:
        score = penalty * math.exp(sum(math.log(p) for p in effective) / len(effective))
    else:
        score = 0.0
    return BleuReport(
        score=score,
        precisions=precisions,
        matches=matches,
        totals=totals,
        brevity_penalty=penalty,
        hyp_length=hyp_length,
        ref_length=ref_length,
        smoothed=smoothing,
    )


def post_processing_gain(before: BleuReport, after: BleuReport) -> float:
    """BLEU improvement obtained by UNK replacement."""
    return after.score - before.score


def token_accuracy(hypotheses: Sequence[Tokens], references: Sequence[Tokens]) -> float:
    """Share of reference positions reproduced exactly by the hypothesis."""
    if len(hypotheses) != len(references):
        raise InputError(
            f"{len(hypotheses)} hypotheses but {len(references)} references"
        )
    correct = total = 0
    for hyp, ref in zip(hypotheses, references):
        total += max(len(ref), len(hyp))
        correct += sum(1 for a, b in zip(hyp, ref) if a == b)
    return correct / total if total else 1.0


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass
class RepetitionRun:
    """Consecutive target steps attending to one source position (1-based)."""

    start: int
    source: int
    length: int


@dataclass
class CoverageGap:
    """Source position (1-based) receiving too little attention mass."""

    position: int
    mass: float


@dataclass
class DiagnosticReport:
    """Repetition and coverage findings for one alignment matrix."""

    runs: List[RepetitionRun] = field(default_factory=list)
    uncovered: List[CoverageGap] = field(default_factory=list)
    steps: int = 0
    positions: int = 0
    total_mass: float = 0.0

    @property
    def repetition(self) -> bool:
        """True when any repetition run was found."""
        return bool(self.runs)

    @property
    def coverage(self) -> bool:
        """True when any source position is under-attended."""
        return bool(self.uncovered)

    def to_dict(self) -> Dict[str, object]:
        """Machine-readable form."""
        data = asdict(self)
        data["flags"] = {"repetition": self.repetition, "coverage": self.coverage}
        return data


def diagnose_repetition(
    alignment: AlignmentMatrix, run_threshold: int = DEFAULT_RUN_THRESHOLD
) -> List[RepetitionRun]:
    """Maximal runs of rows sharing an argmax column.

    Only runs at least ``run_threshold`` rows long are reported.
    """
    weights = alignment.weights
    if weights.size == 0:
        return []
    peaks = np.argmax(weights, axis=1)
    runs: List[RepetitionRun] = []
    start = 0
    for i in range(1, len(peaks) + 1):
        if i == len(peaks) or peaks[i] != peaks[start]:
            if i - start >= run_threshold:
                runs.append(RepetitionRun(start + 1, int(peaks[start]) + 1, i - start))
            start = i
    return runs


def diagnose_coverage(
    alignment: AlignmentMatrix, mass_threshold: float = DEFAULT_MASS_THRESHOLD
) -> List[CoverageGap]:
    """Source positions whose column mass is below ``mass_threshold``."""
    masses = alignment.weights.sum(axis=0)
    return [
        CoverageGap(j + 1, float(m)) for j, m in enumerate(masses) if m < mass_threshold
    ]


def diagnose(
    alignment: AlignmentMatrix,
    run_threshold: int = DEFAULT_RUN_THRESHOLD,
    mass_threshold: float = DEFAULT_MASS_THRESHOLD,
) -> DiagnosticReport:
    """Full repetition and coverage report."""
    steps, positions = alignment.weights.shape
    total = float(alignment.weights.sum())
    if steps and abs(total - steps) > 1e-6 * max(steps, 1):
        _LOGGER.warning(
            "Alignment mass %.6f differs from its %d rows; rows are not distributions",
            total,
            steps,
        )
    return DiagnosticReport(
        runs=diagnose_repetition(alignment, run_threshold),
        uncovered=diagnose_coverage(alignment, mass_threshold),
        steps=steps,
        positions=positions,
        total_mass=total,
    )


def flag_rates(reports: Sequence[DiagnosticReport]) -> Tuple[float, float]:
    """Share of reports flagging (repetition, coverage)."""
    if not reports:
        return 0.0, 0.0
    count = len(reports)
    return (
        sum(r.repetition for r in reports) / count,
        sum(r.coverage for r in reports) / count,
    )


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def export_alignment(
    alignment: AlignmentMatrix,
    src_tokens: Tokens,
    tgt_tokens: Tokens,
    path: str,
    fmt: str = ALIGN_FORMAT_CSV,
) -> None:
    """Write an alignment as csv (6 decimals) or 8-bit pgm (1.0 is black)."""
    if fmt not in ALIGN_FORMATS:
        raise ContractError(f"unknown alignment format: {fmt} (known: {ALIGN_FORMATS})")
    rows, cols = alignment.shape
    if fmt == ALIGN_FORMAT_CSV and (rows != len(tgt_tokens) or cols != len(src_tokens)):
        raise ContractError(
            f"alignment {alignment.shape} does not fit {len(tgt_tokens)} target x "
            f"{len(src_tokens)} source tokens"
        )
    try:
        if fmt == ALIGN_FORMAT_PGM:
            pixels = np.rint(255.0 * (1.0 - np.clip(alignment.weights, 0.0, 1.0)))
            with open(path, "wb") as handle:
                handle.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
                handle.write(pixels.astype(np.uint8).tobytes())
            return
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow([""] + list(src_tokens))
            for token, row in zip(tgt_tokens, alignment.weights):
                writer.writerow([token] + [f"{w:.6f}" for w in row])
    except OSError as err:
        raise CheckpointIOError(
            path, f"cannot write alignment: {err.strerror}"
        ) from err


def load_alignment_csv(path: str) -> Tuple[AlignmentMatrix, List[str], List[str]]:
    """Read a csv alignment back as (matrix, source tokens, target tokens)."""
    try:
        with open(path, encoding="utf-8", newline="") as handle:
            rows = list(csv.reader(handle))
    except OSError as err:
        raise CheckpointIOError(path, f"cannot read alignment: {err.strerror}") from err
    if not rows:
        raise InputError(f"{path}: empty alignment file")
    src_tokens = rows[0][1:]
    tgt_tokens = [row[0] for row in rows[1:]]
    try:
        weights = np.array(
            [[float(w) for w in row[1:]] for row in rows[1:]], dtype=np.float64
        ).reshape(len(tgt_tokens), len(src_tokens))
    except ValueError as err:
        raise InputError(f"{path}: malformed alignment row ({err})") from err
    return AlignmentMatrix(weights), src_tokens, tgt_tokens

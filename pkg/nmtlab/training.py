"""Loss assembly, AdaGrad, dropout, the training loop and gradient checks."""
from __future__ import annotations

import json
import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .config import ExperimentConfig, ModelConfig, TrainConfig
from .const import (
    FD_STEP,
    GRAD_CHECK_FLOOR,
    GRAD_CHECK_TOLERANCE,
    NORMALIZE_SOURCE,
    PROB_FLOOR,
)
from .core.autodiff import (
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    column_norm,
    constant,
    contract,
    log,
    scale,
    stack,
    sub,
)
from .core.model import MaskFactory, Seq2Seq
from .core.params import ModelParams
from .corpus import (
    Batch,
    SentencePair,
    Vocab,
    build_vocab,
    make_batch,
    make_batches,
    read_parallel,
    split_synthetic,
)
from .decode import TranslationTable, build_translation_table, greedy_tokens
from .evaluation import bleu
from .exceptions import ContractError, DimensionError, DivergenceError, InputError
from .monitor import ResourceMonitor

_LOGGER = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def xent_loss(
    step_distributions: Sequence[Tensor],
    target_ids: np.ndarray,
    mask: Optional[np.ndarray] = None,
    log_space: bool = False,
) -> Tuple[Tensor, int]:
    """Mean negative log-probability of the targets over unmasked steps.

    ``step_distributions`` holds one (V x B) tensor per step, probabilities
    by default or log-probabilities with ``log_space``. Probabilities below
    1e-12 are clamped; the second return value counts clamped targets.
    """
    if not step_distributions:
        raise ContractError("xent_loss: no decoder steps")
    stacked = stack(step_distributions)
    if stacked.data.ndim == 2:
        raise DimensionError(
            f"xent_loss: distributions must be (V x B) columns, got {stacked.shape[1:]}"
        )
    steps, vocab, batch = stacked.shape
    targets = np.asarray(target_ids, dtype=np.int64).reshape(steps, batch)
    keep = (
        np.ones((steps, batch), dtype=bool)
        if mask is None
        else np.asarray(mask, dtype=bool).reshape(steps, batch)
    )
    if np.any(keep & ((targets < 0) | (targets >= vocab))):
        raise ContractError(f"xent_loss: target ids outside [0, {vocab})")
    count = int(keep.sum())
    if count == 0:
        raise ContractError("xent_loss: every step is masked")

    s_idx, b_idx = np.nonzero(keep)
    selector = np.zeros((steps, vocab, batch))
    selector[s_idx, targets[s_idx, b_idx], b_idx] = -1.0 / count

    clamped = 0
    if log_space:
        log_probs = stacked
    else:
        picked = stacked.data[s_idx, targets[s_idx, b_idx], b_idx]
        clamped = int(np.sum(picked < PROB_FLOOR))
        if clamped:
            _LOGGER.warning(
                "Clamped %d target probabilities to %g", clamped, PROB_FLOOR
            )
        log_probs = log(stacked, floor=PROB_FLOOR)
    return contract("svb,svb->", log_probs, constant(selector)), clamped


def conddec_costs(
    sd_sequence: Sequence[Tensor],
    lengths: Optional[Sequence[int]] = None,
    normalizer_lengths: Optional[Sequence[int]] = None,
) -> Tuple[Tensor, Tensor]:
    """Step-decay and left-over costs of a condition-vector sequence.

    ``sd_sequence`` is ``[sd_0, ..., sd_S]`` with (C x B) entries. Sentence b
    took ``lengths[b]`` steps (default S); its decay cost is the sum of
    ``||sd_j - sd_{j-1}||`` over those steps divided by
    ``normalizer_lengths[b]`` (default the same step count), and its
    left-over cost is ``||sd_{lengths[b]}||``. Both are averaged over the batch.
    """
    if len(sd_sequence) < 2:
        raise ContractError(
            f"conddec_costs needs sd_0 and at least one step, got {len(sd_sequence)} "
            "vectors"
        )
    if sd_sequence[0].data.ndim != 2:
        raise DimensionError(
            "conddec_costs: condition vectors must be (C x B), got "
            f"{sd_sequence[0].shape}"
        )
    steps = len(sd_sequence) - 1
    batch = sd_sequence[0].shape[1]
    taken = np.full(batch, steps, dtype=np.int64)
    if lengths is not None:
        taken = np.asarray(lengths, dtype=np.int64).reshape(batch)
    if np.any(taken < 1) or np.any(taken > steps):
        raise ContractError(f"conddec_costs: step counts {taken} outside [1, {steps}]")
    norm_by = taken if normalizer_lengths is None else np.asarray(
        normalizer_lengths, dtype=np.int64
    ).reshape(batch)
    if np.any(norm_by < 1):
        raise ContractError("conddec_costs: normaliser lengths must be positive")

    diffs = [
        column_norm(sub(sd_sequence[j], sd_sequence[j - 1]))
        for j in range(1, steps + 1)
    ]
    active = np.arange(1, steps + 1)[:, None] <= taken[None, :]
    decay_weights = active / norm_by[None, :] / batch
    decay = contract("sb,sb->", stack(diffs), constant(decay_weights))

    pick = np.zeros((steps + 1, batch))
    pick[taken, np.arange(batch)] = 1.0
    final = contract("scb,sb->cb", stack(sd_sequence), constant(pick))
    left = contract("b,b->", column_norm(final), constant(np.full(batch, 1.0 / batch)))
    return decay, left


def total_loss(
    xent: Tensor,
    costs: Optional[Tuple[Tensor, Tensor]] = None,
    lambda_decay: float = 1.0,
    lambda_left: float = 1.0,
    test_time: bool = False,
) -> Tensor:
    """Cross-entropy plus weighted CondDec costs; the costs are dropped at test time."""
    xent = as_tensor(xent)
    if costs is None or test_time:
        return xent
    decay, left = (as_tensor(c) for c in costs)
    return add(xent, add(scale(decay, lambda_decay), scale(left, lambda_left)))


@dataclass
class LossBreakdown:
    """Scalar loss of one batch with its parts."""

    total: Tensor
    xent: Tensor
    decay: Optional[Tensor] = None
    left: Optional[Tensor] = None
    clamped: int = 0


def dropout_mask(
    shape: Tuple[int, ...], rate: float, rng: np.random.Generator
) -> Tensor:
    """Inverted dropout mask: 0 with probability ``rate``, else ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return constant(np.ones(shape))
    keep = rng.random(shape) >= rate
    return constant(keep / (1.0 - rate))


def noise_factory(
    rate: float, rng: Optional[np.random.Generator]
) -> Optional[MaskFactory]:
    """Mask factory for the model, or None when dropout is off."""
    if rng is None or rate == 0.0:
        return None
    return lambda shape: dropout_mask(shape, rate, rng)


def batch_loss(
    model: Seq2Seq,
    batch: Batch,
    train: TrainConfig,
    rng: Optional[np.random.Generator] = None,
    test_time: bool = False,
) -> LossBreakdown:
    """Teacher-forced loss of a batch; dropout only when ``rng`` is given."""
    noise = None if test_time else noise_factory(train.dropout, rng)
    result = model.forward(batch.src, batch.src_mask, batch.decoder_inputs, noise)
    xent, clamped = xent_loss(
        result.log_probs, batch.decoder_targets, batch.target_mask, log_space=True
    )
    if not result.conditions:
        return LossBreakdown(total=xent, xent=xent, clamped=clamped)
    normalizer = None
    if train.decay_normalizer == NORMALIZE_SOURCE:
        normalizer = batch.src_lengths
    decay, left = conddec_costs(result.conditions, batch.target_steps, normalizer)
    total = total_loss(
        xent, (decay, left), train.lambda_decay, train.lambda_left, test_time
    )
    return LossBreakdown(
        total=total, xent=xent, decay=decay, left=left, clamped=clamped
    )


# ---------------------------------------------------------------------------
# Optimisation
# ---------------------------------------------------------------------------


@dataclass
class AdaGradState:
    """Accumulated squared gradients, one array per parameter block."""

    accumulators: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    updates: int = 0
    skipped: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdaGradState":
        """Fresh state matching ``params``."""
        return cls(OrderedDict((n, np.zeros(t.shape)) for n, t in params.items()))


def gradients(params: ModelParams) -> "OrderedDict[str, np.ndarray]":
    """Current gradients; blocks without one get zeros."""
    return OrderedDict(
        (n, t.grad if t.grad is not None else np.zeros(t.shape))
        for n, t in params.items()
    )


def clip_gradients(
    grads: Mapping[str, np.ndarray], max_norm: float
) -> Tuple["OrderedDict[str, np.ndarray]", float]:
    """Rescale to a global L2 norm of at most ``max_norm`` (0 disables)."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    clipped = OrderedDict(grads)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        clipped = OrderedDict((n, g * factor) for n, g in grads.items())
    return clipped, norm


def adagrad_update(
    params: ModelParams,
    grads: Mapping[str, np.ndarray],
    state: AdaGradState,
    lr: float,
    eps: float,
) -> bool:
    """One AdaGrad step in place; returns False when skipped.

    ``acc += g**2`` then ``theta -= lr * g / (sqrt(acc) + eps)``. A batch with
    any non-finite gradient entry leaves parameters and accumulators alone.
    """
    for name, grad in grads.items():
        if name not in state.accumulators:
            raise ContractError(f"no AdaGrad accumulator for block {name}")
        if np.shape(grad) != params[name].shape:
            raise DimensionError(
                f"gradient for {name} has shape {np.shape(grad)}, parameter "
                f"{params[name].shape}"
            )
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        state.skipped += 1
        _LOGGER.warning(
            "Skipping update with non-finite gradients (%d skipped so far)",
            state.skipped,
        )
        return False
    for name, grad in grads.items():
        acc = state.accumulators[name]
        acc += grad * grad
        denom = np.sqrt(acc) + eps
        step = np.divide(grad, denom, out=np.zeros_like(grad), where=denom > 0)
        params[name].data -= lr * step
    state.updates += 1
    return True


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


@dataclass
class TrainingData:
    """Indexed training and held-out pairs with their vocabularies."""

    train: List[SentencePair]
    valid: List[SentencePair]
    src_vocab: Vocab
    tgt_vocab: Vocab
    test: List[SentencePair] = field(default_factory=list)


def load_training_data(config: ExperimentConfig) -> TrainingData:
    """Files named in the data section, or the synthetic task otherwise."""
    data = config.data
    if data.uses_files:
        train = read_parallel(data.train_src, data.train_tgt)
        valid: List[SentencePair] = []
        if data.valid_src and data.valid_tgt:
            valid = read_parallel(data.valid_src, data.valid_tgt)
        test: List[SentencePair] = []
    else:
        splits = split_synthetic(data.synth)
        train, valid, test = splits["train"], splits["valid"], splits["test"]
    if not train:
        raise InputError("the training corpus is empty")
    src_vocab = build_vocab((p.src_tokens for p in train), data.src_vocab_size)
    tgt_vocab = build_vocab((p.tgt_tokens for p in train), data.tgt_vocab_size)
    _LOGGER.info(
        "Loaded %d training / %d validation pairs (vocab %d / %d)",
        len(train),
        len(valid),
        len(src_vocab),
        len(tgt_vocab),
    )
    return TrainingData(
        train=[p.index(src_vocab, tgt_vocab) for p in train],
        valid=[p.index(src_vocab, tgt_vocab) for p in valid],
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        test=[p.index(src_vocab, tgt_vocab) for p in test],
    )


def validation_bleu(
    model: Seq2Seq,
    pairs: Sequence[SentencePair],
    tgt_vocab: Vocab,
    smoothing: bool = False,
) -> Optional[float]:
    """Greedy-decoded BLEU without post-processing (None for no pairs)."""
    if not pairs:
        return None
    hyps = [greedy_tokens(model, p.src_ids, tgt_vocab) for p in pairs]
    return bleu(hyps, [p.tgt_tokens for p in pairs], smoothing=smoothing).score


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


class Trainer:
    """Epoch loop with periodic validation and best-parameter checkpoints."""

    def __init__(
        self,
        config: ExperimentConfig,
        data: TrainingData,
        checkpoint_path: Optional[str] = None,
        log_path: Optional[str] = None,
        monitor: Optional[ResourceMonitor] = None,
    ) -> None:
        """Initialize a model and optimiser state from ``config.seed``."""
        self.config = config
        self.data = data
        self.checkpoint_path = checkpoint_path or config.train.checkpoint
        self.log_path = log_path if log_path is not None else config.train.log
        self.monitor = monitor
        self.rng = np.random.default_rng(config.seed)
        self.model = Seq2Seq.initialize(
            config.model, len(data.src_vocab), len(data.tgt_vocab), config.seed
        )
        self.optimizer = AdaGradState.zeros(self.model.params)
        self.table: TranslationTable = build_translation_table(
            data.train, data.tgt_vocab
        )
        self.history: List[Dict[str, object]] = []
        self.update = 0
        self.epoch = 0
        self._best_bleu: Optional[float] = None
        self._best_params = self.model.params.to_arrays()
        self._losses: List[float] = []
        self._started = 0.0

    @property
    def train_config(self) -> TrainConfig:
        """Training section of the configuration."""
        return self.config.train

    def _limit_reached(self) -> bool:
        limit = self.train_config.max_updates
        return 0 <= limit <= self.update

    def snapshot(self) -> Checkpoint:
        """Checkpoint holding the best parameters seen so far."""
        return Checkpoint(
            config=self.config,
            src_vocab=self.data.src_vocab,
            tgt_vocab=self.data.tgt_vocab,
            params=OrderedDict((n, a.copy()) for n, a in self._best_params.items()),
            adagrad=OrderedDict(
                (n, a.copy()) for n, a in self.optimizer.accumulators.items()
            ),
            translation_table=self.table,
            history=[dict(r) for r in self.history],
            rng_state=self.rng.bit_generator.state,
            update=self.update,
            epoch=self.epoch,
            skipped_updates=self.optimizer.skipped,
        )

    def train_step(self, batch: Batch) -> float:
        """Forward, backward and one AdaGrad update; returns the batch loss."""
        params = self.model.params
        params.zero_grad()
        with Tape() as tape:
            parts = batch_loss(self.model, batch, self.train_config, self.rng)
        value = parts.total.item()
        if not np.isfinite(value):
            raise DivergenceError(
                f"loss became {value} at update {self.update + 1}; the last good "
                f"checkpoint stays at {self.checkpoint_path}"
            )
        backward(parts.total, tape)
        grads, norm = clip_gradients(gradients(params), self.train_config.clip_norm)
        adagrad_update(
            params,
            grads,
            self.optimizer,
            self.train_config.learning_rate,
            self.train_config.adagrad_eps,
        )
        _LOGGER.debug(
            "update %d: loss %.6f, gradient norm %.4f", self.update + 1, value, norm
        )
        return value

    def validate(self) -> Dict[str, object]:
        """Score the current parameters, record them and keep the best."""
        score = validation_bleu(
            self.model,
            self.data.valid,
            self.data.tgt_vocab,
            self.config.eval.smoothing,
        )
        loss = float(np.mean(self._losses)) if self._losses else None
        self._losses = []
        record = {
            "update": self.update,
            "epoch": self.epoch,
            "loss": loss,
            "valid_bleu": score,
        }
        self.history.append(record)
        improved = self._best_bleu is None or (
            score is not None and score > self._best_bleu
        )
        if score is None or improved:
            self._best_bleu = score
            self._best_params = self.model.params.to_arrays()
        _LOGGER.info(
            "Validation at update %d (epoch %d): loss %s, BLEU %s%s",
            self.update,
            self.epoch,
            "n/a" if loss is None else f"{loss:.4f}",
            "n/a" if score is None else f"{score:.4f}",
            " (best)" if improved else "",
        )
        if self.monitor is not None:
            _LOGGER.info("Resources: %s", self.monitor.snapshot())
        self._write_log(record)
        save_checkpoint(self.checkpoint_path, self.snapshot())
        return record

    def _write_log(self, record: Mapping[str, object]) -> None:
        if not self.log_path:
            return
        line = dict(record, elapsed=round(time.monotonic() - self._started, 3))
        with open(self.log_path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(line, sort_keys=True) + "\n")

    def run(self) -> Checkpoint:
        """Train until the epoch or update limit and return the best checkpoint."""
        train = self.train_config
        self._started = time.monotonic()
        if self.log_path:
            with open(self.log_path, "w", encoding="utf-8"):
                pass
        _LOGGER.info("Training %s", self.model.describe())
        save_checkpoint(self.checkpoint_path, self.snapshot())

        last_validated = 0
        for epoch in range(train.max_epochs):
            if self._limit_reached():
                break
            self.epoch = epoch + 1
            batches = make_batches(
                self.data.train,
                train.batch_size,
                train.max_len,
                shuffle_seed=self.config.seed + epoch,
                sort_window=train.sort_window,
                length_filter=train.length_filter,
            )
            for batch in batches:
                if self._limit_reached():
                    break
                self._losses.append(self.train_step(batch))
                self.update += 1
                if train.validate_every and self.update % train.validate_every == 0:
                    self.validate()
                    last_validated = self.update
            if not train.validate_every and self.update > last_validated:
                self.validate()
                last_validated = self.update

        if self.update > last_validated:
            self.validate()
        self.model.params.load_arrays(self._best_params)
        checkpoint = self.snapshot()
        save_checkpoint(self.checkpoint_path, checkpoint)
        _LOGGER.info(
            "Finished after %d updates (%d skipped); best validation BLEU %s",
            self.update,
            self.optimizer.skipped,
            self._best_bleu,
        )
        return checkpoint


def train(
    config: ExperimentConfig,
    data: Optional[TrainingData] = None,
    checkpoint_path: Optional[str] = None,
    log_path: Optional[str] = None,
    monitor: Optional[ResourceMonitor] = None,
) -> Checkpoint:
    """Train one configuration and return its best checkpoint."""
    trainer = Trainer(
        config,
        data if data is not None else load_training_data(config),
        checkpoint_path,
        log_path,
        monitor,
    )
    try:
        return trainer.run()
    except DivergenceError:
        _LOGGER.error("Training diverged at update %d", trainer.update + 1)
        raise


# ---------------------------------------------------------------------------
# Gradient checks
# ---------------------------------------------------------------------------


@dataclass
class BlockCheck:
    """Worst relative error within one parameter block."""

    name: str
    max_rel_error: float
    entries: int


@dataclass
class GradCheckReport:
    """Per-block comparison of analytic and finite-difference gradients."""

    label: str
    tolerance: float
    blocks: List[BlockCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """True when every block is below the tolerance."""
        return all(b.max_rel_error < self.tolerance for b in self.blocks)

    @property
    def worst(self) -> float:
        """Largest relative error over all blocks."""
        return max((b.max_rel_error for b in self.blocks), default=0.0)

    def to_dict(self) -> Dict[str, object]:
        """Machine-readable form."""
        return {
            "model": self.label,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "blocks": {b.name: b.max_rel_error for b in self.blocks},
        }

    def describe(self) -> List[str]:
        """One line per block."""
        return [
            f"{b.name:<16} {b.max_rel_error:.3e} ({b.entries} entries) "
            f"{'ok' if b.max_rel_error < self.tolerance else 'FAIL'}"
            for b in self.blocks
        ]


def tiny_batch(
    src_vocab_size: int,
    tgt_vocab_size: int,
    seed: int,
    batch_size: int = 2,
    max_len: int = 5,
) -> Batch:
    """Random batch of real (non-reserved) ids for gradient checks."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(batch_size):
        src = rng.integers(4, src_vocab_size, int(rng.integers(2, max_len + 1)))
        tgt = rng.integers(4, tgt_vocab_size, int(rng.integers(2, max_len + 1)))
        pairs.append(
            SentencePair(
                [f"s{i}" for i in src], [f"t{i}" for i in tgt], list(src), list(tgt)
            )
        )
    return make_batch(pairs)


def _relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale_ = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRAD_CHECK_FLOOR)
    return np.abs(analytic - numeric) / scale_


def grad_check(
    model_config: ModelConfig,
    batch: Batch,
    tolerance: float = GRAD_CHECK_TOLERANCE,
    src_vocab_size: int = 11,
    tgt_vocab_size: int = 11,
    seed: int = 0,
    frozen: Sequence[str] = (),
    max_entries_per_block: Optional[int] = None,
    train_config: Optional[TrainConfig] = None,
) -> GradCheckReport:
    """Compare analytic gradients of the total loss with central differences.

    Dropout and clipping are off. With ``max_entries_per_block`` a seeded
    sample of entries is checked in each block; frozen blocks are skipped.
    """
    train = replace(train_config or TrainConfig(), dropout=0.0, clip_norm=0.0)
    model = Seq2Seq.initialize(model_config, src_vocab_size, tgt_vocab_size, seed)
    unknown = sorted(set(frozen) - set(model.params.names()))
    if unknown:
        raise ContractError(f"cannot freeze unknown blocks: {unknown}")

    model.params.zero_grad()
    with Tape() as tape:
        loss = batch_loss(model, batch, train).total
    backward(loss, tape)

    def evaluate() -> float:
        return batch_loss(model, batch, train).total.item()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(label=model_config.label, tolerance=tolerance)
    for name, tensor in model.params.items():
        if name in frozen:
            continue
        analytic = tensor.grad if tensor.grad is not None else np.zeros(tensor.shape)
        flat = tensor.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries_per_block and flat.size > max_entries_per_block:
            picked = rng.choice(flat.size, max_entries_per_block, replace=False)
            indices = np.sort(picked)
        numeric = np.empty(indices.size)
        for k, i in enumerate(indices):
            orig = flat[i]
            flat[i] = orig + FD_STEP
            plus = evaluate()
            flat[i] = orig - FD_STEP
            minus = evaluate()
            flat[i] = orig
            numeric[k] = (plus - minus) / (2.0 * FD_STEP)
        errors = _relative_errors(analytic.reshape(-1)[indices], numeric)
        report.blocks.append(
            BlockCheck(name, float(errors.max(initial=0.0)), int(indices.size))
        )
    _LOGGER.info(
        "Gradient check for %s: worst relative error %.3e over %d blocks",
        report.label,
        report.worst,
        len(report.blocks),
    )
    return report

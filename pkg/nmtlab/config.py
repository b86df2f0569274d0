"""Experiment configuration for nmtlab.

Configuration files are flat ``key = value`` text with dotted section
prefixes (``model.hidden = 64``); ``#`` starts a comment. Every section is
validated with a voluptuous schema and turned into a dataclass.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional

import voluptuous as vol

from .const import (
    CONF_ADAGRAD_EPS,
    CONF_ATT_HIDDEN,
    CONF_ATTENTION,
    CONF_ATTENTION_DIM,
    CONF_BATCH_SIZE,
    CONF_BEAM,
    CONF_CHECKPOINT,
    CONF_CLIP_NORM,
    CONF_CONDITION_DIM,
    CONF_CONV_FEATURES,
    CONF_DATA,
    CONF_DECAY_NORMALIZER,
    CONF_DECODE,
    CONF_DECODER,
    CONF_DROPOUT,
    CONF_EMBED_DIM,
    CONF_EVAL,
    CONF_EXPERIMENTAL,
    CONF_FERTILITY,
    CONF_HIDDEN,
    CONF_KERNEL_WIDTH,
    CONF_LAMBDA_DECAY,
    CONF_LAMBDA_LEFT,
    CONF_LEARNING_RATE,
    CONF_LENGTH_FILTER,
    CONF_LENGTH_NORM,
    CONF_LOG,
    CONF_MASS_THRESHOLD,
    CONF_MAX_EPOCHS,
    CONF_MAX_LEN,
    CONF_MAX_UPDATES,
    CONF_MAXOUT_POOL,
    CONF_MAXOUT_UNITS,
    CONF_MIN_LEN,
    CONF_MODEL,
    CONF_PERMUTATION,
    CONF_POST_PROCESS,
    CONF_RUN_THRESHOLD,
    CONF_SEED,
    CONF_SMOOTHING,
    CONF_SORT_WINDOW,
    CONF_SRC_VOCAB_SIZE,
    CONF_SYNTH,
    CONF_TEST_SIZE,
    CONF_TGT_VOCAB_SIZE,
    CONF_TRAIN,
    CONF_TRAIN_SIZE,
    CONF_TRAIN_SRC,
    CONF_TRAIN_TGT,
    CONF_VALID_SIZE,
    CONF_VALID_SRC,
    CONF_VALID_TGT,
    CONF_VALIDATE_EVERY,
    CONF_VOCAB_SIZE,
    CONF_WORKERS,
    DECAY_NORMALIZERS,
    DEFAULT_ADAGRAD_EPS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_BEAM,
    DEFAULT_CHECKPOINT,
    DEFAULT_CLIP_NORM,
    DEFAULT_CONV_FEATURES,
    DEFAULT_DROPOUT,
    DEFAULT_EMBED_DIM,
    DEFAULT_HIDDEN,
    DEFAULT_KERNEL_WIDTH,
    DEFAULT_LAMBDA_DECAY,
    DEFAULT_LAMBDA_LEFT,
    DEFAULT_LEARNING_RATE,
    DEFAULT_LOG,
    DEFAULT_MASS_THRESHOLD,
    DEFAULT_MAX_EPOCHS,
    DEFAULT_MAX_LEN,
    DEFAULT_MAX_UPDATES,
    DEFAULT_MAXOUT_POOL,
    DEFAULT_RUN_THRESHOLD,
    DEFAULT_SEED,
    DEFAULT_SORT_WINDOW,
    DEFAULT_SYNTH_MAX_LEN,
    DEFAULT_SYNTH_MIN_LEN,
    DEFAULT_SYNTH_TEST,
    DEFAULT_SYNTH_TRAIN,
    DEFAULT_SYNTH_VALID,
    DEFAULT_SYNTH_VOCAB,
    DEFAULT_VALIDATE_EVERY,
    DEFAULT_VOCAB_SIZE,
    DEFAULT_WORKERS,
    EXPERIMENTAL_COMBINATIONS,
    FERTILITY_RULES,
    FILTER_EITHER,
    LENGTH_FILTERS,
    NORMALIZE_TARGET,
    PERMUTATION_RULES,
    AttentionKind,
    DecoderKind,
)
from .exceptions import CheckpointIOError, ConfigError

_LOGGER = logging.getLogger(__name__)

_POSITIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=1))
_DIM = vol.All(vol.Coerce(int), vol.Range(min=0))
_NON_NEGATIVE = vol.All(vol.Coerce(float), vol.Range(min=0))
_PATH = vol.Coerce(str)


def _odd(value: int) -> int:
    if value % 2 == 0:
        raise vol.Invalid(f"must be odd, got {value}")
    return value


MODEL_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_ATTENTION, default=AttentionKind.BASE.value): vol.All(
            vol.Coerce(str), vol.Lower, vol.In([k.value for k in AttentionKind])
        ),
        vol.Optional(CONF_DECODER, default=DecoderKind.BASE.value): vol.All(
            vol.Coerce(str), vol.Lower, vol.In([k.value for k in DecoderKind])
        ),
        vol.Optional(CONF_EMBED_DIM, default=DEFAULT_EMBED_DIM): _POSITIVE_INT,
        vol.Optional(CONF_HIDDEN, default=DEFAULT_HIDDEN): _POSITIVE_INT,
        vol.Optional(CONF_ATTENTION_DIM, default=0): _DIM,
        vol.Optional(CONF_ATT_HIDDEN, default=0): _DIM,
        vol.Optional(CONF_CONDITION_DIM, default=0): _DIM,
        vol.Optional(CONF_MAXOUT_UNITS, default=0): _DIM,
        vol.Optional(CONF_MAXOUT_POOL, default=DEFAULT_MAXOUT_POOL): vol.All(
            vol.Coerce(int), vol.Range(min=2)
        ),
        vol.Optional(CONF_KERNEL_WIDTH, default=DEFAULT_KERNEL_WIDTH): vol.All(
            vol.Coerce(int), vol.Range(min=1), _odd
        ),
        vol.Optional(CONF_CONV_FEATURES, default=DEFAULT_CONV_FEATURES): _POSITIVE_INT,
        vol.Optional(CONF_EXPERIMENTAL, default=False): vol.Boolean(),
    }
)

TRAIN_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_LEARNING_RATE, default=DEFAULT_LEARNING_RATE): vol.All(
            vol.Coerce(float), vol.Range(min=0, min_included=False)
        ),
        vol.Optional(CONF_ADAGRAD_EPS, default=DEFAULT_ADAGRAD_EPS): _NON_NEGATIVE,
        vol.Optional(CONF_DROPOUT, default=DEFAULT_DROPOUT): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)
        ),
        vol.Optional(CONF_BATCH_SIZE, default=DEFAULT_BATCH_SIZE): _POSITIVE_INT,
        vol.Optional(CONF_MAX_EPOCHS, default=DEFAULT_MAX_EPOCHS): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
        vol.Optional(CONF_MAX_UPDATES, default=DEFAULT_MAX_UPDATES): vol.All(
            vol.Coerce(int), vol.Range(min=-1)
        ),
        vol.Optional(CONF_LAMBDA_DECAY, default=DEFAULT_LAMBDA_DECAY): _NON_NEGATIVE,
        vol.Optional(CONF_LAMBDA_LEFT, default=DEFAULT_LAMBDA_LEFT): _NON_NEGATIVE,
        vol.Optional(CONF_VALIDATE_EVERY, default=DEFAULT_VALIDATE_EVERY): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
        vol.Optional(CONF_CLIP_NORM, default=DEFAULT_CLIP_NORM): _NON_NEGATIVE,
        vol.Optional(CONF_MAX_LEN, default=DEFAULT_MAX_LEN): _POSITIVE_INT,
        vol.Optional(CONF_LENGTH_FILTER, default=FILTER_EITHER): vol.In(
            LENGTH_FILTERS
        ),
        vol.Optional(CONF_SORT_WINDOW, default=DEFAULT_SORT_WINDOW): _POSITIVE_INT,
        vol.Optional(CONF_DECAY_NORMALIZER, default=NORMALIZE_TARGET): vol.In(
            DECAY_NORMALIZERS
        ),
        vol.Optional(CONF_CHECKPOINT, default=DEFAULT_CHECKPOINT): _PATH,
        vol.Optional(CONF_LOG, default=DEFAULT_LOG): _PATH,
    }
)

SYNTH_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_VOCAB_SIZE, default=DEFAULT_SYNTH_VOCAB): _POSITIVE_INT,
        vol.Optional(CONF_MIN_LEN, default=DEFAULT_SYNTH_MIN_LEN): _POSITIVE_INT,
        vol.Optional(CONF_MAX_LEN, default=DEFAULT_SYNTH_MAX_LEN): _POSITIVE_INT,
        vol.Optional(CONF_PERMUTATION, default="reverse"): vol.In(PERMUTATION_RULES),
        vol.Optional(CONF_FERTILITY, default="identity"): vol.In(FERTILITY_RULES),
        vol.Optional(CONF_TRAIN_SIZE, default=DEFAULT_SYNTH_TRAIN): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
        vol.Optional(CONF_VALID_SIZE, default=DEFAULT_SYNTH_VALID): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
        vol.Optional(CONF_TEST_SIZE, default=DEFAULT_SYNTH_TEST): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
    }
)

DATA_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_TRAIN_SRC, default=""): _PATH,
        vol.Optional(CONF_TRAIN_TGT, default=""): _PATH,
        vol.Optional(CONF_VALID_SRC, default=""): _PATH,
        vol.Optional(CONF_VALID_TGT, default=""): _PATH,
        vol.Optional(CONF_SRC_VOCAB_SIZE, default=DEFAULT_VOCAB_SIZE): vol.All(
            vol.Coerce(int), vol.Range(min=5)
        ),
        vol.Optional(CONF_TGT_VOCAB_SIZE, default=DEFAULT_VOCAB_SIZE): vol.All(
            vol.Coerce(int), vol.Range(min=5)
        ),
    }
)

DECODE_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_BEAM, default=DEFAULT_BEAM): _POSITIVE_INT,
        vol.Optional(CONF_MAX_LEN, default=0): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
        vol.Optional(CONF_LENGTH_NORM, default=False): vol.Boolean(),
        vol.Optional(CONF_POST_PROCESS, default=False): vol.Boolean(),
        vol.Optional(CONF_WORKERS, default=DEFAULT_WORKERS): _POSITIVE_INT,
    }
)

EVAL_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_SMOOTHING, default=False): vol.Boolean(),
        vol.Optional(CONF_RUN_THRESHOLD, default=DEFAULT_RUN_THRESHOLD): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Optional(CONF_MASS_THRESHOLD, default=DEFAULT_MASS_THRESHOLD): (
            _NON_NEGATIVE
        ),
    }
)

TOP_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_SEED, default=DEFAULT_SEED): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
    }
)

SECTION_SCHEMAS: Dict[str, vol.Schema] = {
    "": TOP_SCHEMA,
    CONF_MODEL: MODEL_SCHEMA,
    CONF_TRAIN: TRAIN_SCHEMA,
    CONF_DATA: DATA_SCHEMA,
    f"{CONF_DATA}.{CONF_SYNTH}": SYNTH_SCHEMA,
    CONF_DECODE: DECODE_SCHEMA,
    CONF_EVAL: EVAL_SCHEMA,
}


@dataclass
class ModelConfig:
    """Architecture of one encoder / attention / decoder combination.

    Derived sizes configured as 0 resolve on construction: attention and
    attention-state sizes and maxout units to ``hidden``, the condition
    vector to ``2 * hidden`` (the annotation size).
    """

    attention: AttentionKind = AttentionKind.BASE
    decoder: DecoderKind = DecoderKind.BASE
    embed_dim: int = DEFAULT_EMBED_DIM
    hidden: int = DEFAULT_HIDDEN
    attention_dim: int = 0
    att_hidden: int = 0
    condition_dim: int = 0
    maxout_units: int = 0
    maxout_pool: int = DEFAULT_MAXOUT_POOL
    kernel_width: int = DEFAULT_KERNEL_WIDTH
    conv_features: int = DEFAULT_CONV_FEATURES
    experimental: bool = False

    def __post_init__(self) -> None:
        self.attention = AttentionKind(self.attention)
        self.decoder = DecoderKind(self.decoder)
        self.attention_dim = self.attention_dim or self.hidden
        self.att_hidden = self.att_hidden or self.hidden
        self.condition_dim = self.condition_dim or 2 * self.hidden
        self.maxout_units = self.maxout_units or self.hidden

    def check(self) -> None:
        """Raise ConfigError for unsupported settings."""
        if self.maxout_pool < 2:
            raise ConfigError(f"model.maxout_pool must be >= 2, got {self.maxout_pool}")
        if self.kernel_width % 2 == 0:
            raise ConfigError(
                f"model.kernel_width must be odd, got {self.kernel_width}"
            )
        if (
            self.attention,
            self.decoder,
        ) in EXPERIMENTAL_COMBINATIONS and not self.experimental:
            raise ConfigError(
                f"decoder '{self.decoder.value}' with attention "
                f"'{self.attention.value}' is experimental: set "
                f"{CONF_MODEL}.{CONF_EXPERIMENTAL} = true to use it"
            )

    @property
    def label(self) -> str:
        """Short name such as ``recatt+base``."""
        return f"{self.attention.value}+{self.decoder.value}"


@dataclass
class TrainConfig:
    """Optimisation and batching settings."""

    learning_rate: float = DEFAULT_LEARNING_RATE
    adagrad_eps: float = DEFAULT_ADAGRAD_EPS
    dropout: float = DEFAULT_DROPOUT
    batch_size: int = DEFAULT_BATCH_SIZE
    max_epochs: int = DEFAULT_MAX_EPOCHS
    max_updates: int = DEFAULT_MAX_UPDATES  # -1: no limit
    lambda_decay: float = DEFAULT_LAMBDA_DECAY
    lambda_left: float = DEFAULT_LAMBDA_LEFT
    validate_every: int = DEFAULT_VALIDATE_EVERY  # 0: once per epoch
    clip_norm: float = DEFAULT_CLIP_NORM  # 0: off
    max_len: int = DEFAULT_MAX_LEN
    length_filter: str = FILTER_EITHER
    sort_window: int = DEFAULT_SORT_WINDOW
    decay_normalizer: str = NORMALIZE_TARGET
    checkpoint: str = DEFAULT_CHECKPOINT
    log: str = DEFAULT_LOG


@dataclass
class SynthTaskSpec:
    """Synthetic reordering / fertility task."""

    vocab_size: int = DEFAULT_SYNTH_VOCAB
    min_len: int = DEFAULT_SYNTH_MIN_LEN
    max_len: int = DEFAULT_SYNTH_MAX_LEN
    permutation: str = "reverse"
    fertility: str = "identity"
    train_size: int = DEFAULT_SYNTH_TRAIN
    valid_size: int = DEFAULT_SYNTH_VALID
    test_size: int = DEFAULT_SYNTH_TEST
    seed: int = DEFAULT_SEED


@dataclass
class DataConfig:
    """Corpus locations; empty paths mean the synthetic task is used."""

    train_src: str = ""
    train_tgt: str = ""
    valid_src: str = ""
    valid_tgt: str = ""
    src_vocab_size: int = DEFAULT_VOCAB_SIZE
    tgt_vocab_size: int = DEFAULT_VOCAB_SIZE
    synth: SynthTaskSpec = field(default_factory=SynthTaskSpec)

    @property
    def uses_files(self) -> bool:
        """True when a training corpus is given on disk."""
        return bool(self.train_src and self.train_tgt)


@dataclass
class DecodeConfig:
    """Beam search and post-processing settings."""

    beam: int = DEFAULT_BEAM
    max_len: int = 0  # 0: 3 * source length + 5
    length_norm: bool = False
    post_process: bool = False
    workers: int = DEFAULT_WORKERS


@dataclass
class EvalConfig:
    """BLEU and diagnostic settings."""

    smoothing: bool = False
    run_threshold: int = DEFAULT_RUN_THRESHOLD
    mass_threshold: float = DEFAULT_MASS_THRESHOLD


@dataclass
class ExperimentConfig:
    """All sections of one experiment."""

    seed: int = DEFAULT_SEED
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_flat(self) -> Dict[str, str]:
        """Flat ``section.key -> text`` form, sorted by key."""
        flat: Dict[str, Any] = {CONF_SEED: self.seed}
        sections = {
            CONF_MODEL: self.model,
            CONF_TRAIN: self.train,
            CONF_DECODE: self.decode,
            CONF_EVAL: self.eval,
        }
        for prefix, section in sections.items():
            for key, value in asdict(section).items():
                flat[f"{prefix}.{key}"] = value
        for key, value in asdict(self.data).items():
            if key != CONF_SYNTH:
                flat[f"{CONF_DATA}.{key}"] = value
        for key, value in asdict(self.data.synth).items():
            if key != CONF_SEED:
                flat[f"{CONF_DATA}.{CONF_SYNTH}.{key}"] = value
        return {key: _format_value(flat[key]) for key in sorted(flat)}

    @classmethod
    def from_flat(cls, flat: Mapping[str, Any]) -> "ExperimentConfig":
        """Validate a flat mapping and build the typed configuration."""
        grouped: Dict[str, Dict[str, Any]] = {name: {} for name in SECTION_SCHEMAS}
        for key, value in flat.items():
            section, _, name = key.rpartition(".")
            if section not in SECTION_SCHEMAS:
                raise ConfigError(f"Unknown configuration key: {key}")
            grouped[section][name] = value

        validated = {
            section: _validate(section, schema, grouped[section])
            for section, schema in SECTION_SCHEMAS.items()
        }
        seed = validated[""][CONF_SEED]
        model = ModelConfig(**validated[CONF_MODEL])
        model.check()
        synth = SynthTaskSpec(seed=seed, **validated[f"{CONF_DATA}.{CONF_SYNTH}"])
        return cls(
            seed=seed,
            model=model,
            train=TrainConfig(**validated[CONF_TRAIN]),
            data=DataConfig(synth=synth, **validated[CONF_DATA]),
            decode=DecodeConfig(**validated[CONF_DECODE]),
            eval=EvalConfig(**validated[CONF_EVAL]),
        )


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def _validate(
    section: str, schema: vol.Schema, values: Dict[str, Any]
) -> Dict[str, Any]:
    try:
        return schema(values)
    except vol.MultipleInvalid as err:
        first = err.errors[0]
        key = ".".join(str(p) for p in first.path)
        full = f"{section}.{key}" if section else key
        if first.error_message == "extra keys not allowed":
            raise ConfigError(f"Unknown configuration key: {full}") from err
        raise ConfigError(
            f"Invalid configuration value for {full}: {first.error_message}"
        ) from err


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse flat ``key = value`` lines; duplicates are an error."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key}")
        values[key] = value.strip()
    return values


def parse_overrides(overrides: Iterable[str]) -> Dict[str, str]:
    """Turn ``key=value`` override strings into a mapping (last one wins)."""
    values: Dict[str, str] = {}
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"Invalid override {item!r}: expected key=value")
        values[key.strip()] = value.strip()
    return values


def load_config(
    path: Optional[str] = None, overrides: Optional[List[str]] = None
) -> ExperimentConfig:
    """Read a config file (optional), apply overrides and validate."""
    values: Dict[str, str] = {}
    if path:
        try:
            with open(path, encoding="utf-8") as handle:
                text = handle.read()
        except OSError as err:
            raise CheckpointIOError(
            path, f"cannot read config: {err.strerror}"
        ) from err
        values = parse_config_text(text, path)
    values.update(parse_overrides(overrides or []))
    config = ExperimentConfig.from_flat(values)
    _LOGGER.debug(
        "Loaded configuration %s (%d explicit keys)", path or "<defaults>", len(values)
    )
    return config


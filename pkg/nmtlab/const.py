"""Constants for the nmtlab translation laboratory."""
from enum import Enum

DOMAIN = "nmtlab"
VERSION = "1.0.0"

# Reserved vocabulary entries
PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
PAD_TOKEN = "<pad>"
BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
UNK_TOKEN = "<unk>"
RESERVED_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)


class AttentionKind(str, Enum):
    """Attention unit variants."""

    BASE = "base"
    RECATT = "recatt"
    RNNATT = "rnnatt"
    HYBRID1 = "hybrid1"
    HYBRID2 = "hybrid2"


class DecoderKind(str, Enum):
    """Decoder step variants."""

    BASE = "base"
    INPUTFEED = "inputfeed"
    CONDDEC = "conddec"


# CondDec over a recurrent attention unit needs model.experimental = true
EXPERIMENTAL_COMBINATIONS = frozenset(
    {
        (AttentionKind.RECATT, DecoderKind.CONDDEC),
        (AttentionKind.RNNATT, DecoderKind.CONDDEC),
    }
)

# Configuration keys
CONF_SEED = "seed"
CONF_MODEL = "model"
CONF_TRAIN = "train"
CONF_DATA = "data"
CONF_SYNTH = "synth"
CONF_DECODE = "decode"
CONF_EVAL = "eval"

CONF_ATTENTION = "attention"
CONF_DECODER = "decoder"
CONF_EMBED_DIM = "embed_dim"
CONF_HIDDEN = "hidden"
CONF_ATTENTION_DIM = "attention_dim"
CONF_ATT_HIDDEN = "att_hidden"
CONF_CONDITION_DIM = "condition_dim"
CONF_MAXOUT_UNITS = "maxout_units"
CONF_MAXOUT_POOL = "maxout_pool"
CONF_KERNEL_WIDTH = "kernel_width"
CONF_CONV_FEATURES = "conv_features"
CONF_EXPERIMENTAL = "experimental"

CONF_LEARNING_RATE = "learning_rate"
CONF_ADAGRAD_EPS = "adagrad_eps"
CONF_DROPOUT = "dropout"
CONF_BATCH_SIZE = "batch_size"
CONF_MAX_EPOCHS = "max_epochs"
CONF_MAX_UPDATES = "max_updates"
CONF_LAMBDA_DECAY = "lambda_decay"
CONF_LAMBDA_LEFT = "lambda_left"
CONF_VALIDATE_EVERY = "validate_every"
CONF_CLIP_NORM = "clip_norm"
CONF_MAX_LEN = "max_len"
CONF_LENGTH_FILTER = "length_filter"
CONF_SORT_WINDOW = "sort_window"
CONF_DECAY_NORMALIZER = "decay_normalizer"
CONF_CHECKPOINT = "checkpoint"
CONF_LOG = "log"

CONF_TRAIN_SRC = "train_src"
CONF_TRAIN_TGT = "train_tgt"
CONF_VALID_SRC = "valid_src"
CONF_VALID_TGT = "valid_tgt"
CONF_SRC_VOCAB_SIZE = "src_vocab_size"
CONF_TGT_VOCAB_SIZE = "tgt_vocab_size"

CONF_VOCAB_SIZE = "vocab_size"
CONF_MIN_LEN = "min_len"
CONF_PERMUTATION = "permutation"
CONF_FERTILITY = "fertility"
CONF_TRAIN_SIZE = "train_size"
CONF_VALID_SIZE = "valid_size"
CONF_TEST_SIZE = "test_size"

CONF_BEAM = "beam"
CONF_LENGTH_NORM = "length_norm"
CONF_POST_PROCESS = "post_process"
CONF_WORKERS = "workers"

CONF_SMOOTHING = "smoothing"
CONF_RUN_THRESHOLD = "run_threshold"
CONF_MASS_THRESHOLD = "mass_threshold"

# Full-scale system values, documentation only
FULL_SCALE_EMBED_DIM = 620
FULL_SCALE_HIDDEN = 1000
FULL_SCALE_DROPOUT = 0.5
FULL_SCALE_BEAM = 12
FULL_SCALE_BATCH_SIZE = 80
FULL_SCALE_VOCAB_SIZE = 30000
FULL_SCALE_MAX_LEN = 50
FULL_SCALE_PREFETCH_BATCHES = 12

# Desk-scale defaults
DEFAULT_SEED = 1234
DEFAULT_EMBED_DIM = 32
DEFAULT_HIDDEN = 64
DEFAULT_MAXOUT_POOL = 2
DEFAULT_KERNEL_WIDTH = 3
DEFAULT_CONV_FEATURES = 4

DEFAULT_LEARNING_RATE = 0.05
DEFAULT_ADAGRAD_EPS = 1e-8
DEFAULT_DROPOUT = FULL_SCALE_DROPOUT
DEFAULT_BATCH_SIZE = 32
DEFAULT_MAX_EPOCHS = 10
DEFAULT_MAX_UPDATES = -1  # unlimited
DEFAULT_LAMBDA_DECAY = 1.0
DEFAULT_LAMBDA_LEFT = 1.0
DEFAULT_VALIDATE_EVERY = 0  # once per epoch
DEFAULT_CLIP_NORM = 5.0
DEFAULT_MAX_LEN = FULL_SCALE_MAX_LEN
DEFAULT_SORT_WINDOW = FULL_SCALE_PREFETCH_BATCHES
DEFAULT_CHECKPOINT = "model.ckpt"
DEFAULT_LOG = "train.log.jsonl"

DEFAULT_VOCAB_SIZE = FULL_SCALE_VOCAB_SIZE

DEFAULT_SYNTH_VOCAB = 20
DEFAULT_SYNTH_MIN_LEN = 3
DEFAULT_SYNTH_MAX_LEN = 10
DEFAULT_SYNTH_TRAIN = 3000
DEFAULT_SYNTH_VALID = 200
DEFAULT_SYNTH_TEST = 200

DEFAULT_BEAM = FULL_SCALE_BEAM
DEFAULT_WORKERS = 1

DEFAULT_RUN_THRESHOLD = 2
DEFAULT_MASS_THRESHOLD = 0.2
DEFAULT_MAX_NGRAM = 4

# Length filter sides
FILTER_EITHER = "either"
FILTER_SOURCE = "source"
FILTER_TARGET = "target"
LENGTH_FILTERS = (FILTER_EITHER, FILTER_SOURCE, FILTER_TARGET)

# Step-decay normaliser
NORMALIZE_TARGET = "target"
NORMALIZE_SOURCE = "source"
DECAY_NORMALIZERS = (NORMALIZE_TARGET, NORMALIZE_SOURCE)

# Synthetic task rules
PERMUTATION_RULES = ("identity", "reverse", "swap_pairs", "rotate")
FERTILITY_RULES = ("identity", "doubling", "mixed")

# Numerics
PROB_FLOOR = 1e-12
FD_STEP = 1e-5
GRAD_CHECK_TOLERANCE = 1e-4
GRAD_CHECK_FLOOR = 1e-4
SIMPLEX_TOLERANCE = 1e-6

# Alignment export
ALIGN_FORMAT_CSV = "csv"
ALIGN_FORMAT_PGM = "pgm"
ALIGN_FORMATS = (ALIGN_FORMAT_CSV, ALIGN_FORMAT_PGM)

# Checkpoint container
CHECKPOINT_MAGIC = b"NMTLABCK"
CHECKPOINT_VERSION = 1

# Exit codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INPUT = 4
EXIT_COMPATIBILITY = 5
EXIT_CONTRACT = 6
EXIT_IO = 7
EXIT_DIVERGENCE = 8

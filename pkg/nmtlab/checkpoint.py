"""Versioned binary checkpoints.

Layout (integers little-endian): the 8-byte magic, a uint32 format version,
a uint64 header length N, N bytes of UTF-8 JSON with sorted keys, then the
float64 blocks in the order the header lists them (parameters first, then
AdaGrad accumulators).
"""
from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np

from .config import ExperimentConfig
from .const import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .corpus import Vocab
from .decode import TranslationTable
from .exceptions import CheckpointIOError, CompatibilityError

_LOGGER = logging.getLogger(__name__)

_PREAMBLE = struct.Struct("<8sIQ")
_FLOAT = np.dtype("<f8")

SECTION_PARAM = "param"
SECTION_ADAGRAD = "adagrad"
HEADER_KEYS = (
    "blocks",
    "config",
    "epoch",
    "history",
    "rng_state",
    "skipped_updates",
    "translation_table",
    "update",
    "vocab",
)


@dataclass
class Checkpoint:
    """Everything needed to resume training or to translate."""

    config: ExperimentConfig
    src_vocab: Vocab
    tgt_vocab: Vocab
    params: "OrderedDict[str, np.ndarray]"
    adagrad: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    translation_table: TranslationTable = field(default_factory=TranslationTable)
    history: List[Dict[str, Any]] = field(default_factory=list)
    rng_state: Dict[str, Any] = field(default_factory=dict)
    update: int = 0
    epoch: int = 0
    skipped_updates: int = 0

    def best_record(self) -> Dict[str, Any]:
        """History record with the highest validation BLEU (earliest on ties)."""
        scored = [r for r in self.history if r.get("valid_bleu") is not None]
        if not scored:
            return {}
        return max(scored, key=lambda r: (r["valid_bleu"], -r["update"]))


def _header(checkpoint: Checkpoint) -> Tuple[Dict[str, Any], List[np.ndarray]]:
    blocks = []
    arrays = []
    offset = 0
    for section, group in (
        (SECTION_PARAM, checkpoint.params),
        (SECTION_ADAGRAD, checkpoint.adagrad),
    ):
        for name, value in group.items():
            array = np.ascontiguousarray(value, dtype=_FLOAT)
            blocks.append(
                {
                    "name": name,
                    "section": section,
                    "shape": list(array.shape),
                    "offset": offset,
                    "count": int(array.size),
                }
            )
            arrays.append(array)
            offset += array.size * _FLOAT.itemsize
    header = {
        "config": checkpoint.config.to_flat(),
        "vocab": {
            "src": checkpoint.src_vocab.itos,
            "tgt": checkpoint.tgt_vocab.itos,
            "src_sha256": checkpoint.src_vocab.content_hash(),
            "tgt_sha256": checkpoint.tgt_vocab.content_hash(),
        },
        "translation_table": checkpoint.translation_table.to_dict(),
        "history": checkpoint.history,
        "rng_state": checkpoint.rng_state,
        "update": checkpoint.update,
        "epoch": checkpoint.epoch,
        "skipped_updates": checkpoint.skipped_updates,
        "blocks": blocks,
    }
    return header, arrays


def checkpoint_bytes(checkpoint: Checkpoint) -> bytes:
    """Serialise a checkpoint."""
    header, arrays = _header(checkpoint)
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(text)), text]
    parts.extend(a.tobytes(order="C") for a in arrays)
    return b"".join(parts)


def save_checkpoint(path: str, checkpoint: Checkpoint) -> None:
    """Write atomically: temp file in the target directory, then replace."""
    data = checkpoint_bytes(checkpoint)
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp_path = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(data)
            os.replace(tmp_path, path)
        except BaseException:
            if os.path.exists(tmp_path):
                os.unlink(tmp_path)
            raise
    except OSError as err:
        raise CheckpointIOError(
            path, f"cannot write checkpoint: {err.strerror}"
        ) from err
    _LOGGER.info("Saved checkpoint %s (update %d)", path, checkpoint.update)


def parse_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    """Inverse of :func:`checkpoint_bytes`."""
    if len(data) < _PREAMBLE.size:
        raise CompatibilityError(f"{source}: too short to be a checkpoint")
    magic, version, length = _PREAMBLE.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CompatibilityError(f"{source}: not a checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise CompatibilityError(
            f"{source}: checkpoint version {version} is not supported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    start = _PREAMBLE.size
    try:
        header = json.loads(data[start : start + length].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as err:
        raise CompatibilityError(f"{source}: corrupt checkpoint header") from err
    if not isinstance(header, dict):
        raise CompatibilityError(f"{source}: corrupt checkpoint header")
    missing = [key for key in HEADER_KEYS if key not in header]
    if missing:
        raise CompatibilityError(
            f"{source}: checkpoint header lacks {', '.join(missing)}"
        )
    try:
        return _from_header(header, data, start + length, source)
    except KeyError as err:
        raise CompatibilityError(
            f"{source}: checkpoint header lacks {err.args[0]}"
        ) from err


def _from_header(
    header: Dict[str, Any], data: bytes, body: int, source: str
) -> Checkpoint:
    vocab = header["vocab"]
    src_vocab = Vocab(vocab["src"])
    tgt_vocab = Vocab(vocab["tgt"])
    for side, built in (("src", src_vocab), ("tgt", tgt_vocab)):
        if built.content_hash() != vocab[f"{side}_sha256"]:
            raise CompatibilityError(f"{source}: {side} vocabulary hash mismatch")

    sections: Dict[str, "OrderedDict[str, np.ndarray]"] = {
        SECTION_PARAM: OrderedDict(),
        SECTION_ADAGRAD: OrderedDict(),
    }
    for block in header["blocks"]:
        offset = body + block["offset"]
        end = offset + block["count"] * _FLOAT.itemsize
        if end > len(data):
            raise CompatibilityError(f"{source}: truncated block {block['name']}")
        values = np.frombuffer(data, dtype=_FLOAT, count=block["count"], offset=offset)
        sections[block["section"]][block["name"]] = (
            values.astype(np.float64).reshape(block["shape"])
        )

    return Checkpoint(
        config=ExperimentConfig.from_flat(header["config"]),
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        params=sections[SECTION_PARAM],
        adagrad=sections[SECTION_ADAGRAD],
        translation_table=TranslationTable.from_dict(header["translation_table"]),
        history=header["history"],
        rng_state=header["rng_state"],
        update=header["update"],
        epoch=header["epoch"],
        skipped_updates=header["skipped_updates"],
    )


def load_checkpoint(path: str) -> Checkpoint:
    """Read and validate a checkpoint file."""
    try:
        with open(path, "rb") as handle:
            data = handle.read()
    except OSError as err:
        raise CheckpointIOError(
            path, f"cannot read checkpoint: {err.strerror}"
        ) from err
    checkpoint = parse_checkpoint(data, path)
    _LOGGER.debug("Loaded checkpoint %s (update %d)", path, checkpoint.update)
    return checkpoint


def check_vocab(checkpoint: Checkpoint, src_vocab: Vocab, tgt_vocab: Vocab) -> None:
    """Raise unless the given vocabularies are the checkpoint's."""
    if src_vocab.content_hash() != checkpoint.src_vocab.content_hash():
        raise CompatibilityError("source vocabulary does not match the checkpoint")
    if tgt_vocab.content_hash() != checkpoint.tgt_vocab.content_hash():
        raise CompatibilityError("target vocabulary does not match the checkpoint")

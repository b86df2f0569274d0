"""Attention units for nmtlab."""
import logging
from typing import Dict, List, Type

from ..const import AttentionKind
from ..core.params import ModelParams
from ..exceptions import ConfigError
from .base_attention import (
    AlignmentMatrix,
    AttentionState,
    BaseAttention,
    attend_base,
    collect_alignment,
)
from .hybrid import Hybrid1Attention, Hybrid2Attention, attend_hybrid1, attend_hybrid2
from .recatt import RecAttention, attend_recatt
from .rnnatt import RnnAttention, attend_rnnatt, rnnatt_update

_LOGGER = logging.getLogger(__name__)

__all__ = [
    "AlignmentMatrix",
    "AttentionState",
    "BaseAttention",
    "Hybrid1Attention",
    "Hybrid2Attention",
    "RecAttention",
    "RnnAttention",
    "attend_base",
    "attend_hybrid1",
    "attend_hybrid2",
    "attend_recatt",
    "attend_rnnatt",
    "collect_alignment",
    "create_attention",
    "get_attention_class",
    "rnnatt_update",
]

ATTENTION_UNITS: Dict[AttentionKind, Type[BaseAttention]] = {
    AttentionKind.BASE: BaseAttention,
    AttentionKind.RECATT: RecAttention,
    AttentionKind.RNNATT: RnnAttention,
    AttentionKind.HYBRID1: Hybrid1Attention,
    AttentionKind.HYBRID2: Hybrid2Attention,
}


def get_attention_class(kind) -> Type[BaseAttention]:
    """Look up the unit class for an attention kind (enum or its value)."""
    try:
        return ATTENTION_UNITS[AttentionKind(kind)]
    except ValueError as err:
        raise ConfigError(f"Unknown attention variant: {kind}") from err


def create_attention(params: ModelParams, config) -> BaseAttention:
    """Instantiate the unit selected by ``config.attention``."""
    return get_attention_class(config.attention)(params, config)


def get_available_attention() -> List[str]:
    """Names of the available attention units."""
    return [kind.value for kind in ATTENTION_UNITS]

"""Desk-scale neural machine translation lab.

Attention-based encoder-decoder models with recurrent attention, location
attention and conditioned decoders, trained with AdaGrad on small corpora.
"""
from .const import VERSION

__version__ = VERSION

"""Conversation-model representations for multi-turn response selection.

Modules: ``tensor`` (autodiff core), ``layers`` (GRU), ``hed`` (the dialogue
model), ``representations`` (local/global features), ``matcher``, ``data``,
``synth``, ``train``, ``optim``, ``checkpoint``, ``metrics`` and ``cli``.
"""

from .errors import EcmoError

__version__ = "0.1.0"
__all__ = ["EcmoError", "__version__"]

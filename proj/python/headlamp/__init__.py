"""Python access to the headlamp core.

The compiled extension does the work; this package re-exports it and adds a
couple of conveniences for the toy setup.
"""

from ._headlamp import *  # noqa: F401,F403
from ._headlamp import WordTokenizer, induction_model, toy_vocabulary

__all__ = [name for name in dir() if not name.startswith("_")]


def toy_setup(seed: int = 7, heads_per_layer: int = 32):
    """Return the toy word tokenizer and an induction model sized for it."""
    tok = WordTokenizer(toy_vocabulary())
    return tok, induction_model(tok.vocab_size, seed, heads_per_layer)

from __future__ import annotations

from typing import Sequence


def check_tokens(doc, name: str = "X") -> list[str]:
    """Accept a whitespace-tokenized string or a sequence of string tokens."""
    if isinstance(doc, str):
        return doc.split()
    if isinstance(doc, Sequence) and all(isinstance(t, str) for t in doc):
        return list(doc)
    raise TypeError(f"{name} entries must be strings or sequences of strings, got {type(doc).__name__}")


def check_corpus(X, y=None, allow_empty: bool = False):
    """Normalize ``X`` (and ``y``) to lists of token lists and check alignment."""
    if isinstance(X, str):
        raise TypeError("X must be a sequence of documents, not a single string")
    Xs = [check_tokens(x, "X") for x in X]
    if not Xs:
        raise ValueError("X is empty")
    if not allow_empty and any(len(x) == 0 for x in Xs):
        raise ValueError(f"X contains an empty document at index {next(i for i, x in enumerate(Xs) if not x)}")
    if y is None:
        return Xs
    if isinstance(y, str):
        raise TypeError("y must be a sequence of documents, not a single string")
    ys = [check_tokens(t, "y") for t in y]
    if len(ys) != len(Xs):
        raise ValueError(f"X has {len(Xs)} documents but y has {len(ys)}")
    if not allow_empty and any(len(t) == 0 for t in ys):
        raise ValueError("y contains an empty summary")
    return Xs, ys

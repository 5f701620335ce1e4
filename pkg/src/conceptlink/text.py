"""Surface-form normalization and tokenization.

``normalize_surface`` defines string equality for the whole package: exact
matching, synonym deduplication and reservoir lookups all compare its output.
"""

from __future__ import annotations

import re
import unicodedata

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def normalize_surface(text: str) -> str:
    """Return the canonical form of a surface string.

    Unicode NFC, case-folded, with leading/trailing whitespace stripped and
    inner whitespace runs collapsed to single spaces.
    """
    return " ".join(unicodedata.normalize("NFC", text).split()).casefold()


def tokenize(text: str) -> list[str]:
    """Case-folded alphanumeric tokens, in order of appearance."""
    return _TOKEN_RE.findall(text.casefold())

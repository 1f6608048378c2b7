"""S-expression reader front end.

The compiled kernel is used when it was built; set ``POLICYGUARD_PURE_PYTHON=1``
to force the fallback.
"""

from __future__ import annotations

import os

from ._reader_py import ATOM, LIST, STRING
from ._reader_py import read_all as _read_all_py

if os.environ.get("POLICYGUARD_PURE_PYTHON"):
    read_all = _read_all_py
    BACKEND = "python"
else:
    try:
        from ._reader_c import read_all  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        read_all = _read_all_py
        BACKEND = "python"

__all__ = ["ATOM", "LIST", "STRING", "BACKEND", "read_all", "read_one", "node_text"]


def read_one(text: str):
    """Read exactly one s-expression from ``text``."""
    from ..errors import SmtSyntaxError

    nodes = read_all(text)
    if not nodes:
        raise SmtSyntaxError("empty input", 0, text)
    if len(nodes) > 1:
        raise SmtSyntaxError("trailing input after expression", nodes[1][2], text)
    return nodes[0]


def node_text(node, text: str) -> str:
    return text[node[2] : node[3]]

"""Pure-Python s-expression reader (fallback for the compiled kernel).

Nodes are plain tuples ``(kind, value, start, end)``; ``value`` is the raw
atom text, the unescaped string contents, or a list of child nodes.
"""

from __future__ import annotations

from ..errors import SmtSyntaxError

ATOM = 0
STRING = 1
LIST = 2

_DELIMS = frozenset(" \t\r\n\f\v()\";|")


def read_all(text: str) -> list:
    n = len(text)
    i = 0
    stack: list[tuple[list, int]] = []
    top: list = []
    current = top
    while i < n:
        ch = text[i]
        if ch in " \t\r\n\f\v":
            i += 1
        elif ch == ";":
            j = text.find("\n", i)
            i = n if j < 0 else j + 1
        elif ch == "(":
            stack.append((current, i))
            current = []
            i += 1
        elif ch == ")":
            if not stack:
                raise SmtSyntaxError("unexpected ')'", i, text)
            parent, start = stack.pop()
            parent.append((LIST, current, start, i + 1))
            current = parent
            i += 1
        elif ch == '"':
            start = i
            i += 1
            chunks = []
            while True:
                j = text.find('"', i)
                if j < 0:
                    raise SmtSyntaxError("unterminated string literal", start, text)
                chunks.append(text[i:j])
                if j + 1 < n and text[j + 1] == '"':
                    chunks.append('"')
                    i = j + 2
                else:
                    i = j + 1
                    break
            current.append((STRING, "".join(chunks), start, i))
        elif ch == "|":
            raise SmtSyntaxError("quoted symbols are not supported", i, text)
        else:
            start = i
            while i < n and text[i] not in _DELIMS:
                i += 1
            current.append((ATOM, text[start:i], start, i))
    if stack:
        raise SmtSyntaxError("unbalanced parenthesis: '(' is never closed", stack[-1][1], text)
    return top

# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled s-expression reader; same node layout as ``_reader_py``."""

from ..errors import SmtSyntaxError

cdef enum:
    ATOM = 0
    STRING = 1
    LIST = 2


cdef inline bint _is_space(Py_UCS4 c):
    return c == 32 or c == 9 or c == 10 or c == 13 or c == 12 or c == 11


cdef inline bint _is_delim(Py_UCS4 c):
    return _is_space(c) or c == 40 or c == 41 or c == 34 or c == 59 or c == 124


def read_all(str text):
    cdef Py_ssize_t n = len(text)
    cdef Py_ssize_t i = 0, start, j
    cdef Py_UCS4 ch
    cdef list stack = []
    cdef list starts = []
    cdef list top = []
    cdef list current = top
    cdef list chunks
    while i < n:
        ch = text[i]
        if _is_space(ch):
            i += 1
        elif ch == 59:  # ;
            while i < n and text[i] != 10:
                i += 1
            i += 1
        elif ch == 40:  # (
            stack.append(current)
            starts.append(i)
            current = []
            i += 1
        elif ch == 41:  # )
            if not stack:
                raise SmtSyntaxError("unexpected ')'", i, text)
            start = starts.pop()
            parent = stack.pop()
            parent.append((LIST, current, start, i + 1))
            current = parent
            i += 1
        elif ch == 34:  # "
            start = i
            i += 1
            chunks = []
            while True:
                j = i
                while j < n and text[j] != 34:
                    j += 1
                if j >= n:
                    raise SmtSyntaxError("unterminated string literal", start, text)
                chunks.append(text[i:j])
                if j + 1 < n and text[j + 1] == 34:
                    chunks.append('"')
                    i = j + 2
                else:
                    i = j + 1
                    break
            current.append((STRING, "".join(chunks), start, i))
        elif ch == 124:  # |
            raise SmtSyntaxError("quoted symbols are not supported", i, text)
        else:
            start = i
            while i < n and not _is_delim(text[i]):
                i += 1
            current.append((ATOM, text[start:i], start, i))
    if stack:
        raise SmtSyntaxError("unbalanced parenthesis: '(' is never closed", starts[len(starts) - 1], text)
    return top

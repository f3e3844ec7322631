"""Tiny s-expression reader shared by the formula, definition and derivation file formats.

Reads into nested lists of str atoms.  Atoms are any run of characters that
are not whitespace, parens or a semicolon; `;` starts a comment to end of line.
"""

from __future__ import annotations


class SexprError(Exception):
    """Syntax error with line/column information."""

    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{msg} (at {line}:{col})")
        self.line = line
        self.col = col


Sexpr = "str | list"


def tokenize(text: str):
    toks = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
        elif c.isspace():
            col += 1
            i += 1
        elif c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c in "()":
            toks.append((c, line, col))
            col += 1
            i += 1
        else:
            start = i
            startcol = col
            while i < n and not text[i].isspace() and text[i] not in "();":
                i += 1
                col += 1
            toks.append((text[start:i], line, startcol))
    return toks


def parse_all(text: str) -> list:
    """Parse a whole file into a list of top-level s-expressions."""
    toks = tokenize(text)
    pos = 0

    def parse_one():
        nonlocal pos
        if pos >= len(toks):
            raise SexprError("unexpected end of input", 0, 0)
        tok, line, col = toks[pos]
        pos += 1
        if tok == "(":
            items = []
            while True:
                if pos >= len(toks):
                    raise SexprError("missing )", line, col)
                if toks[pos][0] == ")":
                    pos += 1
                    return items
                items.append(parse_one())
        if tok == ")":
            raise SexprError("unexpected )", line, col)
        return tok

    out = []
    while pos < len(toks):
        out.append(parse_one())
    return out


def parse_one(text: str):
    exprs = parse_all(text)
    if len(exprs) != 1:
        raise SexprError(f"expected exactly one expression, got {len(exprs)}", 1, 1)
    return exprs[0]


def show(expr) -> str:
    """Canonical single-line printer; parse(show(e)) == e."""
    if isinstance(expr, str):
        return expr
    return "(" + " ".join(show(e) for e in expr) + ")"


def show_pretty(expr, indent: int = 0, width: int = 100) -> str:
    """Printer that breaks long forms across lines, for derivation files."""
    flat = show(expr)
    if isinstance(expr, str) or len(flat) + indent <= width:
        return flat
    head = expr[0] if expr and isinstance(expr[0], str) else None
    pad = " " * (indent + 2)
    if head is None:
        inner = "\n".join(pad + show_pretty(e, indent + 2, width) for e in expr)
        return "(\n" + inner + ")"
    inner = "\n".join(pad + show_pretty(e, indent + 2, width) for e in expr[1:])
    return "(" + head + "\n" + inner + ")"

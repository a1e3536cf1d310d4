"""A small S-expression dialect: symbols, integers, double-quoted strings,
lists, and semicolon comments.  Every node records where it started so
errors can point at a line and column."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Union


class ParseError(Exception):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        location = f"{line}:{column}: " if line else ""
        super().__init__(location + message)
        self.message = message
        self.line = line
        self.column = column


@dataclass(frozen=True)
class SAtom:
    value: Union[int, str]
    quoted: bool = False
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    def __repr__(self) -> str:
        return f'"{self.value}"' if self.quoted else str(self.value)


@dataclass(frozen=True)
class SList:
    items: tuple["SExpr", ...]
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    def __repr__(self) -> str:
        return "(" + " ".join(repr(x) for x in self.items) + ")"


SExpr = Union[SAtom, SList]

_DELIMITERS = set("()\"; \t\r\n")


class _Reader:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.column = 1

    def _peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _advance(self) -> str:
        ch = self.text[self.pos]
        self.pos += 1
        if ch == "\n":
            self.line += 1
            self.column = 1
        else:
            self.column += 1
        return ch

    def _skip_blank(self) -> None:
        while self.pos < len(self.text):
            ch = self._peek()
            if ch in " \t\r\n":
                self._advance()
            elif ch == ";":
                while self.pos < len(self.text) and self._peek() != "\n":
                    self._advance()
            else:
                return

    def read_all(self) -> list[SExpr]:
        forms = []
        while True:
            self._skip_blank()
            if self.pos >= len(self.text):
                return forms
            forms.append(self._read_form())

    def _read_form(self) -> SExpr:
        line, column = self.line, self.column
        ch = self._peek()
        if ch == "(":
            self._advance()
            items = []
            while True:
                self._skip_blank()
                if self.pos >= len(self.text):
                    raise ParseError("unbalanced parenthesis", line, column)
                if self._peek() == ")":
                    self._advance()
                    return SList(tuple(items), line, column)
                items.append(self._read_form())
        if ch == ")":
            raise ParseError("unexpected )", line, column)
        if ch == '"':
            self._advance()
            chars = []
            while True:
                if self.pos >= len(self.text):
                    raise ParseError("unterminated string", line, column)
                c = self._advance()
                if c == "\\" and self._peek() in ('"', "\\"):
                    chars.append(self._advance())
                elif c == '"':
                    return SAtom("".join(chars), quoted=True, line=line, column=column)
                else:
                    chars.append(c)
        chars = []
        while self.pos < len(self.text) and self._peek() not in _DELIMITERS:
            chars.append(self._advance())
        token = "".join(chars)
        try:
            return SAtom(int(token), line=line, column=column)
        except ValueError:
            return SAtom(token, line=line, column=column)


def parse_text(text: str) -> list[SExpr]:
    return _Reader(text).read_all()


def parse_one(text: str) -> SExpr:
    forms = parse_text(text)
    if len(forms) != 1:
        raise ParseError(f"expected one form, found {len(forms)}")
    return forms[0]


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def format_sexpr(e: SExpr) -> str:
    if isinstance(e, SAtom):
        return f'"{_escape(str(e.value))}"' if e.quoted else str(e.value)
    return "(" + " ".join(format_sexpr(x) for x in e.items) + ")"


def format_toplevel(e: SExpr) -> str:
    """One clause per line under the head, stable across runs."""
    if isinstance(e, SAtom) or len(e.items) <= 2:
        return format_sexpr(e)
    head = " ".join(format_sexpr(x) for x in e.items[:2])
    body = "\n".join("  " + _format_clause(x, 2) for x in e.items[2:])
    return f"({head}\n{body})"


def _format_clause(e: SExpr, indent: int) -> str:
    flat = format_sexpr(e)
    if len(flat) <= 76 - indent or isinstance(e, SAtom) or len(e.items) <= 1:
        return flat
    pad = " " * (indent + 2)
    head = format_sexpr(e.items[0])
    parts = [_format_clause(x, indent + 2) for x in e.items[1:]]
    return f"({head}\n" + "\n".join(pad + p for p in parts) + ")"


def write_forms(forms: Iterator[SExpr] | list[SExpr]) -> str:
    return "\n\n".join(format_toplevel(f) for f in forms) + "\n"

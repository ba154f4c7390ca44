"""Arithmetic expression mini-language for drift fields a(t, x).

Grammar (standard precedence: unary minus binds tighter than * and /,
which bind tighter than + and -):

    expr    := term (("+" | "-") term)*
    term    := factor (("*" | "/") factor)*
    factor  := "-" factor | atom
    atom    := NUMBER | IDENT | IDENT "(" expr ")" | "(" expr ")"

Identifiers are the time variable ``t``, state variables ``x1 .. xd``,
or one of the unary functions ``sin cos exp tanh abs``.  The unicode
minus sign (U+2212) is accepted as a synonym for ``-``.

Expressions evaluate against an environment mapping variable names to
floats or numpy arrays (arrays broadcast), and support exact symbolic
differentiation with respect to any variable, which is what the loss
gradients use for drift Jacobians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "abs": abs,  # python abs: keeps float semantics for scalars, works on arrays
}


class ExprError(ValueError):
    """Syntax or name error, carrying 1-based line/column of the offending token."""

    def __init__(self, message, line, column):
        super().__init__(f"{message} (line {line}, column {column})")
        self.message = message
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Token:
    kind: str  # "number", "ident", "op", "end"
    text: str
    line: int
    column: int


def tokenize(text):
    """Split *text* into tokens, tracking line/column for error messages."""
    tokens = []
    line, col = 1, 1
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch.isspace():
            col += 1
            i += 1
            continue
        if ch == "−":  # unicode minus
            tokens.append(Token("op", "-", line, col))
            i += 1
            col += 1
            continue
        if ch in "+-*/(),":
            tokens.append(Token("op", ch, line, col))
            i += 1
            col += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            seen_exp = False
            while j < len(text):
                c = text[j]
                if c.isdigit() or c == ".":
                    j += 1
                elif c in "eE" and j + 1 < len(text) and (text[j + 1].isdigit() or text[j + 1] in "+-"):
                    seen_exp = True
                    j += 2
                elif seen_exp and c.isdigit():
                    j += 1
                else:
                    break
            lexeme = text[i:j]
            try:
                float(lexeme)
            except ValueError:
                raise ExprError(f"bad number {lexeme!r}", line, col) from None
            tokens.append(Token("number", lexeme, line, col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(Token("ident", text[i:j], line, col))
            col += j - i
            i = j
            continue
        raise ExprError(f"unexpected character {ch!r}", line, col)
    tokens.append(Token("end", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Expression nodes.  Each node evaluates against an env dict and knows its
# exact derivative with respect to a named variable.


@dataclass(frozen=True)
class Const:
    value: float

    def eval(self, env):
        return self.value

    def diff(self, var):
        return Const(0.0)

    def __str__(self):
        return f"{self.value:g}"


@dataclass(frozen=True)
class Var:
    name: str

    def eval(self, env):
        return env[self.name]

    def diff(self, var):
        return Const(1.0) if self.name == var else Const(0.0)

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg:
    arg: object

    def eval(self, env):
        return -self.arg.eval(env)

    def diff(self, var):
        return Neg(self.arg.diff(var))

    def __str__(self):
        return f"(-{self.arg})"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: object
    right: object

    def eval(self, env):
        a = self.left.eval(env)
        b = self.right.eval(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        return a / b

    def diff(self, var):
        da, db = self.left.diff(var), self.right.diff(var)
        if self.op in "+-":
            return _simplify_bin(self.op, da, db)
        if self.op == "*":
            return _simplify_bin(
                "+", _simplify_bin("*", da, self.right), _simplify_bin("*", self.left, db)
            )
        # quotient rule: (a/b)' = a'/b - a b'/b^2
        term1 = _simplify_bin("/", da, self.right)
        term2 = _simplify_bin(
            "/", _simplify_bin("*", self.left, db), _simplify_bin("*", self.right, self.right)
        )
        return _simplify_bin("-", term1, term2)

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Call:
    func: str
    arg: object

    def eval(self, env):
        return FUNCTIONS[self.func](self.arg.eval(env))

    def diff(self, var):
        du = self.arg.diff(var)
        u = self.arg
        if self.func == "sin":
            outer = Call("cos", u)
        elif self.func == "cos":
            outer = Neg(Call("sin", u))
        elif self.func == "exp":
            outer = Call("exp", u)
        elif self.func == "tanh":
            outer = _simplify_bin("-", Const(1.0), _simplify_bin("*", Call("tanh", u), Call("tanh", u)))
        elif self.func == "abs":
            outer = _SignOf(u)  # a.e. derivative; not exposed in the surface grammar
        else:  # pragma: no cover - the parser only admits known functions
            raise KeyError(self.func)
        return _simplify_bin("*", outer, du)

    def __str__(self):
        return f"{self.func}({self.arg})"


@dataclass(frozen=True)
class _SignOf:
    arg: object

    def eval(self, env):
        return np.sign(self.arg.eval(env))

    def diff(self, var):
        return Const(0.0)  # a.e.

    def __str__(self):
        return f"sign({self.arg})"


def _is_const(node, value):
    return isinstance(node, Const) and node.value == value


def _simplify_bin(op, left, right):
    """Constant folding just strong enough to keep derivative trees readable."""
    if op == "+":
        if _is_const(left, 0.0):
            return right
        if _is_const(right, 0.0):
            return left
    elif op == "-":
        if _is_const(right, 0.0):
            return left
        if _is_const(left, 0.0):
            return Neg(right)
    elif op == "*":
        if _is_const(left, 0.0) or _is_const(right, 0.0):
            return Const(0.0)
        if _is_const(left, 1.0):
            return right
        if _is_const(right, 1.0):
            return left
    elif op == "/":
        if _is_const(left, 0.0):
            return Const(0.0)
        if _is_const(right, 1.0):
            return left
    if isinstance(left, Const) and isinstance(right, Const) and not (op == "/" and right.value == 0.0):
        return Const(BinOp(op, left, right).eval({}))
    return BinOp(op, left, right)


class _Parser:
    def __init__(self, tokens, variables):
        self.tokens = tokens
        self.pos = 0
        self.variables = variables

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        tok = self.peek()
        if tok.kind != "op" or tok.text != op:
            shown = tok.text if tok.kind != "end" else "end of input"
            raise ExprError(f"expected {op!r}, found {shown!r}", tok.line, tok.column)
        return self.advance()

    def parse_expr(self):
        node = self.parse_term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.parse_term())
        return node

    def parse_term(self):
        node = self.parse_factor()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.parse_factor())
        return node

    def parse_factor(self):
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.advance()
            return Neg(self.parse_factor())
        return self.parse_atom()

    def parse_atom(self):
        tok = self.advance()
        if tok.kind == "number":
            return Const(float(tok.text))
        if tok.kind == "ident":
            if tok.text in FUNCTIONS:
                self.expect_op("(")
                arg = self.parse_expr()
                self.expect_op(")")
                return Call(tok.text, arg)
            if tok.text in self.variables:
                return Var(tok.text)
            raise ExprError(f"unknown identifier {tok.text!r}", tok.line, tok.column)
        if tok.kind == "op" and tok.text == "(":
            node = self.parse_expr()
            self.expect_op(")")
            return node
        shown = tok.text if tok.kind != "end" else "end of input"
        raise ExprError(f"expected a value, found {shown!r}", tok.line, tok.column)


def parse_expression(text, dim=1):
    """Parse *text* into an expression tree over variables {t, x1..x<dim>}.

    Raises ExprError (with line/column) on syntax errors, unknown
    identifiers, or trailing garbage.
    """
    variables = {"t"} | {f"x{k}" for k in range(1, dim + 1)}
    parser = _Parser(tokenize(text), variables)
    node = parser.parse_expr()
    tail = parser.peek()
    if tail.kind != "end":
        raise ExprError(f"unexpected trailing input {tail.text!r}", tail.line, tail.column)
    return node


def variables_used(node):
    """Set of variable names appearing in the tree."""
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, (Neg, Call, _SignOf)):
        return variables_used(node.arg)
    if isinstance(node, BinOp):
        return variables_used(node.left) | variables_used(node.right)
    return set()

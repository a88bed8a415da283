"""A small, closed expression language for scalar coefficient functions.

Every coefficient in a problem config (drift, diffusion, generators, payoffs)
is a plain-text infix expression over the variables ``t, x, y, z``, the four
arithmetic operators, unary minus, and a fixed set of functions::

    abs(e)  min(a,b)  max(a,b)  pos(e)  neg(e)  sin(e)  cos(e)  exp(e)

``pos``/``neg`` are the positive/negative parts, ``exp`` clamps its argument
to [-50, 50] so evaluation is total. ASTs are immutable; evaluation is a pure
function of (expression, bindings) and accepts scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Union

import numpy as np

from .errors import (
    ArityMismatch,
    DomainError,
    ExprSyntaxError,
    MissingBinding,
    UnboundedDetected,
    UnknownIdentifier,
)

Value = Union[float, np.ndarray]

VARIABLES = ("t", "x", "y", "z")

#: |denominator| below this raises DomainError instead of dividing.
DIVISION_GUARD = 1e-12
#: exp() clamps its argument to this exponent range.
EXP_CLAMP = 50.0

_FUNCTIONS: dict[str, int] = {
    "abs": 1,
    "min": 2,
    "max": 2,
    "pos": 1,
    "neg": 1,
    "sin": 1,
    "cos": 1,
    "exp": 1,
}


# --- AST --------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * /
    lhs: "Node"
    rhs: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Node", ...]


Node = Union[Const, Var, Neg, Bin, Call]


def free_variables(node: Node) -> frozenset[str]:
    if isinstance(node, Var):
        return frozenset((node.name,))
    if isinstance(node, Const):
        return frozenset()
    if isinstance(node, Neg):
        return free_variables(node.arg)
    if isinstance(node, Bin):
        return free_variables(node.lhs) | free_variables(node.rhs)
    return frozenset().union(*(free_variables(a) for a in node.args)) if node.args else frozenset()


def to_source(node: Node) -> str:
    """Render an AST back to parseable text. parse(to_source(a)) == a."""
    if isinstance(node, Const):
        return repr(node.value) if node.value >= 0 or math.isnan(node.value) else f"-{repr(-node.value)}"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.arg)})"
    if isinstance(node, Bin):
        return f"({to_source(node.lhs)} {node.op} {to_source(node.rhs)})"
    return f"{node.name}({', '.join(to_source(a) for a in node.args)})"


# --- parser -----------------------------------------------------------------

_TOKEN_CHARS = set("+-*/(),")


class _Lexer:
    def __init__(self, source: str):
        self.src = source
        self.pos = 0

    def _skip_ws(self) -> None:
        while self.pos < len(self.src) and self.src[self.pos].isspace():
            self.pos += 1

    def peek(self) -> tuple[str, str, int]:
        save = self.pos
        tok = self.next()
        self.pos = save
        return tok

    def next(self) -> tuple[str, str, int]:
        """Return (kind, text, offset); kind in {num, ident, op, end}."""
        self._skip_ws()
        if self.pos >= len(self.src):
            return ("end", "", self.pos)
        start = self.pos
        ch = self.src[start]
        if ch in _TOKEN_CHARS:
            self.pos += 1
            return ("op", ch, start)
        if ch.isdigit() or ch == ".":
            i = start
            seen_dot = False
            while i < len(self.src) and (self.src[i].isdigit() or (self.src[i] == "." and not seen_dot)):
                if self.src[i] == ".":
                    seen_dot = True
                i += 1
            # optional exponent
            if i < len(self.src) and self.src[i] in "eE":
                j = i + 1
                if j < len(self.src) and self.src[j] in "+-":
                    j += 1
                if j < len(self.src) and self.src[j].isdigit():
                    while j < len(self.src) and self.src[j].isdigit():
                        j += 1
                    i = j
            text = self.src[start:i]
            self.pos = i
            return ("num", text, start)
        if ch.isalpha() or ch == "_":
            i = start
            while i < len(self.src) and (self.src[i].isalnum() or self.src[i] == "_"):
                i += 1
            self.pos = i
            return ("ident", self.src[start:i], start)
        raise ExprSyntaxError(f"unexpected character {ch!r}", start)


class _Parser:
    def __init__(self, source: str):
        self.lex = _Lexer(source)

    def parse(self) -> Node:
        node = self._expr()
        kind, text, off = self.lex.next()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected trailing input {text!r}", off)
        return node

    def _expr(self) -> Node:
        node = self._term()
        while True:
            kind, text, _ = self.lex.peek()
            if kind == "op" and text in "+-":
                self.lex.next()
                node = Bin(text, node, self._term())
            else:
                return node

    def _term(self) -> Node:
        node = self._unary()
        while True:
            kind, text, _ = self.lex.peek()
            if kind == "op" and text in "*/":
                self.lex.next()
                node = Bin(text, node, self._unary())
            else:
                return node

    def _unary(self) -> Node:
        kind, text, _ = self.lex.peek()
        if kind == "op" and text == "-":
            self.lex.next()
            inner = self._unary()
            # fold literal negation so printing Const(-c) round-trips
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Neg(inner)
        return self._primary()

    def _primary(self) -> Node:
        kind, text, off = self.lex.next()
        if kind == "num":
            try:
                return Const(float(text))
            except ValueError:
                raise ExprSyntaxError(f"bad number literal {text!r}", off) from None
        if kind == "ident":
            nxt_kind, nxt_text, _ = self.lex.peek()
            if nxt_kind == "op" and nxt_text == "(":
                if text not in _FUNCTIONS:
                    raise UnknownIdentifier(text, off)
                self.lex.next()
                args = [self._expr()]
                while True:
                    k, t, o = self.lex.next()
                    if k == "op" and t == ",":
                        args.append(self._expr())
                    elif k == "op" and t == ")":
                        break
                    else:
                        raise ExprSyntaxError("expected ',' or ')' in argument list", o)
                if len(args) != _FUNCTIONS[text]:
                    raise ArityMismatch(text, _FUNCTIONS[text], len(args), off)
                return Call(text, tuple(args))
            if text not in VARIABLES:
                raise UnknownIdentifier(text, off)
            return Var(text)
        if kind == "op" and text == "(":
            node = self._expr()
            k, t, o = self.lex.next()
            if not (k == "op" and t == ")"):
                raise ExprSyntaxError("expected ')'", o)
            return node
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", off)
        raise ExprSyntaxError(f"unexpected token {text!r}", off)


def parse(source: str) -> Node:
    """Parse infix text into an AST.

    Raises ExprSyntaxError (with byte offset), UnknownIdentifier or
    ArityMismatch on malformed input.
    """
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(source).parse()


# --- evaluation -------------------------------------------------------------

def _apply_fn(name: str, args: list[Value]) -> Value:
    if name == "abs":
        return np.abs(args[0])
    if name == "min":
        return np.minimum(args[0], args[1])
    if name == "max":
        return np.maximum(args[0], args[1])
    if name == "pos":
        return np.maximum(args[0], 0.0)
    if name == "neg":
        return np.maximum(np.negative(args[0]), 0.0)
    if name == "sin":
        return np.sin(args[0])
    if name == "cos":
        return np.cos(args[0])
    # exp, clamped for totality
    return np.exp(np.clip(args[0], -EXP_CLAMP, EXP_CLAMP))


def _eval(node: Node, bindings: Mapping[str, Value]) -> Value:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        try:
            return bindings[node.name]
        except KeyError:
            raise MissingBinding(node.name) from None
    if isinstance(node, Neg):
        return np.negative(_eval(node.arg, bindings))
    if isinstance(node, Bin):
        a = _eval(node.lhs, bindings)
        b = _eval(node.rhs, bindings)
        if node.op == "+":
            return np.add(a, b)
        if node.op == "-":
            return np.subtract(a, b)
        if node.op == "*":
            return np.multiply(a, b)
        if np.any(np.abs(b) < DIVISION_GUARD):
            raise DomainError(f"division by |denominator| < {DIVISION_GUARD}")
        return np.divide(a, b)
    return _apply_fn(node.name, [_eval(a, bindings) for a in node.args])


def evaluate(expr: Node, bindings: Mapping[str, Value]) -> Value:
    """Evaluate ``expr`` under ``bindings`` (scalars or numpy arrays).

    Pure and deterministic: identical inputs give bit-identical output.
    """
    out = _eval(expr, bindings)
    if np.ndim(out) == 0:
        return float(out)
    return out


def compile_expr(expr: Node) -> Callable[[Mapping[str, Value]], Value]:
    """Compile an AST to a closure tree; ~2x faster than the tree walk.

    Used by the PDE solvers, which evaluate the same expression once per
    time layer on the whole grid.
    """
    if isinstance(expr, Const):
        v = expr.value
        return lambda env: v
    if isinstance(expr, Var):
        name = expr.name
        def var_fn(env, _name=name):
            try:
                return env[_name]
            except KeyError:
                raise MissingBinding(_name) from None
        return var_fn
    if isinstance(expr, Neg):
        f = compile_expr(expr.arg)
        return lambda env: np.negative(f(env))
    if isinstance(expr, Bin):
        fa = compile_expr(expr.lhs)
        fb = compile_expr(expr.rhs)
        op = expr.op
        if op == "+":
            return lambda env: np.add(fa(env), fb(env))
        if op == "-":
            return lambda env: np.subtract(fa(env), fb(env))
        if op == "*":
            return lambda env: np.multiply(fa(env), fb(env))
        def div_fn(env):
            b = fb(env)
            if np.any(np.abs(b) < DIVISION_GUARD):
                raise DomainError(f"division by |denominator| < {DIVISION_GUARD}")
            return np.divide(fa(env), b)
        return div_fn
    fns = [compile_expr(a) for a in expr.args]
    name = expr.name
    return lambda env: _apply_fn(name, [f(env) for f in fns])


# --- Lipschitz estimation ---------------------------------------------------

#: default sampling box per variable for Lipschitz estimates
DEFAULT_BOX: dict[str, tuple[float, float]] = {
    "t": (0.0, 1.0),
    "x": (-5.0, 5.0),
    "y": (-10.0, 10.0),
    "z": (-10.0, 10.0),
}

LIPSCHITZ_CAP = 1e6
LIPSCHITZ_SAFETY = 1.1


@dataclass(frozen=True)
class LipschitzEstimate:
    """A Lipschitz constant with its provenance.

    ``constant`` is the raw sampled maximum difference quotient (or the
    user-declared value); ``padded`` applies the safety factor and is what
    CFL heuristics should consume.
    """

    constant: float
    method: str  # "sampled" | "declared"
    sample_count: int
    safety: float = LIPSCHITZ_SAFETY

    def __post_init__(self):
        if self.constant < 0:
            raise ValueError("Lipschitz constant must be nonnegative")
        if self.method not in ("sampled", "declared"):
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def padded(self) -> float:
        return self.constant * self.safety


def declared_lipschitz(constant: float) -> LipschitzEstimate:
    return LipschitzEstimate(constant=float(constant), method="declared", sample_count=0)


def estimate_lipschitz(
    expr: Node,
    variables: Iterable[str] = ("y", "z"),
    box: Mapping[str, tuple[float, float]] | None = None,
    n: int = 4096,
    rng: np.random.Generator | None = None,
    cap: float = LIPSCHITZ_CAP,
) -> LipschitzEstimate:
    """Sampled Lipschitz constant of ``expr`` in the given variables.

    Draws ``n`` random point pairs in ``box`` that differ only in
    ``variables`` and returns the largest difference quotient. Raises
    UnboundedDetected if any quotient exceeds ``cap``.
    """
    if n < 2:
        raise ValueError("need n >= 2 samples")
    varied = tuple(v for v in VARIABLES if v in set(variables))
    if not all(v in ("y", "z") for v in varied):
        raise ValueError("Lipschitz variables must be a subset of {y, z}")
    full_box = dict(DEFAULT_BOX)
    if box:
        full_box.update(box)
    rng = rng if rng is not None else np.random.default_rng(0)

    free = free_variables(expr)
    env_a: dict[str, Value] = {}
    env_b: dict[str, Value] = {}
    for v in VARIABLES:
        if v not in free:
            continue
        lo, hi = full_box[v]
        base = rng.uniform(lo, hi, size=n)
        env_a[v] = base
        env_b[v] = rng.uniform(lo, hi, size=n) if v in varied else base

    if not any(v in varied for v in free):
        # constant in the varied variables
        return LipschitzEstimate(constant=0.0, method="sampled", sample_count=n)

    fa = np.asarray(evaluate(expr, env_a), dtype=float)
    fb = np.asarray(evaluate(expr, env_b), dtype=float)
    dist_sq = np.zeros(n)
    for v in varied:
        if v in free:
            dist_sq = dist_sq + (env_a[v] - env_b[v]) ** 2
    dist = np.sqrt(dist_sq)
    ok = dist > 1e-14
    quotients = np.abs(fa[ok] - fb[ok]) / dist[ok]
    constant = float(quotients.max()) if quotients.size else 0.0
    if constant > cap:
        raise UnboundedDetected(
            f"difference quotient {constant:.3g} exceeds cap {cap:.3g}; "
            "expression does not look Lipschitz on the box"
        )
    return LipschitzEstimate(constant=constant, method="sampled", sample_count=n)


# --- random ASTs (round-trip and probe corpora) ------------------------------

def random_ast(rng: np.random.Generator, depth: int = 3, variables: tuple[str, ...] = VARIABLES) -> Node:
    """Random well-formed AST, used by round-trip and corpus tests."""
    if depth <= 0 or rng.random() < 0.3:
        if rng.random() < 0.5:
            return Const(float(np.round(rng.uniform(-4, 4), 3)))
        return Var(str(rng.choice(variables)))
    roll = rng.random()
    if roll < 0.55:
        op = str(rng.choice(["+", "-", "*", "/"]))
        rhs = random_ast(rng, depth - 1, variables)
        if op == "/":
            # keep division total: shift the denominator away from zero
            rhs = Call("max", (Call("abs", (rhs,)), Const(1.0)))
        return Bin(op, random_ast(rng, depth - 1, variables), rhs)
    if roll < 0.7:
        inner = random_ast(rng, depth - 1, variables)
        # the parser folds negated literals, so stay in canonical form
        if isinstance(inner, Const):
            return Const(-inner.value)
        return Neg(inner)
    name = str(rng.choice(list(_FUNCTIONS)))
    args = tuple(random_ast(rng, depth - 1, variables) for _ in range(_FUNCTIONS[name]))
    return Call(name, args)


def random_homogeneous_ast(rng: np.random.Generator, depth: int = 3) -> Node:
    """Random AST positively homogeneous of degree 1 in z (abs/sum/scale of z)."""
    if depth <= 0 or rng.random() < 0.35:
        return Var("z")
    roll = rng.random()
    if roll < 0.35:
        return Bin(str(rng.choice(["+", "-"])), random_homogeneous_ast(rng, depth - 1),
                   random_homogeneous_ast(rng, depth - 1))
    if roll < 0.6:
        return Bin("*", Const(float(np.round(rng.uniform(-3, 3), 2))),
                   random_homogeneous_ast(rng, depth - 1))
    if roll < 0.8:
        return Call("abs", (random_homogeneous_ast(rng, depth - 1),))
    return Neg(random_homogeneous_ast(rng, depth - 1))

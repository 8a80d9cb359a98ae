"""Exact symbolic expression kernel.

Expression trees over a declared variable set: rational constants, sums,
products, integer powers, quotients and the unary functions sin, cos, exp,
log, sqrt.  Constants are kept as exact `Fraction`s so that polynomial
identities cancel to a literal zero under `simplify` and repeated runs are
bit-for-bit reproducible.

The numeric side lives here too: `evaluate` (scalar, raises DomainError),
`compile_expr` (vectorised numpy closure for point batteries) and `fd_diff`,
the finite-difference derivative oracle used to cross-check every symbolic
derivative produced by `diff`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "Add", "Mul", "Pow", "Call",
    "VarSet", "ParseError", "UnknownIdentifier", "DomainError",
    "const", "var", "add", "mul", "pow_", "div", "neg", "call",
    "parse", "diff", "evaluate", "simplify", "fd_diff",
    "to_string", "compile_expr", "free_variables", "substitute",
    "is_polynomial", "ZERO", "ONE",
]

FUNCTIONS = ("cos", "exp", "log", "sin", "sqrt")


class ParseError(Exception):
    """Syntax error with the 0-based offset of the offending token."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownIdentifier(Exception):
    """Name that is neither a declared variable nor an allowed function."""

    def __init__(self, name, position=None):
        at = "" if position is None else f" (at position {position})"
        super().__init__(f"unknown identifier {name!r}{at}")
        self.name = name
        self.position = position


class DomainError(ArithmeticError):
    """Evaluation left the real domain (1/0, log(x<=0), sqrt(x<0))."""


# --------------------------------------------------------------------------
# nodes
# --------------------------------------------------------------------------

class Expr:
    """Immutable expression node; subclasses set all fields at construction."""

    __slots__ = ("_hash",)

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other) or self._hash != other._hash:
            return False
        return self._key() == other._key()

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return to_string(self)

    # arithmetic sugar so numpy object arrays of Expr compose; NotImplemented
    # lets ndarray operands take over via their reflected operation
    def __add__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        return add(self, _coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        return add(self, neg(_coerce(other)))

    def __rsub__(self, other):
        return add(_coerce(other), neg(self))

    def __mul__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        return mul(self, _coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __pow__(self, k):
        return pow_(self, k)

    def __neg__(self):
        return neg(self)


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = value if isinstance(value, Fraction) else Fraction(value)
        self._hash = hash(("c", self.value))

    def _key(self):
        return self.value


class Var(Expr):
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name
        self._hash = hash(("v", name))

    def _key(self):
        return self.name


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms):
        self.terms = terms
        self._hash = hash(("+",) + terms)

    def _key(self):
        return self.terms


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors):
        self.factors = factors
        self._hash = hash(("*",) + factors)

    def _key(self):
        return self.factors


class Pow(Expr):
    __slots__ = ("base", "exponent")

    def __init__(self, base, exponent):
        self.base = base
        self.exponent = exponent
        self._hash = hash(("^", base, exponent))

    def _key(self):
        return (self.base, self.exponent)


class Call(Expr):
    __slots__ = ("func", "arg")

    def __init__(self, func, arg):
        self.func = func
        self.arg = arg
        self._hash = hash((func, arg))

    def _key(self):
        return (self.func, self.arg)


ZERO = Const(0)
ONE = Const(1)
MINUS_ONE = Const(-1)


def _coerce(x):
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, Fraction)):
        return Const(Fraction(x))
    if isinstance(x, float):
        return Const(Fraction(x))
    raise TypeError(f"cannot use {type(x).__name__} as an expression")


# --------------------------------------------------------------------------
# smart constructors (cheap local folding only; canonical form is simplify's job)
# --------------------------------------------------------------------------

def const(value) -> Const:
    return _coerce(value)  # type: ignore[return-value]


def var(name: str) -> Var:
    return Var(name)


def add(*xs) -> Expr:
    terms = []
    c = Fraction(0)
    for x in map(_coerce, xs):
        if isinstance(x, Const):
            c += x.value
        elif isinstance(x, Add):
            for t in x.terms:
                if isinstance(t, Const):
                    c += t.value
                else:
                    terms.append(t)
        else:
            terms.append(x)
    if c != 0:
        terms.append(Const(c))
    if not terms:
        return ZERO
    if len(terms) == 1:
        return terms[0]
    return Add(tuple(terms))


def mul(*xs) -> Expr:
    factors = []
    c = Fraction(1)
    for x in map(_coerce, xs):
        if isinstance(x, Const):
            c *= x.value
        elif isinstance(x, Mul):
            for f in x.factors:
                if isinstance(f, Const):
                    c *= f.value
                else:
                    factors.append(f)
        else:
            factors.append(x)
    if c == 0:
        return ZERO
    if c != 1:
        factors.insert(0, Const(c))
    if not factors:
        return ONE
    if len(factors) == 1:
        return factors[0]
    return Mul(tuple(factors))


def pow_(base, exponent: int) -> Expr:
    base = _coerce(base)
    if not isinstance(exponent, int):
        raise TypeError("exponents must be integers")
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if isinstance(base, Const):
        if base.value == 0 and exponent < 0:
            raise ZeroDivisionError("0 raised to a negative power")
        return Const(base.value ** exponent)
    if isinstance(base, Pow):
        return pow_(base.base, base.exponent * exponent)
    return Pow(base, exponent)


def div(a, b) -> Expr:
    a, b = _coerce(a), _coerce(b)
    if isinstance(b, Const):
        if b.value == 0:
            raise ZeroDivisionError("division by the constant 0")
        return mul(Const(1 / b.value), a)
    return mul(a, pow_(b, -1))


def neg(x) -> Expr:
    return mul(MINUS_ONE, _coerce(x))


def call(func: str, arg) -> Expr:
    if func not in FUNCTIONS:
        raise UnknownIdentifier(func)
    return Call(func, _coerce(arg))


# --------------------------------------------------------------------------
# variable sets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class VarSet:
    """Ordered variable names with roles: one time, n positions, n velocities."""

    time: str
    positions: tuple
    velocities: tuple
    parameters: tuple = ()

    def __post_init__(self):
        names = self.names
        if len(set(names)) != len(names):
            raise ValueError("variable names must be distinct")
        for name in names:
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
                raise ValueError(f"invalid variable name {name!r}")
            if name in FUNCTIONS:
                raise ValueError(f"variable name {name!r} clashes with a function")

    @property
    def names(self):
        return (self.time,) + tuple(self.positions) + tuple(self.velocities) \
            + tuple(self.parameters)

    @property
    def n(self):
        return len(self.positions)

    @classmethod
    def default(cls, n: int) -> "VarSet":
        return cls(
            time="t",
            positions=tuple(f"x{i + 1}" for i in range(n)),
            velocities=tuple(f"v{i + 1}" for i in range(n)),
        )

    def role(self, name: str) -> str:
        if name == self.time:
            return "time"
        if name in self.positions:
            return "position"
        if name in self.velocities:
            return "velocity"
        if name in self.parameters:
            return "parameter"
        raise KeyError(name)


# --------------------------------------------------------------------------
# parser: precedence climbing over a small token stream
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)

_BIN_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_UNARY_PREC = 3  # between * / and ^
_POW_PREC = 4


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            at = len(text) - len(stripped)
            raise ParseError(f"unexpected character {stripped[0]!r}", at)
        if m.lastgroup == "num":
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name"), m.start("name")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def parse(text: str, vars: VarSet) -> Expr:
    """Parse an arithmetic expression over +, -, *, /, ^, the functions
    sin/cos/exp/log/sqrt and the names declared in `vars`.

    Precedence ^ > unary minus > * / > + -, binary operators left-associative;
    ^ takes a (possibly parenthesised, possibly signed) integer literal.
    """
    tokens = _tokenize(text)
    idx = 0

    def peek():
        return tokens[idx]

    def advance():
        nonlocal idx
        tok = tokens[idx]
        idx += 1
        return tok

    def expect_op(symbol):
        kind, value, pos = advance()
        if kind != "op" or value != symbol:
            raise ParseError(f"expected {symbol!r}", pos)

    def parse_exponent():
        # integer literal, optionally signed, optionally parenthesised
        kind, value, pos = advance()
        sign = 1
        parenthesised = False
        if kind == "op" and value == "(":
            parenthesised = True
            kind, value, pos = advance()
        if kind == "op" and value == "-":
            sign = -1
            kind, value, pos = advance()
        if kind != "num" or not re.fullmatch(r"\d+", value):
            raise ParseError("exponent must be an integer literal", pos)
        if parenthesised:
            expect_op(")")
        return sign * int(value)

    def parse_atom():
        kind, value, pos = advance()
        if kind == "num":
            return Const(Fraction(Decimal(value)))
        if kind == "name":
            if peek()[:2] == ("op", "("):
                if value not in FUNCTIONS:
                    raise UnknownIdentifier(value, pos)
                advance()
                inner = parse_expr(0)
                expect_op(")")
                return Call(value, inner)
            if value in vars.names:
                return Var(value)
            raise UnknownIdentifier(value, pos)
        if kind == "op" and value == "(":
            inner = parse_expr(0)
            expect_op(")")
            return inner
        raise ParseError(f"unexpected token {value!r}" if value else "unexpected end of input", pos)

    def parse_unary():
        kind, value, pos = peek()
        if kind == "op" and value == "-":
            advance()
            return neg(parse_unary())
        if kind == "op" and value == "+":
            advance()
            return parse_unary()
        return parse_power()

    def parse_power():
        base = parse_atom()
        while peek()[:2] == ("op", "^"):
            advance()
            base = pow_(base, parse_exponent())
        return base

    def parse_expr(min_prec):
        left = parse_unary()
        while True:
            kind, value, _ = peek()
            if kind != "op" or value not in _BIN_PREC or _BIN_PREC[value] < min_prec:
                return left
            advance()
            right = parse_expr(_BIN_PREC[value] + 1)
            if value == "+":
                left = add(left, right)
            elif value == "-":
                left = add(left, neg(right))
            elif value == "*":
                left = mul(left, right)
            else:
                left = div(left, right)

    result = parse_expr(0)
    kind, value, pos = peek()
    if kind != "end":
        raise ParseError(f"unexpected token {value!r}", pos)
    return result


# --------------------------------------------------------------------------
# differentiation
# --------------------------------------------------------------------------

def diff(e: Expr, name: str) -> Expr:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == name else ZERO
    if isinstance(e, Add):
        return add(*[diff(t, name) for t in e.terms])
    if isinstance(e, Mul):
        terms = []
        for i, f in enumerate(e.factors):
            df = diff(f, name)
            if df is not ZERO:
                terms.append(mul(*e.factors[:i], df, *e.factors[i + 1:]))
        return add(*terms)
    if isinstance(e, Pow):
        db = diff(e.base, name)
        if db is ZERO:
            return ZERO
        return mul(e.exponent, pow_(e.base, e.exponent - 1), db)
    if isinstance(e, Call):
        da = diff(e.arg, name)
        if da is ZERO:
            return ZERO
        if e.func == "sin":
            outer = Call("cos", e.arg)
        elif e.func == "cos":
            outer = neg(Call("sin", e.arg))
        elif e.func == "exp":
            outer = e
        elif e.func == "log":
            outer = pow_(e.arg, -1)
        else:  # sqrt
            outer = div(const(Fraction(1, 2)), e)
        return mul(outer, da)
    raise TypeError(f"cannot differentiate {type(e).__name__}")


# --------------------------------------------------------------------------
# scalar evaluation (DomainError semantics) and fd oracle
# --------------------------------------------------------------------------

def evaluate(e: Expr, env) -> float:
    """Evaluate at a point given as a mapping name -> real.  Raises DomainError
    for division by zero, log of a non-positive value or sqrt of a negative."""
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, Var):
        return float(env[e.name])
    if isinstance(e, Add):
        return math.fsum(evaluate(t, env) for t in e.terms)
    if isinstance(e, Mul):
        out = 1.0
        for f in e.factors:
            out *= evaluate(f, env)
        return out
    if isinstance(e, Pow):
        b = evaluate(e.base, env)
        if e.exponent < 0 and b == 0.0:
            raise DomainError("division by zero")
        return b ** e.exponent
    if isinstance(e, Call):
        a = evaluate(e.arg, env)
        if e.func == "sin":
            return math.sin(a)
        if e.func == "cos":
            return math.cos(a)
        if e.func == "exp":
            return math.exp(a)
        if e.func == "log":
            if a <= 0.0:
                raise DomainError("log of a non-positive value")
            return math.log(a)
        if a < 0.0:
            raise DomainError("sqrt of a negative value")
        return math.sqrt(a)
    raise TypeError(f"cannot evaluate {type(e).__name__}")


def fd_diff(e: Expr, name: str, env, h: float = 1e-4) -> float:
    """Central-difference derivative with one Richardson extrapolation step:
    (4*D(h/2) - D(h)) / 3.  Independent of `diff` by construction."""

    def central(step):
        hi = dict(env)
        lo = dict(env)
        hi[name] = env[name] + step
        lo[name] = env[name] - step
        return (evaluate(e, hi) - evaluate(e, lo)) / (2.0 * step)

    d_h = central(h)
    d_h2 = central(h / 2.0)
    return (4.0 * d_h2 - d_h) / 3.0


# --------------------------------------------------------------------------
# canonical form
# --------------------------------------------------------------------------
#
# Normal form: a rational-monomial expansion.  A term is a Fraction times a
# monomial in "atoms" (variables, function applications, or multi-term
# polynomials raised to negative powers, kept opaque).  Products and
# non-negative integer powers are expanded, so any polynomial expression that
# is identically zero collapses to the literal 0.  Term order: atoms sorted by
# canonical string, monomials lexicographically by their (atom, exponent)
# sequence, then total degree -- fixed so golden outputs are stable.

_simplify_cache: dict = {}


def simplify(e: Expr) -> Expr:
    out = _simplify_cache.get(e)
    if out is None:
        out = _from_poly(_to_poly(e))
        _simplify_cache[e] = out
        _simplify_cache[out] = out
    return out


def _atom_mono(atom: Expr, exp: int = 1):
    return {((to_string(atom), atom, exp),): Fraction(1)}


def _poly_add(p, q):
    out = dict(p)
    for m, c in q.items():
        s = out.get(m, Fraction(0)) + c
        if s:
            out[m] = s
        elif m in out:
            del out[m]
    return out


def _mono_mul(m1, m2):
    exps = {}
    order = {}
    for key, atom, exp in m1 + m2:
        exps[key] = exps.get(key, 0) + exp
        order[key] = atom
    return tuple(sorted((k, order[k], e) for k, e in exps.items() if e != 0))


def _poly_mul(p, q):
    out = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            m = _mono_mul(m1, m2)
            c = c1 * c2
            s = out.get(m, Fraction(0)) + c
            if s:
                out[m] = s
            elif m in out:
                del out[m]
    return out


def _poly_pow(p, k):
    out = {(): Fraction(1)}
    base = p
    while k:
        if k & 1:
            out = _poly_mul(out, base)
        k >>= 1
        if k:
            base = _poly_mul(base, base)
    return out


def _to_poly(e: Expr):
    if isinstance(e, Const):
        return {(): e.value} if e.value else {}
    if isinstance(e, Var):
        return _atom_mono(e)
    if isinstance(e, Add):
        out = {}
        for t in e.terms:
            out = _poly_add(out, _to_poly(t))
        return out
    if isinstance(e, Mul):
        out = {(): Fraction(1)}
        for f in e.factors:
            out = _poly_mul(out, _to_poly(f))
        return out
    if isinstance(e, Pow):
        p = _to_poly(e.base)
        if e.exponent >= 0:
            return _poly_pow(p, e.exponent)
        if not p:
            raise ZeroDivisionError("simplify: division by an identically-zero base")
        if len(p) == 1:
            ((m, c),) = p.items()
            inv_m = tuple((k, a, x * e.exponent) for k, a, x in m)
            return {inv_m: c ** e.exponent}
        # normalise by the leading coefficient so scalar multiples of the
        # same denominator polynomial share one atom
        lead = min(p, key=_mono_sort_key)
        c0 = p[lead]
        monic = {m: c / c0 for m, c in p.items()}
        out = _atom_mono(_from_poly(monic), e.exponent)
        return {m: c * c0 ** e.exponent for m, c in out.items()}
    if isinstance(e, Call):
        arg = _from_poly(_to_poly(e.arg))
        folded = _fold_call(e.func, arg)
        if folded is not None:
            return _to_poly(folded)
        return _atom_mono(Call(e.func, arg))
    raise TypeError(f"cannot simplify {type(e).__name__}")


def _fold_call(func, arg):
    if not isinstance(arg, Const):
        return None
    v = arg.value
    if func == "sin" and v == 0:
        return ZERO
    if func == "cos" and v == 0:
        return ONE
    if func == "exp" and v == 0:
        return ONE
    if func == "log" and v == 1:
        return ZERO
    if func == "sqrt" and v >= 0:
        num = math.isqrt(v.numerator)
        den = math.isqrt(v.denominator)
        if num * num == v.numerator and den * den == v.denominator:
            return Const(Fraction(num, den))
    return None


def _mono_sort_key(mono):
    return (tuple((k, e) for k, _, e in mono), sum(e for _, _, e in mono))


def _from_poly(p) -> Expr:
    if not p:
        return ZERO
    terms = []
    for mono in sorted(p, key=_mono_sort_key):
        c = p[mono]
        factors = [pow_(atom, exp) for _, atom, exp in mono]
        if not factors:
            terms.append(Const(c))
        elif c == 1:
            terms.append(mul(*factors) if len(factors) > 1 else factors[0])
        else:
            terms.append(mul(Const(c), *factors))
    if len(terms) == 1:
        return terms[0]
    return Add(tuple(terms))


def is_polynomial(e: Expr) -> bool:
    """True when e expands to a polynomial (no function atoms, no negative
    powers) in its variables."""
    try:
        p = _to_poly(e)
    except ZeroDivisionError:
        return False
    for mono in p:
        for _, atom, exp in mono:
            if exp < 0 or not isinstance(atom, Var):
                return False
    return True


# --------------------------------------------------------------------------
# utilities
# --------------------------------------------------------------------------

def free_variables(e: Expr) -> frozenset:
    out = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add(node.name)
        elif isinstance(node, Add):
            stack.extend(node.terms)
        elif isinstance(node, Mul):
            stack.extend(node.factors)
        elif isinstance(node, Pow):
            stack.append(node.base)
        elif isinstance(node, Call):
            stack.append(node.arg)
    return frozenset(out)


def substitute(e: Expr, mapping) -> Expr:
    """Replace variables by expressions (mapping name -> Expr)."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Add):
        return add(*[substitute(t, mapping) for t in e.terms])
    if isinstance(e, Mul):
        return mul(*[substitute(f, mapping) for f in e.factors])
    if isinstance(e, Pow):
        return pow_(substitute(e.base, mapping), e.exponent)
    if isinstance(e, Call):
        return Call(e.func, substitute(e.arg, mapping))
    raise TypeError(f"cannot substitute in {type(e).__name__}")


# --------------------------------------------------------------------------
# printing (re-parseable)
# --------------------------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _render(e):
    # returns (text, precedence of outermost construct)
    if isinstance(e, Const):
        v = e.value
        if v.denominator == 1:
            return (str(v.numerator), _PREC_ATOM if v >= 0 else _PREC_UNARY)
        return (f"{v.numerator}/{v.denominator}", _PREC_MUL if v >= 0 else _PREC_UNARY)
    if isinstance(e, Var):
        return (e.name, _PREC_ATOM)
    if isinstance(e, Call):
        return (f"{e.func}({_render(e.arg)[0]})", _PREC_ATOM)
    if isinstance(e, Pow):
        base, prec = _render(e.base)
        if prec < _PREC_ATOM:
            base = f"({base})"
        if e.exponent < 0:
            return (f"{base}^(-{-e.exponent})", _PREC_POW)
        return (f"{base}^{e.exponent}", _PREC_POW)
    if isinstance(e, Mul):
        factors = e.factors
        prefix = ""
        if factors and isinstance(factors[0], Const) and factors[0].value == -1 \
                and len(factors) > 1:
            prefix = "-"
            factors = factors[1:]
        parts = []
        for f in factors:
            text, prec = _render(f)
            parts.append(f"({text})" if prec < _PREC_MUL else text)
        return (prefix + "*".join(parts), _PREC_UNARY if prefix else _PREC_MUL)
    if isinstance(e, Add):
        out = []
        for i, t in enumerate(e.terms):
            text, prec = _render(t)
            if i == 0:
                out.append(f"({text})" if prec < _PREC_ADD else text)
            elif text.startswith("-"):
                out.append(" - " + text[1:])
            else:
                out.append(" + " + text)
        return ("".join(out), _PREC_ADD)
    raise TypeError(f"cannot print {type(e).__name__}")


def to_string(e: Expr) -> str:
    return _render(e)[0]


# --------------------------------------------------------------------------
# compiled evaluation
# --------------------------------------------------------------------------

_NP_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp,
             "log": np.log, "sqrt": np.sqrt}

_compile_cache: dict = {}


def compile_expr(e: Expr, names):
    """Compile to f(values) where values is a sequence (scalars or numpy
    arrays) aligned with `names`.  No domain checking: the vectorised path is
    for well-sampled batteries; use `evaluate` when DomainError matters."""
    names = tuple(names)
    key = (e, names)
    fn = _compile_cache.get(key)
    if fn is not None:
        return fn

    index = {name: i for i, name in enumerate(names)}
    lines = []
    seen = {}
    counter = 0

    def emit(node):
        nonlocal counter
        ref = seen.get(node)
        if ref is not None:
            return ref
        if isinstance(node, Const):
            ref = repr(float(node.value))
        elif isinstance(node, Var):
            ref = f"V[{index[node.name]}]"
        else:
            if isinstance(node, Add):
                text = " + ".join(emit(t) for t in node.terms)
            elif isinstance(node, Mul):
                text = " * ".join(emit(f) for f in node.factors)
            elif isinstance(node, Pow):
                text = f"{emit(node.base)} ** ({node.exponent})"
            else:
                text = f"_{node.func}({emit(node.arg)})"
            ref = f"t{counter}"
            counter += 1
            lines.append(f"    {ref} = {text}")
        seen[node] = ref
        return ref

    result = emit(e)
    source = "def _f(V):\n" + "\n".join(lines) + f"\n    return {result}\n"
    namespace = {f"_{k}": v for k, v in _NP_FUNCS.items()}
    exec(compile(source, "<chernsode-expr>", "exec"), namespace)
    fn = namespace["_f"]
    _compile_cache[key] = fn
    return fn

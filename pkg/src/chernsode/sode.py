"""SODE model and first-order jet-space geometry.

A system x''^i = F^i(t, x, x') is carried as expressions over a declared
variable set.  This module builds the dynamical flow, the adapted frame and
coframe, the endomorphism L_{X}J with its 0/-1/+1 eigenbundle splitting, the
horizontal/vertical projector, and the curvature of the splitting (P, T)
computed two ways: closed formulas as the production path, symbolic Lie
brackets of the frame fields as the oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .expressions import (
    Expr, VarSet, ZERO, add, compile_expr, const, diff, mul, simplify, var,
)

HALF = const(Fraction(1, 2))
QUARTER = const(Fraction(1, 4))


class OracleMismatch(Exception):
    """Two independent computation paths disagreed beyond tolerance."""


# --------------------------------------------------------------------------
# core types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class JetPoint1:
    """Numeric point (t, x, x') of the first-order jet space."""

    t: float
    x: tuple
    v: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(c) for c in self.x))
        object.__setattr__(self, "v", tuple(float(c) for c in self.v))
        for c in (self.t,) + self.x + self.v:
            if not np.isfinite(c):
                raise ValueError("jet point components must be finite")

    def env(self, vars: VarSet) -> dict:
        out = {vars.time: float(self.t)}
        out.update(zip(vars.positions, self.x))
        out.update(zip(vars.velocities, self.v))
        return out


@dataclass(frozen=True)
class SodeSystem:
    """n second-order equations x''^i = F^i over `vars`."""

    vars: VarSet
    F: tuple

    def __post_init__(self):
        object.__setattr__(self, "F", tuple(self.F))
        n = self.vars.n
        if n < 1 or len(self.vars.velocities) != n:
            raise ValueError("need n >= 1 positions with matching velocities")
        if len(self.F) != n:
            raise ValueError(f"expected {n} right-hand sides, got {len(self.F)}")
        declared = set(self.vars.names)
        from .expressions import free_variables
        for f in self.F:
            extra = free_variables(f) - declared
            if extra:
                raise ValueError(f"undeclared variables in F: {sorted(extra)}")

    @property
    def n(self) -> int:
        return self.vars.n

    @property
    def coords(self):
        return (self.vars.time,) + tuple(self.vars.positions) \
            + tuple(self.vars.velocities)


@dataclass(frozen=True)
class FrameAtPoint:
    """Adapted frame/coframe matrices at a point, coordinate basis
    (d/dt, d/dx^i, d/dv^i); frame columns are (X, X_i, d/dv^i)."""

    frame: np.ndarray
    coframe: np.ndarray


@dataclass(frozen=True)
class SplitCurvature:
    """Curvature of the splitting: P (n x n) and T (n x n x n), T[k][i][j]
    antisymmetric in (i, j)."""

    P: np.ndarray
    T: np.ndarray


# --------------------------------------------------------------------------
# small symbolic-matrix helpers shared by the geometry modules
# --------------------------------------------------------------------------

def as_expr(x) -> Expr:
    return x if isinstance(x, Expr) else const(x)


def expr_array(shape) -> np.ndarray:
    out = np.empty(shape, dtype=object)
    out[...] = ZERO
    return out


@lru_cache(maxsize=None)
def _diff(e: Expr, name: str) -> Expr:
    return diff(e, name)


def directional(field, coords, f: Expr) -> Expr:
    """Derivative of f along a coordinate vector field (object array)."""
    return add(*[mul(field[c], _diff(f, name)) for c, name in enumerate(coords)])


def bracket(X, Y, coords) -> np.ndarray:
    """Lie bracket of coordinate vector fields with Expr components."""
    out = expr_array(len(coords))
    for a in range(len(coords)):
        out[a] = add(directional(X, coords, as_expr(Y[a])),
                     mul(-1, directional(Y, coords, as_expr(X[a]))))
    return out


def eval_array(M, names, values) -> np.ndarray:
    """Evaluate an object array of Expr entry-wise; `values` is a sequence of
    scalars or numpy arrays aligned with `names` (arrays give a batch axis)."""
    M = np.asarray(M, dtype=object)
    batch = any(isinstance(v, np.ndarray) and v.ndim for v in values)
    k = len(values[0]) if batch else None
    out = np.zeros(M.shape + ((k,) if batch else ()))
    for idx in np.ndindex(M.shape):
        out[idx] = compile_expr(as_expr(M[idx]), names)(values)
    return out


def point_batch(vars: VarSet, points) -> list:
    """Column batch (one array per variable) from a list of JetPoint1."""
    envs = [p.env(vars) for p in points]
    return [np.array([e[name] for e in envs]) for name in vars.names]


def max_abs(M, s: SodeSystem, points) -> float:
    vals = eval_array(M, s.vars.names, point_batch(s.vars, points))
    return float(np.max(np.abs(vals))) if vals.size else 0.0


def sample_points(vars: VarSet, count, seed, box=None) -> list:
    """Seeded sample of jet points; box maps role -> (lo, hi) with defaults
    t in [0,1], x in [-1,1], v in [-1,1]."""
    box = dict(box or {})
    box.setdefault("time", (0.0, 1.0))
    box.setdefault("position", (-1.0, 1.0))
    box.setdefault("velocity", (-1.0, 1.0))
    rng = np.random.default_rng(seed)
    n = vars.n
    points = []
    for _ in range(count):
        t = rng.uniform(*box["time"])
        x = rng.uniform(*box["position"], size=n)
        v = rng.uniform(*box["velocity"], size=n)
        points.append(JetPoint1(t, tuple(x), tuple(v)))
    return points


def zero_symbolically(e: Expr) -> bool:
    return simplify(e) == ZERO


# --------------------------------------------------------------------------
# jets of F (cached partials)
# --------------------------------------------------------------------------

def f_v(s: SodeSystem, i, j) -> Expr:
    return _diff(s.F[i], s.vars.velocities[j])


def f_x(s: SodeSystem, i, j) -> Expr:
    return _diff(s.F[i], s.vars.positions[j])


def f_vv(s: SodeSystem, i, j, k) -> Expr:
    return _diff(f_v(s, i, j), s.vars.velocities[k])


def f_xv(s: SodeSystem, i, a, b) -> Expr:
    """d^2 F^i / dx^a dv^b."""
    return _diff(f_x(s, i, a), s.vars.velocities[b])


def f_vvv(s: SodeSystem, i, a, b, c) -> Expr:
    return _diff(f_vv(s, i, a, b), s.vars.velocities[c])


def flow_derivative(s: SodeSystem, f: Expr) -> Expr:
    """Derivative along the dynamical flow: d/dt + v^i d/dx^i + F^i d/dv^i."""
    terms = [_diff(f, s.vars.time)]
    for i in range(s.n):
        terms.append(mul(var(s.vars.velocities[i]), _diff(f, s.vars.positions[i])))
        terms.append(mul(s.F[i], _diff(f, s.vars.velocities[i])))
    return add(*terms)


# --------------------------------------------------------------------------
# flow, frames, splitting
# --------------------------------------------------------------------------

def dynamical_flow(s: SodeSystem) -> np.ndarray:
    """Components (1, v^i, F^i) in the coordinate basis."""
    n = s.n
    out = expr_array(2 * n + 1)
    out[0] = const(1)
    for i in range(n):
        out[1 + i] = var(s.vars.velocities[i])
        out[1 + n + i] = s.F[i]
    return out


def frame_symbolic(s: SodeSystem) -> np.ndarray:
    """Columns: X, X_i = d/dx^i + (1/2)(dF^j/dv^i) d/dv^j, d/dv^i."""
    n = s.n
    M = expr_array((2 * n + 1, 2 * n + 1))
    M[:, 0] = dynamical_flow(s)
    for i in range(n):
        M[1 + i, 1 + i] = const(1)
        for j in range(n):
            M[1 + n + j, 1 + i] = mul(HALF, f_v(s, j, i))
        M[1 + n + i, 1 + n + i] = const(1)
    return M


def coframe_symbolic(s: SodeSystem) -> np.ndarray:
    """Rows: dt, omega^i = dx^i - v^i dt,
    varpi^i = dv^i - F^i dt - (1/2)(dF^i/dv^j)(dx^j - v^j dt)."""
    n = s.n
    M = expr_array((2 * n + 1, 2 * n + 1))
    M[0, 0] = const(1)
    for i in range(n):
        M[1 + i, 0] = mul(-1, var(s.vars.velocities[i]))
        M[1 + i, 1 + i] = const(1)
        wv = add(*[mul(HALF, f_v(s, i, j), var(s.vars.velocities[j]))
                   for j in range(n)])
        M[1 + n + i, 0] = add(mul(-1, s.F[i]), wv)
        for j in range(n):
            M[1 + n + i, 1 + j] = mul(-HALF, f_v(s, i, j))
        M[1 + n + i, 1 + n + i] = const(1)
    return M


def adapted_frame(s: SodeSystem, p: JetPoint1) -> FrameAtPoint:
    names = s.vars.names
    values = [p.env(s.vars)[name] for name in names]
    return FrameAtPoint(
        frame=eval_array(frame_symbolic(s), names, values),
        coframe=eval_array(coframe_symbolic(s), names, values),
    )


def lie_derivative_J(s: SodeSystem) -> np.ndarray:
    """Coordinate-basis matrix of the Lie derivative of the fundamental
    tensor J = omega^i (x) d/dv^i along the dynamical flow."""
    n = s.n
    M = expr_array((2 * n + 1, 2 * n + 1))
    for i in range(n):
        # -(dx^i - v^i dt) (x) d/dx^i
        M[1 + i, 0] = var(s.vars.velocities[i])
        M[1 + i, 1 + i] = const(-1)
    for j in range(n):
        row = 1 + n + j
        M[row, 0] = add(*[mul(var(s.vars.velocities[i]), f_v(s, j, i))
                          for i in range(n)], mul(-1, s.F[j]))
        for i in range(n):
            M[row, 1 + i] = mul(-1, f_v(s, j, i))
        M[row, row] = const(1)
    return M


def split(s: SodeSystem, X, p: JetPoint1):
    """Horizontal/vertical decomposition of a coordinate vector at p."""
    fr = adapted_frame(s, p)
    theta = fr.coframe @ np.asarray(X, dtype=float)
    theta[s.n + 1:] = 0.0
    horizontal = fr.frame @ theta
    return horizontal, np.asarray(X, dtype=float) - horizontal


def endomorphism_E(s: SodeSystem) -> np.ndarray:
    """Coordinate matrix of omega^i (x) d/dv^i + varpi^i (x) X_i."""
    n = s.n
    frame = frame_symbolic(s)
    coframe = coframe_symbolic(s)
    M = expr_array((2 * n + 1, 2 * n + 1))
    for i in range(n):
        vert = expr_array(2 * n + 1)
        vert[1 + n + i] = const(1)
        for r in range(2 * n + 1):
            for c in range(2 * n + 1):
                M[r, c] = add(M[r, c],
                              mul(vert[r], coframe[1 + i, c]),
                              mul(frame[r, 1 + i], coframe[1 + n + i, c]))
    return M


# --------------------------------------------------------------------------
# curvature of the splitting
# --------------------------------------------------------------------------

def splitting_P(s: SodeSystem) -> np.ndarray:
    """P^i_j = (1/2) X(dF^i/dv^j) - dF^i/dx^j - (1/4)(dF^k/dv^j)(dF^i/dv^k)."""
    n = s.n
    P = expr_array((n, n))
    for i in range(n):
        for j in range(n):
            quad = [mul(QUARTER, f_v(s, k, j), f_v(s, i, k)) for k in range(n)]
            P[i, j] = add(mul(HALF, flow_derivative(s, f_v(s, i, j))),
                          mul(-1, f_x(s, i, j)),
                          *[mul(-1, q) for q in quad])
    return P


def splitting_T(s: SodeSystem) -> np.ndarray:
    """T^k_{ij}: antisymmetrised mixed second derivatives plus the quadratic
    first-derivative correction."""
    n = s.n
    T = expr_array((n, n, n))
    for k in range(n):
        for i in range(n):
            for j in range(i + 1, n):
                quad = []
                for h in range(n):
                    quad.append(mul(QUARTER, f_v(s, h, i), f_vv(s, k, h, j)))
                    quad.append(mul(-QUARTER, f_v(s, h, j), f_vv(s, k, h, i)))
                val = add(mul(HALF, f_xv(s, k, i, j)),
                          mul(-HALF, f_xv(s, k, j, i)), *quad)
                T[k, i, j] = val
                T[k, j, i] = mul(-1, val)
    return T


def _check_components(label, got, expected, s, mode, points, tol):
    diff_arr = np.asarray(got, dtype=object) - np.asarray(expected, dtype=object)
    if mode == "symbolic":
        bad = [idx for idx in np.ndindex(diff_arr.shape)
               if not zero_symbolically(as_expr(diff_arr[idx]))]
        if bad:
            raise OracleMismatch(f"{label}: nonzero at components {bad[:4]}")
    else:
        worst = max_abs(diff_arr, s, points)
        if worst > tol:
            raise OracleMismatch(f"{label}: residual {worst:.3e} > {tol:g}")


def splitting_curvature(s: SodeSystem, check="numeric", points=None,
                        tol=1e-10, seed=2024) -> SplitCurvature:
    """Closed-formula (P, T); unless check == "none", re-derives both from the
    Lie brackets of the frame fields and raises OracleMismatch on disagreement.

    Bracket facts used (proof of the splitting-curvature proposition):
    [X, X_j] = P^i_j d/dv^i - (1/2)(dF^k/dv^j) X_k and [X_i, X_j] = T^k_{ij} d/dv^k.
    """
    n = s.n
    P, T = splitting_P(s), splitting_T(s)
    if check != "none":
        if points is None:
            points = sample_points(s.vars, 12, seed)
        coords = s.coords
        frame = frame_symbolic(s)
        X_sigma = frame[:, 0]
        X_cols = [frame[:, 1 + i] for i in range(n)]
        for j in range(n):
            b = bracket(X_sigma, X_cols[j], coords)
            expected = expr_array(2 * n + 1)
            for k in range(n):
                coef = mul(-HALF, f_v(s, k, j))
                for r in range(2 * n + 1):
                    expected[r] = add(expected[r], mul(coef, X_cols[k][r]))
                expected[1 + n + k] = add(expected[1 + n + k], P[k, j])
            _check_components(f"splitting oracle [X, X_{j}]", b, expected,
                              s, check, points, tol)
        for i in range(n):
            for j in range(i + 1, n):
                b = bracket(X_cols[i], X_cols[j], coords)
                expected = expr_array(2 * n + 1)
                for k in range(n):
                    expected[1 + n + k] = T[k, i, j]
                _check_components(f"splitting oracle [X_{i}, X_{j}]", b,
                                  expected, s, check, points, tol)
    return SplitCurvature(P=P, T=T)


# --------------------------------------------------------------------------
# seeded polynomial systems for batteries and the selftest
# --------------------------------------------------------------------------

def random_polynomial_sode(n, seed, deg_v=3, deg_x=2, deg_t=1,
                           density=0.25) -> SodeSystem:
    """Sparse random polynomial right-hand sides with exact rational
    coefficients: degree <= deg_v in velocities, <= deg_x in positions,
    <= deg_t in time.  Each component keeps one cubic-in-v, one mixed x*v and
    one t*v monomial so every derivative order in the component formulas is
    exercised."""
    rng = np.random.default_rng(seed)
    vars = VarSet.default(n)

    def monomials(names, deg):
        out = [()]
        for _ in range(deg):
            out = out + [m + (name,) for m in out for name in names]
        return sorted({tuple(sorted(m)) for m in out})

    v_monos = monomials(vars.velocities, deg_v)
    x_monos = monomials(vars.positions, deg_x)
    t_monos = monomials((vars.time,), deg_t)

    def coeff():
        k = int(rng.integers(-8, 9)) or 1
        return const(Fraction(k, 8))

    F = []
    for i in range(n):
        terms = []
        forced = [
            (t_monos[0], x_monos[0], tuple([vars.velocities[i % n]] * 3)),
            (t_monos[0], (vars.positions[(i + 1) % n],),
             (vars.velocities[i % n],)),
            ((vars.time,) * min(1, deg_t), x_monos[0],
             (vars.velocities[(i + 1) % n],)),
        ]
        for tm, xm, vm in forced:
            terms.append(mul(coeff(), *[var(nm) for nm in tm + xm + vm]))
        for tm in t_monos:
            for xm in x_monos:
                for vm in v_monos:
                    if rng.random() < density:
                        terms.append(mul(coeff(), *[var(nm) for nm in tm + xm + vm]))
        F.append(add(*terms))
    return SodeSystem(vars=vars, F=tuple(F))

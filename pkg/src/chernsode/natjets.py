"""Vertical automorphisms, jet prolongations and the curvature mapping.

The second-order jet space of SODE sections carries coordinates
(t, x, v, a_i, a_i-first-derivatives, a_i-second-derivatives) where a_i
stands for the equation value x''^i.  This module provides:

- prolongation of automorphisms (t, x) -> (t, phi(t, x)) to the 1-jet level
  and the induced push of a SODE, both pointwise (no inverse needed) and
  symbolic (inverse supplied);
- the 2-jet of a pushed system at a matched point, obtained by numerically
  inverting the chain rule (independent of the equivariance laws under test);
- prolongation of vertical vector fields u^i(t, x) d/dx^i to the second jet
  level via the total-derivative recursion
      w_{alpha beta} = D_beta(w_alpha) - a_{x_b, alpha} du^b/dbeta
                        - a_{v_b, alpha} dv^b/dbeta,
  the standard prolongation formulas being its closed-form expansion;
- the curvature mapping (jet of a system -> the splitting-curvature value,
  y_P = -P and y_T = -T), its infinitesimal equivariance laws, the rank of
  the prolonged-field distribution and the kernel rank of the mapping.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .expressions import (
    Expr, ZERO, add, compile_expr, const, evaluate, free_variables, mul,
    substitute, var,
)
from .sode import (
    HALF, QUARTER, JetPoint1, SodeSystem, as_expr, eval_array, expr_array,
    _diff,
)

__all__ = [
    "VerticalAutomorphism", "SodeJet2", "CurvatureValue", "ProlongedField",
    "JetSpace", "MissingInverse", "prolong1", "push_sode_value",
    "push_sode_symbolic", "pushed_jet2", "verify_functoriality",
    "curvature_mapping", "jet2_of", "prolong_vertical_field",
    "infinitesimal_equivariance", "distribution_rank", "compose",
    "random_automorphism", "curvature_kernel_dim",
]


class MissingInverse(Exception):
    """Operation needs the symbolic inverse of the automorphism."""


# --------------------------------------------------------------------------
# jet coordinates
# --------------------------------------------------------------------------

class JetSpace:
    """Coordinate bookkeeping for the 2-jet space of SODE sections over a
    variable set: base (t, x, v), values a_i and derivative coordinates named
    a{i}_<dirs> with directions written as the base-coordinate names."""

    def __init__(self, vars):
        self.vars = vars
        n = vars.n
        self.n = n
        self.base = (vars.time,) + tuple(vars.positions) + tuple(vars.velocities)
        self.dirs = self.base  # derivative directions, canonical order
        self.values = tuple(f"a{i + 1}" for i in range(n))
        self.first = {(i, d): f"a{i + 1}_{d}"
                      for i in range(n) for d in self.dirs}
        self.second = {}
        for i in range(n):
            for c1, c2 in itertools.combinations_with_replacement(self.dirs, 2):
                self.second[(i, c1, c2)] = f"a{i + 1}_{c1}{c2}"
        names = self.base + tuple(self.first.values()) \
            + tuple(self.second.values()) + self.values
        if len(set(names)) != len(names):
            raise ValueError(
                "variable names make jet coordinate names collide; rename them")

    def second_name(self, i, d1, d2):
        if (i, d1, d2) in self.second:
            return self.second[(i, d1, d2)]
        return self.second[(i, d2, d1)]

    @property
    def fiber(self):
        out = list(self.values)
        for i in range(self.n):
            out.extend(self.first[(i, d)] for d in self.dirs)
        for i in range(self.n):
            out.extend(self.second[key] for key in self.second if key[0] == i)
        return tuple(out)

    @property
    def all_coords(self):
        return self.base + self.fiber


@lru_cache(maxsize=None)
def jet_space(vars) -> JetSpace:
    return JetSpace(vars)


@dataclass(frozen=True)
class SodeJet2:
    """Numeric 2-jet of a system at a point: value F, gradient D1 over the
    base coordinates (t | x | v) and symmetric Hessian D2."""

    point: JetPoint1
    F: np.ndarray
    D1: np.ndarray
    D2: np.ndarray

    @property
    def n(self):
        return len(self.F)

    # named blocks (t | x | v split of the base axis)
    @property
    def F_t(self):
        return self.D1[:, 0]

    @property
    def F_x(self):
        return self.D1[:, 1:1 + self.n]

    @property
    def F_v(self):
        return self.D1[:, 1 + self.n:]

    @property
    def F_vv(self):
        return self.D2[:, 1 + self.n:, 1 + self.n:]

    @property
    def F_xv(self):
        return self.D2[:, 1:1 + self.n, 1 + self.n:]

    @property
    def F_tv(self):
        return self.D2[:, 0, 1 + self.n:]

    def env(self, vars) -> dict:
        js = jet_space(vars)
        out = self.point.env(vars)
        for i in range(self.n):
            out[js.values[i]] = float(self.F[i])
            for c, d in enumerate(js.dirs):
                out[js.first[(i, d)]] = float(self.D1[i, c])
            for c1, d1 in enumerate(js.dirs):
                for c2 in range(c1, len(js.dirs)):
                    out[js.second[(i, d1, js.dirs[c2])]] = float(self.D2[i, c1, c2])
        return out


@dataclass(frozen=True)
class CurvatureValue:
    """Value of the curvature mapping: y_P (n x n) and y_T (n x n x n,
    antisymmetric in the last two axes)."""

    y_P: np.ndarray
    y_T: np.ndarray


def jet2_of(s: SodeSystem, p: JetPoint1) -> SodeJet2:
    """All derivatives of F through order two, evaluated at p."""
    n = s.n
    coords = s.coords
    env = p.env(s.vars)
    values = [env[name] for name in s.vars.names]
    F = np.zeros(n)
    D1 = np.zeros((n, 2 * n + 1))
    D2 = np.zeros((n, 2 * n + 1, 2 * n + 1))
    for i in range(n):
        F[i] = compile_expr(s.F[i], s.vars.names)(values)
        for c1, d1 in enumerate(coords):
            first = _diff(s.F[i], d1)
            D1[i, c1] = compile_expr(first, s.vars.names)(values)
            for c2 in range(c1, len(coords)):
                val = compile_expr(_diff(first, coords[c2]), s.vars.names)(values)
                D2[i, c1, c2] = D2[i, c2, c1] = val
    return SodeJet2(point=p, F=F, D1=D1, D2=D2)


# --------------------------------------------------------------------------
# curvature mapping
# --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def curvature_mapping_exprs(vars):
    """Symbolic y-formulas over the jet coordinates; writing a[i,c] and
    a[i,c,d] for the first and second derivative coordinates of a_i:

    y_P[i][a] = -a[i,t,v_a]/2 - v^h a[i,x_h,v_a]/2 - a_h a[i,v_h,v_a]/2
                + a[i,x_a] + a[k,v_a] a[i,v_k]/4
    y_T[k][a][b] = -a[k,x_a,v_b]/2 + a[k,x_b,v_a]/2
                   - a[h,v_a] a[k,v_h,v_b]/4 + a[h,v_b] a[k,v_h,v_a]/4

    Composed with the jet of a system these give exactly (-P, -T)."""
    js = jet_space(vars)
    n = js.n
    t, xs, vs = js.dirs[0], js.dirs[1:1 + n], js.dirs[1 + n:]
    aval = [var(js.values[i]) for i in range(n)]

    def a1(i, d):
        return var(js.first[(i, d)])

    def a2(i, d1, d2):
        return var(js.second_name(i, d1, d2))

    y_P = expr_array((n, n))
    for i in range(n):
        for a in range(n):
            y_P[i, a] = add(
                mul(-HALF, a2(i, t, vs[a])),
                *[mul(-HALF, var(vs[h]), a2(i, xs[h], vs[a])) for h in range(n)],
                *[mul(-HALF, aval[h], a2(i, vs[h], vs[a])) for h in range(n)],
                a1(i, xs[a]),
                *[mul(QUARTER, a1(k, vs[a]), a1(i, vs[k])) for k in range(n)])
    y_T = expr_array((n, n, n))
    for k in range(n):
        for a in range(n):
            for b in range(a + 1, n):
                val = add(
                    mul(-HALF, a2(k, xs[a], vs[b])),
                    mul(HALF, a2(k, xs[b], vs[a])),
                    *[mul(-QUARTER, a1(h, vs[a]), a2(k, vs[h], vs[b]))
                      for h in range(n)],
                    *[mul(QUARTER, a1(h, vs[b]), a2(k, vs[h], vs[a]))
                      for h in range(n)])
                y_T[k, a, b] = val
                y_T[k, b, a] = mul(-1, val)
    return y_P, y_T


def curvature_mapping(j2: SodeJet2, vars=None) -> CurvatureValue:
    """Evaluate the curvature mapping at a 2-jet."""
    n = j2.n
    from .expressions import VarSet
    vars = vars or VarSet.default(n)
    js = jet_space(vars)
    y_P, y_T = curvature_mapping_exprs(vars)
    env = j2.env(vars)
    values = [env[name] for name in js.all_coords]
    return CurvatureValue(
        y_P=eval_array(y_P, js.all_coords, values),
        y_T=eval_array(y_T, js.all_coords, values))


def jet_substitution(s: SodeSystem) -> dict:
    """Map jet coordinates to the concrete derivative expressions of s;
    composing the y-formulas with this map gives (-P, -T) symbolically."""
    js = jet_space(s.vars)
    out = {}
    for i in range(s.n):
        out[js.values[i]] = s.F[i]
        for d in js.dirs:
            out[js.first[(i, d)]] = _diff(s.F[i], d)
        for (k, d1, d2), name in js.second.items():
            if k == i:
                out[name] = _diff(_diff(s.F[i], d1), d2)
    return out


# --------------------------------------------------------------------------
# prolongation of vertical fields
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProlongedField:
    """Second-level prolongation of u^i(t, x) d/dx^i: coefficient expressions
    over the jet coordinates, keyed by target coordinate name."""

    vars: object
    u: tuple
    components: dict

    def coefficient_vector(self, order):
        out = expr_array(len(order))
        for k, name in enumerate(order):
            out[k] = self.components.get(name, ZERO)
        return out


class UJet:
    """Placeholder names for the derivatives of a vertical field u^i(t, x)
    through order 4 (the coefficient recursion never needs more)."""

    def __init__(self, vars, order=4):
        self.vars = vars
        self.order = order
        base = (vars.time,) + tuple(vars.positions)
        self.names = []
        self.index = {}
        for i in range(vars.n):
            for k in range(order + 1):
                for combo in itertools.combinations_with_replacement(base, k):
                    name = f"u{i + 1}" + ("_" + "".join(combo) if combo else "")
                    self.index[(i, combo)] = name
                    self.names.append(name)
        # derivative chain: placeholder -> placeholder, per base direction
        self.chain = {}
        for (i, combo), name in self.index.items():
            if len(combo) >= order:
                continue
            for d in base:
                nxt = tuple(sorted(combo + (d,), key=base.index))
                self.chain.setdefault(name, {})[d] = self.index[(i, nxt)]

    def placeholder(self, i, combo=()):
        return var(self.index[(i, combo)])

    def values_for(self, u, env):
        """Numeric placeholder values for a concrete field at a base point."""
        out = []
        for i in range(self.vars.n):
            for k in range(self.order + 1):
                base = (self.vars.time,) + tuple(self.vars.positions)
                for combo in itertools.combinations_with_replacement(base, k):
                    e = u[i]
                    for d in combo:
                        e = _diff(e, d)
                    out.append(evaluate(e, env))
        return out

    def substitution_for(self, u):
        """Placeholder -> derivative expression of a concrete field."""
        out = {}
        base = (self.vars.time,) + tuple(self.vars.positions)
        for (i, combo), name in self.index.items():
            e = u[i]
            for d in combo:
                e = _diff(e, d)
            out[name] = e
        return out


@lru_cache(maxsize=None)
def generic_prolongation(vars):
    """Coefficient expressions of the prolonged field over (jet coordinates,
    u-derivative placeholders): built once by the total-derivative recursion
    and specialised per field by substitution or numeric placeholder values.

        w_{alpha beta} = D_beta(w_alpha) - a_{x_b alpha} du^b/dbeta
                                         - a_{v_b alpha} dv^b/dbeta
    """
    js = jet_space(vars)
    ujet = UJet(vars)
    n = js.n
    t, xs, vs = js.dirs[0], js.dirs[1:1 + n], js.dirs[1 + n:]

    def D(f, d):
        """Total derivative: base partial + jet chain + placeholder chain.
        Placeholders iterated in sorted order so the term order (and hence
        float rounding downstream) is independent of hash seeding."""
        terms = [_diff(f, d)]
        for i in range(n):
            terms.append(mul(var(js.first[(i, d)]), _diff(f, js.values[i])))
            for e in js.dirs:
                terms.append(mul(var(js.second_name(i, e, d)),
                                 _diff(f, js.first[(i, e)])))
        for name in sorted(free_variables(f)):
            if name in ujet.chain and d in ujet.chain[name]:
                terms.append(mul(var(ujet.chain[name][d]), _diff(f, name)))
        return add(*terms)

    comp = {}
    u = [ujet.placeholder(i) for i in range(n)]
    v_comp = []
    for i in range(n):
        comp[xs[i]] = u[i]
        vi = add(ujet.placeholder(i, (t,)),
                 *[mul(ujet.placeholder(i, (xs[h],)), var(vs[h]))
                   for h in range(n)])
        comp[vs[i]] = vi
        v_comp.append(vi)

    w = []
    for i in range(n):
        wi = add(
            ujet.placeholder(i, (t, t)),
            *[mul(2, ujet.placeholder(i, tuple(sorted((t, xs[h]),
                                                      key=js.base.index))),
                  var(vs[h])) for h in range(n)],
            *[mul(ujet.placeholder(i, tuple(sorted((xs[h], xs[k]),
                                                   key=js.base.index))),
                  var(vs[h]), var(vs[k])) for h in range(n) for k in range(n)],
            *[mul(ujet.placeholder(i, (xs[h],)), var(js.values[h]))
              for h in range(n)])
        comp[js.values[i]] = wi
        w.append(wi)

    def correction(i, alpha, beta):
        terms = []
        for b in range(n):
            du = D(u[b], beta)
            if du is not ZERO:
                name = js.second_name(i, alpha, xs[b])
                terms.append(mul(-1, var(name), du))
            dv = D(v_comp[b], beta)
            if dv is not ZERO:
                name = js.second_name(i, alpha, vs[b])
                terms.append(mul(-1, var(name), dv))
        return terms

    def correction1(i, beta):
        terms = []
        for b in range(n):
            du = D(u[b], beta)
            if du is not ZERO:
                terms.append(mul(-1, var(js.first[(i, xs[b])]), du))
            dv = D(v_comp[b], beta)
            if dv is not ZERO:
                terms.append(mul(-1, var(js.first[(i, vs[b])]), dv))
        return terms

    w1 = {}
    for i in range(n):
        for d in js.dirs:
            w1[(i, d)] = add(D(w[i], d), *correction1(i, d))
            comp[js.first[(i, d)]] = w1[(i, d)]

    for i in range(n):
        for c1, d1 in enumerate(js.dirs):
            for d2 in js.dirs[c1:]:
                comp[js.second[(i, d1, d2)]] = add(D(w1[(i, d1)], d2),
                                                   *correction(i, d1, d2))
    return ujet, comp


def prolong_vertical_field(u, vars) -> ProlongedField:
    """Coefficients of the prolonged field for a concrete u (expressions over
    (t, positions)): the generic recursion specialised by substitution."""
    js = jet_space(vars)
    allowed = {js.dirs[0], *js.dirs[1:1 + js.n]}
    for ui in u:
        extra = free_variables(ui) - allowed
        if extra:
            raise ValueError(f"vertical fields depend on (t, x) only: {sorted(extra)}")
    ujet, generic = generic_prolongation(vars)
    mapping = {name: e for name, e in ujet.substitution_for(u).items()}
    comp = {name: substitute(e, mapping) for name, e in generic.items()}
    return ProlongedField(vars=vars, u=tuple(u), components=comp)


@lru_cache(maxsize=None)
def _equivariance_lhs_exprs(vars):
    """Directional derivatives of the y-formulas along the generic prolonged
    field, as expressions over (jet coordinates, u placeholders)."""
    js = jet_space(vars)
    ujet, generic = generic_prolongation(vars)
    y_P, y_T = curvature_mapping_exprs(vars)

    def field_apply(y):
        terms = []
        for name in js.all_coords:
            cf = generic.get(name)
            if cf is None or cf is ZERO:
                continue
            dy = _diff(as_expr(y), name)
            if dy is not ZERO:
                terms.append(mul(cf, dy))
        return add(*terms)

    n = js.n
    lhs_P = expr_array((n, n))
    lhs_T = expr_array((n, n, n))
    for i in range(n):
        for j in range(n):
            lhs_P[i, j] = field_apply(y_P[i, j])
            for k in range(n):
                lhs_T[i, j, k] = field_apply(y_T[i, j, k])
    return ujet, lhs_P, lhs_T


def infinitesimal_equivariance(s: SodeSystem, u, p: JetPoint1):
    """Residual pair of the two infinitesimal equivariance laws at the jet
    of s at p: the prolonged field applied to y_P[i][j] must equal
    u^i_{,r} y_P[r][j] - u^r_{,j} y_P[i][r], and applied to y_T[k][i][j] it
    must equal u^k_{,r} y_T[r][i][j] - u^r_{,i} y_T[k][r][j]
    - u^r_{,j} y_T[k][i][r].  Both laws are the derivative of the finite
    transformation (conjugation on the upper slot, inverse-Jacobian action
    on each lower slot); they are what the chain rule produces and what the
    order-of-convergence test against finite pushes confirms."""
    n = s.n
    js = jet_space(s.vars)
    ujet, lhs_P, lhs_T = _equivariance_lhs_exprs(s.vars)
    j2 = jet2_of(s, p)
    env = j2.env(s.vars)
    base_env = p.env(s.vars)
    names = js.all_coords + tuple(ujet.names)
    values = [env[name] for name in js.all_coords] \
        + ujet.values_for(u, base_env)

    def field_apply(lhs):
        return compile_expr(as_expr(lhs), names)(values)

    yv = curvature_mapping(j2, s.vars)
    u_x = np.zeros((n, n))
    for i in range(n):
        for r in range(n):
            u_x[i, r] = evaluate(_diff(u[i], s.vars.positions[r]), base_env)

    res_p = 0.0
    for i in range(n):
        for j in range(n):
            lhs = field_apply(lhs_P[i, j])
            rhs = sum(u_x[i, r] * yv.y_P[r, j] - u_x[r, j] * yv.y_P[i, r]
                      for r in range(n))
            res_p = max(res_p, abs(lhs - rhs))

    res_t = 0.0
    for k in range(n):
        for i in range(n):
            for j in range(i + 1, n):
                lhs = field_apply(lhs_T[k, i, j])
                rhs = sum(u_x[k, r] * yv.y_T[r, i, j]
                          - u_x[r, i] * yv.y_T[k, r, j]
                          - u_x[r, j] * yv.y_T[k, i, r]
                          for r in range(n))
                res_t = max(res_t, abs(lhs - rhs))
    return res_p, res_t


# --------------------------------------------------------------------------
# ranks
# --------------------------------------------------------------------------

def random_polynomial_field(vars, seed, degree=4):
    """Random polynomial u^i(t, x) of total degree <= degree."""
    rng = np.random.default_rng(seed)
    names = (vars.time,) + tuple(vars.positions)
    monos = [()]
    for _ in range(degree):
        monos = monos + [m + (nm,) for m in monos for nm in names]
    monos = sorted({tuple(sorted(m)) for m in monos})
    u = []
    for _ in range(vars.n):
        terms = [mul(const(Fraction(int(rng.integers(-8, 9)), 8)),
                     *[var(nm) for nm in m]) for m in monos]
        u.append(add(*terms))
    return tuple(u)


def _rank_with_values(rows, rel_tol=1e-8):
    m = np.vstack(rows)
    svals = np.linalg.svd(m, compute_uv=False)
    if svals.size == 0 or svals[0] < 1e-12:
        return 0, svals
    return int(np.sum(svals > rel_tol * svals[0])), svals


def distribution_span(n, s: SodeSystem, p: JetPoint1, sample_count=None,
                      seed=2024, degree=4):
    """Singular values of the matrix whose rows are full coefficient vectors
    of prolonged vertical fields at the jet of s at p (the t-component is
    identically zero and omitted).  Fields are random polynomials of the
    given degree; their 4-jets at the base point enter the precompiled
    generic coefficients."""
    js = jet_space(s.vars)
    order = js.all_coords[1:]  # drop t
    if sample_count is None:
        sample_count = len(order) + 10
    ujet, generic = generic_prolongation(s.vars)
    names = js.all_coords + tuple(ujet.names)
    env = jet2_of(s, p).env(s.vars)
    jet_values = [env[name] for name in js.all_coords]
    base_env = p.env(s.vars)
    fns = [compile_expr(as_expr(generic.get(name, ZERO)), names)
           for name in order]
    rows = []
    for k in range(sample_count):
        u = random_polynomial_field(s.vars, seed=seed * 100003 + k, degree=degree)
        values = jet_values + ujet.values_for(u, base_env)
        rows.append(np.array([fn(values) for fn in fns], dtype=float))
    return _rank_with_values(rows)


def distribution_rank(n, s: SodeSystem, p: JetPoint1, sample_count=None,
                      seed=2024) -> int:
    rank, _ = distribution_span(n, s, p, sample_count, seed)
    return rank


def order0_distribution_rank(n, s: SodeSystem, p: JetPoint1,
                             sample_count=None, seed=2024) -> int:
    """Rank of the order-0 field components (x, v, value blocks only); equals
    3n at generic points, so order-0 invariants are functions of t alone."""
    js = jet_space(s.vars)
    order = js.base[1:] + js.values
    if sample_count is None:
        sample_count = len(order) + 8
    ujet, generic = generic_prolongation(s.vars)
    names = js.all_coords + tuple(ujet.names)
    env = jet2_of(s, p).env(s.vars)
    jet_values = [env[name] for name in js.all_coords]
    base_env = p.env(s.vars)
    fns = [compile_expr(as_expr(generic.get(name, ZERO)), names)
           for name in order]
    rows = []
    for k in range(sample_count):
        u = random_polynomial_field(s.vars, seed=seed * 7919 + k, degree=2)
        values = jet_values + ujet.values_for(u, base_env)
        rows.append(np.array([fn(values) for fn in fns], dtype=float))
    rank, _ = _rank_with_values(rows)
    return rank


def curvature_kernel_dim(s: SodeSystem, p: JetPoint1, rel_tol=1e-8) -> int:
    """Kernel dimension of the curvature mapping differential at the jet of
    s at p: number of fiber coordinates minus the rank of the y-Jacobian."""
    js = jet_space(s.vars)
    n = s.n
    y_P, y_T = curvature_mapping_exprs(s.vars)
    ys = [y_P[i, j] for i in range(n) for j in range(n)]
    ys += [y_T[k, i, j] for k in range(n) for i in range(n)
           for j in range(i + 1, n)]
    env = jet2_of(s, p).env(s.vars)
    values = [env[name] for name in js.all_coords]
    rows = []
    for y in ys:
        grad = expr_array(len(js.fiber))
        for c, name in enumerate(js.fiber):
            grad[c] = _diff(as_expr(y), name)
        rows.append(eval_array(grad, js.all_coords, values))
    rank, _ = _rank_with_values(rows, rel_tol)
    return len(js.fiber) - rank


# --------------------------------------------------------------------------
# vertical automorphisms
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class VerticalAutomorphism:
    """(t, x) -> (t, phi(t, x)); optional symbolic inverse psi with
    phi(t, psi(t, x)) = x."""

    vars: object
    phi: tuple
    inverse: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(self.phi))
        if self.inverse is not None:
            object.__setattr__(self, "inverse", tuple(self.inverse))
        allowed = {self.vars.time, *self.vars.positions}
        for component in self.phi + (self.inverse or ()):
            extra = free_variables(component) - allowed
            if extra:
                raise ValueError(
                    f"automorphism components depend on (t, x) only: {sorted(extra)}")

    @property
    def n(self):
        return len(self.phi)

    def jacobian(self):
        n = self.n
        J = expr_array((n, n))
        for h in range(n):
            for i in range(n):
                J[h, i] = _diff(self.phi[h], self.vars.positions[i])
        return J

    def validate(self, points, det_tol=1e-8, roundtrip_tol=1e-10):
        J = self.jacobian()
        for p in points:
            env = p.env(self.vars)
            values = [env[name] for name in self.vars.names]
            jm = eval_array(J, self.vars.names, values)
            if abs(np.linalg.det(jm)) < det_tol:
                raise ValueError(f"singular Jacobian at {p}")
            if self.inverse is not None:
                pushed = [evaluate(c, env) for c in self.phi]
                env2 = dict(env)
                env2.update(zip(self.vars.positions, pushed))
                back = [evaluate(c, env2) for c in self.inverse]
                if max(abs(b - xi) for b, xi in zip(back, p.x)) > roundtrip_tol:
                    raise ValueError(f"inverse fails round-trip at {p}")

    def inverted(self) -> "VerticalAutomorphism":
        if self.inverse is None:
            raise MissingInverse("no symbolic inverse available")
        return VerticalAutomorphism(vars=self.vars, phi=self.inverse,
                                    inverse=self.phi)


def identity_automorphism(vars) -> VerticalAutomorphism:
    xs = tuple(var(p) for p in vars.positions)
    return VerticalAutomorphism(vars=vars, phi=xs, inverse=xs)


def compose(outer: VerticalAutomorphism,
            inner: VerticalAutomorphism) -> VerticalAutomorphism:
    """outer after inner; inverses compose in the opposite order."""
    sub = dict(zip(outer.vars.positions, inner.phi))
    phi = tuple(substitute(c, sub) for c in outer.phi)
    inverse = None
    if outer.inverse is not None and inner.inverse is not None:
        sub_inv = dict(zip(inner.vars.positions, outer.inverse))
        inverse = tuple(substitute(c, sub_inv) for c in inner.inverse)
    return VerticalAutomorphism(vars=outer.vars, phi=phi, inverse=inverse)


def random_automorphism(vars, seed, scale=Fraction(1, 4)) -> VerticalAutomorphism:
    """Composition of two unipotent triangular polynomial shears (each
    component shifts x^i by a degree-<=2 polynomial in t and the earlier /
    later coordinates).  Triangular maps invert exactly by back-substitution,
    so the result is a global polynomial automorphism with a polynomial
    inverse and Jacobian determinant identically 1."""
    rng = np.random.default_rng(seed)
    n = vars.n
    scale = Fraction(scale)

    def poly(names):
        monos = [()]
        for _ in range(2):
            monos = monos + [m + (nm,) for m in monos for nm in names]
        monos = sorted({tuple(sorted(m)) for m in monos})
        terms = [mul(const(scale * Fraction(int(rng.integers(-4, 5)), 4)),
                     *[var(nm) for nm in m]) for m in monos]
        return add(*terms)

    def shear(lower):
        order = range(n) if lower else range(n - 1, -1, -1)
        phi = [None] * n
        shift = {}
        for i in order:
            earlier = [vars.positions[j] for j in (range(i) if lower
                                                   else range(i + 1, n))]
            shift[i] = poly((vars.time,) + tuple(earlier))
            phi[i] = add(var(vars.positions[i]), shift[i])
        # back-substitution: psi^i = x^i - shift_i(t, psi^earlier)
        psi = [None] * n
        for i in order:
            sub = {vars.positions[j]: psi[j]
                   for j in (range(i) if lower else range(i + 1, n))}
            psi[i] = add(var(vars.positions[i]),
                         mul(-1, substitute(shift[i], sub)))
        return VerticalAutomorphism(vars=vars, phi=tuple(phi),
                                    inverse=tuple(psi))

    return compose(shear(lower=False), shear(lower=True))


# --------------------------------------------------------------------------
# prolongation of automorphisms and pushed systems
# --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _prolong1_exprs(phi_key):
    auto, = phi_key
    vars = auto.vars
    n = auto.n
    out = expr_array(2 * n + 1)
    out[0] = var(vars.time)
    for h in range(n):
        out[1 + h] = auto.phi[h]
        out[1 + n + h] = add(
            _diff(auto.phi[h], vars.time),
            *[mul(_diff(auto.phi[h], vars.positions[i]), var(vars.velocities[i]))
              for i in range(n)])
    return out


def prolong1_map(auto: VerticalAutomorphism) -> np.ndarray:
    """Symbolic components of the induced 1-jet map
    (t, x, v) -> (t, phi, phi_t + phi_x v)."""
    return _prolong1_exprs((auto,))


def prolong1(auto: VerticalAutomorphism, p: JetPoint1) -> JetPoint1:
    env = p.env(auto.vars)
    m = prolong1_map(auto)
    vals = [evaluate(as_expr(c), env) for c in m]
    n = auto.n
    return JetPoint1(vals[0], tuple(vals[1:1 + n]), tuple(vals[1 + n:]))


@lru_cache(maxsize=None)
def _push_value_exprs(key):
    auto, s = key
    vars = s.vars
    n = s.n
    t, xs, vs = vars.time, vars.positions, vars.velocities
    out = []
    for h in range(n):
        phi_h = auto.phi[h]
        out.append(add(
            _diff(_diff(phi_h, t), t),
            *[mul(2, _diff(_diff(phi_h, t), xs[i]), var(vs[i])) for i in range(n)],
            *[mul(_diff(_diff(phi_h, xs[i]), xs[j]), var(vs[i]), var(vs[j]))
              for i in range(n) for j in range(n)],
            *[mul(_diff(phi_h, xs[i]), s.F[i]) for i in range(n)]))
    return tuple(out)


def push_value_exprs(auto: VerticalAutomorphism, s: SodeSystem) -> tuple:
    """G^h(t, x, v): the pushed right-hand side composed with the 1-jet map,
    phi_tt + 2 phi_tx v + phi_xx v v + phi_x F."""
    return _push_value_exprs((auto, s))


def push_sode_value(auto: VerticalAutomorphism, s: SodeSystem,
                    p: JetPoint1) -> np.ndarray:
    """Value of the pushed system at the pushed point; no inverse needed."""
    env = p.env(s.vars)
    return np.array([evaluate(g, env) for g in push_value_exprs(auto, s)])


def push_sode_symbolic(auto: VerticalAutomorphism, s: SodeSystem) -> SodeSystem:
    """The pushed system as expressions, by substituting the inverse jet map
    into the pushed values."""
    if auto.inverse is None:
        raise MissingInverse("symbolic push needs the inverse components")
    vars = s.vars
    n = s.n
    psi = auto.inverse
    sub = {vars.positions[i]: psi[i] for i in range(n)}
    for i in range(n):
        sub[vars.velocities[i]] = add(
            _diff(psi[i], vars.time),
            *[mul(_diff(psi[i], vars.positions[j]), var(vars.velocities[j]))
              for j in range(n)])
    F = tuple(substitute(g, sub) for g in push_value_exprs(auto, s))
    return SodeSystem(vars=vars, F=F)


@lru_cache(maxsize=None)
def _chain_rule_exprs(key):
    auto, s = key
    coords = s.coords
    G = push_value_exprs(auto, s)
    M = prolong1_map(auto)
    dG = tuple(tuple(_diff(g, c) for c in coords) for g in G)
    hG = tuple(tuple(tuple(_diff(dg, c2) for c2 in coords) for dg in row)
               for row in dG)
    dM = tuple(tuple(_diff(as_expr(m), c) for c in coords) for m in M)
    hM = tuple(tuple(tuple(_diff(dm, c2) for c2 in coords) for dm in row)
               for row in dM)
    return G, M, dG, hG, dM, hM


def pushed_jet2(auto: VerticalAutomorphism, s: SodeSystem,
                p: JetPoint1) -> SodeJet2:
    """2-jet of the pushed system at the pushed point, recovered by inverting
    the chain rule numerically (the 1-jet map's Jacobian is inverted as a
    matrix at the point, so no symbolic inverse of phi is required)."""
    n = s.n
    names = s.vars.names
    env = p.env(s.vars)
    values = [env[name] for name in names]
    G, M, dG, hG, dM, hM = _chain_rule_exprs((auto, s))

    def ev(e):
        return compile_expr(as_expr(e), names)(values)

    dim = 2 * n + 1
    g_val = np.array([ev(g) for g in G])
    dg = np.array([[ev(dG[h][c]) for c in range(dim)] for h in range(n)])
    hg = np.array([[[ev(hG[h][c1][c2]) for c2 in range(dim)]
                    for c1 in range(dim)] for h in range(n)])
    jmat = np.array([[ev(dM[r][c]) for c in range(dim)] for r in range(dim)])
    hm = np.array([[[ev(hM[r][c1][c2]) for c2 in range(dim)]
                    for c1 in range(dim)] for r in range(dim)])

    jinv = np.linalg.inv(jmat)
    d1 = dg @ jinv
    d2 = np.zeros((n, dim, dim))
    for h in range(n):
        corrected = hg[h] - np.tensordot(d1[h], hm, axes=(0, 0))
        d2[h] = jinv.T @ corrected @ jinv
        d2[h] = (d2[h] + d2[h].T) / 2.0

    m_val = np.array([ev(m) for m in M])
    p_prime = JetPoint1(m_val[0], tuple(m_val[1:1 + n]), tuple(m_val[1 + n:]))
    return SodeJet2(point=p_prime, F=g_val, D1=d1, D2=d2)


# --------------------------------------------------------------------------
# functoriality checks
# --------------------------------------------------------------------------

def _frame_matrices_from_jet(j2: SodeJet2):
    """Frame and coframe at the jet's base point from its first derivatives."""
    n = j2.n
    dim = 2 * n + 1
    W = 0.5 * j2.F_v
    frame = np.eye(dim)
    frame[0, 0] = 1.0
    frame[1:1 + n, 0] = j2.point.v
    frame[1 + n:, 0] = j2.F
    frame[1 + n:, 1:1 + n] = W
    coframe = np.eye(dim)
    coframe[1:1 + n, 0] = -np.asarray(j2.point.v)
    coframe[1 + n:, 0] = -j2.F + W @ np.asarray(j2.point.v)
    coframe[1 + n:, 1:1 + n] = -W
    return frame, coframe


def _torsion_value(P, T, Xf, Yf):
    """Torsion on adapted-frame component vectors from the (P, T) blocks."""
    n = P.shape[0]
    out = np.zeros(2 * n + 1)
    for h in range(n):
        acc = 0.0
        for j in range(n):
            acc -= P[h, j] * (Xf[0] * Yf[1 + j] - Yf[0] * Xf[1 + j])
        for i in range(n):
            for j in range(i + 1, n):
                acc -= T[h, i, j] * (Xf[1 + i] * Yf[1 + j] - Xf[1 + j] * Yf[1 + i])
        out[1 + n + h] = acc
    for i in range(n):
        out[1 + i] = Xf[0] * Yf[1 + n + i] - Yf[0] * Xf[1 + n + i]
    return out


def _fd_push_derivative(auto, s, p, jx_inv, h=1e-4):
    """d(pushed F)/dV at the pushed point by central differences along
    curves q_eps whose image moves only the V coordinate, with one
    Richardson step."""
    n = s.n

    def value(v):
        q = JetPoint1(p.t, p.x, tuple(v))
        return push_sode_value(auto, s, q)

    base_v = np.asarray(p.v)
    out = np.zeros((n, n))
    for i in range(n):
        step = jx_inv[:, i]

        def central(eps):
            return (value(base_v + eps * step) - value(base_v - eps * step)) \
                / (2.0 * eps)

        out[:, i] = (4.0 * central(h / 2.0) - central(h)) / 3.0
    return out


def verify_functoriality(auto: VerticalAutomorphism, s: SodeSystem,
                         points) -> dict:
    """Residual maxima over matched point pairs for: the first and second
    velocity-derivative transformation laws, the three frame pushforward
    laws, torsion equivariance on frame pairs, the curvature-mapping
    equivariance (conjugation of P, two-cotangent transformation of T) and
    invariance of the Kosambi characteristic polynomial."""
    from .sode import splitting_curvature
    n = s.n
    dim = 2 * n + 1
    vars = s.vars
    jac = auto.jacobian()
    sc = splitting_curvature(s, check="none")

    res = {k: 0.0 for k in ("eq_partialF", "eq_Partial2F", "frame_push",
                            "torsion_equivariance", "curvature_equivariance",
                            "kosambi_match")}
    for p in points:
        env = p.env(vars)
        values = [env[name] for name in vars.names]
        jx = eval_array(jac, vars.names, values)
        jx_inv = np.linalg.inv(jx)
        j2 = jet2_of(s, p)
        pushed = pushed_jet2(auto, s, p)

        # (i) first derivative law: fd oracle against the closed formula
        fd = _fd_push_derivative(auto, s, p, jx_inv)
        flow_phi = np.zeros((n, n))
        for h in range(n):
            for b in range(n):
                d_phi = _diff(auto.phi[h], vars.positions[b])
                flow_phi[h, b] = evaluate(
                    add(_diff(d_phi, vars.time),
                        *[mul(_diff(d_phi, vars.positions[r]),
                              var(vars.velocities[r])) for r in range(n)]),
                    env)
        rhs1 = 2.0 * flow_phi @ jx_inv + jx @ j2.F_v @ jx_inv
        res["eq_partialF"] = max(res["eq_partialF"],
                                 float(np.max(np.abs(fd - rhs1))))

        # (ii) second derivative law against the chain-rule jet
        lhs2 = pushed.F_vv
        phi_xx = np.zeros((n, n, n))
        for h in range(n):
            for a in range(n):
                for b in range(n):
                    phi_xx[h, a, b] = evaluate(
                        _diff(_diff(auto.phi[h], vars.positions[a]),
                              vars.positions[b]), env)
        # second v-derivative of the pushed-value expression: the quadratic
        # phi_xx v v term contributes twice
        rhs2 = 2.0 * np.einsum("hab,ai,bj->hij", phi_xx, jx_inv, jx_inv) \
            + np.einsum("ha,abc,cj,bi->hij", jx, j2.F_vv, jx_inv, jx_inv)
        res["eq_Partial2F"] = max(res["eq_Partial2F"],
                                  float(np.max(np.abs(lhs2 - rhs2))))

        # (iii) frame pushforwards
        jmap = np.array(
            [[compile_expr(as_expr(_diff(as_expr(m), c)), vars.names)(values)
              for c in s.coords] for m in prolong1_map(auto)])
        frame_p, _ = _frame_matrices_from_jet(j2)
        frame_q, coframe_q = _frame_matrices_from_jet(pushed)
        worst = float(np.max(np.abs(jmap @ frame_p[:, 0] - frame_q[:, 0])))
        for i in range(n):
            target = sum(jx[h, i] * frame_q[:, 1 + h] for h in range(n))
            worst = max(worst, float(np.max(np.abs(
                jmap @ frame_p[:, 1 + i] - target))))
            target = sum(jx[h, i] * frame_q[:, 1 + n + h] for h in range(n))
            worst = max(worst, float(np.max(np.abs(
                jmap @ frame_p[:, 1 + n + i] - target))))
        res["frame_push"] = max(res["frame_push"], worst)

        # pushed splitting curvature from the pushed jet
        yv = curvature_mapping(pushed, vars)
        P_push, T_push = -yv.y_P, -yv.y_T
        P_here = eval_array(sc.P, vars.names, values)
        T_here = eval_array(sc.T, vars.names, values)

        # (iv) torsion equivariance on frame pairs
        worst = 0.0
        for a in range(dim):
            for b in range(a + 1, dim):
                val = _torsion_value(P_here, T_here, np.eye(dim)[a],
                                     np.eye(dim)[b])
                rhs = jmap @ (frame_p @ val)
                xa = coframe_q @ (jmap @ frame_p[:, a])
                xb = coframe_q @ (jmap @ frame_p[:, b])
                lhs = frame_q @ _torsion_value(P_push, T_push, xa, xb)
                worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        res["torsion_equivariance"] = max(res["torsion_equivariance"], worst)

        # (v) curvature-mapping equivariance
        conj = jx @ P_here @ jx_inv
        worst = float(np.max(np.abs(P_push - conj)))
        t_conj = np.einsum("mk,kab,ac,bd->mcd", jx, T_here, jx_inv, jx_inv)
        worst = max(worst, float(np.max(np.abs(T_push - t_conj))))
        res["curvature_equivariance"] = max(res["curvature_equivariance"], worst)

        here = np.poly(-P_here)
        there = np.poly(-P_push)
        res["kosambi_match"] = max(res["kosambi_match"],
                                   float(np.max(np.abs(here - there))))
    return res

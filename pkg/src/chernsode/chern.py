"""The Chern connection attached to a SODE.

Connection coefficients in the adapted frame (the nine-rule table is encoded
as frame Christoffels), covariant differentiation with Leibniz terms, the
torsion and curvature component arrays (P, T, A, B, R) by closed formulas,
and definition-based recomputations of both tensors used as oracles:
Tor(X,Y) = D_X Y - D_Y X - [X,Y] and R(X,Y) = D_X D_Y - D_Y D_X - D_[X,Y].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expressions import ZERO, add, mul
from .sode import (
    HALF, OracleMismatch, SodeSystem, as_expr,
    bracket, coframe_symbolic, directional, endomorphism_E, expr_array,
    f_v, f_vv, f_vvv, frame_symbolic, lie_derivative_J, max_abs,
    sample_points, splitting_curvature, zero_symbolically, _diff,
)

__all__ = [
    "ConnectionData", "CurvatureComponents", "TorsionTensor",
    "connection_data", "covariant_derivative", "torsion", "curvature",
    "verify_characterization", "verify_structure_identities",
]


@dataclass(frozen=True)
class ConnectionData:
    """W[i][j] = (1/2) dF^i/dv^j and V[h][i][k] = (1/2) d2F^h/dv^i dv^k."""

    W: np.ndarray
    V: np.ndarray


@dataclass(frozen=True)
class TorsionTensor:
    """Torsion blocks in the adapted coframe: dt^omega^j coefficients are
    -P^h_j, omega^i^omega^j coefficients are -T^h_{ij} and the dt^varpi^i
    block carries the +1 identity onto X_i."""

    P: np.ndarray
    T: np.ndarray

    @property
    def p_block(self):
        return -np.asarray(self.P, dtype=object)

    @property
    def t_block(self):
        return -np.asarray(self.T, dtype=object)

    identity_block = 1

    def apply(self, X, Y):
        """Value on two vectors given in adapted-frame components."""
        n = self.P.shape[0]
        out = [ZERO] * (2 * n + 1)
        for h in range(n):
            terms = []
            for j in range(n):
                pair = add(mul(X[0], Y[1 + j]), mul(-1, mul(Y[0], X[1 + j])))
                terms.append(mul(-1, self.P[h, j], pair))
            for i in range(n):
                for j in range(i + 1, n):
                    pair = add(mul(X[1 + i], Y[1 + j]),
                               mul(-1, mul(X[1 + j], Y[1 + i])))
                    terms.append(mul(-1, self.T[h, i, j], pair))
            out[1 + n + h] = add(*terms)
        for i in range(n):
            out[1 + i] = add(mul(X[0], Y[1 + n + i]),
                             mul(-1, mul(Y[0], X[1 + n + i])))
        arr = expr_array(2 * n + 1)
        arr[:] = out
        return arr


@dataclass(frozen=True)
class CurvatureComponents:
    """A[h][k][j]: R(X, X_j)X_k = A^h_{kj} X_h; B[h][i][j][k] (antisymmetric
    in i, j): R(X_i, X_j)X_k = B^h_{ijk} X_h; R[h][i][j][k] (symmetric in
    i, j, k): R(X_i, d/dv^j)X_k = R^h_{ijk} X_h.  The same coefficients act on
    the d/dv block."""

    A: np.ndarray
    B: np.ndarray
    R: np.ndarray


# --------------------------------------------------------------------------
# connection coefficients
# --------------------------------------------------------------------------

def connection_data(s: SodeSystem) -> ConnectionData:
    n = s.n
    W = expr_array((n, n))
    V = expr_array((n, n, n))
    for i in range(n):
        for j in range(n):
            W[i, j] = mul(HALF, f_v(s, i, j))
            for k in range(n):
                V[i, j, k] = mul(HALF, f_vv(s, i, j, k))
    return ConnectionData(W=W, V=V)


def frame_christoffels(s: SodeSystem, w_shift=0) -> np.ndarray:
    """Gamma[a, c, b]: coefficient of e_b in D_{e_a} e_c, adapted-frame basis
    (e_0, e_i, e_{n+i}).  `w_shift` adds shift*I to W (perturbation hook for
    uniqueness tests)."""
    n = s.n
    data = connection_data(s)
    gamma = expr_array((2 * n + 1, 2 * n + 1, 2 * n + 1))
    for i in range(n):
        for j in range(n):
            w = add(mul(-1, data.W[j, i]), -w_shift if i == j else 0)
            gamma[0, 1 + i, 1 + j] = w
            gamma[0, 1 + n + i, 1 + n + j] = w
            for k in range(n):
                v = mul(-1, data.V[k, i, j])
                gamma[1 + j, 1 + i, 1 + k] = v
                gamma[1 + j, 1 + n + i, 1 + n + k] = v
    return gamma


def covariant_derivative(s: SodeSystem, X, Y, gamma=None) -> np.ndarray:
    """D_X Y for X, Y in adapted-frame components with Expr coefficients."""
    n = s.n
    if gamma is None:
        gamma = frame_christoffels(s)
    frame = frame_symbolic(s)
    coords = s.coords
    out = expr_array(2 * n + 1)
    for b in range(2 * n + 1):
        terms = []
        for a in range(2 * n + 1):
            xa = as_expr(X[a])
            if xa is ZERO:
                continue
            leibniz = directional(frame[:, a], coords, as_expr(Y[b]))
            christoffel = add(*[mul(as_expr(Y[c]), gamma[a, c, b])
                                for c in range(2 * n + 1)])
            terms.append(mul(xa, add(leibniz, christoffel)))
        out[b] = add(*terms)
    return out


def _unit(n2, a):
    e = expr_array(n2)
    e[a] = as_expr(1)
    return e


def frame_bracket(s: SodeSystem, a, b) -> np.ndarray:
    """[e_a, e_b] expressed back in adapted-frame components."""
    frame = frame_symbolic(s)
    coords = s.coords
    br = bracket(frame[:, a], frame[:, b], coords)
    return coframe_symbolic(s) @ br


# --------------------------------------------------------------------------
# torsion
# --------------------------------------------------------------------------

def torsion_definition(s: SodeSystem, a, b, gamma=None) -> np.ndarray:
    n2 = 2 * s.n + 1
    ea, eb = _unit(n2, a), _unit(n2, b)
    t = covariant_derivative(s, ea, eb, gamma) \
        - covariant_derivative(s, eb, ea, gamma) - frame_bracket(s, a, b)
    return t


def _compare(label, got, expected, s, mode, points, tol):
    delta = np.asarray(got, dtype=object) - np.asarray(expected, dtype=object)
    if mode == "symbolic":
        bad = [idx for idx in np.ndindex(delta.shape)
               if not zero_symbolically(as_expr(delta[idx]))]
        if bad:
            raise OracleMismatch(f"{label}: nonzero at {bad[:4]}")
        return 0.0
    worst = max_abs(delta, s, points)
    if worst > tol:
        raise OracleMismatch(f"{label}: residual {worst:.3e} > {tol:g}")
    return worst


def torsion(s: SodeSystem, check="numeric", points=None, tol=1e-10,
            seed=2024) -> TorsionTensor:
    """Assemble the torsion from the splitting curvature; unless check is
    "none", recompute Tor(e_a, e_b) from the covariant derivative on every
    frame pair and compare."""
    sc = splitting_curvature(s, check="none")
    tensor = TorsionTensor(P=sc.P, T=sc.T)
    if check != "none":
        if points is None:
            points = sample_points(s.vars, 12, seed)
        n2 = 2 * s.n + 1
        for a in range(n2):
            for b in range(a + 1, n2):
                got = torsion_definition(s, a, b)
                expected = tensor.apply(_unit(n2, a), _unit(n2, b))
                _compare(f"torsion oracle pair ({a},{b})", got, expected,
                         s, check, points, tol)
    return tensor


# --------------------------------------------------------------------------
# curvature
# --------------------------------------------------------------------------

def curvature_components(s: SodeSystem) -> CurvatureComponents:
    n = s.n
    sc = splitting_curvature(s, check="none")
    A = expr_array((n, n, n))
    B = expr_array((n, n, n, n))
    R = expr_array((n, n, n, n))
    vels = s.vars.velocities
    for h in range(n):
        for k in range(n):
            for j in range(n):
                A[h, k, j] = mul(HALF, add(
                    sc.T[h, j, k],
                    mul(-1, _diff(sc.P[h, k], vels[j])),
                    mul(-1, _diff(sc.P[h, j], vels[k]))))
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    B[h, i, j, k] = mul(-1, _diff(sc.T[h, i, j], vels[k]))
                    R[h, i, j, k] = mul(HALF, f_vvv(s, h, i, j, k))
    return CurvatureComponents(A=A, B=B, R=R)


def curvature_definition(s: SodeSystem, a, b, c, gamma=None) -> np.ndarray:
    """R(e_a, e_b)e_c from the covariant derivative."""
    n2 = 2 * s.n + 1
    if gamma is None:
        gamma = frame_christoffels(s)
    ea, eb, ec = _unit(n2, a), _unit(n2, b), _unit(n2, c)
    d_b = covariant_derivative(s, eb, ec, gamma)
    d_a = covariant_derivative(s, ea, ec, gamma)
    return (covariant_derivative(s, ea, d_b, gamma)
            - covariant_derivative(s, eb, d_a, gamma)
            - covariant_derivative(s, frame_bracket(s, a, b), ec, gamma))


def _expected_curvature(comp: CurvatureComponents, n, a, b, c):
    """Pattern of the curvature table; zero outside the listed blocks and the
    same coefficient matrix on the two eigenblocks."""
    out = expr_array(2 * n + 1)
    if c == 0:
        return out

    def emit(coeffs_of_h, minus_block):
        for h in range(n):
            out[(1 if minus_block else 1 + n) + h] = coeffs_of_h[h]

    arg, on_minus = (c - 1, True) if c <= n else (c - 1 - n, False)
    if a == 0 and 1 <= b <= n:
        emit([comp.A[h, arg, b - 1] for h in range(n)], on_minus)
    elif 1 <= a <= n and 1 <= b <= n:
        emit([comp.B[h, a - 1, b - 1, arg] for h in range(n)], on_minus)
    elif 1 <= a <= n and b > n:
        emit([comp.R[h, a - 1, b - 1 - n, arg] for h in range(n)], on_minus)
    return out


def curvature(s: SodeSystem, check="numeric", points=None, tol=1e-10,
              seed=2024) -> CurvatureComponents:
    """Closed-formula (A, B, R); unless check is "none", evaluate the
    curvature of the connection on every frame triple and compare against
    the component table, including its vanishing blocks."""
    comp = curvature_components(s)
    if check != "none":
        if points is None:
            points = sample_points(s.vars, 12, seed)
        n, n2 = s.n, 2 * s.n + 1
        gamma = frame_christoffels(s)
        for a in range(n2):
            for b in range(a + 1, n2):
                for c in range(n2):
                    got = curvature_definition(s, a, b, c, gamma)
                    expected = _expected_curvature(comp, n, a, b, c)
                    _compare(f"curvature oracle ({a},{b};{c})", got, expected,
                             s, check, points, tol)
    return comp


# --------------------------------------------------------------------------
# identity suites
# --------------------------------------------------------------------------

def _tensor_covariant_residual(s, S, gamma, points):
    """max |(D_{e_a} S)(e_c)| for a (1,1)-tensor given by its adapted-frame
    matrix S[b, c] (Expr entries)."""
    n2 = 2 * s.n + 1
    frame = frame_symbolic(s)
    coords = s.coords
    worst = 0.0
    for a in range(n2):
        out = expr_array((n2, n2))
        for b in range(n2):
            for c in range(n2):
                out[b, c] = add(
                    directional(frame[:, a], coords, as_expr(S[b, c])),
                    *[mul(as_expr(S[d, c]), gamma[a, d, b]) for d in range(n2)],
                    *[mul(-1, gamma[a, c, d], as_expr(S[b, d])) for d in range(n2)])
        worst = max(worst, max_abs(out, s, points))
    return worst


def verify_characterization(s: SodeSystem, points, w_shift=0) -> dict:
    """Residuals of the four defining properties of the connection:
    (1) the dynamical flow is parallel, (2) the eigenstructure endomorphism
    L_X J is parallel, (3) the swap endomorphism is parallel, (4) the torsion
    equals the prescribed tensor.  `w_shift` perturbs the connection (for
    uniqueness checks the residual of (4) must then blow up)."""
    n2 = 2 * s.n + 1
    gamma = frame_christoffels(s, w_shift=w_shift)
    coframe = coframe_symbolic(s)
    frame = frame_symbolic(s)

    flow_frame = coframe @ frame[:, 0]
    r1 = 0.0
    for a in range(n2):
        d = covariant_derivative(s, _unit(n2, a), flow_frame, gamma)
        r1 = max(r1, max_abs(d, s, points))

    lxj = coframe @ lie_derivative_J(s) @ frame
    r2 = _tensor_covariant_residual(s, lxj, gamma, points)

    swap = coframe @ endomorphism_E(s) @ frame
    r3 = _tensor_covariant_residual(s, swap, gamma, points)

    tensor = torsion(s, check="none")
    r4 = 0.0
    for a in range(n2):
        for b in range(a + 1, n2):
            delta = torsion_definition(s, a, b, gamma) \
                - tensor.apply(_unit(n2, a), _unit(n2, b))
            r4 = max(r4, max_abs(delta, s, points))

    return {"flow_parallel": r1, "eigenstructure_parallel": r2,
            "swap_parallel": r3, "torsion_match": r4}


def verify_structure_identities(s: SodeSystem, points) -> dict:
    """Residuals of (i) 2A^h_{kj} = T^h_{jk} - dP^h_k/dv^j - dP^h_j/dv^k with
    A taken from the curvature of the connection (definition path), and
    (ii) 3T^i_{kj} = dP^i_j/dv^k - dP^i_k/dv^j."""
    n = s.n
    sc = splitting_curvature(s, check="none")
    vels = s.vars.velocities
    gamma = frame_christoffels(s)

    res_a = expr_array((n, n, n))
    for j in range(n):
        for k in range(n):
            r_def = curvature_definition(s, 0, 1 + j, 1 + k, gamma)
            for h in range(n):
                a_def = r_def[1 + h]  # coefficient on X_h
                res_a[h, k, j] = add(
                    mul(2, a_def), mul(-1, sc.T[h, j, k]),
                    _diff(sc.P[h, k], vels[j]), _diff(sc.P[h, j], vels[k]))
    eq_as = max_abs(res_a, s, points)

    res_t = expr_array((n, n, n))
    for i in range(n):
        for k in range(n):
            for j in range(n):
                res_t[i, k, j] = add(
                    mul(3, sc.T[i, k, j]),
                    mul(-1, _diff(sc.P[i, j], vels[k])),
                    _diff(sc.P[i, k], vels[j]))
    eq_3t = max_abs(res_t, s, points)
    return {"eq_As": eq_as, "eq_3T": eq_3t}


def torsion_oracle_residual(s: SodeSystem, points) -> float:
    """max |Tor_definition - torsion blocks| over frame pairs and points."""
    tensor = torsion(s, check="none")
    n2 = 2 * s.n + 1
    worst = 0.0
    for a in range(n2):
        for b in range(a + 1, n2):
            delta = torsion_definition(s, a, b) \
                - tensor.apply(_unit(n2, a), _unit(n2, b))
            worst = max(worst, max_abs(delta, s, points))
    return worst


def curvature_oracle_residual(s: SodeSystem, points) -> float:
    """max |R_definition - component table| over frame triples and points,
    vanishing blocks included."""
    comp = curvature_components(s)
    n, n2 = s.n, 2 * s.n + 1
    gamma = frame_christoffels(s)
    worst = 0.0
    for a in range(n2):
        for b in range(a + 1, n2):
            for c in range(n2):
                delta = curvature_definition(s, a, b, c, gamma) \
                    - _expected_curvature(comp, n, a, b, c)
                worst = max(worst, max_abs(delta, s, points))
    return worst


def eigenstructure_residual(s: SodeSystem, points) -> float:
    """Distance of the eigenvalues of L_X J to the multiset
    {0, +1 (n times), -1 (n times)}, maximised over points."""
    from .sode import eval_array, point_batch
    L = lie_derivative_J(s)
    vals = eval_array(L, s.vars.names, point_batch(s.vars, points))
    expected = np.sort(np.array([0.0] + [1.0] * s.n + [-1.0] * s.n))
    worst = 0.0
    for k in range(len(points)):
        eig = np.sort(np.linalg.eigvals(vals[:, :, k]).real)
        imag = np.max(np.abs(np.linalg.eigvals(vals[:, :, k]).imag))
        worst = max(worst, float(np.max(np.abs(eig - expected))), float(imag))
    return worst

import numpy as np
import pytest

from chernsode.expressions import VarSet, const, parse, simplify, var
from chernsode.chern import (
    connection_data, covariant_derivative, curvature, curvature_definition,
    torsion, torsion_definition, verify_characterization,
    verify_structure_identities,
)
from chernsode.sode import (
    OracleMismatch, SodeSystem, expr_array, max_abs,
    random_polynomial_sode, sample_points, zero_symbolically,
)


def make(n, *rhs):
    vars = VarSet.default(n)
    return SodeSystem(vars=vars, F=tuple(parse(f, vars) for f in rhs))


FLAT1 = make(1, "0")
OSC = make(1, "-x1 - 1.0*v1")
CUBIC = make(1, "v1^3")


def unit(n2, a):
    e = expr_array(n2)
    e[a] = const(1)
    return e


class TestConnectionData:
    def test_flat(self):
        data = connection_data(FLAT1)
        assert zero_symbolically(data.W[0, 0])
        assert zero_symbolically(data.V[0, 0, 0])

    def test_oscillator(self):
        data = connection_data(OSC)
        assert simplify(data.W[0, 0]) == const(-0.5)
        assert zero_symbolically(data.V[0, 0, 0])

    def test_cubic(self):
        data = connection_data(CUBIC)
        assert simplify(data.W[0, 0]) == simplify(parse("3/2*v1^2", OSC.vars))
        assert simplify(data.V[0, 0, 0]) == simplify(parse("3*v1", OSC.vars))


class TestCovariantDerivative:
    def test_flow_parallel_random(self):
        s = random_polynomial_sode(2, seed=5)
        n2 = 2 * s.n + 1
        pts = sample_points(s.vars, 8, seed=1)
        rng = np.random.default_rng(3)
        y = expr_array(n2)
        y[0] = const(1)
        for _ in range(3):
            x = expr_array(n2)
            for a in range(n2):
                x[a] = const(float(rng.uniform(-1, 1)))
            d = covariant_derivative(s, x, y)
            assert max_abs(d, s, pts) < 1e-12

    def test_vertical_pair_vanishes(self):
        s = random_polynomial_sode(2, seed=9)
        n2 = 2 * s.n + 1
        pts = sample_points(s.vars, 8, seed=2)
        d = covariant_derivative(s, unit(n2, 3), unit(n2, 4))
        assert max_abs(d, s, pts) < 1e-12

    def test_oscillator_value(self):
        # D_X X_1 = -(1/2)(dF/dv) X_1 = zeta X_1 with zeta = 1/2
        d = covariant_derivative(OSC, unit(3, 0), unit(3, 1))
        assert simplify(d[1]) == const(0.5)
        assert zero_symbolically(d[0]) and zero_symbolically(d[2])

    def test_leibniz(self):
        # D_X (f Y) = X(f) Y + f D_X Y with f = x1
        s = OSC
        f = var("x1")
        y = expr_array(3)
        y[1] = f
        d = covariant_derivative(s, unit(3, 0), y)
        # X(x1) = v1, so coefficient on X_1 is v1 + x1/2
        assert zero_symbolically(simplify(d[1] - parse("v1 + 0.5*x1", s.vars)))


class TestTorsion:
    def test_flat_identity_block_only(self):
        t = torsion(FLAT1, check="symbolic")
        got = torsion_definition(FLAT1, 0, 2)
        assert simplify(got[1]) == const(1)  # Tor(X, d/dv) = X_1
        assert zero_symbolically(t.P[0, 0])

    def test_oscillator_p_block(self):
        t = torsion(OSC, check="symbolic")
        assert simplify(t.p_block[0, 0]) == const(-0.75)

    def test_mixed_pair_vanishes_random(self):
        for k in range(4):
            s = random_polynomial_sode(2, seed=30 + k)
            pts = sample_points(s.vars, 10, seed=k)
            for i in range(2):
                for j in range(2):
                    got = torsion_definition(s, 1 + i, 3 + j)
                    assert max_abs(got, s, pts) < 1e-10

    def test_oracle_random_symbolic(self):
        s = random_polynomial_sode(2, seed=77)
        torsion(s, check="symbolic")

    def test_oracle_numeric_battery(self):
        for k in range(5):
            torsion(random_polynomial_sode(2, seed=90 + k), check="numeric")


class TestCurvature:
    def test_flat_zero(self):
        comp = curvature(FLAT1, check="symbolic")
        assert zero_symbolically(comp.A[0, 0, 0])
        assert zero_symbolically(comp.B[0, 0, 0, 0])
        assert zero_symbolically(comp.R[0, 0, 0, 0])

    def test_cubic_R(self):
        comp = curvature(CUBIC, check="symbolic")
        assert simplify(comp.R[0, 0, 0, 0]) == const(3)

    def test_spray_R_vanishes(self):
        s = make(2, "x1*v1*v2 - v2^2", "2*v1^2 + x2*v1*v2")
        comp = curvature(s, check="none")
        for idx in np.ndindex(comp.R.shape):
            assert zero_symbolically(comp.R[idx])

    def test_oracle_random_numeric(self):
        for k in range(3):
            curvature(random_polynomial_sode(2, seed=50 + k), check="numeric")

    def test_oracle_random_symbolic(self):
        curvature(random_polynomial_sode(2, seed=123), check="symbolic")

    def test_conjugation_blocks(self):
        # same coefficient matrix on the minus and plus eigenblocks
        s = random_polynomial_sode(2, seed=8)
        pts = sample_points(s.vars, 8, seed=4)
        for (a, b) in [(0, 1), (1, 2), (1, 3), (2, 4)]:
            for arg in range(s.n):
                minus = curvature_definition(s, a, b, 1 + arg)
                plus = curvature_definition(s, a, b, 1 + s.n + arg)
                delta = expr_array(s.n)
                for h in range(s.n):
                    delta[h] = minus[1 + h] - plus[1 + s.n + h]
                assert max_abs(delta, s, pts) < 1e-10


class TestCharacterization:
    def test_residuals_small(self):
        for k in range(3):
            s = random_polynomial_sode(2, seed=200 + k)
            pts = sample_points(s.vars, 10, seed=k)
            res = verify_characterization(s, pts)
            assert all(v <= 1e-10 for v in res.values()), res

    def test_flat_exact(self):
        pts = sample_points(FLAT1.vars, 5, seed=0)
        res = verify_characterization(FLAT1, pts)
        assert all(v == 0.0 for v in res.values())

    def test_perturbed_connection_breaks_torsion(self):
        s = random_polynomial_sode(2, seed=300)
        pts = sample_points(s.vars, 10, seed=3)
        res = verify_characterization(s, pts, w_shift=1)
        assert res["torsion_match"] >= 0.5


class TestStructureIdentities:
    def test_flat(self):
        pts = sample_points(FLAT1.vars, 5, seed=0)
        res = verify_structure_identities(FLAT1, pts)
        assert res["eq_As"] == 0.0 and res["eq_3T"] == 0.0

    def test_random(self):
        for k in range(3):
            s = random_polynomial_sode(2, seed=400 + k)
            pts = sample_points(s.vars, 10, seed=k)
            res = verify_structure_identities(s, pts)
            assert res["eq_As"] <= 1e-10 and res["eq_3T"] <= 1e-10

    def test_n1_degenerate(self):
        pts = sample_points(OSC.vars, 5, seed=1)
        res = verify_structure_identities(OSC, pts)
        assert res["eq_3T"] <= 1e-12  # T empty content in one dimension

    def test_p_sign_flip_detected(self):
        from chernsode import sode as sode_mod
        good = sode_mod.splitting_P

        def flipped(system):
            return -np.asarray(good(system), dtype=object)

        s = random_polynomial_sode(2, seed=500)
        pts = sample_points(s.vars, 8, seed=5)
        sode_mod.splitting_P = flipped
        try:
            res = verify_structure_identities(s, pts)
            assert res["eq_As"] > 1e-3
            with pytest.raises(OracleMismatch):
                torsion(s, check="numeric", points=pts)
        finally:
            sode_mod.splitting_P = good

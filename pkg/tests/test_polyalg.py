#!/usr/bin/env python3
"""
多项式消元模块测试

覆盖结式、判别式、平方-立方分解与实根隔离
"""

import os
import sys
import unittest
from fractions import Fraction

import numpy as np

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.errors import EliminationError, FactorizationError
from core.polyalg import (Polynomial, batch_real_roots, discriminant, isolate_real_roots,
                          numeric_real_roots, resultant, split_profile, square_cube_split,
                          sylvester_matrix)


def P(expr, vars):
    return Polynomial.from_expr(expr, vars)


class TestPolynomial(unittest.TestCase):
    """精确多项式"""

    def test_terms_exact_rational(self):
        p = P('x**2/3 + 2*x*y - 0*y', ('x', 'y'))
        self.assertEqual(p.terms, {(2, 0): Fraction(1, 3), (1, 1): 2})

    def test_arithmetic_is_exact(self):
        x = Polynomial.variable('x', ('x', 'y'))
        y = Polynomial.variable('y', ('x', 'y'))
        self.assertEqual((x + y) * (x - y), x ** 2 - y ** 2)
        self.assertEqual((x ** 3).diff('x'), x ** 2 * 3)

    def test_undeclared_variable_rejected(self):
        with self.assertRaises(EliminationError):
            P('x*z', ('x',))

    def test_subs_composes(self):
        p = P('x**2 + y', ('x', 'y'))
        q = p.subs({'y': P('1 - x**2', ('x',))})
        self.assertEqual(q, 1)


class TestResultant(unittest.TestCase):
    """结式"""

    def test_linear_factors(self):
        r = resultant(P('x - a', ('x', 'a', 'b')), P('x - b', ('x', 'a', 'b')), 'x')
        self.assertTrue(r.proportional_to(P('a - b', ('a', 'b'))))

    def test_shared_root_gives_zero(self):
        p = P('x**2 - 2', ('x',))
        self.assertTrue(resultant(p, p, 'x').is_zero)

    def test_quadratic_against_derivative(self):
        vars = ('x', 'b', 'c')
        r = resultant(P('x**2 + b*x + c', vars), P('2*x + b', vars), 'x')
        self.assertTrue(r.proportional_to(P('b**2 - 4*c', ('b', 'c'))))

    def test_matches_sylvester_determinant(self):
        vars = ('x', 'a', 'b')
        cases = [(P('x**3 + a*x - b', vars), P('3*x**2 + a', vars)),
                 (P('a*x**2 - 2*x + b', vars), P('x**2 + b*x - a**2', vars))]
        for p, q in cases:
            det = Polynomial.from_expr(sylvester_matrix(p, q, 'x').det(), ('a', 'b'))
            r = resultant(p, q, 'x')
            self.assertFalse(r.is_zero)
            self.assertTrue(r.proportional_to(det))
        self.assertEqual(sylvester_matrix(*cases[0], 'x').shape, (5, 5))

    def test_degenerate_input_raises(self):
        with self.assertRaises(EliminationError):
            resultant(P('x + 1', ('x', 'y')), P('y', ('x', 'y')), 'x')

    def test_sylvester_cap(self):
        p = P('x**40 + y', ('x', 'y'))
        with self.assertRaises(EliminationError):
            resultant(p, p.diff('x') + 1, 'x', max_dim=64)

    def test_zero_iff_common_factor(self):
        vars = ('x', 'y')
        common = P('x - y**2', vars)
        a = common * P('x + 1', vars)
        b = common * P('x - 3*y', vars)
        self.assertTrue(resultant(a, b, 'x').is_zero)
        self.assertFalse(resultant(P('x + 1', vars), P('x - 3*y', vars), 'x').is_zero)


class TestDiscriminant(unittest.TestCase):
    """判别式"""

    def test_quadratic(self):
        d = discriminant(P('x**2 + b*x + c', ('x', 'b', 'c')), 'x')
        self.assertEqual(d, P('b**2 - 4*c', ('b', 'c')))

    def test_cubic(self):
        d = discriminant(P('x**3 + p*x + q', ('x', 'p', 'q')), 'x')
        self.assertEqual(d, P('-4*p**3 - 27*q**2', ('p', 'q')))

    def test_double_root(self):
        self.assertTrue(discriminant(P('(x - 1)**2', ('x',)), 'x').is_zero)

    def test_declared_degree_mismatch(self):
        with self.assertRaises(EliminationError) as ctx:
            discriminant(P('0*x**3 + x**2 + y', ('x', 'y')), 'x', degree=3)
        self.assertIn('首项系数', str(ctx.exception))

    def test_shared_root_product(self):
        vars = ('x', 'a')
        p = P('(x - a)*(x + 2)', vars) * P('(x - a)*(x - 5)', vars)
        self.assertTrue(discriminant(p, 'x').is_zero)


class TestSquareCubeSplit(unittest.TestCase):
    """平方-立方分解"""

    def test_constructed_linear(self):
        vars = ('x', 'y')
        p = P('5*(x + y)**2*(x - y)**3', vars)
        k, B, C = square_cube_split(p)
        self.assertEqual(B ** 2 * C ** 3 * k, p)
        self.assertTrue(B.proportional_to(P('x + y', vars)))
        self.assertTrue(C.proportional_to(P('x - y', vars)))

    def test_constructed_nonlinear(self):
        vars = ('x', 'y')
        p = P('2*(x**2 + y**2 - 1)**2*(y - x**2)**3', vars)
        k, B, C = square_cube_split(p)
        self.assertEqual(B ** 2 * C ** 3 * k, p)
        self.assertTrue(B.proportional_to(P('x**2 + y**2 - 1', vars)))
        self.assertTrue(C.proportional_to(P('y - x**2', vars)))
        self.assertEqual(split_profile(p), (2, 3))

    def test_wrong_profile_reports_multiplicities(self):
        vars = ('x', 'y')
        with self.assertRaises(FactorizationError) as ctx:
            square_cube_split(P('(x + y)*(x - y)**2', vars))
        self.assertEqual(ctx.exception.profile, {1: 1, 2: 1})

    def test_swallowtail_double_discriminant_profile(self):
        # f(λ) = (x − λ)²/2 + λ⁵ − λ⁴/2 + λ²y，t = 1
        vars = ('lam', 'x', 'y', 'c')
        f = P('(x - lam)**2/2 + lam**5 - lam**4/2 + lam**2*y - c', vars)
        inner = discriminant(f, 'lam')
        outer = discriminant(inner, 'c')
        self.assertEqual(split_profile(outer), (2, 3))


class TestRootIsolation(unittest.TestCase):
    """实根隔离"""

    def test_sqrt_two(self):
        roots = isolate_real_roots(P('x**2 - 2', ('x',)), 0, 2, 1e-12)
        self.assertEqual(len(roots), 1)
        self.assertAlmostEqual(roots.values[0], np.sqrt(2), places=11)
        self.assertEqual(roots.multiplicities, [1])

    def test_multiplicities(self):
        roots = isolate_real_roots(P('(x - 1)**2*(x + 3)', ('x',)), -4, 2, 1e-12)
        self.assertEqual(len(roots), 2)
        self.assertAlmostEqual(roots.values[0], -3.0, places=10)
        self.assertAlmostEqual(roots.values[1], 1.0, places=10)
        self.assertEqual(roots.multiplicities, [1, 2])

    def test_generic_cusp_triple_root(self):
        # f′ 在尖点 (0, −1/2), t = 1: −(0 − λ) + 2λ(−1/2) − 2λ³ = −2λ³
        fprime = P('-(0 - lam) + 2*lam*(-1/2) - 2*lam**3', ('lam',))
        roots = isolate_real_roots(fprime, -1, 1, 1e-12)
        self.assertEqual(len(roots), 1)
        self.assertAlmostEqual(roots.values[0], 0.0, places=12)
        self.assertEqual(roots.multiplicities, [3])

    def test_close_roots_reported_as_cluster(self):
        p = P('(x - 1)*(x - 1 - 1/10000000)', ('x',))
        with self.assertLogs('core.polyalg', level='WARNING'):
            roots = isolate_real_roots(p, 0, 2, 1e-6)
        self.assertEqual(roots.multiplicities, [2])
        self.assertEqual(len(roots.merged_clusters), 1)
        self.assertEqual(len(roots.merged_clusters[0]), 2)
        self.assertLess(roots.merged_clusters[0][0], roots.merged_clusters[0][1])
        self.assertEqual(len(roots.clusters), len(roots))
        # 容差足够小时两个根分开报告
        fine = isolate_real_roots(p, 0, 2, 1e-12)
        self.assertEqual(fine.multiplicities, [1, 1])
        self.assertEqual(fine.merged_clusters, [])

    def test_invalid_tolerance(self):
        with self.assertRaises(ValueError):
            isolate_real_roots(P('x - 1', ('x',)), 0, 2, 0.0)

    def test_agrees_with_sign_changes(self):
        rng = np.random.default_rng(3)
        xs = np.linspace(-3, 3, 200001)
        for _ in range(40):
            coeffs = [int(c) for c in rng.integers(-9, 10, size=4)]
            if coeffs[0] == 0:
                coeffs[0] = 1
            expr = ' + '.join(f'({c})*x**{3 - i}' for i, c in enumerate(coeffs))
            p = P(expr, ('x',))
            values = np.polyval(coeffs, xs)
            changes = int(np.sum(np.sign(values[:-1]) * np.sign(values[1:]) < 0))
            roots = isolate_real_roots(p, -3, 3, 1e-10)
            simple = sum(1 for m in roots.multiplicities if m % 2 == 1)
            if np.all(np.abs(values) > 1e-9):
                self.assertEqual(simple, changes)

    def test_numeric_and_batch_roots(self):
        roots = numeric_real_roots([1.0, 0.0, -1.0])
        np.testing.assert_allclose(roots.values, [-1.0, 1.0], atol=1e-12)
        batch = batch_real_roots(np.array([[1.0, 0.0, -4.0], [1.0, 0.0, 1.0]]))
        np.testing.assert_allclose(batch[0], [-2.0, 2.0], atol=1e-12)
        self.assertTrue(np.all(np.isnan(batch[1])))


if __name__ == '__main__':
    unittest.main()

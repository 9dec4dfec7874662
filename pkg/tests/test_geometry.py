#!/usr/bin/env python3
"""
几何模块测试：焦散、Maxwell集、双重判别式分解、法向与尖点
"""

import os
import sys
import unittest

import numpy as np
import yaml

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.curves import PRE_SPACE, ImplicitCurve
from core.errors import ScenarioError
from core.geometry import GeometryEngine
from core.polyalg import Polynomial
from core.scenario import flow_map
from core.scenario_parser import load_scenario
from core.wiener import WienerPath

TEST_CONFIG = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'test_config.yaml')


def load_test_config():
    with open(TEST_CONFIG, 'r', encoding='utf-8') as f:
        return yaml.safe_load(f)


def P(expr, vars):
    return Polynomial.from_expr(expr, vars)


class TestImplicitForms(unittest.TestCase):
    """前像与像空间的隐式方程"""

    @classmethod
    def setUpClass(cls):
        cls.engine = GeometryEngine(load_test_config())
        cls.cusp = load_scenario('generic_cusp')

    def test_pre_caustic_symbolic_time(self):
        pre = self.engine.pre_caustic(self.cusp, 't')
        expected = P('1 + 2*t*y0 - 4*t**2*x0**2', ('x0', 'y0', 't'))
        self.assertTrue(pre.poly.proportional_to(expected))

    def test_caustic_implicit(self):
        for t, expr in ((1.0, '27*x**2 - 2*(2*y + 1)**3'), (0.5, '27*x**2/4 - 2*(y + 1)**3')):
            caustic = self.engine.caustic_implicit(self.cusp, t)
            self.assertTrue(caustic.poly.proportional_to(P(expr, ('x', 'y'))), msg=f't={t}')

    def test_generic_cusp_factorization(self):
        split = self.engine.maxwell_klein_split(self.cusp, 1.0)
        self.assertEqual(split.profile, (2, 3))
        self.assertTrue(split.caustic_match)

    def test_swallowtail_factorization(self):
        sc = load_scenario('polynomial_swallowtail').with_eps(0.0)
        split = self.engine.maxwell_klein_split(sc, 1.0)
        self.assertEqual(split.profile, (2, 3))
        self.assertTrue(split.caustic_match)

    def test_requires_positive_time(self):
        with self.assertRaises(ValueError):
            self.engine.caustic_implicit(self.cusp, 0.0)

    def test_general_mode_rejected(self):
        with self.assertRaises(ScenarioError):
            self.engine.pre_caustic(self.cusp.with_mode('general-numeric'), 1.0)

    def test_pre_curve_intersections(self):
        a = ImplicitCurve(P('x0 - y0', ('x0', 'y0')), ('x0', 'y0'), PRE_SPACE, 'a')
        b = ImplicitCurve(P('x0 + y0 - 1', ('x0', 'y0')), ('x0', 'y0'), PRE_SPACE, 'b')
        pts = self.engine.pre_curve_intersections(a, b, ((-2, 2), (-2, 2)))
        np.testing.assert_allclose(pts, [[0.5, 0.5]], atol=1e-10)


class TestCausticCurves(unittest.TestCase):
    """焦散参数曲线与尖点"""

    @classmethod
    def setUpClass(cls):
        cls.engine = GeometryEngine(load_test_config())
        cls.cusp = load_scenario('generic_cusp')
        cls.caustic = cls.engine.caustic(cls.cusp, 1.0)

    def test_points_lie_on_implicit_caustic(self):
        implicit = self.engine.caustic_implicit(self.cusp, 1.0)
        xs = self.caustic.xs()
        self.assertGreater(len(xs), 10)
        values = implicit.value(xs)
        grads = np.linalg.norm(implicit.gradient(xs), axis=1)
        self.assertLess(float(np.max(np.abs(values) / np.maximum(grads, 1.0))), 1e-8)

    def test_points_are_images_of_pre_caustic(self):
        for p in self.caustic.points[::7]:
            st = flow_map(self.cusp, p.x0, 1.0)
            np.testing.assert_allclose(st.X, p.x, atol=1e-12)
            self.assertLess(abs(st.detJ), 1e-9)

    def test_single_cusp(self):
        report = self.engine.detect_cusps(self.caustic)
        self.assertEqual(report.count('cusp'), 1)
        np.testing.assert_allclose(report.cusps[0].x, [0.0, -0.5], atol=1e-6)
        self.assertLess(report.cusps[0].speed, 1e-6)

    def test_caustic_is_cool_near_cusp_tip(self):
        near = [p for p in self.caustic.points if abs(p.x0[0]) < 0.05]
        self.assertTrue(near)
        self.assertTrue(all(p.cool for p in near))

    def test_frame_columns(self):
        df = self.caustic.to_frame()
        self.assertEqual(list(df.columns),
                         ['label', 't', 'lambda', 'x1', 'x2', 'cool', 'dx_dlambda_norm', 'branch'])
        self.assertEqual(len(df), len(self.caustic))

    def test_swallowtail_two_cusps(self):
        sc = load_scenario('polynomial_swallowtail').with_eps(0.0)
        caustic = self.engine.caustic(sc, 1.0)
        report = self.engine.detect_cusps(caustic)
        self.assertEqual(report.count('cusp'), 2)
        lams = sorted(c.x0[0] for c in report.cusps)
        np.testing.assert_allclose(lams, [0.0, 0.2], atol=1e-6)

    def test_noise_shifts_caustic(self):
        sc = load_scenario('polynomial_swallowtail')
        path = WienerPath.simulate(1, 1.0, dt=1e-3, seed=2)
        _, intW, _ = path.at(1.0)
        noisy = self.engine.caustic(sc, 1.0, path).xs()
        clean = self.engine.caustic(sc.with_eps(0.0), 1.0).xs()
        self.assertEqual(noisy.shape, clean.shape)
        shift = noisy - clean
        np.testing.assert_allclose(shift[:, 0], -sc.eps * intW[0], atol=1e-10)
        np.testing.assert_allclose(shift[:, 1], 0.0, atol=1e-10)

    def test_one_dimensional_caustic_points(self):
        sc = load_scenario('focusing_1d')
        caustic = self.engine.caustic(sc, 2.0)
        xs = sorted(float(p.x[0]) for p in caustic.points)
        expected = 2.0 / 3.0 / np.sqrt(6.0)
        np.testing.assert_allclose(xs, [-expected, expected], atol=1e-10)
        with self.assertRaises(ScenarioError):
            self.engine.maxwell(sc, 2.0)


class TestMaxwellSet(unittest.TestCase):
    """Maxwell集"""

    @classmethod
    def setUpClass(cls):
        cls.engine = GeometryEngine(load_test_config())
        cls.cusp = load_scenario('generic_cusp')
        cls.maxwell = cls.engine.maxwell(cls.cusp, 1.0)

    def test_generic_cusp_maxwell_is_hot_half_line(self):
        self.assertFalse(self.maxwell.is_empty)
        xs = self.maxwell.xs()
        self.assertLess(float(np.max(np.abs(xs[:, 0]))), 1e-7)
        self.assertTrue(np.all(xs[:, 1] >= -0.5 - 1e-9))
        # 只有配对原像与自身重合的终点处作用量相等
        for p in self.maxwell.cool_points():
            self.assertLess(float(np.linalg.norm(p.x0 - p.partner)), 1e-3)
        self.assertLess(len(self.maxwell.cool_points()), len(self.maxwell))

    def test_partners_have_equal_action(self):
        for p in self.maxwell.points[::5]:
            self.assertIsNotNone(p.partner)
            a = flow_map(self.cusp, p.x0, 1.0).X
            b = flow_map(self.cusp, p.partner, 1.0).X
            np.testing.assert_allclose(a, b, atol=1e-8)
            E = self.engine.eikonal(self.cusp, np.array([p.x0, p.partner]), 1.0)
            self.assertAlmostEqual(float(E[0]), float(E[1]), places=8)

    def test_level_self_intersection(self):
        mid = self.maxwell.points[len(self.maxwell.points) // 2]
        crossing = self.engine.level_self_intersection(self.cusp, mid, 1.0)
        self.assertLess(crossing.residual, 1e-8)
        self.assertAlmostEqual(crossing.c, mid.action)


class TestNormalsAndDerivatives(unittest.TestCase):
    """法向与前像映射导数"""

    @classmethod
    def setUpClass(cls):
        cls.engine = GeometryEngine(load_test_config())
        cls.cusp = load_scenario('generic_cusp')

    def test_preimage_jacobian_matches_flow(self):
        x0 = np.array([0.3, 0.2])
        J = self.engine.preimage_jacobian(self.cusp, x0, 0.7)
        np.testing.assert_allclose(J, flow_map(self.cusp, x0, 0.7).J, atol=1e-12)

    def test_eikonal_closed_form(self):
        x0 = np.array([0.4, -0.6])
        t = 0.9
        grad = np.array([2 * x0[0] * x0[1], x0[0] ** 2])
        expected = t * grad @ grad / 2 + x0[0] ** 2 * x0[1]
        self.assertAlmostEqual(float(self.engine.eikonal(self.cusp, x0, t)), expected, places=12)

    def test_pre_level_surface_tracks_time_after_cache_eviction(self):
        # 超过模型缓存容量的时刻序列，逐个核对等值面多项式
        pts = np.array([[0.4, -0.6], [-0.3, 0.5], [0.7, 0.2]])
        for i in range(300):
            t = 0.5 + i / 200
            pre = self.engine.pre_level_surface(self.cusp, 0.1, t)
            expected = self.engine.eikonal(self.cusp, pts, t) - 0.1
            ratio = pre.value(pts) / expected
            np.testing.assert_allclose(ratio, ratio[0], rtol=1e-9, err_msg=f"t={t}")

    def test_pre_level_normal_is_eikonal_gradient(self):
        x0 = np.array([0.4, -0.6])
        n = self.engine.normals(self.cusp, x0, 'pre-level', 0.9)
        g = self.engine.eikonal_gradient(self.cusp, x0, 0.9)
        np.testing.assert_allclose(n, g / np.linalg.norm(g), atol=1e-12)

    def test_pre_maxwell_normal_needs_partner(self):
        with self.assertRaises(Exception):
            self.engine.normals(self.cusp, [0.3, -0.5], 'pre-maxwell', 1.0)
        with self.assertRaises(ValueError):
            self.engine.normals(self.cusp, [0.3, -0.5], 'pre-nothing', 1.0)


class TestCuspTheorems(unittest.TestCase):
    """尖点定理（多项式燕尾，t = 1）"""

    def test_swallowtail_theorems_pass(self):
        engine = GeometryEngine(load_test_config())
        sc = load_scenario('polynomial_swallowtail').with_eps(0.0)
        report = engine.check_geometry_theorems(sc, 1.0)
        names = [c.name for c in report.checks]
        self.assertEqual(len(names), 5)
        for check in report.checks:
            self.assertTrue(check.passed, msg=f'{check.name}: {check.detail}')
        self.assertEqual(list(report.checks_frame().columns), ['check', 'applicable', 'passed', 'residual', 'detail'])


if __name__ == '__main__':
    unittest.main()

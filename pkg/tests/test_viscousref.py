#!/usr/bin/env python3
"""
粘性参照求解器测试：热方程、Hopf-Cole 变换、Jacobian 恒等式与质量守恒
"""

import math
import os
import sys
import unittest

import numpy as np
import yaml
from scipy.integrate import cumulative_trapezoid

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.errors import GeometryError, NumericError, ScenarioError
from core.scenario_parser import load_scenario, parse_scenario
from core.shockflow import ShockFlowAnalyzer
from core.viscousref import MassConservationReport, ShockJumpReport, ViscousReference, caustic_time, hopf_cole

TEST_CONFIG = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'test_config.yaml')

# u^μ(x,t) = (1+t)^{-1/2} exp(−x²/(2μ²(1+t)))
GAUSSIAN = """
dim = 1
S0 = x0^2/2
box = -1:1
"""

DEFOCUS = """
dim = 1
S0 = -x0^2/2
box = -1:1
"""

# 初始质量 ∫∫T₀² = 341/45
FOLDED_2D = """
dim = 2
S0 = -x0^2/2 + x0*y0^2/4
T0 = 1 + x0*y0/2 + y0^2
box = -1:1, -1:1
"""


def load_test_config():
    with open(TEST_CONFIG, 'r', encoding='utf-8') as f:
        return yaml.safe_load(f)


class TestHeatSolver(unittest.TestCase):
    """热方程与 Hopf-Cole 变换"""

    @classmethod
    def setUpClass(cls):
        cls.ref = ViscousReference(load_test_config())
        cls.sc = parse_scenario(GAUSSIAN)
        cls.mu = 0.3
        cls.fld = cls.ref.solve_heat(cls.sc, cls.mu, 1.0, grid=[(-4.0, 4.0, 801)])

    def test_gaussian_closed_form(self):
        x = self.fld.axes[0]
        inner = np.abs(x) <= 1.0
        exact = np.exp(-x ** 2 / (2 * self.mu ** 2 * 2.0)) / math.sqrt(2.0)
        np.testing.assert_allclose(self.fld.u[inner], exact[inner], rtol=1e-3)
        self.assertEqual(self.fld.offset, 0.0)
        self.assertGreater(self.fld.steps, 0)

    def test_hopf_cole_velocity(self):
        x = self.fld.axes[0]
        inner = np.abs(x) <= 1.0
        v = hopf_cole(self.fld)
        np.testing.assert_allclose(v[inner], x[inner] / 2.0, atol=1e-3)

    def test_hopf_cole_round_trip(self):
        # 由 v^μ 积分回 ln u
        x = self.fld.axes[0]
        inner = np.abs(x) <= 1.0
        v = hopf_cole(self.fld)[inner]
        log_u = self.fld.log_u[inner]
        recovered = log_u[0] + cumulative_trapezoid(-v / self.mu ** 2, x[inner], initial=0.0)
        np.testing.assert_allclose(recovered, log_u, rtol=0, atol=1e-6)

    def test_discrete_maximum_principle(self):
        cases = ((load_scenario('focusing_1d'), 0.2, 0.5, None),
                 (load_scenario('generic_cusp'), 0.4, 0.2, [(-0.5, 0.5), (-0.5, 0.5)]))
        for sc, mu, T, hull in cases:
            grid = self.ref.auto_grid(sc, mu, T, hull)
            start = self.ref.solve_heat(sc, mu, 0.0, grid=grid, hull=hull)
            end = self.ref.solve_heat(sc, mu, T, grid=grid, hull=hull)
            self.assertEqual(start.steps, 0)
            self.assertGreater(end.steps, 0)
            self.assertEqual(start.offset, end.offset)
            self.assertLessEqual(float(np.max(end.u)), float(np.max(start.u)) * (1 + 1e-12), msg=sc.name)
            self.assertGreaterEqual(float(np.min(end.u)), float(np.min(start.u)) * (1 - 1e-9), msg=sc.name)

    def test_snapshot_columns(self):
        df = self.fld.snapshot()
        self.assertIn('u', df.columns)
        self.assertEqual(len(df), 801)

    def test_auto_grid_covers_box(self):
        grid = self.ref.auto_grid(self.sc, 0.2, 1.0)
        (a, b, n), = grid
        self.assertLess(a, -1.0)
        self.assertGreater(b, 1.0)
        self.assertGreater(n, 10)

    def test_boundary_budget_enforced(self):
        with self.assertRaises(NumericError):
            self.ref.solve_heat(self.sc, 0.3, 1.0, grid=[(-1.2, 1.2, 241)])

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            self.ref.solve_heat(self.sc, 0.0, 1.0)
        with self.assertRaises(ScenarioError):
            self.ref.solve_heat(load_scenario('extruded_3d'), 0.3, 0.5)

    def test_two_dimensional_positivity(self):
        fld = self.ref.solve_heat(load_scenario('generic_cusp'), 0.4, 0.2, hull=[(-0.5, 0.5), (-0.5, 0.5)])
        self.assertTrue(np.all(fld.u > 0))
        self.assertEqual(fld.u.ndim, 2)


class TestSemiclassical(unittest.TestCase):
    """半经典比较"""

    def test_velocity_converges(self):
        ref = ViscousReference(load_test_config())
        sc = load_scenario('focusing_1d')
        report = ref.semiclassical_compare(sc, [0.4, 0.2, 0.1], [[-1.2], [0.6], [1.3]], 0.5)
        self.assertEqual(report.v_viscous.shape, (3, len(report.points), 1))
        worst = np.max(report.velocity_err, axis=1)
        self.assertTrue(np.all(np.diff(worst) < 0))
        self.assertGreater(report.order_velocity, 1.0)
        self.assertEqual(len(report.to_frame()), 3 * len(report.points))

    def test_points_near_shock_excluded(self):
        ref = ViscousReference(load_test_config())
        sc = load_scenario('focusing_1d')
        # t = 2 时 x = 0 在 Maxwell 集上
        with self.assertRaises(GeometryError):
            ref.semiclassical_compare(sc, [0.4, 0.2], [[0.0]], 2.0)


class TestShockJump(unittest.TestCase):
    """激波两侧的粘性速度跳跃"""

    @classmethod
    def setUpClass(cls):
        config = load_test_config()
        cls.ref = ViscousReference(config)
        cls.sc = load_scenario('focusing_1d')
        shock = ShockFlowAnalyzer(config)
        # t = 2 时激波在 x = 0，两侧速度互为相反数
        cls.one_sided = (shock.inviscid_velocity(cls.sc, [0.2], 2.0), shock.inviscid_velocity(cls.sc, [-0.2], 2.0))
        cls.report = cls.ref.shock_jump(cls.sc, [0.0], [1.0], 2.0, cls.one_sided, [0.05, 0.2, 0.1], offset=0.2)

    def test_inviscid_jump_is_compressive(self):
        plus, minus = self.one_sided
        self.assertLess(float(plus[0]), 0.0)
        np.testing.assert_allclose(plus, -minus, rtol=1e-9)
        np.testing.assert_allclose(self.report.expected, plus - minus)

    def test_jump_converges(self):
        self.assertEqual(self.report.mu_list, [0.2, 0.1, 0.05])
        err = self.report.rel_error
        self.assertTrue(np.all(np.diff(err) < 0), msg=str(err))
        self.assertLess(float(err[-1]), 0.05)
        self.assertTrue(self.report.converges(0.05))

    def test_jump_located_on_shock(self):
        self.assertTrue(self.report.peak_within_cell())
        self.assertLessEqual(abs(float(self.report.peak_offset[-1])), float(self.report.cell[-1]))

    def test_frame(self):
        df = self.report.to_frame()
        self.assertEqual(list(df['mu']), [0.2, 0.1, 0.05])
        self.assertIn('jump_1', df.columns)
        self.assertIn('peak_offset', df.columns)

    def test_smooth_point_rejected(self):
        with self.assertRaises(GeometryError):
            self.ref.shock_jump(self.sc, [0.0], [1.0], 2.0, (np.array([0.1]), np.array([0.1])), [0.2])

    def test_converges_requires_monotone_errors(self):
        report = ShockJumpReport(x=np.zeros(1), normal=np.ones(1), t=2.0, offset=0.2, mu_list=[0.2, 0.1],
                                 expected=np.array([-1.0]), jumps=np.array([[-0.99], [-0.9]]),
                                 peak_offset=np.array([0.0, 0.01]), cell=np.array([0.02, 0.005]))
        np.testing.assert_allclose(report.rel_error, [0.01, 0.1])
        self.assertFalse(report.converges(0.5))
        self.assertFalse(report.peak_within_cell())


class TestIdentities(unittest.TestCase):
    """Jacobian 恒等式与质量守恒"""

    @classmethod
    def setUpClass(cls):
        cls.ref = ViscousReference(load_test_config())

    def test_jacobian_identity_hand_computed(self):
        report = self.ref.jacobian_identity_check(parse_scenario(DEFOCUS), [[0.3], [-0.7]], 0.5)
        np.testing.assert_allclose(report.left, math.sqrt(2.0), rtol=1e-10)
        np.testing.assert_allclose(report.right, math.sqrt(2.0), rtol=1e-10)
        self.assertEqual(report.excluded, [])

    def test_jacobian_identity_generic_cusp(self):
        rng = np.random.default_rng(8)
        samples = rng.uniform(-1, 1, size=(8, 2))
        report = self.ref.jacobian_identity_check(load_scenario('generic_cusp'), samples, 0.2)
        self.assertEqual(len(report.left) + len(report.excluded), 8)
        self.assertLess(report.max_rel_error, 1e-6)

    def test_caustic_time(self):
        self.assertAlmostEqual(caustic_time(load_scenario('focusing_1d')), 1.0, places=8)
        self.assertEqual(caustic_time(parse_scenario(GAUSSIAN)), math.inf)

    def test_mass_conserved_near_caustic(self):
        sc = load_scenario('focusing_1d')
        report = self.ref.mass_conservation_check(sc, [0.0, 0.5, 0.9])
        self.assertAlmostEqual(report.source_mass, 4.0, places=10)
        self.assertLess(report.max_rel_error, 1e-6)

    def test_mass_conserved_two_dimensional(self):
        sc = parse_scenario(FOLDED_2D)
        tc = caustic_time(sc)
        self.assertTrue(math.isfinite(tc))
        report = self.ref.mass_conservation_check(sc, [0.4 * tc, 0.7 * tc])
        self.assertAlmostEqual(report.source_mass, 341 / 45, places=10)
        self.assertTrue(np.all(np.isfinite(report.direct_mass)))
        np.testing.assert_allclose(report.direct_mass, 341 / 45, rtol=1e-6)
        np.testing.assert_allclose(report.mapped_mass, 341 / 45, rtol=1e-6)
        self.assertLess(report.max_rel_error, 1e-6)

    def test_mass_report_flags_bad_paths(self):
        off = MassConservationReport([0.5], 2.0, np.array([2.0]), np.array([2.02]))
        self.assertAlmostEqual(off.max_rel_error, 0.01)
        missing = MassConservationReport([0.5], 2.0, np.array([2.0]), np.array([np.nan]))
        self.assertEqual(missing.max_rel_error, math.inf)
        with self.assertRaises(ScenarioError):
            self.ref.mass_conservation_check(load_scenario('extruded_3d'), [0.1])

    def test_mass_check_refuses_after_caustic(self):
        with self.assertRaises(GeometryError):
            self.ref.mass_conservation_check(load_scenario('focusing_1d'), [1.2])


if __name__ == '__main__':
    unittest.main()

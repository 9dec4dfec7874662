#!/usr/bin/env python3
"""
激波流模块测试：Maxwell集上的速度、涡量与质量粘附
"""

import os
import sys
import unittest
from types import SimpleNamespace

import numpy as np
import yaml

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.errors import GeometryError, ScenarioError
from core.geometry import GeometryEngine
from core.scenario import flow_map, pre_images
from core.scenario_parser import load_scenario, parse_scenario
from core.shockflow import MassLedger, ShockFlowAnalyzer

TEST_CONFIG = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'test_config.yaml')

# 一般尖点加上关于 x₀ 不对称的质量因子
ASYMMETRIC_CUSP = """
dim = 2
S0 = x0^2*y0
k = x, y
T0 = 1 + x0/2
box = -1.5:1.5, -1.5:1.5
"""


def load_test_config():
    with open(TEST_CONFIG, 'r', encoding='utf-8') as f:
        return yaml.safe_load(f)


def interior_points(curve, lo=0.3, hi=1.0):
    """配对原像相距适中的 Maxwell 点（远离尖点端与 box 边界）"""
    return [p for p in curve.points
            if p.partner is not None and lo < abs(p.x0[0]) < hi and p.cool]


class TestMaxwellVelocity(unittest.TestCase):
    """Maxwell 点上的速度"""

    @classmethod
    def setUpClass(cls):
        config = load_test_config()
        cls.engine = GeometryEngine(config)
        cls.analyzer = ShockFlowAnalyzer(config, cls.engine)
        cls.cusp = load_scenario('generic_cusp')
        cls.points = interior_points(cls.engine.maxwell(cls.cusp, 1.0))

    def test_points_available(self):
        self.assertGreater(len(self.points), 3)

    def test_symmetric_average(self):
        # 原像 (±a, −1/2)，两侧速度 (∓a, a²)，T₀ ≡ 1 时 v⁰ = (0, a²)
        for mp in self.points[::3]:
            point = self.analyzer.maxwell_velocity(self.cusp, mp, 1.0)
            a = float(point.x0[0])
            np.testing.assert_allclose(point.v0, [0.0, a * a], atol=1e-9)
            np.testing.assert_allclose(point.v0, point.v0_split, atol=1e-9)
            self.assertAlmostEqual(point.asymmetry, 0.0, places=9)
            self.assertGreater(point.normal_jump, 0.0)
            np.testing.assert_allclose(np.abs(point.n), [1.0, 0.0], atol=1e-8)

    def test_adhesion_velocity(self):
        point = self.analyzer.maxwell_velocity(self.cusp, self.points[0], 1.0)
        np.testing.assert_allclose(self.analyzer.adhesion_velocity(self.cusp, point, 1.0), point.v0, atol=1e-9)

    def test_one_sided_limits(self):
        point = self.analyzer.maxwell_velocity(self.cusp, self.points[len(self.points) // 2], 1.0)
        plus, minus = self.analyzer.one_sided_limits(self.cusp, point, offset=1e-6)
        np.testing.assert_allclose(plus, point.grad_S, atol=1e-4)
        np.testing.assert_allclose(minus, point.grad_S_check, atol=1e-4)

    def test_inviscid_velocity_regular_point(self):
        v = self.analyzer.inviscid_velocity(self.cusp, [1.5, -1.5], 1.0)
        pis = pre_images(self.cusp, [1.5, -1.5], 1.0)
        np.testing.assert_allclose(v, flow_map(self.cusp, pis.minimizer.x0, 1.0).Xdot, atol=1e-12)

    def test_coincident_pre_images_rejected(self):
        mp = SimpleNamespace(x=np.array([0.0, -0.5]), x0=np.array([0.0, -0.5]), partner=np.array([0.0, -0.5]))
        with self.assertRaises(GeometryError):
            self.analyzer.maxwell_velocity(self.cusp, mp, 1.0)
        with self.assertRaises(GeometryError):
            self.analyzer.maxwell_velocity(self.cusp, SimpleNamespace(x=[0, 0], x0=[0, 0], partner=None), 1.0)

    def test_table(self):
        pts = [self.analyzer.maxwell_velocity(self.cusp, mp, 1.0) for mp in self.points[:3]]
        df = self.analyzer.maxwell_table(pts)
        self.assertEqual(len(df), 3)
        for col in ('t', 'x1', 'x2', 'rho', 'rho_check', 'v0_1', 'v0_2', 'adhesion_v1'):
            self.assertIn(col, df.columns)


class TestVorticity(unittest.TestCase):
    """涡量"""

    @classmethod
    def setUpClass(cls):
        config = load_test_config()
        cls.engine = GeometryEngine(config)
        cls.analyzer = ShockFlowAnalyzer(config, cls.engine)

    def test_symmetric_density_has_no_vorticity(self):
        sc = load_scenario('generic_cusp')
        mp = interior_points(self.engine.maxwell(sc, 1.0))[0]
        point = self.analyzer.vorticity(sc, mp, 1.0)
        self.assertLess(abs(point.omega0), 1e-5)

    def test_asymmetric_density_gives_vorticity(self):
        sc = parse_scenario(ASYMMETRIC_CUSP)
        mp = interior_points(self.engine.maxwell(sc, 1.0))[0]
        point = self.analyzer.vorticity(sc, mp, 1.0)
        self.assertNotAlmostEqual(point.asymmetry, 0.0, places=3)
        self.assertGreater(abs(point.omega0), 10 * point.omega_noise)
        self.assertGreater(abs(point.omega0), 1e-4)

    def test_one_dimensional_rejected(self):
        with self.assertRaises(ScenarioError):
            self.analyzer.vorticity(load_scenario('focusing_1d'), None, 1.0)


class TestMassAccretion(unittest.TestCase):
    """质量粘附"""

    @classmethod
    def setUpClass(cls):
        cls.analyzer = ShockFlowAnalyzer(load_test_config())
        cls.cusp = load_scenario('generic_cusp')

    def test_zero_horizon(self):
        ledger = self.analyzer.mass_accreted(self.cusp, 0.0)
        self.assertEqual(ledger.m0, 0.0)
        self.assertTrue(ledger.has_quadrature)
        with self.assertRaises(ValueError):
            self.analyzer.mass_accreted(self.cusp, -1.0)

    def test_no_shock_in_window(self):
        # box 内的 y₀ ≥ −1.5，Maxwell 前像 y₀ = −1/(2t) 在 t < 1/3 时不进入 box
        ledger = self.analyzer.mass_accreted(self.cusp, 0.2)
        self.assertAlmostEqual(ledger.m0, 0.0, places=12)
        mc = self.analyzer.particle_adhesion_mc(self.cusp, 0.2, n_particles=2000, seed=5)
        self.assertEqual(mc.mc_estimate, 0.0)
        self.assertAlmostEqual(mc.free_mass, mc.total_mass - mc.kink_mass, places=10)

    def test_monte_carlo_bookkeeping(self):
        mc = self.analyzer.particle_adhesion_mc(self.cusp, 1.0, n_particles=4000, seed=11)
        self.assertEqual(mc.n_particles, 4000)
        # T₀ ≡ 1，box 面积 9
        self.assertAlmostEqual(mc.total_mass, 9.0, places=10)
        self.assertLess(mc.bookkeeping_residual(), 1e-9)
        self.assertGreaterEqual(mc.mc_estimate, 0.0)

    def test_monte_carlo_reproducible(self):
        a = self.analyzer.particle_adhesion_mc(self.cusp, 1.0, n_particles=3000, seed=2)
        b = self.analyzer.particle_adhesion_mc(self.cusp, 1.0, n_particles=3000, seed=2)
        self.assertEqual(a.mc_estimate, b.mc_estimate)
        self.assertEqual(a.kink_mass, b.kink_mass)

    def test_quadrature_against_monte_carlo(self):
        quad = self.analyzer.mass_accreted(self.cusp, 1.0)
        mc = self.analyzer.particle_adhesion_mc(self.cusp, 1.0, n_particles=4000, seed=3)
        merged = self.analyzer.compare_mass(quad, mc)
        self.assertGreaterEqual(merged.m0, 0.0)
        self.assertAlmostEqual(merged.swept, 2 * merged.m0)
        self.assertTrue(merged.lower_bound_holds(3.0))
        self.assertTrue(merged.mc_agrees(3.0),
                        msg=f'swept={merged.swept:.6g}, mc={merged.mc_estimate:.6g}±{merged.stderr:.2g}')
        self.assertEqual(list(merged.rates.columns), ['t', 'rate', 'excluded_rate'])

    def test_ledger_predicates(self):
        ledger = MassLedger(T=1.0, m0=0.5, swept=1.0, mc_estimate=1.05, stderr=0.02)
        self.assertTrue(ledger.mc_agrees(3.0))
        self.assertTrue(ledger.lower_bound_holds(3.0))
        ledger.mc_estimate = 0.4
        self.assertFalse(ledger.mc_agrees(3.0))
        self.assertFalse(ledger.lower_bound_holds(3.0))

    def test_requires_planar_free_scenario(self):
        with self.assertRaises(ScenarioError):
            self.analyzer.mass_accreted(load_scenario('focusing_1d'), 1.0)
        with self.assertRaises(ScenarioError):
            self.analyzer.particle_adhesion_mc(self.cusp.with_mode('general-numeric'), 1.0, n_particles=10)


class TestVortexLines(unittest.TestCase):
    """三维挤出场景的涡线"""

    @classmethod
    def setUpClass(cls):
        cls.analyzer = ShockFlowAnalyzer(load_test_config())

    def test_planar_scenario_rejected(self):
        with self.assertRaises(ScenarioError):
            self.analyzer.vortex_patch(load_scenario('generic_cusp'), 1.0)

    def test_extruded_patch(self):
        sc = load_scenario('extruded_3d')
        patch = self.analyzer.vortex_patch(sc, 1.0, n_z=7)
        self.assertEqual(patch.lhs.shape, (len(patch.xi1), 7))
        # z = (1+t)z₀ 与截面解耦
        np.testing.assert_allclose(patch.h2, 2.0, rtol=1e-6)
        np.testing.assert_allclose(patch.positions[:, :, 2], np.broadcast_to(2.0 * patch.xi2, patch.lhs.shape),
                                   atol=1e-10)
        # 沿挤出方向平移不变
        np.testing.assert_allclose(patch.lhs, np.broadcast_to(patch.lhs[:, :1], patch.lhs.shape),
                                   rtol=1e-6, atol=1e-10)

    def test_vortex_lines_follow_extrusion(self):
        sc = load_scenario('extruded_3d')
        patch = self.analyzer.vortex_patch(sc, 1.0, n_z=7)
        column = patch.lhs[:, 0]
        k = int(np.argmax(np.abs(np.diff(column))))
        c = 0.5 * (column[k] + column[k + 1])
        curves = self.analyzer.vortex_lines(sc, 1.0, patch=patch, c_values=[c])
        self.assertEqual(len(curves), 1)
        curve = curves[0]
        self.assertEqual(curve.label, f'vortex({c:g})')
        self.assertTrue(curve.branch_ids())
        for b in curve.branch_ids():
            pts = curve.branch(b)
            xyz = np.array([p.x for p in pts])
            # 等值线沿挤出方向贯穿坐标片，截面位置不变
            self.assertAlmostEqual(float(np.min(xyz[:, 2])), -2.0, places=6)
            self.assertAlmostEqual(float(np.max(xyz[:, 2])), 2.0, places=6)
            np.testing.assert_allclose(xyz[:, :2], np.broadcast_to(xyz[:1, :2], xyz[:, :2].shape), atol=1e-3)
            tangents = np.array([p.velocity for p in pts])
            self.assertTrue(np.all(np.abs(tangents[:, 2]) > 0.99))
            self.assertTrue(all(p.cool and p.partner is not None for p in pts))


if __name__ == '__main__':
    unittest.main()

#!/usr/bin/env python3
"""
湍流时间模块测试：ζ 过程、λ 分支、零点与 Y 过程回归统计
"""

import os
import sys
import unittest

import numpy as np
import yaml

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.errors import NumericError, ScenarioError
from core.scenario_parser import load_scenario
from core.turbulence import CausticFamily, ZetaSimulator, sign_change_times, y_process
from core.wiener import WienerPath

TEST_CONFIG = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'test_config.yaml')


def load_test_config():
    with open(TEST_CONFIG, 'r', encoding='utf-8') as f:
        return yaml.safe_load(f)


class TestHelpers(unittest.TestCase):
    """Y 过程与变号检测"""

    def test_y_process_formula(self):
        path = WienerPath.simulate(2, 1.0, dt=1e-2, seed=9)
        Y = y_process(path)
        self.assertEqual(Y[0], 0.0)
        k = 37
        expected = path.W[k] @ path.intW[k] - 0.5 * path.intW2[k]
        self.assertAlmostEqual(Y[k], expected, places=14)

    def test_sign_change_times(self):
        times = np.array([0.0, 1.0, 2.0, 3.0])
        values = np.array([0.0, 1.0, -1.0, 1.0])
        np.testing.assert_allclose(sign_change_times(times, values), [1.5, 2.5])


class TestCausticFamily(unittest.TestCase):
    """一般尖点的确定性焦散族"""

    @classmethod
    def setUpClass(cls):
        cls.fam = CausticFamily(load_scenario('generic_cusp'))

    def test_parametrization(self):
        lam = np.array([-0.4, 0.0, 0.3])
        t = 0.8
        expected = np.column_stack([4 * t * t * lam ** 3, 3 * t * lam ** 2 - 1 / (2 * t)])
        np.testing.assert_allclose(self.fam.position(lam, t), expected, atol=1e-14)
        np.testing.assert_allclose(self.fam.pre_image(lam, t)[:, 1], (4 * t * t * lam ** 2 - 1) / (2 * t))

    def test_cusp_branch(self):
        for t in (0.5, 1.0, 2.0):
            np.testing.assert_allclose(self.fam.deterministic_roots(t, -2, 2), [0.0], atol=1e-14)
            self.assertAlmostEqual(float(self.fam.action0(np.array([0.0]), t)[0]), 0.0)

    def test_requires_planar_scenario(self):
        with self.assertRaises(ScenarioError):
            CausticFamily(load_scenario('focusing_1d'))


class TestZeta(unittest.TestCase):
    """ζ 过程取值"""

    @classmethod
    def setUpClass(cls):
        cls.sim = ZetaSimulator(load_test_config())
        cls.cusp = load_scenario('generic_cusp')
        cls.noisy = cls.cusp.with_eps(0.1)
        cls.path = WienerPath.simulate(2, 1.0, dt=1e-3, seed=21)

    def test_deterministic_value_at_cusp(self):
        self.assertAlmostEqual(self.sim.zeta(self.cusp, 0.3, 1.0, None, 0.0), -0.3, places=14)
        self.assertAlmostEqual(self.sim.zeta(self.cusp, 0.0, 1.0, None, 0.0), 0.0, places=14)

    def test_deterministic_value_is_action_minus_level(self):
        for lam in (-0.7, 0.25, 0.9):
            ref = float(self.sim.family(self.cusp).action0(np.array([lam]), 0.6)[0])
            self.assertAlmostEqual(self.sim._zeta_value(self.sim.family(self.cusp), lam, 0.6, 0.2,
                                                        np.zeros(2), np.zeros(2), 0.0, 0.0), ref - 0.2)

    def test_stationarity_enforced(self):
        with self.assertRaises(NumericError):
            self.sim.zeta(self.cusp, 0.0, 1.0, None, 0.37)

    def test_lambda_solutions_include_cusp(self):
        sols = self.sim.lambda_solutions(self.cusp, 1.0)
        kinds = {kind for kind, _, _ in sols}
        self.assertIn('deterministic', kinds)
        self.assertTrue(any(abs(lam) < 1e-12 for _, lam, _ in sols))
        fam = self.sim.family(self.cusp)
        for _, lam, _ in sols:
            residual = fam.stationarity(np.array([lam]), 1.0, np.zeros(2))[0]
            self.assertLess(abs(residual), 1e-9)

    def test_random_branches_agree_with_direct_action(self):
        for t in (0.4, 0.7, 1.0):
            for _, lam, _ in self.sim.lambda_solutions(self.noisy, t, self.path):
                z = self.sim.zeta(self.noisy, 0.1, t, self.path, lam)
                direct = self.sim.direct_zeta(self.noisy, 0.1, t, self.path, lam)
                self.assertAlmostEqual(z, direct, delta=1e-8)

    def test_random_caustic_is_shifted_copy(self):
        for lam in (-0.5, 0.0, 0.6):
            self.assertLess(self.sim.caustic_shift_residual(self.noisy, 0.9, self.path, lam), 1e-10)

    def test_random_roots_match_dense_scan(self):
        fam = self.sim.family(self.noisy)
        eps_w = self.sim._noise(self.noisy, 0.8, self.path)[0]
        roots = fam.random_roots(0.8, eps_w, -2, 2)
        # 确定性因子 λ 在 0 处变号，先除去
        grid = np.linspace(-2, 2, 400000)
        g = fam.stationarity(grid, 0.8, eps_w) / grid
        changes = int(np.sum(np.sign(g[:-1]) * np.sign(g[1:]) < 0))
        self.assertEqual(len(roots), changes)


class TestTurbulentTimes(unittest.TestCase):
    """湍流时间"""

    @classmethod
    def setUpClass(cls):
        cls.sim = ZetaSimulator(load_test_config())
        cls.cusp = load_scenario('generic_cusp')
        cls.grid = np.linspace(0.1, 1.0, 46)

    def test_no_zeros_when_level_misses(self):
        sample = self.sim.turbulent_times(self.cusp, 0.5, None, self.grid)
        self.assertFalse(sample.has_zero)
        self.assertEqual(sample.degenerate_branches, [])

    def test_degenerate_branch_flagged(self):
        sample = self.sim.turbulent_times(self.cusp, 0.0, None, self.grid)
        self.assertTrue(sample.degenerate_branches)
        branch = sample.degenerate_branches[0]
        touches = [z for z in sample.zeros if z.branch == branch]
        self.assertEqual(len(touches), len(self.grid))
        self.assertTrue(all(z.kind == 'touch' for z in touches))

    def test_zeros_are_refined(self):
        path = WienerPath.simulate(2, 2.0, dt=1e-3, seed=4)
        sc = self.cusp.with_eps(0.5)
        sample = self.sim.turbulent_times(sc, 0.0, path)
        for z in sample.zeros:
            if z.kind == 'touch':
                continue
            self.assertLess(abs(self.sim.zeta(sc, 0.0, z.time, path, z.lam)), 1e-7)
        self.assertEqual(len(sample.grid), len(sample.zeta))

    def test_touch_at_last_grid_time(self):
        # ε = 0 时 λ = ±1/(2√2t) 分支上 ζ = −1/(128t³) − c，在 t = 1 处恰好为零
        sample = self.sim.turbulent_times(self.cusp, -1.0 / 128, None, np.linspace(0.5, 1.0, 11))
        self.assertEqual(len(sample.zeros), 2)
        for z in sample.zeros:
            self.assertEqual(z.kind, 'touch')
            self.assertEqual(z.time, 1.0)
            self.assertAlmostEqual(abs(z.lam), 1 / (2 * np.sqrt(2.0)), places=8)
        self.assertEqual(sample.hot_zeros, [])

    def test_only_cool_zeros_kept(self):
        path = WienerPath.simulate(2, 2.0, dt=1e-3, seed=4)
        sc = self.cusp.with_eps(0.5)
        sample = self.sim.turbulent_times(sc, 0.0, path)
        fam = self.sim.family(sc)
        self.assertTrue(all(z.cool for z in sample.zeros))
        self.assertFalse(any(z.cool for z in sample.hot_zeros))
        for z in sample.zeros + sample.hot_zeros:
            self.assertEqual(z.cool, fam.is_cool(z.lam, z.time, self.sim.tie_tol))
        self.assertEqual(sample.has_zero, bool(sample.zeros))

    def test_grid_must_fit_path(self):
        path = WienerPath.simulate(2, 0.5, dt=1e-3, seed=1)
        with self.assertRaises(NumericError):
            self.sim.turbulent_times(self.cusp.with_eps(0.1), 0.0, path, [0.2, 0.8])
        with self.assertRaises(ValueError):
            self.sim.turbulent_times(self.cusp, 0.0, None, [0.0, 0.5])


class TestRecurrence(unittest.TestCase):
    """Y 过程的回归统计"""

    @classmethod
    def setUpClass(cls):
        cls.sim = ZetaSimulator(load_test_config())
        cls.stats = cls.sim.recurrence_stats(2, 4.0, 20, seeds=range(100, 120))

    def test_zero_times_increasing(self):
        self.assertEqual(len(self.stats.zero_times), 20)
        for z in self.stats.zero_times:
            self.assertTrue(np.all(np.diff(z) > 0))
            self.assertTrue(np.all((z > 0) & (z <= 4.0)))

    def test_fraction_beyond_checkpoints(self):
        np.testing.assert_allclose(self.stats.checkpoints, [2.0, 1.0, 0.5, 0.25])
        self.assertTrue(np.all(np.diff(self.stats.fraction_beyond) >= 0))
        self.assertTrue(0.0 <= self.stats.window_fraction <= 1.0)

    def test_reproducible(self):
        again = self.sim.recurrence_stats(2, 4.0, 20, seeds=range(100, 120))
        np.testing.assert_array_equal(again.max_zero, self.stats.max_zero)

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            self.sim.recurrence_stats(2, 0.0, 5)

    def test_corollary_conditions_decay(self):
        cond = self.sim.corollary_conditions(load_scenario('generic_cusp'), 0.0, np.linspace(3.0, 30.0, 10))
        np.testing.assert_allclose(cond['action_term'], 0.0, atol=1e-15)
        self.assertTrue(np.all(np.diff(np.abs(cond['position_term'])) < 0))
        self.assertTrue(bool(cond['recurrent_indicated'][0]))
        with self.assertRaises(ValueError):
            self.sim.corollary_conditions(load_scenario('generic_cusp'), 0.0, [2.0, 5.0])


if __name__ == '__main__':
    unittest.main()

#!/usr/bin/env python3
"""
命令行与结果目录测试
"""

import os
import shutil
import sys
import tempfile
import unittest
from pathlib import Path
from types import SimpleNamespace
from unittest.mock import patch

import numpy as np
import pandas as pd

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import app
from core.artifacts import MANIFEST_NAME, ArtifactWriter, read_manifest, sha256_file
from core.errors import (EXIT_NUMERIC, EXIT_OK, EXIT_SCENARIO, EXIT_USAGE, AcceptanceError, GeometryError,
                         ScenarioParseError, exit_code_for)
from core.scenario_parser import load_scenario
from core.viscousref import ShockJumpReport
from main_controller import BurgersAnalysisController, RunConfig

TEST_CONFIG = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'test_config.yaml')


class TestArtifactWriter(unittest.TestCase):
    """结果目录写出"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.target = os.path.join(self.temp_dir, 'out')

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_commit_writes_manifest(self):
        with ArtifactWriter({}, self.target) as writer:
            writer.write_csv('a/data.csv', pd.DataFrame({'x1': [0.1, 0.2], 'x2': [1.0, 2.0]}))
            writer.write_text('report/summary.txt', 'ok')
        entries = read_manifest(self.target)
        self.assertEqual([rel for rel, _ in entries], ['a/data.csv', 'report/summary.txt'])
        for rel, digest in entries:
            self.assertEqual(sha256_file(Path(self.target) / rel), digest)
        self.assertEqual(entries, writer.manifest_entries)

    def test_float_precision(self):
        with ArtifactWriter({'output': {'float_digits': 17}}, self.target) as writer:
            writer.write_csv('v.csv', pd.DataFrame({'x': [1 / 3]}))
        value = pd.read_csv(os.path.join(self.target, 'v.csv'))['x'][0]
        self.assertEqual(value, 1 / 3)

    def test_abort_on_error(self):
        with self.assertRaises(RuntimeError):
            with ArtifactWriter({}, self.target) as writer:
                writer.write_text('a.txt', 'x')
                raise RuntimeError('boom')
        self.assertFalse(os.path.exists(self.target))
        self.assertEqual([p for p in os.listdir(self.temp_dir)], [])

    def test_replace_previous_output(self):
        with ArtifactWriter({}, self.target) as writer:
            writer.write_text('old.txt', 'old')
        with ArtifactWriter({}, self.target) as writer:
            writer.write_text('new.txt', 'new')
        self.assertEqual(sorted(os.listdir(self.target)), [MANIFEST_NAME, 'new.txt'])

    def test_refuses_foreign_directory(self):
        os.makedirs(self.target)
        with open(os.path.join(self.target, 'keep.txt'), 'w') as fh:
            fh.write('x')
        with self.assertRaises(FileExistsError):
            ArtifactWriter({}, self.target)

    def test_rejects_bad_names(self):
        with ArtifactWriter({}, self.target) as writer:
            with self.assertRaises(ValueError):
                writer.write_text('../escape.txt', 'x')
            writer.write_text('a.txt', 'x')
            with self.assertRaises(ValueError):
                writer.write_text('a.txt', 'y')
            with self.assertRaises(ValueError):
                writer.write_svg('f.svg', [('missing.csv', 'caustic')])

    def test_svg_is_deterministic(self):
        digests = []
        for name in ('one', 'two'):
            target = os.path.join(self.temp_dir, name)
            with ArtifactWriter({}, target) as writer:
                writer.write_csv('c.csv', pd.DataFrame({'label': ['c'] * 3, 'branch': [0, 0, 0],
                                                        'x1': [0.0, 1.0, 2.0], 'x2': [0.0, 1.0, 0.0]}))
                writer.write_svg('f.svg', [('c.csv', 'caustic')], title='test')
            digests.append(read_manifest(target))
        self.assertEqual(digests[0], digests[1])


class TestExitCodes(unittest.TestCase):
    """异常到退出码的映射"""

    def test_mapping(self):
        self.assertEqual(exit_code_for(ScenarioParseError('x', 1, 1)), EXIT_SCENARIO)
        self.assertEqual(exit_code_for(GeometryError('x')), EXIT_NUMERIC)
        self.assertEqual(exit_code_for(AcceptanceError('x')), 4)
        self.assertEqual(exit_code_for(FileNotFoundError('x')), EXIT_USAGE)
        self.assertEqual(exit_code_for(ValueError('x')), EXIT_USAGE)

    def test_run_config_validation(self):
        with self.assertRaises(ValueError):
            RunConfig(command='nothing', scenario='generic_cusp')
        with self.assertRaises(ValueError):
            RunConfig(command='geometry', scenario='generic_cusp', t_values=[0.0])
        with self.assertRaises(ValueError):
            RunConfig(command='geometry', scenario='generic_cusp', eps=-1.0)


class TestCommandLine(unittest.TestCase):
    """app.main 端到端"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def _main(self, *args, output='out'):
        argv = ['--config', TEST_CONFIG, *args]
        if output:
            argv += ['--output', os.path.join(self.temp_dir, output)]
        return app.main(argv)

    def test_empty_time_list(self):
        code = self._main('geometry', '--scenario', 'generic_cusp', '--t')
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(read_manifest(os.path.join(self.temp_dir, 'out')), [])
        self.assertTrue(os.path.exists(os.path.join(self.temp_dir, 'out', MANIFEST_NAME)))

    def test_malformed_scenario(self):
        bad = os.path.join(self.temp_dir, 'bad.scn')
        with open(bad, 'w', encoding='utf-8') as fh:
            fh.write('dim = 2\nS0 = x0^^2\n')
        self.assertEqual(self._main('geometry', '--scenario', bad, '--t', '1'), EXIT_SCENARIO)
        self.assertFalse(os.path.exists(os.path.join(self.temp_dir, 'out')))

    def test_missing_scenario(self):
        self.assertEqual(self._main('geometry', '--scenario', 'no_such_scenario', '--t', '1'), EXIT_USAGE)

    def test_usage_errors(self):
        with self.assertRaises(SystemExit) as ctx:
            app.main(['geometry'])
        self.assertEqual(ctx.exception.code, EXIT_USAGE)
        with self.assertRaises(SystemExit) as ctx:
            app.main(['--config', TEST_CONFIG, 'explode', '--scenario', 'generic_cusp'])
        self.assertEqual(ctx.exception.code, EXIT_USAGE)
        self.assertEqual(self._main('geometry', '--scenario', 'generic_cusp', '--t', '-1'), EXIT_USAGE)

    def test_geometry_outputs_reproducible(self):
        args = ('geometry', '--scenario', 'generic_cusp', '--t', '1', '--c', '0.1')
        self.assertEqual(self._main(*args, output='a'), EXIT_OK)
        self.assertEqual(self._main(*args, output='b'), EXIT_OK)
        first = read_manifest(os.path.join(self.temp_dir, 'a'))
        second = read_manifest(os.path.join(self.temp_dir, 'b'))
        self.assertEqual(first, second)
        names = [rel for rel, _ in first]
        for expected in ('geometry/t1/caustic.csv', 'geometry/t1/maxwell.csv', 'geometry/t1/figure.svg',
                         'report/checks.csv'):
            self.assertIn(expected, names)

    def test_output_from_environment(self):
        target = os.path.join(self.temp_dir, 'env_out')
        os.environ['BURGERS_OUTPUT_DIR'] = target
        try:
            code = self._main('geometry', '--scenario', 'generic_cusp', '--t', output=None)
        finally:
            del os.environ['BURGERS_OUTPUT_DIR']
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(os.path.exists(os.path.join(target, MANIFEST_NAME)))



class TestShockJumpChecks(unittest.TestCase):
    """粘性跳跃检查的接线"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.target = os.path.join(self.temp_dir, 'out')
        self.controller = BurgersAnalysisController(TEST_CONFIG)
        self.sc = load_scenario('generic_cusp')

    def tearDown(self):
        self.controller.cleanup()
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_skipped_before_caustic(self):
        with ArtifactWriter({}, self.target) as writer:
            self.assertEqual(self.controller._shock_jump_checks(self.sc, [0.1], None, writer), [])

    def test_checks_compare_against_one_sided_limits(self):
        mp = SimpleNamespace(x=np.array([0.0, 0.2]), n=np.array([1.0, 0.0]), normal_jump=1.0)
        limits = (np.array([-0.5, 0.0]), np.array([0.5, 0.0]))
        report = ShockJumpReport(x=mp.x, normal=mp.n, t=1.0, offset=0.2, mu_list=[0.4, 0.3, 0.2],
                                 expected=limits[0] - limits[1],
                                 jumps=np.array([[-0.7, 0.0], [-0.85, 0.0], [-0.95, 0.0]]),
                                 peak_offset=np.array([0.03, 0.01, 0.0]), cell=np.array([0.02, 0.015, 0.01]))
        with patch.object(self.controller, '_strongest_shock_point', return_value=mp), \
                patch.object(self.controller.shock, 'one_sided_limits', return_value=limits) as limits_call, \
                patch.object(self.controller.viscous, 'shock_jump', return_value=report) as jump_call:
            with ArtifactWriter({}, self.target) as writer:
                checks = self.controller._shock_jump_checks(self.sc, [1.0], None, writer)
        limits_call.assert_called_once_with(self.sc, mp, 0.2, None)
        args = jump_call.call_args[0]
        self.assertIs(args[4], limits)
        self.assertEqual(args[5], [0.4, 0.3, 0.2])
        by_name = {c.name: c for c in checks}
        self.assertEqual(set(by_name), {'viscous_jump@t1', 'viscous_jump_location@t1'})
        self.assertTrue(by_name['viscous_jump@t1'].passed)
        self.assertAlmostEqual(by_name['viscous_jump@t1'].value, 0.05)
        self.assertTrue(by_name['viscous_jump_location@t1'].passed)
        self.assertIn('viscous/t1/shock_jump.csv', [rel for rel, _ in read_manifest(self.target)])

    def test_failed_jump_is_reported(self):
        mp = SimpleNamespace(x=np.array([0.0, 0.2]), n=np.array([1.0, 0.0]), normal_jump=1.0)
        limits = (np.array([-0.5, 0.0]), np.array([0.5, 0.0]))
        # 误差不随 μ 下降，跳跃位置偏离两个网格
        report = ShockJumpReport(x=mp.x, normal=mp.n, t=1.0, offset=0.2, mu_list=[0.4, 0.2],
                                 expected=limits[0] - limits[1], jumps=np.array([[-0.9, 0.0], [-0.6, 0.0]]),
                                 peak_offset=np.array([0.0, 0.02]), cell=np.array([0.02, 0.01]))
        with patch.object(self.controller, '_strongest_shock_point', return_value=mp), \
                patch.object(self.controller.shock, 'one_sided_limits', return_value=limits), \
                patch.object(self.controller.viscous, 'shock_jump', return_value=report):
            with ArtifactWriter({}, self.target) as writer:
                checks = self.controller._shock_jump_checks(self.sc, [1.0], None, writer)
        self.assertEqual([c.passed for c in checks], [False, False])


if __name__ == '__main__':
    unittest.main()

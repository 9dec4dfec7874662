"""
主控制器模块

整合几何、湍流、激波流、粘性参照各模块，按子命令执行分析管线并写出结果目录
"""

import os
import sys
import copy
import math
import logging
import time
import yaml
import colorlog
import numpy as np
import pandas as pd
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

# 尝试相对导入，如果失败则使用绝对导入
try:
    from .core.artifacts import ArtifactWriter
    from .core.curves import ParamCurve
    from .core.errors import (AcceptanceError, BurgersError, EliminationError, NumericError,
                              ScenarioError, EXIT_OK, exit_code_for)
    from .core.geometry import GeometryEngine
    from .core.scenario import Scenario, model_for
    from .core.scenario_parser import load_scenario
    from .core.shockflow import ShockFlowAnalyzer
    from .core.turbulence import ZetaSimulator
    from .core.viscousref import ViscousReference, caustic_time
    from .core.wiener import WienerPath, philox_generator
except ImportError:
    # 添加项目根目录到路径
    current_dir = os.path.dirname(os.path.abspath(__file__))
    if current_dir not in sys.path:
        sys.path.insert(0, current_dir)

    from core.artifacts import ArtifactWriter
    from core.curves import ParamCurve
    from core.errors import (AcceptanceError, BurgersError, EliminationError, NumericError,
                             ScenarioError, EXIT_OK, exit_code_for)
    from core.geometry import GeometryEngine
    from core.scenario import Scenario, model_for
    from core.scenario_parser import load_scenario
    from core.shockflow import ShockFlowAnalyzer
    from core.turbulence import ZetaSimulator
    from core.viscousref import ViscousReference, caustic_time
    from core.wiener import WienerPath, philox_generator

COMMANDS = ('geometry', 'turbulence', 'shock', 'viscous', 'mass', 'verify-all')
OUTPUT_ENV = 'BURGERS_OUTPUT_DIR'


@dataclass
class RunConfig:
    """一次运行的参数，路径在构造时解析为绝对路径"""
    command: str
    scenario: str
    t_values: Optional[List[float]] = None  # None 取配置中的默认时刻，[] 为空运行
    c_values: List[float] = field(default_factory=list)
    eps: Optional[float] = None
    seeds: List[int] = field(default_factory=lambda: [0])
    output: Optional[str] = None
    overrides: Dict[str, Dict] = field(default_factory=dict)
    horizon: Optional[float] = None
    dt: Optional[float] = None
    n_paths: Optional[int] = None
    mu_list: Optional[List[float]] = None
    n_particles: Optional[int] = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"未知子命令: {self.command}，可选: {', '.join(COMMANDS)}")
        if self.eps is not None and self.eps < 0:
            raise ValueError(f"eps 必须非负: {self.eps}")
        if self.t_values is not None and any(t <= 0 for t in self.t_values):
            raise ValueError(f"时刻必须为正: {self.t_values}")
        if not self.seeds:
            raise ValueError("至少需要一个随机种子")
        candidate = Path(self.scenario)
        if candidate.exists():
            self.scenario = str(candidate.resolve())
        if self.output is not None:
            self.output = str(Path(self.output).resolve())


@dataclass
class CheckResult:
    """单项检查结果"""
    name: str
    passed: bool
    value: float
    detail: str = ''


@dataclass
class RunResult:
    """运行结果"""
    command: str
    exit_code: int = EXIT_OK
    output_dir: str = ''
    manifest: List[Tuple[str, str]] = field(default_factory=list)
    checks: List[CheckResult] = field(default_factory=list)
    message: str = ''
    elapsed: float = 0.0

    @property
    def failed_checks(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]


def _tag(t: float) -> str:
    return f"t{t:g}"


def _merge(base: Dict, extra: Dict) -> Dict:
    out = copy.deepcopy(base)
    for key, value in (extra or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


class BurgersAnalysisController:
    """随机Burgers无粘极限分析主控制器"""

    def __init__(self, config_path: str = "config.yaml", overrides: Optional[Dict] = None):
        """
        初始化控制器

        Args:
            config_path: 配置文件路径
            overrides: 按节覆盖的配置，例如 {'geometry': {'cusp_tol': 1e-8}}
        """
        # 加载配置
        self.config = _merge(self._get_default_config(), self._load_config(config_path))
        if overrides:
            self.config = _merge(self.config, overrides)

        # 设置日志
        self._setup_logging()
        self.logger = logging.getLogger(__name__)

        # 初始化核心组件
        self.geometry = GeometryEngine(self.config)
        self.zeta = ZetaSimulator(self.config)
        self.shock = ShockFlowAnalyzer(self.config, self.geometry)
        self.viscous = ViscousReference(self.config)
        self.max_workers = int(self.config.get('output', {}).get('max_workers', 4))
        self.verify_cfg = self.config.get('verify', {})

        self.progress_callback = None
        self.logger.info("分析控制器初始化完成")

    def _load_config(self, config_path: str) -> Dict:
        """加载配置文件"""
        try:
            with open(config_path, 'r', encoding='utf-8') as f:
                config = yaml.safe_load(f)
                return config or {}
        except Exception as e:
            print(f"警告：加载配置文件失败 ({e})，使用默认配置")
            return {}

    def _get_default_config(self) -> Dict:
        """获取默认配置"""
        return {
            'logging': {'level': 'INFO', 'file': 'burgers_analysis.log', 'color': True},
            'polyalg': {'max_sylvester_dim': 64, 'multiplicity_rtol': 1e-9, 'root_tol': 1e-12},
            'scenario': {
                'action_tie_tol': 1e-12,
                'shooting_starts': 20,
                'shooting_tol': 1e-8,
                'leapfrog_steps_per_unit': 2000,
                'fit_degree_margin': 4,
            },
            'wiener': {'dt_fraction': 1e-4, 'rng': 'philox'},
            'geometry': {
                'cusp_tol': 1e-6,
                'grid_points': 241,
                'newton_tol': 1e-13,
                'sample_spacing': 0.01,
                'partner_tol': 1e-9,
                'terminal_partner_ratio': 1e-3,
            },
            'turbulence': {
                'points_per_unit_time': 10000,
                'lambda_grid': 401,
                'lambda_halfwidth': 2.0,
                'zero_tol': 1e-10,
                'recurrence_dt': 0.005,
            },
            'shockflow': {
                'fd_step': 1e-5,
                'mass_slices': 24,
                'mass_nodes': 65,
                'richardson_step': 1e-3,
                'checkpoints_per_unit': 200,
                'mc_particles': 1000000,
                'mc_batch': 100000,
                'max_points': 200,
            },
            'viscous': {
                'mu_list': [0.4, 0.2, 0.1, 0.05],
                'cells_per_mu': 8,
                'boundary_budget': 1e-10,
                'singular_margin': 0.05,
                'dt_per_mu2': 0.05,
                'jump_offset': 0.2,
                'jump_mu_list': [0.4, 0.3, 0.2],
            },
            'output': {'directory': './output', 'float_digits': 17, 'max_workers': 4},
            'verify': {
                't_values': [0.5, 1.0, 2.0],
                'velocity_tol': 1e-8,
                'zeta_tol': 1e-8,
                'shift_tol': 1e-10,
                'jacobian_tol': 1e-6,
                'mass_conservation_tol': 1e-6,
                'jump_tol': 0.2,
                'mc_sigmas': 3.0,
                'order_window': [1.5, 2.5],
                'vorticity_noise_factor': 10.0,
                'cool_samples': 100,
                'cool_tie_tol': 1e-9,
                'jacobian_samples': 50,
                'min_maxwell_points': 100,
                'zeta_paths': 50,
                'zeta_horizon': 5.0,
                'zeta_eps': 0.1,
                'recurrence_horizons': [8, 16, 32],
                'recurrence_paths': 500,
            },
        }

    def _setup_logging(self):
        """设置日志：彩色控制台 + 文件"""
        log_config = self.config.get('logging', {})
        level = getattr(logging, str(log_config.get('level', 'INFO')).upper(), logging.INFO)
        fmt = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

        stream = logging.StreamHandler()
        if log_config.get('color', True):
            stream.setFormatter(colorlog.ColoredFormatter('%(log_color)s' + fmt))
        else:
            stream.setFormatter(logging.Formatter(fmt))
        handlers = [stream]
        log_file = log_config.get('file')
        if log_file:
            file_handler = logging.FileHandler(log_file, encoding='utf-8')
            file_handler.setFormatter(logging.Formatter(fmt))
            handlers.append(file_handler)

        logging.basicConfig(level=level, handlers=handlers, force=True)

    def enable_monitoring(self, progress_callback: Optional[Callable] = None):
        """启用进度回调"""
        self.progress_callback = progress_callback

    def _update_progress(self, message: str):
        self.logger.info(message)
        if self.progress_callback:
            self.progress_callback(message)

    # ======== 入口 ========

    def output_directory(self, rc: RunConfig) -> str:
        """命令行 > 环境变量 > 配置文件"""
        if rc.output:
            return rc.output
        env = os.environ.get(OUTPUT_ENV)
        if env:
            return str(Path(env).resolve())
        return str(Path(self.config.get('output', {}).get('directory', './output')).resolve())

    def run(self, rc: RunConfig) -> RunResult:
        """
        执行子命令，写出结果目录与清单

        Returns:
            运行结果，exit_code 按异常类型映射；verify-all 有检查失败时为 4
        """
        start = time.time()
        result = RunResult(command=rc.command, output_dir=self.output_directory(rc))
        try:
            sc = load_scenario(rc.scenario)
            if rc.eps is not None:
                sc = sc.with_eps(rc.eps)
            t_values = self._t_values(rc)
            self._update_progress(f"开始 {rc.command}: 场景 {sc.name}, t = {t_values}")

            pipelines = {
                'geometry': self.run_geometry,
                'turbulence': self.run_turbulence,
                'shock': self.run_shock,
                'viscous': self.run_viscous,
                'mass': self.run_mass,
                'verify-all': self.run_verify_all,
            }
            with ArtifactWriter(self.config, result.output_dir) as writer:
                if t_values:
                    result.checks = pipelines[rc.command](sc, rc, t_values, writer)
                else:
                    self.logger.info("时刻列表为空，不执行计算")
                if result.checks:
                    self._write_report(writer, sc, rc, result.checks)
            result.manifest = writer.manifest_entries

            failed = result.failed_checks
            if failed:
                names = ', '.join(c.name for c in failed)
                if rc.command == 'verify-all':
                    raise AcceptanceError(f"{len(failed)} 项验收检查失败: {names}",
                                          [(c.name, c.value) for c in failed])
                self.logger.warning(f"{len(failed)} 项检查未通过: {names}")
            result.message = f"完成，共 {len(result.manifest)} 个结果文件"
        except Exception as e:
            result.exit_code = exit_code_for(e)
            result.message = str(e)
            if isinstance(e, BurgersError) or isinstance(e, (ValueError, FileNotFoundError)):
                self.logger.error(f"{rc.command} 失败: {e}")
            else:
                self.logger.exception(f"{rc.command} 发生未预期的错误: {e}")
        result.elapsed = time.time() - start
        return result

    def _t_values(self, rc: RunConfig) -> List[float]:
        if rc.t_values is not None:
            return sorted(float(t) for t in rc.t_values)
        return sorted(float(t) for t in self.verify_cfg.get('t_values', [0.5, 1.0, 2.0]))

    def _write_report(self, writer: ArtifactWriter, sc: Scenario, rc: RunConfig, checks: List[CheckResult]):
        frame = pd.DataFrame([[c.name, c.passed, c.value, c.detail] for c in checks],
                             columns=['check', 'passed', 'value', 'detail'])
        writer.write_csv('report/checks.csv', frame)
        lines = [f"command: {rc.command}", f"scenario: {sc.name}", f"eps: {sc.eps:g}", '']
        for c in checks:
            lines.append(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.value:.6g} {c.detail}".rstrip())
        passed = sum(c.passed for c in checks)
        lines.append('')
        lines.append(f"{passed}/{len(checks)} 项通过")
        writer.write_text('report/summary.txt', '\n'.join(lines))

    # ======== 工具 ========

    def _parallel(self, fn: Callable, items: Sequence) -> List:
        """线程池执行，结果按提交顺序返回"""
        results = [None] * len(items)
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = {executor.submit(fn, item): i for i, item in enumerate(items)}
            for future in as_completed(futures):
                i = futures[future]
                try:
                    results[i] = future.result()
                except Exception as e:
                    self.logger.error(f"任务 {items[i]} 失败: {e}")
                    raise
        return results

    def _path_for(self, sc: Scenario, horizon: float, seed: int, dt: Optional[float] = None) -> Optional[WienerPath]:
        """有噪声的场景生成一条路径，否则返回 None"""
        if sc.eps == 0 or sc.noise_dim == 0:
            return None
        dt_fraction = float(self.config.get('wiener', {}).get('dt_fraction', 1e-4))
        return WienerPath.simulate(sc.noise_dim, horizon, dt=dt, seed=seed, dt_fraction=dt_fraction)

    @staticmethod
    def _default_levels(caustic: ParamCurve) -> List[float]:
        if caustic.is_empty:
            return [0.0]
        actions = np.array([p.action for p in caustic.points])
        actions = actions[np.isfinite(actions)]
        if actions.size == 0:
            return [0.0]
        return [float(np.quantile(actions, q)) for q in (0.25, 0.5, 0.75)]

    def _sample_box(self, sc: Scenario, n: int, seed: int, substream: int) -> np.ndarray:
        rng = philox_generator(seed, substream)
        box = np.array(sc.box, dtype=float)
        return box[:, 0] + rng.random((n, sc.d)) * (box[:, 1] - box[:, 0])

    # ======== 几何 ========

    def _geometry_at(self, sc: Scenario, t: float, c_values: Sequence[float], path) -> Dict:
        out = {}
        caustic = self.geometry.caustic(sc, t, path)
        out['caustic'] = caustic
        levels = list(c_values) or self._default_levels(caustic)
        out['levels'] = [self.geometry.level_surface(sc, c, t, path) for c in levels]
        if sc.d == 2:
            out['maxwell'] = self.geometry.maxwell(sc, t, path)
            out['report'] = self.geometry.check_geometry_theorems(sc, t, path, level_values=levels)
        else:
            out['maxwell'] = None
            out['report'] = self.geometry.detect_cusps(caustic)
        return out

    def run_geometry(self, sc: Scenario, rc: RunConfig, t_values: List[float],
                     writer: ArtifactWriter) -> List[CheckResult]:
        """焦散、等值面、Maxwell集与尖点定理"""
        path = self._path_for(sc, max(t_values), rc.seeds[0])
        results = self._parallel(lambda t: self._geometry_at(sc, t, rc.c_values, path), t_values)
        checks = []
        for t, res in zip(t_values, results):
            tag = _tag(t)
            layers = [(f'geometry/{tag}/caustic.csv', 'caustic')]
            writer.write_csv(layers[0][0], res['caustic'].to_frame())
            levels = pd.concat([lv.to_frame() for lv in res['levels']], ignore_index=True)
            writer.write_csv(f'geometry/{tag}/level.csv', levels)
            layers.append((f'geometry/{tag}/level.csv', 'level'))
            if res['maxwell'] is not None:
                writer.write_csv(f'geometry/{tag}/maxwell.csv', res['maxwell'].to_frame())
                layers.append((f'geometry/{tag}/maxwell.csv', 'maxwell'))
            report = res['report']
            writer.write_csv(f'geometry/{tag}/cusps.csv', report.to_frame())
            if report.checks:
                writer.write_csv(f'geometry/{tag}/theorems.csv', report.checks_frame())
            for w in report.warnings:
                self.logger.warning(f"t={t:g}: {w}")
            if sc.d == 2:
                writer.write_svg(f'geometry/{tag}/figure.svg', layers, title=f'{sc.name}  t={t:g}')
            for c in report.checks:
                checks.append(CheckResult(f'{c.name}@{tag}', c.passed, c.residual, c.detail))
            self._update_progress(f"几何 t={t:g}: 焦散 {len(res['caustic'])} 点, 尖点 {len(report.cusps)} 个")
        return checks

    def _factorization_checks(self, sc: Scenario, t_values: List[float], path) -> List[CheckResult]:
        checks = []
        for t in t_values:
            try:
                fr = self.geometry.maxwell_klein_split(sc, t, path)
                passed = tuple(fr.profile) == (2, 3) and fr.caustic_match
                checks.append(CheckResult(f'square_cube_split@{_tag(t)}', passed, 0.0 if passed else 1.0,
                                          f'profile={tuple(fr.profile)}'))
            except EliminationError as e:
                checks.append(CheckResult(f'square_cube_split@{_tag(t)}', False, 1.0, str(e)))
        return checks

    def _caustic_implicit_check(self, sc: Scenario, t: float, path) -> CheckResult:
        curve = self.geometry.caustic(sc, t, path)
        implicit = self.geometry.caustic_implicit(sc, t, path)
        if curve.is_empty:
            return CheckResult(f'caustic_implicit@{_tag(t)}', True, 0.0, '焦散为空')
        xs = curve.xs()
        values = np.abs(implicit.value(xs))
        grads = np.linalg.norm(implicit.gradient(xs), axis=1)
        residual = float(np.max(values / np.maximum(grads, 1.0)))
        return CheckResult(f'caustic_implicit@{_tag(t)}', residual < 1e-9, residual, f'{len(xs)} 点')

    def _brute_force_cool(self, sc: Scenario, t: float, path, x: np.ndarray, lam: float, tol: float) -> bool:
        """稠密网格 + 牛顿细化的全局最小"""
        family = model_for(sc, t, path).reduced_family()
        coeffs = family.coefficient_arrays(np.asarray(x)[None, :])[0]
        fp = np.polyder(coeffs)
        fpp = np.polyder(fp)
        lead = np.trim_zeros(fp, 'f')
        bound = 1.0 + float(np.max(np.abs(lead[1:] / lead[0]))) if lead.size > 1 else 1.0
        grid = np.linspace(-bound, bound, 10001)
        values = np.polyval(coeffs, grid)
        best = float(grid[int(np.argmin(values))])
        for _ in range(50):
            d2 = float(np.polyval(fpp, best))
            if d2 == 0:
                break
            step = float(np.polyval(fp, best)) / d2
            best -= step
            if abs(step) < 1e-15 * max(1.0, abs(best)):
                break
        f_min = min(float(values.min()), float(np.polyval(coeffs, best)))
        f_pt = float(np.polyval(coeffs, lam))
        return f_pt <= f_min + tol * max(1.0, abs(f_min))

    def _cool_check(self, sc: Scenario, t: float, path, seed: int) -> CheckResult:
        n = int(self.verify_cfg.get('cool_samples', 100))
        tol = float(self.verify_cfg.get('cool_tie_tol', 1e-9))
        pts = list(self.geometry.caustic(sc, t, path).points)
        try:
            pts += list(self.geometry.maxwell(sc, t, path).points)
        except (EliminationError, NumericError) as e:
            self.logger.warning(f"Maxwell集不可用，cool 检查只用焦散点: {e}")
        if not pts:
            return CheckResult(f'cool_classification@{_tag(t)}', True, 0.0, '没有曲线点')
        rng = philox_generator(seed, 7)
        idx = rng.choice(len(pts), size=min(n, len(pts)), replace=False)
        disagree = sum(1 for i in idx
                       if self._brute_force_cool(sc, t, path, pts[i].x, float(pts[i].x0[0]), tol) != pts[i].cool)
        return CheckResult(f'cool_classification@{_tag(t)}', disagree == 0, float(disagree), f'{len(idx)} 点')

    # ======== 湍流 ========

    def _turbulence_seed(self, sc: Scenario, cs: Sequence[float], horizon: float, dt: Optional[float], seed: int):
        path = WienerPath.simulate(max(sc.noise_dim, 1), horizon, dt=dt, seed=seed,
                                   dt_fraction=float(self.config.get('wiener', {}).get('dt_fraction', 1e-4)))
        grid = self.zeta.default_grid(horizon)
        return path, [self.zeta.turbulent_times(sc, c, path, grid) for c in cs]

    def run_turbulence(self, sc: Scenario, rc: RunConfig, t_values: List[float],
                       writer: ArtifactWriter) -> List[CheckResult]:
        """ζ 过程的零点（湍流时刻）与 Y 过程的回归统计"""
        horizon = float(rc.horizon or max(t_values))
        seeds = [rc.seeds[0] + i for i in range(rc.n_paths)] if rc.n_paths else list(rc.seeds)
        cs = list(rc.c_values) or [0.0]
        self._update_progress(f"ζ 过程: {len(seeds)} 条路径, 时间范围 {horizon:g}")
        results = self._parallel(lambda s: self._turbulence_seed(sc, cs, horizon, rc.dt, s), seeds)

        sample_rows, zero_rows, summary_rows = [], [], []
        for seed, (path, samples) in zip(seeds, results):
            for c, sample in zip(cs, samples):
                sample_rows += [(seed, t, b, lam, z, c) for t, b, lam, z in sample.rows()]
                zero_rows += [(seed, z.branch, z.time, c, z.kind, z.lam, z.cool)
                              for z in sample.zeros + sample.hot_zeros]
                summary_rows.append((seed, c, len(sample.zeros), len(sample.hot_zeros),
                                     len(sample.degenerate_branches), len(sample.merges)))
        writer.write_csv('turbulence/samples.csv', pd.DataFrame(
            sample_rows, columns=['seed', 't', 'branch', 'lambda', 'zeta', 'c']))
        writer.write_csv('turbulence/zeros.csv', pd.DataFrame(
            zero_rows, columns=['seed', 'branch', 'tau', 'c', 'kind', 'lambda', 'cool']))
        writer.write_csv('turbulence/summary.csv', pd.DataFrame(
            summary_rows, columns=['seed', 'c', 'n_zeros', 'n_hot_zeros', 'degenerate_branches', 'merges']))
        writer.write_svg('turbulence/zeta.svg', [('turbulence/samples.csv', 'series')], x_col='t', y_col='zeta',
                         group_cols=('seed', 'c', 'branch'), title=f'{sc.name} zeta')

        stats = self.zeta.recurrence_stats(2, horizon, len(seeds), seeds,
                                           scenario=sc if horizon > math.e * 1.01 else None)
        writer.write_csv('turbulence/recurrence.csv', pd.DataFrame({
            'checkpoint': stats.checkpoints, 'fraction_beyond': stats.fraction_beyond}))
        writer.write_csv('turbulence/recurrence_summary.csv', pd.DataFrame([{
            'horizon': stats.horizon, 'dt': stats.dt, 'n_paths': len(stats.seeds),
            'window_fraction': stats.window_fraction, 'cluster_fraction': stats.cluster_fraction}]))
        if stats.corollary is not None:
            cor = stats.corollary
            writer.write_csv('turbulence/decay_conditions.csv', pd.DataFrame({
                't': cor['t'], 'h': cor['h'], 'action_term': cor['action_term'],
                'position_term': cor['position_term']}))

        return self._zeta_checks(sc, cs[0], [(seed, r[0], r[1][0]) for seed, r in zip(seeds, results)])

    def _zeta_checks(self, sc: Scenario, c: float, runs) -> List[CheckResult]:
        """ζ 闭式与直接作用量求值一致、随机焦散平移恒等式"""
        zeta_tol = float(self.verify_cfg.get('zeta_tol', 1e-8))
        shift_tol = float(self.verify_cfg.get('shift_tol', 1e-10))
        worst_zeta = worst_shift = 0.0
        count = 0
        for seed, path, sample in runs:
            picks = np.linspace(0, len(sample.grid) - 1, 5).astype(int)
            for k in picks:
                t = float(sample.grid[k])
                for b, lam in sample.lambda_branches[k]:
                    direct = self.zeta.direct_zeta(sc, c, t, path, lam)
                    worst_zeta = max(worst_zeta, abs(direct - sample.zeta[k][b]))
                    worst_shift = max(worst_shift, self.zeta.caustic_shift_residual(sc, t, path, lam))
                    count += 1
        return [CheckResult('zeta_direct_action', worst_zeta < zeta_tol, worst_zeta, f'{count} 个样本'),
                CheckResult('caustic_shift_identity', worst_shift < shift_tol, worst_shift, f'{count} 个样本')]

    def _recurrence_trend_check(self, seed_base: int) -> CheckResult:
        """(T/2, T] 内有零点的比例随 T 加倍不下降超过 2σ"""
        horizons = [float(h) for h in self.verify_cfg.get('recurrence_horizons', [8, 16, 32])]
        n = int(self.verify_cfg.get('recurrence_paths', 500))
        seeds = [seed_base + i for i in range(n)]
        fractions = [self.zeta.recurrence_stats(2, h, n, seeds).window_fraction for h in horizons]
        worst = 0.0
        for a, b in zip(fractions, fractions[1:]):
            sigma = math.sqrt(max(a * (1 - a), 1e-12) / n + max(b * (1 - b), 1e-12) / n)
            worst = max(worst, (a - b) / sigma)
        detail = ', '.join(f'T={h:g}:{f:.3f}' for h, f in zip(horizons, fractions))
        return CheckResult('recurrence_trend', worst <= 2.0, worst, detail)

    # ======== 激波流 ========

    def _shock_at(self, sc: Scenario, t: float, path) -> Tuple[List, int]:
        limit = int(self.config.get('shockflow', {}).get('max_points', 200))
        cool = self.geometry.maxwell(sc, t, path).cool_points()
        if len(cool) > limit:
            cool = [cool[i] for i in np.linspace(0, len(cool) - 1, limit).astype(int)]
        points, skipped = [], 0
        for cp in cool:
            try:
                mp = self.shock.maxwell_velocity(sc, cp, t, path)
                self.shock.vorticity(sc, mp, t, path)
                points.append(mp)
            except (NumericError, ScenarioError) as e:
                skipped += 1
                self.logger.debug(f"跳过 Maxwell 点 {cp.x.tolist()}: {e}")
        if skipped:
            self.logger.warning(f"t={t:g}: {skipped} 个 Maxwell 点不是正则点，已跳过")
        return points, skipped

    def _velocity_checks(self, sc: Scenario, t: float, points, path) -> List[CheckResult]:
        tag = _tag(t)
        velocity_tol = float(self.verify_cfg.get('velocity_tol', 1e-8))
        factor = float(self.verify_cfg.get('vorticity_noise_factor', 10.0))
        if not points:
            return [CheckResult(f'maxwell_points@{tag}', False, 0.0, '没有正则 cool Maxwell 点')]
        decomposition = max(float(np.linalg.norm(p.v0 - p.v0_split)) for p in points)
        parallel_fail = 0
        for p in points:
            try:
                self.shock.adhesion_velocity(sc, p, t, path)
            except NumericError:
                parallel_fail += 1
        asym = [p for p in points if abs(p.asymmetry) > 1e-3]
        weak = sum(1 for p in asym if float(np.linalg.norm(np.atleast_1d(p.omega0))) <= factor * p.omega_noise)
        min_points = int(self.verify_cfg.get('min_maxwell_points', 100))
        return [
            CheckResult(f'velocity_decomposition@{tag}', decomposition < velocity_tol, decomposition,
                        f'{len(points)} 点'),
            CheckResult(f'adhesion_parallel_to_normal@{tag}', parallel_fail == 0, float(parallel_fail)),
            CheckResult(f'vorticity_above_noise@{tag}', weak == 0, float(weak), f'{len(asym)} 个非对称点'),
            CheckResult(f'maxwell_points@{tag}', len(points) >= min_points, float(len(points)),
                        f'至少 {min_points}'),
        ]

    def _vortex_at(self, sc: Scenario, t: float, c_values, path):
        patch = self.shock.vortex_patch(sc, t, path=path)
        levels = list(c_values) or [float(np.quantile(patch.lhs, q)) for q in (0.25, 0.5, 0.75)]
        return patch, self.shock.vortex_lines(sc, t, patch, levels, path)

    def run_shock(self, sc: Scenario, rc: RunConfig, t_values: List[float],
                  writer: ArtifactWriter) -> List[CheckResult]:
        """Maxwell 集上的速度与涡量；三维挤出场景给出涡线"""
        path = self._path_for(sc, max(t_values), rc.seeds[0])
        checks = []
        if sc.d == 3:
            results = self._parallel(lambda t: self._vortex_at(sc, t, rc.c_values, path), t_values)
            for t, (patch, lines) in zip(t_values, results):
                tag = _tag(t)
                X1, X2 = np.meshgrid(patch.xi1, patch.xi2, indexing='ij')
                writer.write_csv(f'shock/{tag}/vortex_patch.csv', pd.DataFrame({
                    'xi1': X1.ravel(), 'xi2': X2.ravel(), 'h1': patch.h1.ravel(), 'h2': patch.h2.ravel(),
                    'lhs': patch.lhs.ravel()}))
                frames = [line.to_frame() for line in lines]
                writer.write_csv(f'shock/{tag}/vortex_lines.csv',
                                 pd.concat(frames, ignore_index=True) if frames else pd.DataFrame())
                tangency = 0.0
                for row in patch.points:
                    for mp in row:
                        self.shock.vorticity(sc, mp, t, path)
                        omega = np.asarray(mp.omega0, dtype=float)
                        tangency = max(tangency, abs(float(omega @ mp.n)))
                checks.append(CheckResult(f'vorticity_tangent@{tag}', tangency < 1e-6, tangency))
            return checks

        results = self._parallel(lambda t: self._shock_at(sc, t, path), t_values)
        for t, (points, skipped) in zip(t_values, results):
            tag = _tag(t)
            writer.write_csv(f'shock/{tag}/maxwell_points.csv', self.shock.maxwell_table(points))
            checks += self._velocity_checks(sc, t, points, path)
            self._update_progress(f"激波流 t={t:g}: {len(points)} 个正则点, 跳过 {skipped}")
        return checks

    # ======== 质量粘附 ========

    def run_mass(self, sc: Scenario, rc: RunConfig, t_values: List[float],
                 writer: ArtifactWriter) -> List[CheckResult]:
        """积分 m₀(0,T) 与粒子蒙特卡洛，按 T 升序"""
        sigmas = float(self.verify_cfg.get('mc_sigmas', 3.0))
        ledgers = []
        for T in t_values:
            quad = self.shock.mass_accreted(sc, T)
            mc = self.shock.particle_adhesion_mc(sc, T, rc.n_particles, seed=rc.seeds[0])
            ledger = self.shock.compare_mass(quad, mc)
            ledgers.append(ledger)
            writer.write_csv(f'mass/{_tag(T)}/rates.csv', ledger.rates)
            self._update_progress(f"质量粘附 T={T:g}: m₀={ledger.m0:.6g}, 蒙特卡洛 {ledger.mc_estimate:.6g}")
        writer.write_csv('mass/summary.csv', pd.DataFrame([lg.summary() for lg in ledgers]))

        checks = []
        for lg in ledgers:
            tag = _tag(lg.T)
            gap = abs(lg.mc_estimate - lg.swept) / lg.stderr if lg.stderr > 0 else 0.0
            checks.append(CheckResult(f'mass_mc_agreement@{tag}', lg.mc_agrees(sigmas), gap, 'σ 倍数'))
            checks.append(CheckResult(f'mass_lower_bound@{tag}', lg.lower_bound_holds(sigmas), lg.m0))
            residual = lg.bookkeeping_residual()
            checks.append(CheckResult(f'mass_bookkeeping@{tag}', residual < 1e-9 * max(1.0, lg.total_mass),
                                      residual))
        m0 = [lg.m0 for lg in ledgers]
        drops = [a - b for a, b in zip(m0, m0[1:]) if a > b]
        checks.append(CheckResult('mass_monotone_in_T', not drops, max(drops, default=0.0)))
        return checks

    # ======== 粘性参照 ========

    def _sample_points(self, sc: Scenario) -> np.ndarray:
        margin = float(self.config.get('viscous', {}).get('singular_margin', 0.05))
        axes = []
        for lo, hi in sc.box:
            pad = 0.25 * (hi - lo)
            axes.append(np.linspace(lo + pad + margin, hi - pad - margin, 9 if sc.d == 1 else 5))
        return np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, sc.d)

    def run_viscous(self, sc: Scenario, rc: RunConfig, t_values: List[float],
                    writer: ArtifactWriter) -> List[CheckResult]:
        """Hopf–Cole 粘性解与无粘极限的比较、Jacobian 恒等式与质量守恒"""
        if sc.d not in (1, 2):
            raise ScenarioError("粘性参照只支持一维和二维场景")
        mu_list = list(rc.mu_list or sc.mu or self.viscous.mu_list)
        path = self._path_for(sc, max(t_values), rc.seeds[0])
        lo, hi = self.verify_cfg.get('order_window', [1.5, 2.5])
        checks = []
        for t in t_values:
            tag = _tag(t)
            report = self.viscous.semiclassical_compare(sc, mu_list, self._sample_points(sc), t, path)
            writer.write_csv(f'viscous/{tag}/comparison.csv', report.to_frame())
            checks.append(CheckResult(f'semiclassical_order@{tag}', report.order_in_window(lo, hi),
                                      report.order_velocity,
                                      f'action p={report.order_action:.3g}, amplitude p={report.order_amplitude:.3g}'))
            snapshot = self.viscous.solve_heat(sc, max(mu_list), t, path=path).snapshot()
            writer.write_csv(f'viscous/{tag}/field.csv', snapshot)
            if sc.d == 1:
                writer.write_svg(f'viscous/{tag}/velocity.svg', [(f'viscous/{tag}/field.csv', 'series')],
                                 x_col='x', y_col='v1', group_cols=(), title=f'mu={max(mu_list):g}')

            samples = self._sample_box(sc, int(self.verify_cfg.get('jacobian_samples', 50)), rc.seeds[0], 11)
            jac = self.viscous.jacobian_identity_check(sc, samples, t, path)
            writer.write_csv(f'viscous/{tag}/jacobian.csv', pd.DataFrame(
                {**{f'x0_{i + 1}': jac.samples[:, i] for i in range(sc.d)}, 'left': jac.left, 'right': jac.right}))
            tol = float(self.verify_cfg.get('jacobian_tol', 1e-6))
            err = jac.max_rel_error
            checks.append(CheckResult(f'jacobian_identity@{tag}', len(jac.left) > 0 and err < tol, err,
                                      f'{len(jac.left)} 条轨线, 排除 {len(jac.excluded)}'))
            self._update_progress(f"粘性参照 t={t:g}: 拟合阶 {report.order_velocity:.3g}")

        tc = caustic_time(sc)
        if math.isfinite(tc):
            t_list = [f * tc for f in (0.3, 0.6, 0.9)]
            mass = self.viscous.mass_conservation_check(sc, t_list)
            frame = pd.DataFrame({'t': mass.t_list, 'source_mass': mass.source_mass,
                                  'mapped_mass': mass.mapped_mass, 'direct_mass': mass.direct_mass})
            writer.write_csv('viscous/mass_conservation.csv', frame)
            err = mass.max_rel_error
            tol = float(self.verify_cfg.get('mass_conservation_tol', 1e-6))
            checks.append(CheckResult('mass_conservation', err < tol, err, f'焦散时间 {tc:.6g}'))
        if sc.d == 2 and sc.is_free:
            checks += self._shock_jump_checks(sc, t_values, path, writer)
        return checks

    def _strongest_shock_point(self, sc: Scenario, t: float, path):
        """法向跳跃最大的正则 cool Maxwell 点"""
        best = None
        for cp in self.geometry.maxwell(sc, t, path).cool_points():
            try:
                mp = self.shock.maxwell_velocity(sc, cp, t, path)
            except NumericError:
                continue
            if best is None or mp.normal_jump > best.normal_jump:
                best = mp
        return best

    def _shock_jump_checks(self, sc: Scenario, t_values: List[float], path,
                           writer: ArtifactWriter) -> List[CheckResult]:
        """焦散之后：粘性速度在 cool Maxwell 点两侧的跳跃对照无粘单侧极限"""
        cfg = self.config.get('viscous', {})
        mu_list = [float(m) for m in cfg.get('jump_mu_list', [0.4, 0.3, 0.2])]
        offset = float(cfg.get('jump_offset', 0.2))
        tol = float(self.verify_cfg.get('jump_tol', 0.2))
        tc = caustic_time(sc)
        checks = []
        for t in t_values:
            if t <= tc:
                continue
            tag = _tag(t)
            mp = self._strongest_shock_point(sc, t, path)
            if mp is None:
                self.logger.warning(f"t={t:g}: 没有正则 cool Maxwell 点，跳过激波跳跃比较")
                continue
            one_sided = self.shock.one_sided_limits(sc, mp, offset, path)
            report = self.viscous.shock_jump(sc, mp.x, mp.n, t, one_sided, mu_list, path, offset)
            writer.write_csv(f'viscous/{tag}/shock_jump.csv', report.to_frame())
            where = f'x={np.round(mp.x, 6).tolist()}'
            checks.append(CheckResult(f'viscous_jump@{tag}', report.converges(tol), float(report.rel_error[-1]),
                                      where))
            checks.append(CheckResult(f'viscous_jump_location@{tag}', report.peak_within_cell(),
                                      float(abs(report.peak_offset[-1])), f'网格步长 {report.cell[-1]:.3g}'))
            self._update_progress(f"激波跳跃 t={t:g}: 相对误差 {report.rel_error[-1]:.3g}")
        return checks

    # ======== 全量验收 ========

    def run_verify_all(self, sc: Scenario, rc: RunConfig, t_values: List[float],
                       writer: ArtifactWriter) -> List[CheckResult]:
        """按场景维数执行全部适用的管线与验收检查"""
        checks = self.run_geometry(sc, rc, t_values, writer)
        path = self._path_for(sc, max(t_values), rc.seeds[0])
        if sc.d == 2 and sc.is_free:
            checks += self._factorization_checks(sc, t_values, path)
            for t in t_values:
                checks.append(self._caustic_implicit_check(sc, t, path))
                checks.append(self._cool_check(sc, t, path, rc.seeds[0]))
            checks += self._verify_turbulence(sc, rc, writer)
            checks += self.run_shock(sc, rc, [t_values[len(t_values) // 2]], writer)
            checks += self.run_mass(sc, rc, t_values, writer)
            checks += self._shock_jump_checks(sc, [t_values[len(t_values) // 2]], path, writer)
        elif sc.d == 3:
            checks += self.run_shock(sc, rc, [t_values[len(t_values) // 2]], writer)
        if sc.d in (1, 2):
            viscous_t = [t for t in t_values if t < caustic_time(sc)] or t_values[:1]
            checks += self.run_viscous(sc, rc, viscous_t, writer)
        checks.append(self._recurrence_trend_check(rc.seeds[0]))
        return checks

    def _verify_turbulence(self, sc: Scenario, rc: RunConfig, writer: ArtifactWriter) -> List[CheckResult]:
        n = int(self.verify_cfg.get('zeta_paths', 50))
        eps = rc.eps if rc.eps is not None else float(self.verify_cfg.get('zeta_eps', 0.1))
        noisy = sc.with_eps(eps)
        sub = RunConfig(command='turbulence', scenario=rc.scenario, c_values=rc.c_values or [0.0],
                        seeds=[rc.seeds[0]], horizon=float(self.verify_cfg.get('zeta_horizon', 5.0)),
                        dt=rc.dt, n_paths=n)
        return self.run_turbulence(noisy, sub, [sub.horizon], writer)

    def cleanup(self):
        """清理日志句柄"""
        for handler in logging.getLogger().handlers:
            handler.flush()
        self.logger.info("分析控制器清理完成")


__all__ = ['BurgersAnalysisController', 'RunConfig', 'RunResult', 'CheckResult', 'COMMANDS', 'OUTPUT_ENV']

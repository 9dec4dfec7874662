"""
粘性参照模块

热方程有限差分求解（1D Crank–Nicolson，2D Peaceman–Rachford ADI）加 Hopf–Cole 变换，
用来独立验证无粘极限的预测：半经典展开、Jacobian 恒等式与质量守恒。

热方程: ∂u/∂t = (μ²/2)Δu − (V/μ²)u − (ε/μ²)(k·∘Ẇ)u，u(x,0) = exp(−S₀/μ²)T₀
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.integrate import quad, trapezoid
from scipy.interpolate import CubicSpline, RegularGridInterpolator
from scipy.optimize import brentq, minimize
from scipy.sparse.linalg import splu

from .errors import GeometryError, NumericError, ScenarioError
from .scenario import Scenario, density_sqrt, flow_map, general_flow, initial_field, pre_images
from .wiener import WienerPath

logger = logging.getLogger(__name__)

# exp(-700) 接近双精度下溢
MAX_EXPONENT = 650.0


@dataclass
class GridField:
    """
    网格上的热方程解

    u 以 exp(offset/μ²) 为单位存储：真实 ln u = ln(self.u) − offset/μ²。
    """
    dims: int
    axes: List[np.ndarray]
    dt: float
    u: np.ndarray
    mu: float
    t: float
    offset: float = 0.0
    steps: int = 0

    @property
    def box(self) -> List[Tuple[float, float, int]]:
        return [(float(a[0]), float(a[-1]), len(a)) for a in self.axes]

    @property
    def log_u(self) -> np.ndarray:
        """真实 ln u"""
        return np.log(self.u) - self.offset / self.mu ** 2

    def snapshot(self) -> pd.DataFrame:
        """CSV 快照: x[, y], u, ln_u, v1[, v2]"""
        v = hopf_cole(self)
        if self.dims == 1:
            return pd.DataFrame({'x': self.axes[0], 'u': self.u, 'ln_u': self.log_u, 'v1': v})
        X, Y = np.meshgrid(self.axes[0], self.axes[1], indexing='ij')
        return pd.DataFrame({'x': X.ravel(), 'y': Y.ravel(), 'u': self.u.ravel(), 'ln_u': self.log_u.ravel(),
                             'v1': v[..., 0].ravel(), 'v2': v[..., 1].ravel()})


@dataclass
class ComparisonReport:
    points: np.ndarray
    mu_list: List[float]
    t: float
    excluded: List[Tuple[Tuple[float, ...], str]] = field(default_factory=list)
    v_viscous: Optional[np.ndarray] = None
    v_inviscid: Optional[np.ndarray] = None
    action_err: Optional[np.ndarray] = None
    velocity_err: Optional[np.ndarray] = None
    amplitude_err: Optional[np.ndarray] = None
    order_action: float = float('nan')
    order_velocity: float = float('nan')
    order_amplitude: float = float('nan')

    def order_in_window(self, lo: float = 1.5, hi: float = 2.5) -> bool:
        return lo <= self.order_velocity <= hi

    def to_frame(self) -> pd.DataFrame:
        rows = []
        d = self.points.shape[1] if self.points.size else 1
        for i, mu in enumerate(self.mu_list):
            for j, p in enumerate(self.points):
                row = {'mu': mu}
                row.update({f'x{k + 1}': float(p[k]) for k in range(d)})
                row.update({'action_err': self.action_err[i, j], 'velocity_err': self.velocity_err[i, j],
                            'amplitude_err': self.amplitude_err[i, j]})
                rows.append(row)
        return pd.DataFrame(rows)


@dataclass
class JacobianReport:
    t: float
    samples: np.ndarray
    left: np.ndarray
    right: np.ndarray
    excluded: List[Tuple[Tuple[float, ...], str]] = field(default_factory=list)

    @property
    def rel_error(self) -> np.ndarray:
        return np.abs(self.left - self.right) / np.abs(self.right)

    @property
    def max_rel_error(self) -> float:
        return float(np.max(self.rel_error)) if self.left.size else 0.0


@dataclass
class MassConservationReport:
    t_list: List[float]
    source_mass: float
    mapped_mass: np.ndarray
    direct_mass: np.ndarray

    @property
    def max_rel_error(self) -> float:
        """换元与直接积分两条路径中的最大相对误差；任一结果非有限时为 inf"""
        values = np.concatenate([self.mapped_mass, self.direct_mass])
        if not np.all(np.isfinite(values)):
            return math.inf
        return float(np.max(np.abs(values - self.source_mass))) / abs(self.source_mass)


@dataclass
class ShockJumpReport:
    """x ± δn 两点的粘性速度差与无粘单侧速度差"""
    x: np.ndarray
    normal: np.ndarray
    t: float
    offset: float
    mu_list: List[float]
    expected: np.ndarray
    jumps: Optional[np.ndarray] = None
    # 法线上 |∂v^μ/∂n| 最大处的带号距离，与各 μ 网格步长对应
    peak_offset: Optional[np.ndarray] = None
    cell: Optional[np.ndarray] = None

    @property
    def rel_error(self) -> np.ndarray:
        return np.linalg.norm(self.jumps - self.expected, axis=1) / np.linalg.norm(self.expected)

    def converges(self, tol: float) -> bool:
        """误差随 μ 减小单调下降，且最小 μ 处低于 tol"""
        err = self.rel_error
        return bool(np.all(np.diff(err) < 0) and err[-1] < tol)

    def peak_within_cell(self) -> bool:
        """最小 μ 处跳跃位置离激波不超过一个网格步长"""
        return bool(abs(self.peak_offset[-1]) <= self.cell[-1])

    def to_frame(self) -> pd.DataFrame:
        d = len(self.x)
        rows = []
        for i, mu in enumerate(self.mu_list):
            row = {'mu': mu, 't': self.t, 'offset': self.offset}
            row.update({f'jump_{k + 1}': float(self.jumps[i, k]) for k in range(d)})
            row.update({f'expected_{k + 1}': float(self.expected[k]) for k in range(d)})
            row.update({'rel_error': float(self.rel_error[i]), 'peak_offset': float(self.peak_offset[i]),
                        'cell': float(self.cell[i])})
            rows.append(row)
        return pd.DataFrame(rows)


def hopf_cole(fld: GridField) -> np.ndarray:
    """
    v^μ = −μ²∇ln u（中心差分）

    Raises:
        NumericError: u ≤ 0
    """
    if np.any(fld.u <= 0) or not np.all(np.isfinite(fld.u)):
        raise NumericError("Hopf-Cole 变换要求 u > 0")
    log_u = np.log(fld.u)
    grads = np.gradient(log_u, *fld.axes, edge_order=2)
    if fld.dims == 1:
        return -fld.mu ** 2 * np.asarray(grads)
    return -fld.mu ** 2 * np.stack(grads, axis=-1)


def caustic_time(sc: Scenario, box: Optional[Sequence[Tuple[float, float]]] = None, n: int = 41) -> float:
    """
    box 内出发的特征线首次到达焦散的时间 min(−1/λ_min(∇²S₀))，Hessian 半正定时为 inf
    """
    if not sc.is_free:
        raise ScenarioError("焦散时间只对 free-closed-form 场景有闭式")
    box = list(box or sc.box)
    fld = initial_field(sc)
    axes = [np.linspace(lo, hi, n) for lo, hi in box]
    pts = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, sc.d)
    lam_min = np.linalg.eigvalsh(fld.hess(pts))[:, 0]
    i = int(np.argmin(lam_min))
    res = minimize(lambda z: float(np.linalg.eigvalsh(fld.hess(z))[0]), pts[i], method='L-BFGS-B', bounds=box)
    best = min(float(lam_min[i]), float(res.fun))
    return math.inf if best >= 0 else -1.0 / best


class ViscousReference:
    """粘性参照求解器"""

    def __init__(self, config: Optional[Dict] = None):
        self.config = config or {}
        cfg = self.config.get('viscous', {})
        self.mu_list = [float(m) for m in cfg.get('mu_list', [0.4, 0.2, 0.1, 0.05])]
        self.cells_per_mu = int(cfg.get('cells_per_mu', 8))
        self.boundary_budget = float(cfg.get('boundary_budget', 1e-10))
        self.singular_margin = float(cfg.get('singular_margin', 0.05))
        self.dt_per_mu2 = float(cfg.get('dt_per_mu2', 0.05))
        self.jump_offset = float(cfg.get('jump_offset', 0.2))
        self.max_workers = int(self.config.get('output', {}).get('max_workers', 4))
        self.tie_tol = float(self.config.get('scenario', {}).get('action_tie_tol', 1e-12))
        self.logger = logging.getLogger(__name__)

    # ---------- 网格 ----------

    def auto_grid(self, sc: Scenario, mu: float, T: float,
                  hull: Optional[Sequence[Tuple[float, float]]] = None) -> List[Tuple[float, float, int]]:
        """
        按 μ 自适应的网格：观测点包络外扩到边界影响 < boundary_budget，
        步长 μ·min(1/cells_per_mu, μ/2)，初值指数超过下溢界时向内收缩
        """
        hull = list(hull or sc.box)
        margin = 1.2 * mu * math.sqrt(2 * max(T, 1e-12) * math.log(1.0 / self.boundary_budget))
        h = mu * min(1.0 / self.cells_per_mu, mu / 2)
        fld = initial_field(sc)
        grid = []
        for i, (lo, hi) in enumerate(hull):
            a, b = lo - margin, hi + margin
            n = int(math.ceil((b - a) / h)) + 1
            grid.append((a, b, n))
        axes = [np.linspace(a, b, n) for a, b, n in grid]
        pts = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1)
        S = fld.value(pts)
        if float(np.max(S) - np.min(S)) / mu ** 2 > MAX_EXPONENT:
            self.logger.warning(f"μ={mu}: 初值指数范围 {(np.max(S) - np.min(S)) / mu ** 2:.0f} 超过下溢界，收缩网格")
            grid = self._shrink(grid, S, mu, hull)
        return grid

    def _shrink(self, grid, S, mu, hull):
        keep = (S - np.min(S)) / mu ** 2 <= MAX_EXPONENT
        out = []
        for axis, (a, b, n) in enumerate(grid):
            other = tuple(i for i in range(len(grid)) if i != axis)
            ok = np.all(keep, axis=other) if other else keep
            idx = np.flatnonzero(ok)
            if idx.size == 0:
                raise NumericError(f"μ={mu} 时没有不下溢的网格区域")
            xs = np.linspace(a, b, n)
            lo, hi = xs[idx[0]], xs[idx[-1]]
            if lo > hull[axis][0] or hi < hull[axis][1]:
                raise NumericError(f"μ={mu}: 观测点区域内初值下溢，请缩小观测点范围或增大 μ")
            out.append((float(lo), float(hi), int(idx[-1] - idx[0] + 1)))
        return out

    def _boundary_influence(self, grid, hull, mu, T) -> float:
        dist = min(min(lo - a, b - hi) for (a, b, _), (lo, hi) in zip(grid, hull))
        if dist <= 0:
            return 1.0
        return math.exp(-dist ** 2 / (2 * mu ** 2 * max(T, 1e-12)))

    # ---------- 求解 ----------

    def solve_heat(self, sc: Scenario, mu: float, T: float,
                   grid: Optional[Sequence[Tuple[float, float, int]]] = None,
                   path: Optional[WienerPath] = None,
                   hull: Optional[Sequence[Tuple[float, float]]] = None,
                   dt: Optional[float] = None) -> GridField:
        """
        求解热方程到时刻 T

        Args:
            grid: 每轴 (lo, hi, n)，缺省按 μ 自适应
            path: ε > 0 时的冻结路径，噪声项按 Strang 分裂精确相乘
            hull: 需要保证边界影响预算的区域，缺省为场景 box

        Raises:
            NumericError: 稳定性条件不满足、正性丢失或边界影响超出预算
        """
        if sc.d not in (1, 2):
            raise ScenarioError("粘性参照只支持一维和二维场景")
        if mu <= 0 or T < 0:
            raise ValueError(f"需要 μ > 0 且 T ≥ 0: μ={mu}, T={T}")
        hull = list(hull or sc.box)
        grid = list(grid) if grid is not None else self.auto_grid(sc, mu, T, hull)
        influence = self._boundary_influence(grid, hull, mu, T)
        self.logger.info(f"μ={mu}: 网格 {[n for _, _, n in grid]}, 边界影响估计 {influence:.2e}")
        if influence > self.boundary_budget:
            raise NumericError(f"边界影响 {influence:.2e} 超出预算 {self.boundary_budget:.0e}，请扩大网格")
        axes = [np.linspace(a, b, n) for a, b, n in grid]
        hs = [ax[1] - ax[0] for ax in axes]
        pts = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1)
        fld = initial_field(sc)
        S0 = fld.value(pts)
        offset = float(np.min(S0))
        u = np.exp(-(S0 - offset) / mu ** 2) * fld.T0(pts)
        if np.any(u <= 0):
            raise NumericError("初值 T₀ 必须为正")
        Vvals = np.asarray(sc.V.evaluator(sc.x_vars)(*[pts[..., i] for i in range(sc.d)]), dtype=float) \
            * np.ones(u.shape)
        D = mu ** 2 / 2
        h_min = min(hs)
        dt_cfl = 0.9 / (sc.d * D / h_min ** 2 + 0.5 * max(float(np.max(Vvals)), 0.0) / mu ** 2)
        step = dt or min(dt_cfl, self.dt_per_mu2 * mu ** 2)
        n_steps = max(1, int(math.ceil(T / step))) if T > 0 else 0
        step = T / n_steps if n_steps else 0.0
        r = [D * step / h ** 2 for h in hs]
        pot = step * Vvals / mu ** 2
        if max(r) * sc.d + 0.5 * float(np.max(np.abs(pot))) > 1.0 + 1e-12:
            raise NumericError(f"稳定/正性条件不满足: r={max(r):.3f}，请减小时间步")
        noise = sc.eps > 0 and path is not None and sc.noise_dim > 0
        if noise:
            kvals = np.stack([np.asarray(kj.evaluator(sc.x_vars)(*[pts[..., i] for i in range(sc.d)]), float)
                              * np.ones(u.shape) for kj in sc.k], axis=-1)
        stepper = self._cn_1d(u.shape[0], r[0], pot) if sc.d == 1 else self._adi_2d(u.shape, r, pot)
        t = 0.0
        for k in range(n_steps):
            if noise:
                u = u * self._noise_factor(sc, kvals, path, t, t + step / 2, mu)
            u = stepper(u)
            if noise:
                u = u * self._noise_factor(sc, kvals, path, t + step / 2, t + step, mu)
            t += step
            if not np.all(np.isfinite(u)):
                raise NumericError("热方程解出现 NaN/溢出", step=k)
        if np.any(u <= 0):
            bad = int(np.sum(u <= 0))
            raise NumericError(f"正性丢失: {bad} 个网格点 u ≤ 0")
        return GridField(dims=sc.d, axes=axes, dt=step, u=u, mu=mu, t=float(T), offset=offset, steps=n_steps)

    @staticmethod
    def _noise_factor(sc, kvals, path: WienerPath, t0: float, t1: float, mu: float) -> np.ndarray:
        dW = path.at(t1)[0] - path.at(t0)[0]
        return np.exp(-sc.eps / mu ** 2 * (kvals @ dW))

    @staticmethod
    def _cn_1d(n: int, r: float, pot: np.ndarray):
        """内部点 Crank–Nicolson，两端为冻结在初值上的 Dirichlet 远场"""
        m = n - 2
        lap = sparse.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1], format='csc')
        P = sparse.diags(pot[1:-1] / 2, format='csc')
        eye = sparse.identity(m, format='csc')
        A = splu((eye - r / 2 * lap + P).tocsc())
        B = (eye + r / 2 * lap - P).tocsr()

        def step(u):
            rhs = B @ u[1:-1]
            rhs[0] += r * u[0]
            rhs[-1] += r * u[-1]
            out = u.copy()
            out[1:-1] = A.solve(rhs)
            return out
        return step

    @staticmethod
    def _adi_2d(shape, r, pot: np.ndarray):
        """Peaceman–Rachford ADI，势项在两个半步中各分一半，边界同一维情形冻结"""
        nx, ny = shape
        mx, my = nx - 2, ny - 2

        def lap(m):
            return sparse.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1], format='csc')
        Lx, Ly = lap(mx), lap(my)
        Ix, Iy = sparse.identity(mx, format='csc'), sparse.identity(my, format='csc')
        inner = pot[1:-1, 1:-1] / 4
        # 势项随行/列变化，逐行分解
        solvers_x = [splu((Ix - r[0] / 2 * Lx + sparse.diags(inner[:, j])).tocsc()) for j in range(my)]
        solvers_y = [splu((Iy - r[1] / 2 * Ly + sparse.diags(inner[i, :])).tocsc()) for i in range(mx)]
        Ex = [(Ix + r[0] / 2 * Lx - sparse.diags(inner[:, j])).tocsr() for j in range(my)]
        Ey = [(Iy + r[1] / 2 * Ly - sparse.diags(inner[i, :])).tocsr() for i in range(mx)]

        def add_boundary(rhs, u):
            rhs[0, :] += r[0] / 2 * u[0, 1:-1]
            rhs[-1, :] += r[0] / 2 * u[-1, 1:-1]
            rhs[:, 0] += r[1] / 2 * u[1:-1, 0]
            rhs[:, -1] += r[1] / 2 * u[1:-1, -1]
            return rhs

        def step(u):
            U = u[1:-1, 1:-1]
            half = np.empty_like(U)
            rhs = add_boundary(np.stack([Ey[i] @ U[i, :] for i in range(mx)], axis=0), u)
            for j in range(my):
                half[:, j] = solvers_x[j].solve(rhs[:, j])
            rhs = add_boundary(np.stack([Ex[j] @ half[:, j] for j in range(my)], axis=1), u)
            new = np.empty_like(U)
            for i in range(mx):
                new[i, :] = solvers_y[i].solve(rhs[i, :])
            out = u.copy()
            out[1:-1, 1:-1] = new
            return out
        return step

    # ---------- 半经典比较 ----------

    def _off_singular(self, sc: Scenario, x: np.ndarray, t: float, path) -> Optional[str]:
        """观测点在 ±margin 的线段上最小原像连续且唯一，否则返回排除原因"""
        m = self.singular_margin
        base = pre_images(sc, x, t, path, tie_tol=self.tie_tol)
        if base.minimizer is None:
            return '没有实原像'
        for i in range(sc.d):
            prev = base.minimizer.x0
            for s in np.linspace(-m, m, 9):
                pt = np.array(x, dtype=float)
                pt[i] += s
                pis = pre_images(sc, pt, t, path, tie_tol=self.tie_tol)
                if pis.minimizer is None or not pis.minimizer_unique:
                    return f'距 Maxwell 集不足 {m}'
                st = flow_map(sc, pis.minimizer.x0, t, path)
                if st.detJ <= 0:
                    return f'距焦散不足 {m}'
                if np.linalg.norm(pis.minimizer.x0 - prev) > 4 * m * max(1.0, float(np.linalg.norm(np.linalg.inv(st.J)))):
                    return f'距 Maxwell 集不足 {m}（最小原像跳变）'
                prev = pis.minimizer.x0
        return None

    def _interpolators(self, fld: GridField):
        log_u = fld.log_u
        if fld.dims == 1:
            spline = CubicSpline(fld.axes[0], log_u)
            return (lambda p: spline(p[:, 0])), (lambda p: spline(p[:, 0], 1)[:, None])
        value = RegularGridInterpolator(fld.axes, log_u, method='cubic')
        grads = np.gradient(log_u, *fld.axes, edge_order=2)
        gi = [RegularGridInterpolator(fld.axes, g, method='cubic') for g in grads]
        return value, (lambda p: np.stack([g(p) for g in gi], axis=-1))

    def semiclassical_compare(self, sc: Scenario, mu_list: Optional[Sequence[float]], points,
                              t: float, path: Optional[WienerPath] = None) -> ComparisonReport:
        """
        对每个 μ 比较 (a) −μ²ln u 与 𝒮_t，(b) v^μ 与 ∇𝒮_t，(c) u·exp(𝒮_t/μ²) 与 T₀|∂x₀/∂x|^½，
        并拟合 err ∝ μ^p 的指数 p
        """
        mu_list = list(mu_list or self.mu_list)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        report = ComparisonReport(points=points, mu_list=mu_list, t=float(t))
        kept = []
        for p in points:
            reason = self._off_singular(sc, p, t, path)
            if reason:
                report.excluded.append((tuple(float(v) for v in p), reason))
                self.logger.warning(f"观测点 {p.tolist()} 被排除: {reason}")
            else:
                kept.append(p)
        if not kept:
            raise GeometryError("所有观测点都过于接近奇异集")
        points = np.array(kept)
        report.points = points
        S = np.empty(len(points))
        v_inv = np.empty((len(points), sc.d))
        amp = np.empty(len(points))
        for j, p in enumerate(points):
            pis = pre_images(sc, p, t, path, tie_tol=self.tie_tol)
            S[j] = pis.min_action
            v_inv[j] = flow_map(sc, pis.minimizer.x0, t, path).Xdot
            amp[j] = density_sqrt(sc, pis.minimizer.x0, t, path)
        hull = [(float(points[:, i].min()) - self.singular_margin, float(points[:, i].max()) + self.singular_margin)
                for i in range(sc.d)]
        fields = self._solve_all(sc, mu_list, t, path, hull)
        n_mu = len(mu_list)
        report.v_viscous = np.empty((n_mu, len(points), sc.d))
        report.action_err = np.empty((n_mu, len(points)))
        report.velocity_err = np.empty((n_mu, len(points)))
        report.amplitude_err = np.empty((n_mu, len(points)))
        for i, (mu, fld) in enumerate(zip(mu_list, fields)):
            value, grad = self._interpolators(fld)
            log_u = np.asarray(value(points), dtype=float)
            v = -mu ** 2 * np.asarray(grad(points), dtype=float)
            report.v_viscous[i] = v
            report.action_err[i] = np.abs(-mu ** 2 * log_u - S)
            report.velocity_err[i] = np.linalg.norm(v - v_inv, axis=1)
            report.amplitude_err[i] = np.abs(np.exp(log_u + S / mu ** 2) - amp) / amp
        report.v_inviscid = v_inv
        if n_mu >= 2:
            logs = np.log(np.asarray(mu_list))
            report.order_action = self._fit_order(logs, report.action_err)
            report.order_velocity = self._fit_order(logs, report.velocity_err)
            report.order_amplitude = self._fit_order(logs, report.amplitude_err)
        self.logger.info(f"半经典比较 t={t}: 速度误差阶 p={report.order_velocity:.3f}")
        return report

    def _solve_all(self, sc: Scenario, mu_list: Sequence[float], t: float, path,
                   hull: Sequence[Tuple[float, float]]) -> List[GridField]:
        """各 μ 并行求解，结果按 mu_list 顺序"""
        fields: List[Optional[GridField]] = [None] * len(mu_list)
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = {executor.submit(self.solve_heat, sc, mu, t, None, path, hull): i
                       for i, mu in enumerate(mu_list)}
            for future in as_completed(futures):
                i = futures[future]
                try:
                    fields[i] = future.result()
                except Exception as e:
                    self.logger.error(f"μ={mu_list[i]} 求解失败: {e}")
                    raise
        return fields

    @staticmethod
    def _fit_order(log_mu: np.ndarray, err: np.ndarray) -> float:
        worst = np.max(err, axis=1)
        if np.any(worst <= 0):
            return float('inf')
        return float(np.polyfit(log_mu, np.log(worst), 1)[0])

    def velocity_jump(self, fld: GridField, x, normal, offset: float) -> np.ndarray:
        """v^μ(x + δn) − v^μ(x − δn)，用于与 Maxwell 集两侧的 ∇𝒮̌ − ∇𝒮 比较"""
        _, grad = self._interpolators(fld)
        x = np.asarray(x, float)
        n = np.asarray(normal, float)
        pts = np.stack([x + offset * n, x - offset * n])
        v = -fld.mu ** 2 * np.asarray(grad(pts), dtype=float)
        return v[0] - v[1]

    def shock_jump(self, sc: Scenario, x, normal, t: float, one_sided: Tuple[np.ndarray, np.ndarray],
                   mu_list: Optional[Sequence[float]] = None, path: Optional[WienerPath] = None,
                   offset: Optional[float] = None) -> ShockJumpReport:
        """
        激波两侧的粘性速度跳跃

        在 x ± δn 处取 v^μ 之差，与无粘单侧速度 one_sided = (v(x + δn), v(x − δn)) 之差比较；
        同时在法线段 [−δ, δ] 上找 |∂(v^μ·n)/∂s| 的最大位置。

        Raises:
            GeometryError: 两个单侧速度相同（x 不在激波上）
        """
        mu_list = sorted(mu_list or self.mu_list, reverse=True)
        offset = float(offset if offset is not None else self.jump_offset)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = np.atleast_1d(np.asarray(normal, dtype=float))
        n = n / np.linalg.norm(n)
        plus, minus = (np.atleast_1d(np.asarray(v, dtype=float)) for v in one_sided)
        report = ShockJumpReport(x=x, normal=n, t=float(t), offset=offset, mu_list=mu_list, expected=plus - minus)
        if float(np.linalg.norm(report.expected)) == 0.0:
            raise GeometryError(f"点 {x.tolist()} 两侧无粘速度相同，不在激波上")
        reach = offset + self.singular_margin
        hull = [(float(c) - reach, float(c) + reach) for c in x]
        fields = self._solve_all(sc, mu_list, t, path, hull)
        report.jumps = np.empty((len(mu_list), sc.d))
        report.peak_offset = np.empty(len(mu_list))
        report.cell = np.empty(len(mu_list))
        for i, fld in enumerate(fields):
            report.jumps[i] = self.velocity_jump(fld, x, n, offset)
            cell = max(float(ax[1] - ax[0]) for ax in fld.axes)
            s = np.linspace(-offset, offset, 2 * int(math.ceil(4 * offset / cell)) + 1)
            _, grad = self._interpolators(fld)
            vn = (-fld.mu ** 2 * np.asarray(grad(x[None, :] + s[:, None] * n[None, :]), dtype=float)) @ n
            report.peak_offset[i] = s[int(np.argmax(np.abs(np.gradient(vn, s))))]
            report.cell[i] = cell
        self.logger.info(f"激波跳跃 t={t}: 相对误差 {np.array2string(report.rel_error, precision=3)}，"
                         f"峰值偏移 {np.array2string(report.peak_offset, precision=4)}")
        return report

    # ---------- Jacobian 恒等式与质量守恒 ----------

    def _laplacian_integral(self, sc: Scenario, x0: np.ndarray, t: float, path) -> float:
        """∫₀ᵗ Δ𝒮_s(X(s))ds = ∫ tr(J̇J⁻¹)ds"""
        if sc.is_free:
            H = initial_field(sc).hess(x0)
            eye = np.eye(sc.d)

            def integrand(s):
                return float(np.trace(H @ np.linalg.inv(eye + s * H)))
            val, _ = quad(integrand, 0.0, t, epsabs=1e-14, epsrel=1e-13, limit=200)
            return val
        flow = general_flow(sc)
        fld = initial_field(sc)
        *_, traj = flow.integrate(x0, fld.grad(x0), t, path, K0=fld.hess(x0), trajectory=True)
        s = np.array([p[0] for p in traj])
        J = np.array([p[2] for p in traj])
        Jdot = np.gradient(J, s, axis=0, edge_order=2)
        tr = np.einsum('kij,kji->k', Jdot, np.linalg.inv(J))
        return float(trapezoid(tr, s))

    def jacobian_identity_check(self, sc: Scenario, x0_samples, t: float,
                                path: Optional[WienerPath] = None) -> JacobianReport:
        """exp{−½∫₀ᵗΔ𝒮_s(X(s))ds} 与 |det DΦ_t|^{−½} 的比对，跨过焦散的轨线被排除"""
        samples = np.atleast_2d(np.asarray(x0_samples, dtype=float))
        left, right, kept = [], [], []
        report = JacobianReport(t=float(t), samples=samples, left=np.empty(0), right=np.empty(0))
        for x0 in samples:
            dets = [flow_map(sc, x0, s, path).detJ for s in np.linspace(0, t, 33)[1:]]
            if min(dets) <= 0:
                report.excluded.append((tuple(x0.tolist()), '轨线在 t 之前到达焦散'))
                continue
            left.append(math.exp(-0.5 * self._laplacian_integral(sc, x0, t, path)))
            right.append(abs(dets[-1]) ** -0.5)
            kept.append(x0)
        report.samples = np.array(kept) if kept else np.empty((0, sc.d))
        report.left, report.right = np.array(left), np.array(right)
        if report.excluded:
            self.logger.warning(f"Jacobian 恒等式: {len(report.excluded)} 条轨线跨过焦散，已排除")
        return report

    def mass_conservation_check(self, sc: Scenario, t_list: Sequence[float],
                                box: Optional[Sequence[Tuple[float, float]]] = None,
                                nodes: Optional[int] = None) -> MassConservationReport:
        """
        ∫ρ_t dx 与 ∫T₀²dx₀ 的比较

        mapped: 密度取 T₀²·exp{−∫₀ᵗΔ𝒮_s(X(s))ds}（沿特征线积分，不经过 det DΦ_t），
        再经 Φ_t 换元回初始空间；direct: 在像空间 Φ_t(box) 上对 T₀²/|det DΦ_t| 直接积分。

        Raises:
            ScenarioError: 三维场景
            GeometryError: t 不早于焦散时间
        """
        if sc.d not in (1, 2):
            raise ScenarioError("质量守恒检查只支持一维和二维场景")
        box = list(box or sc.box)
        tc = caustic_time(sc, box)
        for t in t_list:
            if t >= tc:
                raise GeometryError(f"t={t} 不早于焦散时间 {tc:.6g}，质量守恒只在焦散前成立")
        nodes = nodes or (64 if sc.d == 1 else 24)
        gl_x, gl_w = np.polynomial.legendre.leggauss(nodes)
        axes, weights = [], []
        for lo, hi in box:
            axes.append(0.5 * (hi - lo) * gl_x + 0.5 * (hi + lo))
            weights.append(0.5 * (hi - lo) * gl_w)
        pts = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, sc.d)
        w = np.prod(np.stack(np.meshgrid(*weights, indexing='ij'), axis=-1).reshape(-1, sc.d), axis=1)
        fld = initial_field(sc)
        T0_sq = fld.T0(pts) ** 2
        source = float(np.sum(w * T0_sq))
        mapped, direct = [], []
        for t in t_list:
            if t == 0:
                mapped.append(source)
                direct.append(source)
                continue
            transported = np.array([math.exp(-self._laplacian_integral(sc, p, t, None)) for p in pts])
            dets = np.abs(np.linalg.det(np.eye(sc.d) + t * fld.hess(pts)))
            mapped.append(float(np.sum(w * T0_sq * transported * dets)))
            if sc.d == 1:
                direct.append(self._direct_mass_1d(sc, box[0], t))
            else:
                direct.append(self._direct_mass_2d(sc, box, t))
            self.logger.info(f"质量守恒 t={t:.6g}: 源 {source:.12g}, 换元 {mapped[-1]:.12g}, 直接 {direct[-1]:.12g}")
        return MassConservationReport(t_list=list(t_list), source_mass=source,
                                      mapped_mass=np.array(mapped), direct_mass=np.array(direct))

    def _direct_mass_1d(self, sc: Scenario, interval, t: float, panels: int = 32, order: int = 16) -> float:
        """
        像空间 Φ_t([lo, hi]) 上 ρ_t(x) 的分段 Gauss 积分

        分段点取 x₀ 等分点的像，焦散前 Φ_t 单调，接近焦散时密度峰落在少数几段内；
        每个节点的原像在对应 x₀ 子区间上由 Brent 法求得。
        """
        lo, hi = interval
        gl_x, gl_w = np.polynomial.legendre.leggauss(order)
        cuts = np.linspace(lo, hi, panels + 1)
        images = [flow_map(sc, [z], t).X[0] for z in cuts]
        total = 0.0
        for (z0, z1), (a, b) in zip(zip(cuts, cuts[1:]), zip(images, images[1:])):
            xs = 0.5 * (b - a) * gl_x + 0.5 * (b + a)
            part = 0.0
            for x, wt in zip(xs, gl_w):
                x0 = brentq(lambda z: flow_map(sc, [z], t).X[0] - x, z0, z1, xtol=1e-15, rtol=1e-15)
                part += wt * density_sqrt(sc, [x0], t) ** 2
            total += 0.5 * (b - a) * part
        return total

    def _direct_mass_2d(self, sc: Scenario, box, t: float, samples: int = 64, order: int = 24) -> float:
        """
        像空间 Φ_t(box) 上 ρ_t 的逐截面积分

        x¹ = c 的截面端点是直线与边界曲线 Φ_t(∂box) 的交点，按奇偶规则配对；
        截面上取 Gauss 节点，原像从边界端点出发做 Newton 延拓。
        外层对 x¹ 用自适应 quad，断点取角点和边上 x¹ 极值点的像。
        """
        fld = initial_field(sc)
        eye = np.eye(2)
        (a0, a1), (b0, b1) = box
        corners = np.array([[a0, b0], [a1, b0], [a1, b1], [a0, b1]], dtype=float)
        edges = [(corners[k], corners[(k + 1) % 4] - corners[k]) for k in range(4)]
        s = np.linspace(0.0, 1.0, samples + 1)

        def phi(z):
            return z + t * fld.grad(z)

        def jac(z):
            return eye + t * fld.hess(z)

        def edge_x1(start, step, v):
            return float(phi(start + v * step)[0])

        def edge_slope(start, step, v):
            return float((jac(start + v * step) @ step)[0])

        breaks = [float(phi(c)[0]) for c in corners]
        for start, step in edges:
            slope = (jac(start + s[:, None] * step) @ step)[:, 0]
            for k in np.flatnonzero(slope[:-1] * slope[1:] < 0):
                v = brentq(lambda u: edge_slope(start, step, u), s[k], s[k + 1], xtol=1e-15)
                breaks.append(edge_x1(start, step, v))
        lo, hi = min(breaks), max(breaks)

        def section(c):
            hits = []
            for start, step in edges:
                g = phi(start + s[:, None] * step)[:, 0] - c
                for k in np.flatnonzero(g[:-1] * g[1:] < 0):
                    v = brentq(lambda u: edge_x1(start, step, u) - c, s[k], s[k + 1], xtol=1e-15, rtol=1e-15)
                    z = start + v * step
                    hits.append((float(phi(z)[1]), z))
            if len(hits) % 2:
                raise GeometryError(f"x¹={c:.6g} 的截面与边界交点数为奇数")
            hits.sort(key=lambda h: h[0])
            return list(zip(hits[0::2], hits[1::2]))

        gl_x, gl_w = np.polynomial.legendre.leggauss(order)

        def line_mass(c):
            total = 0.0
            for (ya, za), (yb, _) in section(c):
                z = za.copy()
                part = 0.0
                for y, wt in zip(0.5 * (yb - ya) * gl_x + 0.5 * (yb + ya), gl_w):
                    z = self._newton_preimage(phi, jac, z, np.array([c, y]))
                    part += wt * float(fld.T0(z)) ** 2 / abs(np.linalg.det(jac(z)))
                total += 0.5 * (yb - ya) * part
            return total

        points = sorted(b for b in set(breaks) if lo < b < hi)
        value, err = quad(line_mass, lo, hi, points=points or None, epsabs=0.0, epsrel=1e-10, limit=200)
        self.logger.debug(f"像空间直接积分 t={t:.6g}: {value:.12g} (估计误差 {err:.1e})")
        return value

    @staticmethod
    def _newton_preimage(phi, jac, z, x, tol: float = 1e-13, max_iter: int = 50) -> np.ndarray:
        scale = max(1.0, float(np.max(np.abs(x))))
        for _ in range(max_iter):
            r = phi(z) - x
            if float(np.max(np.abs(r))) < tol * scale:
                return z
            z = z - np.linalg.solve(jac(z), r)
        raise GeometryError(f"像点 {x.tolist()} 的原像 Newton 迭代不收敛")


__all__ = ['ViscousReference', 'GridField', 'ComparisonReport', 'JacobianReport',
           'MassConservationReport', 'ShockJumpReport', 'hopf_cole', 'caustic_time']

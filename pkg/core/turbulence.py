"""
湍流时间模块

ζ 过程的模拟、实湍流时间（ζ 的零点）的搜索与 Y 过程的回归统计。

确定性焦散按 λ = x₀¹ 参数化：焦散前像关于 y₀ 为一次，y₀ = y₀(λ, t)。
有噪声时 x_t^ε(λ) = x_t⁰(λ) − ε∫w，cool 判定与确定性情形一致。
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy as sp

from .errors import NumericError, ScenarioError
from .polyalg import numeric_real_roots, symbol
from .scenario import LAM, TIME, Scenario, action, flow_map, model_for
from .wiener import WienerPath


@dataclass
class ZeroCrossing:
    time: float
    branch: int
    kind: str  # up | down | touch
    lam: float
    cool: bool


@dataclass
class ZetaSample:
    """ζ 过程在时间网格上的取值与零点"""
    path: WienerPath
    c: float
    grid: np.ndarray
    lambda_branches: List[List[Tuple[int, float]]]
    zeta: List[Dict[int, float]]
    zeros: List[ZeroCrossing] = field(default_factory=list)
    hot_zeros: List[ZeroCrossing] = field(default_factory=list)
    degenerate_branches: List[int] = field(default_factory=list)
    merges: List[Tuple[float, int, int]] = field(default_factory=list)

    @property
    def has_zero(self) -> bool:
        return bool(self.zeros)

    def rows(self) -> List[Tuple[float, int, float, float]]:
        out = []
        for t, sols, values in zip(self.grid, self.lambda_branches, self.zeta):
            for b, lam in sols:
                out.append((float(t), b, lam, values[b]))
        return out


@dataclass
class RecurrenceStats:
    horizon: float
    dt: float
    seeds: List[int]
    zero_times: List[np.ndarray]
    max_zero: np.ndarray
    checkpoints: np.ndarray
    fraction_beyond: np.ndarray
    window_fraction: float
    cluster_fraction: float
    corollary: Optional[Dict[str, np.ndarray]] = None


def y_process(path: WienerPath) -> np.ndarray:
    """Y_t = W·∫W − ½∫|W|²"""
    return np.sum(path.W * path.intW, axis=1) - 0.5 * path.intW2


def sign_change_times(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """线性插值的变号时刻（不含 t=0 处的平凡零点）"""
    v0, v1 = values[1:-1], values[2:]
    idx = np.flatnonzero(v0 * v1 < 0) + 1
    t0, t1 = times[idx], times[idx + 1]
    y0, y1 = values[idx], values[idx + 1]
    return t0 + (t1 - t0) * y0 / (y0 - y1)


class CausticFamily:
    """
    确定性焦散族（λ, t 的有理函数），向量化求值

    x0(λ,t) 为焦散前像，x⁰ = Φ_t⁰(x0)，v = dx⁰/dλ，f⁰ = E⁰(x0)；
    v 各分量分子的公因式给出确定性分支，其余因子与 (∇S₀ − εw) 的内积给出随机分支。
    """

    def __init__(self, sc: Scenario):
        if sc.d != 2:
            raise ScenarioError("ζ 过程只支持二维场景")
        if not sc.is_free:
            raise ScenarioError("ζ 过程需要 free-closed-form 模式")
        self.sc = sc
        det0 = model_for(sc.with_eps(0.0), TIME).jacobian_det_poly()
        x0v, y0v = sc.x0_vars
        lam, t = symbol(LAM), symbol(TIME)
        if det0.degree(y0v) != 1:
            raise ScenarioError("焦散前像关于第二坐标不是一次，无法按 x₀¹ 参数化")
        a, b = det0.coeffs_in(y0v)
        y0 = sp.cancel((-b.expr / a.expr).subs(symbol(x0v), lam))
        sub = {symbol(x0v): lam, symbol(y0v): y0}
        grad = [sp.cancel(sc.S0.diff(v).expr.subs(sub)) for v in sc.x0_vars]
        pos = [sp.cancel(lam + t * grad[0]), sp.cancel(y0 + t * grad[1])]
        vel = [sp.cancel(sp.diff(p, lam)) for p in pos]
        f0 = sp.cancel(sc.S0.expr.subs(sub) + t / 2 * (grad[0] ** 2 + grad[1] ** 2))
        nums = [sp.fraction(sp.together(v))[0] for v in vel]
        common = sp.gcd(nums[0], nums[1])
        if common.free_symbols and lam not in common.free_symbols:
            common = sp.Integer(1)
        self.det_factor = sp.Poly(common, lam) if lam in common.free_symbols else None
        u = [sp.cancel(v / common) for v in vel]
        w1, w2 = sp.symbols('w1 w2')
        inner = sp.together(u[0] * (grad[0] - w1) + u[1] * (grad[1] - w2))
        inner_num = sp.Poly(sp.fraction(inner)[0], lam)
        self._random_coeffs = [sp.lambdify((t, w1, w2), c, 'numpy') for c in inner_num.all_coeffs()]
        self._det_coeffs = ([sp.lambdify((t,), c, 'numpy') for c in self.det_factor.all_coeffs()]
                            if self.det_factor is not None else [])
        args = (lam, t)
        self._y0 = sp.lambdify(args, y0, 'numpy')
        self._pos = [sp.lambdify(args, p, 'numpy') for p in pos]
        self._vel = [sp.lambdify(args, v, 'numpy') for v in vel]
        self._grad = [sp.lambdify(args, g, 'numpy') for g in grad]
        self._f0 = sp.lambdify(args, f0, 'numpy')
        self.family0 = model_for(sc.with_eps(0.0), TIME).reduced_family()

    def pre_image(self, lam, t) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        return np.stack([lam, np.broadcast_to(np.asarray(self._y0(lam, t), float), lam.shape)], axis=-1)

    def position(self, lam, t) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        return np.stack([np.broadcast_to(np.asarray(p(lam, t), float), lam.shape) for p in self._pos], axis=-1)

    def velocity(self, lam, t) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        return np.stack([np.broadcast_to(np.asarray(v(lam, t), float), lam.shape) for v in self._vel], axis=-1)

    def grad_S0(self, lam, t) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        return np.stack([np.broadcast_to(np.asarray(g(lam, t), float), lam.shape) for g in self._grad], axis=-1)

    def action0(self, lam, t):
        lam = np.asarray(lam, dtype=float)
        return np.broadcast_to(np.asarray(self._f0(lam, t), float), lam.shape)

    def stationarity(self, lam, t, eps_w: np.ndarray):
        """g(λ) = (∇S₀(x0(λ)) − εw)·dx⁰/dλ"""
        return np.sum((self.grad_S0(lam, t) - eps_w) * self.velocity(lam, t), axis=-1)

    def deterministic_roots(self, t: float, lo: float, hi: float) -> List[float]:
        if not self._det_coeffs:
            return []
        coeffs = [float(np.asarray(c(t))) for c in self._det_coeffs]
        return numeric_real_roots(coeffs, lo, hi).values

    def random_roots(self, t: float, eps_w: np.ndarray, lo: float, hi: float) -> List[float]:
        coeffs = [float(np.asarray(c(t, eps_w[0], eps_w[1]))) for c in self._random_coeffs]
        return numeric_real_roots(coeffs, lo, hi).values

    def is_cool(self, lam: float, t: float, tie_tol: float = 1e-12) -> bool:
        """x_t⁰(λ) 处 x0(λ) 是否为全局最小原像"""
        x = self.position(np.array([lam]), t)
        coeffs = self.family0.coefficient_arrays(x, t)[0]
        roots = numeric_real_roots(np.polyder(coeffs)).values
        values = np.polyval(coeffs, np.array(list(roots) + [lam]))
        f_val = float(np.polyval(coeffs, lam))
        return f_val <= float(values.min()) + tie_tol * max(1.0, abs(f_val))


class ZetaSimulator:
    """ζ 过程模拟器"""

    def __init__(self, config: Optional[Dict] = None):
        self.config = config or {}
        cfg = self.config.get('turbulence', {})
        self.points_per_unit_time = int(cfg.get('points_per_unit_time', 10000))
        self.lambda_grid = int(cfg.get('lambda_grid', 401))
        self.lambda_halfwidth = float(cfg.get('lambda_halfwidth', 2.0))
        self.zero_tol = float(cfg.get('zero_tol', 1e-10))
        self.recurrence_dt = float(cfg.get('recurrence_dt', 0.005))
        self.tie_tol = float(self.config.get('scenario', {}).get('action_tie_tol', 1e-12))
        self.logger = logging.getLogger(__name__)
        self._families: Dict[Scenario, CausticFamily] = {}

    def family(self, sc: Scenario) -> CausticFamily:
        key = sc.with_eps(0.0)
        if key not in self._families:
            self._families[key] = CausticFamily(sc)
        return self._families[key]

    @staticmethod
    def _noise(sc: Scenario, t: float, path: Optional[WienerPath]):
        """(εw, ε∫w, ε²∫|w|², εc·W)"""
        if path is None or sc.eps == 0 or sc.noise_dim == 0:
            return np.zeros(2), np.zeros(2), 0.0, 0.0
        G = sc.coupling_matrix()
        w, I, J2 = path.project(G).at(t)
        Wraw, _, _ = path.at(t)
        cW = float(sc.coupling_offsets() @ Wraw)
        return sc.eps * w, sc.eps * I, sc.eps ** 2 * J2, sc.eps * cW

    def _noise_on_grid(self, sc: Scenario, path: Optional[WienerPath], grid: np.ndarray):
        if path is None or sc.eps == 0 or sc.noise_dim == 0:
            n = len(grid)
            return np.zeros((n, 2)), np.zeros((n, 2)), np.zeros(n), np.zeros(n)
        projected = path.project(sc.coupling_matrix())
        w = np.column_stack([np.interp(grid, projected.times, projected.W[:, i]) for i in range(2)])
        I = np.column_stack([np.interp(grid, projected.times, projected.intW[:, i]) for i in range(2)])
        J2 = np.interp(grid, projected.times, projected.intW2)
        W = np.column_stack([np.interp(grid, path.times, path.W[:, j]) for j in range(path.dim)])
        cW = W @ sc.coupling_offsets()
        return sc.eps * w, sc.eps * I, sc.eps ** 2 * J2, sc.eps * cW

    def zeta(self, sc: Scenario, c: float, t: float, path: Optional[WienerPath], lam: float,
             residual_tol: float = 1e-9) -> float:
        """
        ζ_t^c = f⁰(λ) − εx_t⁰(λ)·w + ε²w·∫w − ½ε²∫|w|² − εc·W − c

        Raises:
            NumericError: λ 不满足驻定方程
        """
        fam = self.family(sc)
        eps_w, eps_I, eps2_J2, eps_cW = self._noise(sc, t, path)
        res = float(fam.stationarity(np.array([lam]), t, eps_w)[0])
        scale = max(1.0, float(np.linalg.norm(fam.velocity(np.array([lam]), t)[0])))
        if abs(res) > residual_tol * scale:
            raise NumericError(f"λ={lam} 不满足驻定方程", residual=abs(res))
        return self._zeta_value(fam, lam, t, c, eps_w, eps_I, eps2_J2, eps_cW)

    @staticmethod
    def _zeta_value(fam: CausticFamily, lam, t, c, eps_w, eps_I, eps2_J2, eps_cW):
        x = fam.position(np.atleast_1d(lam), t)
        f0 = fam.action0(np.atleast_1d(lam), t)
        value = f0 - x @ eps_w + float(eps_w @ eps_I) - 0.5 * eps2_J2 - eps_cW - c
        return float(value[0]) if np.ndim(lam) == 0 else value

    def direct_zeta(self, sc: Scenario, c: float, t: float, path: Optional[WienerPath], lam: float) -> float:
        """由随机作用量直接求值：𝒜(x0(λ), Φ_t(x0(λ))) − c，与 zeta 的闭式互相校验"""
        x0 = self.family(sc).pre_image(np.array([lam]), t)[0]
        x = flow_map(sc, x0, t, path).X
        return float(action(sc, x0, x, t, path)) - c

    def caustic_shift_residual(self, sc: Scenario, t: float, path: Optional[WienerPath], lam: float) -> float:
        """|x_t^ε(λ) − x_t⁰(λ) + ε∫w|，随机焦散是确定性焦散的平移"""
        fam = self.family(sc)
        x0 = fam.pre_image(np.array([lam]), t)[0]
        X = flow_map(sc, x0, t, path).X
        eps_I = self._noise(sc, t, path)[1]
        return float(np.linalg.norm(X - fam.position(np.array([lam]), t)[0] + eps_I))

    def lambda_solutions(self, sc: Scenario, t: float, path: Optional[WienerPath] = None,
                         with_cool: bool = True) -> List[Tuple[str, float, bool]]:
        """
        驻定方程的解：确定性分支（焦散尖点参数）与随机分支

        Returns:
            [(分支类型 deterministic|random, λ, cool)]
        """
        fam = self.family(sc)
        lo, hi = -self.lambda_halfwidth, self.lambda_halfwidth
        eps_w = self._noise(sc, t, path)[0]
        out = []
        for lam in fam.deterministic_roots(t, lo, hi):
            out.append(('deterministic', float(lam)))
        for lam in fam.random_roots(t, eps_w, lo, hi):
            if not any(abs(lam - other) < 1e-9 for _, other in out):
                out.append(('random', float(lam)))
        out.sort(key=lambda item: item[1])
        return [(kind, lam, fam.is_cool(lam, t, self.tie_tol) if with_cool else True) for kind, lam in out]

    def default_grid(self, horizon: float, t0: Optional[float] = None) -> np.ndarray:
        n = max(2, int(round(self.points_per_unit_time * horizon)))
        start = t0 if t0 is not None else horizon / n
        return np.linspace(start, horizon, n)

    def turbulent_times(self, sc: Scenario, c: float, path: Optional[WienerPath],
                        t_grid: Optional[Sequence[float]] = None) -> ZetaSample:
        """
        沿每个 λ 分支计算 ζ，网格上括住变号并在 t 上二分细化（每步重新求解 λ）

        零点只保留 cool 焦散上的点；ζ 在分支上恒为零时标记为退化分支。
        """
        fam = self.family(sc)
        horizon = path.horizon if path is not None else 1.0
        grid = np.asarray(t_grid if t_grid is not None else self.default_grid(horizon), dtype=float)
        if path is not None and grid.max() > path.horizon * (1 + 1e-12):
            raise NumericError(f"时间网格超出路径范围 {path.horizon}")
        if np.any(grid <= 0):
            raise ValueError("时间网格必须为正")
        eps_w, eps_I, eps2_J2, eps_cW = self._noise_on_grid(sc, path, grid)
        lo, hi = -self.lambda_halfwidth, self.lambda_halfwidth
        threshold = 10 * (hi - lo) / (self.lambda_grid - 1)

        sample = ZetaSample(path=path, c=c, grid=grid, lambda_branches=[], zeta=[])
        active: Dict[int, float] = {}
        next_id = 0
        for i, t in enumerate(grid):
            sols = sorted(set(fam.deterministic_roots(t, lo, hi)) | set(fam.random_roots(t, eps_w[i], lo, hi)))
            assigned: List[Tuple[int, float]] = []
            used = set()
            claims: Dict[int, List[float]] = {}
            for lam in sols:
                best = min(active.items(), key=lambda kv: abs(kv[1] - lam), default=None)
                if best is not None and abs(best[1] - lam) < threshold:
                    claims.setdefault(best[0], []).append(lam)
                else:
                    assigned.append((next_id, lam))
                    next_id += 1
            for b, lams in claims.items():
                if len(lams) == 1:
                    assigned.append((b, lams[0]))
                    used.add(b)
                else:
                    lams.sort(key=lambda l: abs(l - active[b]))
                    assigned.append((b, lams[0]))
                    used.add(b)
                    for extra in lams[1:]:
                        assigned.append((next_id, extra))
                        next_id += 1
            merged = self._detect_merges(assigned, threshold / 10)
            for b1, b2 in merged:
                sample.merges.append((float(t), b1, b2))
                self.logger.warning(f"t={t:.6g}: λ 分支 {b1} 与 {b2} 合并，两支在此终止")
            dead = {b for pair in merged for b in pair}
            assigned = [(b, lam) for b, lam in assigned if b not in dead]
            active = {b: lam for b, lam in assigned}
            values = {b: self._zeta_value(fam, lam, t, c, eps_w[i], eps_I[i], eps2_J2[i], eps_cW[i])
                      for b, lam in assigned}
            sample.lambda_branches.append(sorted(assigned))
            sample.zeta.append(values)

        self._collect_zeros(sc, fam, sample, path, c)
        self.logger.info(f"ζ 过程: {len(grid)} 个时刻, {next_id} 条分支, {len(sample.zeros)} 个 cool 零点"
                         f"（另有 hot 零点 {len(sample.hot_zeros)} 个）")
        return sample

    @staticmethod
    def _detect_merges(assigned, tol) -> List[Tuple[int, int]]:
        ordered = sorted(assigned, key=lambda item: item[1])
        return [(a[0], b[0]) for a, b in zip(ordered, ordered[1:]) if abs(a[1] - b[1]) < tol]

    def _collect_zeros(self, sc, fam: CausticFamily, sample: ZetaSample, path, c):
        """零点按 cool/hot 分开存放，只有 cool 焦散上的零点计入 zeros"""
        series: Dict[int, List[Tuple[int, float, float]]] = {}
        for i, (sols, values) in enumerate(zip(sample.lambda_branches, sample.zeta)):
            for b, lam in sols:
                series.setdefault(b, []).append((i, lam, values[b]))
        found: List[ZeroCrossing] = []
        for b, pts in series.items():
            vals = np.array([v for _, _, v in pts])
            if len(vals) >= 2 and np.all(np.abs(vals) < self.zero_tol):
                sample.degenerate_branches.append(b)
                self.logger.warning(f"分支 {b} 上 ζ 恒为零（确定性退化情形），每个网格时刻都记为湍流时间")
            touches = set()
            for i, lam, v in pts:
                if abs(v) < self.zero_tol:
                    t = float(sample.grid[i])
                    found.append(ZeroCrossing(t, b, 'touch', lam, fam.is_cool(lam, t, self.tie_tol)))
                    touches.add(i)
            for (i0, lam0, v0), (i1, lam1, v1) in zip(pts, pts[1:]):
                if i1 != i0 + 1 or i0 in touches or i1 in touches:
                    continue
                if v0 * v1 < 0:
                    tau, lam_tau = self._refine_zero(sc, fam, path, c, float(sample.grid[i0]),
                                                     float(sample.grid[i1]), lam0, v0)
                    kind = 'up' if v1 > v0 else 'down'
                    found.append(ZeroCrossing(tau, b, kind, lam_tau, fam.is_cool(lam_tau, tau, self.tie_tol)))
        found.sort(key=lambda z: (z.time, z.branch))
        sample.zeros = [z for z in found if z.cool]
        sample.hot_zeros = [z for z in found if not z.cool]

    def _solve_near(self, sc, fam: CausticFamily, t: float, path, lam_prev: float) -> Tuple[float, tuple]:
        noise = self._noise(sc, t, path)
        lo, hi = -self.lambda_halfwidth, self.lambda_halfwidth
        sols = list(fam.deterministic_roots(t, lo, hi)) + list(fam.random_roots(t, noise[0], lo, hi))
        if not sols:
            raise NumericError(f"t={t} 时驻定方程无解，分支中断")
        return min(sols, key=lambda l: abs(l - lam_prev)), noise

    def _refine_zero(self, sc, fam, path, c, ta, tb, lam, va, max_iter: int = 80) -> Tuple[float, float]:
        """t 上二分，|ζ| < 1e-9 或区间 < 1e-10 时停止"""
        lam_mid = lam
        for _ in range(max_iter):
            tm = 0.5 * (ta + tb)
            lam_mid, noise = self._solve_near(sc, fam, tm, path, lam_mid)
            vm = self._zeta_value(fam, lam_mid, tm, c, *noise)
            if abs(vm) < 1e-9 or tb - ta < 1e-10:
                return tm, lam_mid
            if va * vm < 0:
                tb = tm
            else:
                ta, va = tm, vm
        return 0.5 * (ta + tb), lam_mid

    # ---------- 回归统计 ----------

    def recurrence_stats(self, d: int, horizon: float, n_paths: int, seeds: Optional[Sequence[int]] = None,
                         dt: Optional[float] = None, n_checkpoints: int = 4,
                         scenario: Optional[Scenario] = None, lam: float = 0.0) -> RecurrenceStats:
        """
        Y_t 的零点统计

        Args:
            d: 噪声维数
            horizon: 时间范围
            n_paths: 路径数
            seeds: 种子列表，缺省为 0..n_paths-1
            scenario, lam: 给出时同时计算衰减条件
        """
        if horizon <= 0 or n_paths <= 0:
            raise ValueError("horizon 与 n_paths 必须为正")
        seeds = list(seeds) if seeds is not None else list(range(n_paths))
        dt = dt or self.recurrence_dt
        zero_times = []
        for seed in seeds[:n_paths]:
            path = WienerPath.simulate(d, horizon, dt=dt, seed=seed)
            zero_times.append(sign_change_times(path.times, y_process(path)))
        max_zero = np.array([z[-1] if len(z) else 0.0 for z in zero_times])
        checkpoints = np.array([horizon / 2 ** k for k in range(1, n_checkpoints + 1)])
        fraction_beyond = np.array([float(np.mean(max_zero > cp)) for cp in checkpoints])
        window = float(np.mean([np.any((z > horizon / 2) & (z <= horizon)) for z in zero_times]))
        delta = 10 * dt
        clustered = [np.mean(np.diff(z) <= delta) for z in zero_times if len(z) > 1]
        cluster = float(np.mean(clustered)) if clustered else 0.0
        corollary = None
        if scenario is not None:
            times = np.linspace(max(math.e * 1.01, horizon / 8), horizon, 16)
            corollary = self.corollary_conditions(scenario, lam, times)
        self.logger.info(f"Y 过程回归统计: {len(zero_times)} 条路径, (T/2,T] 内有零点的比例 {window:.3f}")
        return RecurrenceStats(horizon=horizon, dt=dt, seeds=seeds[:n_paths], zero_times=zero_times,
                               max_zero=max_zero, checkpoints=checkpoints, fraction_beyond=fraction_beyond,
                               window_fraction=window, cluster_fraction=cluster, corollary=corollary)

    def corollary_conditions(self, sc: Scenario, lam: float, times: Sequence[float]) -> Dict[str, np.ndarray]:
        """
        h(t) = (2t ln ln t)^{-½}（t > e），以及 h²t⁻¹f⁰(x_t⁰(λ)) 与 h t⁻¹Σx_t^{0,i}(λ)

        两项都趋于零时 ζ 的回归性成立；recurrent_indicated 按末值相对首值的衰减判断。
        """
        times = np.asarray(times, dtype=float)
        if np.any(times <= math.e):
            raise ValueError("衰减条件只在 t > e 时定义")
        fam = self.family(sc)
        h = 1.0 / np.sqrt(2 * times * np.log(np.log(times)))
        f0 = np.array([float(fam.action0(np.array([lam]), t)[0]) for t in times])
        xsum = np.array([float(np.sum(fam.position(np.array([lam]), t)[0])) for t in times])
        action_term = h ** 2 / times * f0
        position_term = h / times * xsum
        indicated = (abs(action_term[-1]) <= 0.5 * abs(action_term[0]) + 1e-15 and
                     abs(position_term[-1]) <= 0.5 * abs(position_term[0]) + 1e-15)
        return {'t': times, 'h': h, 'action_term': action_term, 'position_term': position_term,
                'recurrent_indicated': np.array([indicated])}


__all__ = ['ZetaSimulator', 'ZetaSample', 'ZeroCrossing', 'RecurrenceStats', 'CausticFamily',
           'y_process', 'sign_change_times']

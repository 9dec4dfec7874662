"""
激波流模块

cool Maxwell 集上的无粘速度、涡量与极限涡线，粘附速度，
以及粘附到 Maxwell 集上的质量下界 m₀(0,T) 与粒子蒙特卡洛校验。
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import simpson, trapezoid
from scipy.ndimage import map_coordinates
from skimage import measure

from .curves import CurvePoint, ParamCurve
from .errors import GeometryError, NumericError, ScenarioError
from .geometry import GeometryEngine
from .polyalg import Polynomial, batch_real_roots, numeric_real_roots
from .scenario import (TIME, Scenario, action, flow_map, initial_field, model_for,
                       pre_images)
from .wiener import WienerPath, philox_generator


@dataclass
class MaxwellPoint:
    """cool Maxwell 集上一点的两侧数据，x0 为 ∂𝒮/∂n 较小的一侧"""
    x: np.ndarray
    t: float
    x0: np.ndarray
    x0_check: np.ndarray
    S: float
    S_check: float
    rho_sqrt: float
    rho_sqrt_check: float
    grad_S: np.ndarray
    grad_S_check: np.ndarray
    n: np.ndarray
    v0: np.ndarray
    v0_split: np.ndarray
    adhesion_v: np.ndarray
    cool: bool = True
    omega0: Optional[object] = None
    omega_noise: float = float('nan')
    adhesion_curl: Optional[object] = None

    @property
    def asymmetry(self) -> float:
        """(√ρ̌ − √ρ)/(√ρ̌ + √ρ)"""
        return (self.rho_sqrt_check - self.rho_sqrt) / (self.rho_sqrt_check + self.rho_sqrt)

    @property
    def normal_jump(self) -> float:
        """∂𝒮̌/∂n − ∂𝒮/∂n ≥ 0"""
        return float((self.grad_S_check - self.grad_S) @ self.n)

    def to_row(self) -> Dict[str, float]:
        d = len(self.x)
        row = {'t': self.t}
        row.update({f'x{i + 1}': float(self.x[i]) for i in range(d)})
        row.update({'rho': self.rho_sqrt ** 2, 'rho_check': self.rho_sqrt_check ** 2})
        row.update({f'v0_{i + 1}': float(self.v0[i]) for i in range(d)})
        omega = np.atleast_1d(np.asarray(self.omega0 if self.omega0 is not None else np.nan, dtype=float))
        row.update({f'omega0_{i + 1}': float(w) for i, w in enumerate(omega)})
        row.update({f'adhesion_v{i + 1}': float(self.adhesion_v[i]) for i in range(d)})
        return row


@dataclass
class MassLedger:
    """粘附质量账目；swept 为无折点扫过的总质量，m0 = swept/2"""
    T: float
    m0: float = 0.0
    swept: float = 0.0
    excluded_mass: float = 0.0
    mc_estimate: float = float('nan')
    stderr: float = float('nan')
    n_particles: int = 0
    kink_mass: float = 0.0
    free_mass: float = 0.0
    total_mass: float = 0.0
    rates: Optional[pd.DataFrame] = None

    @property
    def has_quadrature(self) -> bool:
        return self.rates is not None

    def mc_agrees(self, sigmas: float = 3.0) -> bool:
        """|mc − swept| ≤ kσ（σ 为零时只允许舍入误差）"""
        return abs(self.mc_estimate - self.swept) <= sigmas * self.stderr + 1e-12 * max(1.0, abs(self.swept))

    def lower_bound_holds(self, sigmas: float = 3.0) -> bool:
        return self.mc_estimate >= self.m0 - sigmas * self.stderr - 1e-12

    def bookkeeping_residual(self) -> float:
        """粘附 + 自由 + 折点 与总样本质量之差"""
        return abs(self.mc_estimate + self.free_mass + self.kink_mass - self.total_mass)

    def summary(self) -> Dict[str, float]:
        return {'T': self.T, 'm0': self.m0, 'swept': self.swept, 'mc': self.mc_estimate,
                'stderr': self.stderr, 'kink_mass': self.kink_mass, 'excluded_mass': self.excluded_mass,
                'n_particles': self.n_particles}


@dataclass
class VortexPatch:
    """三维挤出场景上 Maxwell 面的坐标片 (ξ₁ 沿截面曲线弧长, ξ₂ = z₀)"""
    xi1: np.ndarray
    xi2: np.ndarray
    points: List[List[MaxwellPoint]]
    positions: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    lhs: np.ndarray


def _row_polyval(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros(coeffs.shape[0])
    for j in range(coeffs.shape[1]):
        out = out * x + coeffs[:, j]
    return out


def _row_polyder(coeffs: np.ndarray) -> np.ndarray:
    n = coeffs.shape[1] - 1
    return coeffs[:, :-1] * np.arange(n, 0, -1)[None, :]


class ShockFlowAnalyzer:
    """Maxwell 集上的速度、涡量与质量粘附分析"""

    def __init__(self, config: Optional[Dict] = None, geometry: Optional[GeometryEngine] = None):
        self.config = config or {}
        cfg = self.config.get('shockflow', {})
        self.fd_step = float(cfg.get('fd_step', 1e-5))
        self.mass_slices = int(cfg.get('mass_slices', 24))
        self.mass_nodes = int(cfg.get('mass_nodes', 65))
        self.richardson_step = float(cfg.get('richardson_step', 1e-3))
        self.checkpoints_per_unit = int(cfg.get('checkpoints_per_unit', 200))
        self.mc_particles = int(float(cfg.get('mc_particles', 1e6)))
        self.mc_batch = int(float(cfg.get('mc_batch', 1e5)))
        self.max_workers = int(self.config.get('output', {}).get('max_workers', 4))
        self.tie_tol = float(self.config.get('scenario', {}).get('action_tie_tol', 1e-12))
        self.geometry = geometry or GeometryEngine(self.config)
        self.logger = logging.getLogger(__name__)

    # ---------- Maxwell 点上的速度 ----------

    @staticmethod
    def _locate(mp) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        partner = getattr(mp, 'x0_check', None)
        if partner is None:
            partner = getattr(mp, 'partner', None)
        if partner is None:
            raise GeometryError("Maxwell点缺少配对原像")
        return np.asarray(mp.x, float), np.asarray(mp.x0, float), np.asarray(partner, float)

    def maxwell_velocity(self, sc: Scenario, mp, t: float, path: Optional[WienerPath] = None) -> MaxwellPoint:
        """
        v⁰ = (√ρ∇𝒮 + √ρ̌∇𝒮̌)/(√ρ + √ρ̌)，并与切向+法向分解式交叉比对

        Args:
            mp: 带 x, x0 与 partner（或 x0_check）的 Maxwell 点，例如 GeometryEngine.maxwell 的 CurvePoint

        Raises:
            GeometryError: 原像在焦散前像上（Maxwell-焦散交点）或两侧作用量不等
        """
        x, a, b = self._locate(mp)
        if np.linalg.norm(a - b) < 1e-9:
            raise GeometryError(f"Maxwell点 {x.tolist()} 的两个原像重合")
        st_a, st_b = flow_map(sc, a, t, path), flow_map(sc, b, t, path)
        for st in (st_a, st_b):
            if abs(st.detJ) < 1e-10:
                raise GeometryError(f"原像 {st.x0.tolist()} 处 detJ≈0：Maxwell集与焦散相交，不作为正则点处理")
        S_a, S_b = action(sc, a, x, t, path), action(sc, b, x, t, path)
        if abs(S_a - S_b) > 1e-9 * max(1.0, abs(S_a)):
            raise GeometryError(f"Maxwell点两侧作用量不等: |Δ𝒜|={abs(S_a - S_b):.3e}")
        va, vb = st_a.Xdot, st_b.Xdot
        jump = vb - va
        if float(np.linalg.norm(jump)) < 1e-14:
            raise GeometryError("两侧速度相同，Maxwell集法向无定义")
        # 约定 ∂𝒮/∂n ≤ ∂𝒮̌/∂n
        n = jump / np.linalg.norm(jump)
        T0 = initial_field(sc)
        ra = float(T0.T0(a)) / math.sqrt(abs(st_a.detJ))
        rb = float(T0.T0(b)) / math.sqrt(abs(st_b.detJ))
        if ra < 0 or rb < 0 or ra + rb == 0:
            raise GeometryError(f"密度平方根非正: {ra}, {rb}")
        v_weighted = (ra * va + rb * vb) / (ra + rb)
        kappa = (rb - ra) / (rb + ra)
        v_split = 0.5 * ((va + vb) + kappa * float((vb - va) @ n) * n)
        scale = max(1.0, float(np.linalg.norm(va)), float(np.linalg.norm(vb)))
        if np.linalg.norm(v_weighted - v_split) > 1e-8 * scale:
            raise NumericError("加权平均速度与分解式不一致", residual=float(np.linalg.norm(v_weighted - v_split)))
        cool = bool(getattr(mp, 'cool', True))
        return MaxwellPoint(x=x, t=float(t), x0=a, x0_check=b, S=S_a, S_check=S_b, rho_sqrt=ra, rho_sqrt_check=rb,
                            grad_S=va, grad_S_check=vb, n=n, v0=v_weighted, v0_split=v_split,
                            adhesion_v=0.5 * (va + vb), cool=cool)

    def adhesion_velocity(self, sc: Scenario, mp, t: float, path: Optional[WienerPath] = None) -> np.ndarray:
        """½∇(𝒮 + 𝒮̌)，v⁰ 与之差必须平行于法向"""
        point = mp if isinstance(mp, MaxwellPoint) else self.maxwell_velocity(sc, mp, t, path)
        diff = point.v0 - point.adhesion_v
        residual = float(np.linalg.norm(diff - (diff @ point.n) * point.n))
        if residual > 1e-8 * max(1.0, float(np.linalg.norm(point.v0))):
            raise NumericError("v⁰ − 粘附速度不平行于法向", residual=residual)
        return point.adhesion_v

    def inviscid_velocity(self, sc: Scenario, x: Sequence[float], t: float,
                          path: Optional[WienerPath] = None) -> np.ndarray:
        """正则点上 ∇𝒮_t(x) = Ẋ(t; x̃₀)，x̃₀ 为最小作用量原像"""
        pis = pre_images(sc, x, t, path, tie_tol=self.tie_tol)
        if pis.minimizer is None:
            raise GeometryError(f"点 {list(x)} 没有实原像")
        if not pis.minimizer_unique:
            self.logger.warning(f"点 {list(x)} 的最小作用量原像不唯一，速度取第一个")
        return flow_map(sc, pis.minimizer.x0, t, path).Xdot

    def one_sided_limits(self, sc: Scenario, mp: MaxwellPoint, offset: float = 1e-6,
                         path: Optional[WienerPath] = None) -> Tuple[np.ndarray, np.ndarray]:
        """沿 ±n 偏移处的单侧速度，+n 一侧对应 x0 分支"""
        plus = self.inviscid_velocity(sc, mp.x + offset * mp.n, mp.t, path)
        minus = self.inviscid_velocity(sc, mp.x - offset * mp.n, mp.t, path)
        return plus, minus

    # ---------- 涡量 ----------

    def _continue(self, sc: Scenario, x0: np.ndarray, target: np.ndarray, t: float, path,
                  tol: float = 1e-13, max_iter: int = 30):
        """牛顿延拓: 求 Φ_t(x₀') = target，初值 x₀"""
        z = np.array(x0, dtype=float)
        for _ in range(max_iter):
            st = flow_map(sc, z, t, path)
            r = st.X - target
            if np.linalg.norm(r) < tol * max(1.0, float(np.linalg.norm(target))):
                return st
            try:
                z = z - np.linalg.solve(st.J, r)
            except np.linalg.LinAlgError:
                break
        st = flow_map(sc, z, t, path)
        if np.linalg.norm(st.X - target) > 1e-9 * max(1.0, float(np.linalg.norm(target))):
            return None
        return st

    def _branch_fields(self, sc, point: MaxwellPoint, target: np.ndarray, path):
        """target 处两支延拓后的 (κ(v̌ − v), ½(v + v̌))"""
        st_a = self._continue(sc, point.x0, target, point.t, path)
        st_b = self._continue(sc, point.x0_check, target, point.t, path)
        if st_a is None or st_b is None or np.linalg.norm(st_a.x0 - st_b.x0) < 1e-9:
            raise GeometryError(f"{2 * sc.d} 点中心差分模板上的分支延拓失败，请减小 fd_step 或加密采样")
        T0 = initial_field(sc)
        ra = float(T0.T0(st_a.x0)) / math.sqrt(abs(st_a.detJ))
        rb = float(T0.T0(st_b.x0)) / math.sqrt(abs(st_b.detJ))
        kappa = (rb - ra) / (rb + ra)
        return kappa * (st_b.Xdot - st_a.Xdot), 0.5 * (st_a.Xdot + st_b.Xdot)

    def _curl(self, sc, point: MaxwellPoint, h: float, path):
        d = sc.d
        dB = np.zeros((d, d))
        dA = np.zeros((d, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            Bp, Ap = self._branch_fields(sc, point, point.x + e, path)
            Bm, Am = self._branch_fields(sc, point, point.x - e, path)
            dB[:, i] = (Bp - Bm) / (2 * h)
            dA[:, i] = (Ap - Am) / (2 * h)

        def curl(D):
            if d == 2:
                return float(D[1, 0] - D[0, 1])
            return np.array([D[2, 1] - D[1, 2], D[0, 2] - D[2, 0], D[1, 0] - D[0, 1]])
        return 0.5 * np.asarray(curl(dB)), np.asarray(curl(dA))

    def vorticity(self, sc: Scenario, mp, t: float, path: Optional[WienerPath] = None) -> MaxwellPoint:
        """
        ω⁰ = ½∇∧{κ(∂𝒮̌/∂n − ∂𝒮/∂n)n}，κ = (√ρ̌ − √ρ)/(√ρ̌ + √ρ)

        花括号内的场由两支原像的牛顿延拓在中心差分模板上求值；二维返回标量旋度，
        三维返回向量并检查 ω⁰·n ≈ 0。
        """
        if sc.d not in (2, 3):
            raise ScenarioError("涡量只对二维和三维场景定义")
        point = mp if isinstance(mp, MaxwellPoint) else self.maxwell_velocity(sc, mp, t, path)
        h = self.fd_step
        omega, adhesion_curl = self._curl(sc, point, h, path)
        omega_2h, _ = self._curl(sc, point, 2 * h, path)
        point.omega0 = float(omega) if sc.d == 2 else omega
        point.adhesion_curl = float(adhesion_curl) if sc.d == 2 else adhesion_curl
        point.omega_noise = float(np.linalg.norm(np.atleast_1d(omega) - np.atleast_1d(omega_2h)))
        if sc.d == 3:
            tangency = abs(float(omega @ point.n))
            if tangency > 1e-6 * max(1.0, float(np.linalg.norm(omega))):
                raise GeometryError(f"涡量不在 Maxwell 面切空间内: |ω·n|={tangency:.3e}")
        return point

    # ---------- 三维涡线 ----------

    def _slice_scenario(self, sc: Scenario) -> Scenario:
        """挤出场景 S₀ = S(x₀, y₀) + g(z₀) 的二维截面"""
        z0 = sc.x0_vars[2]
        mixed = [sc.S0.diff(v).diff(z0) for v in sc.x0_vars[:2]]
        if any(not m.is_zero for m in mixed) or any('z' in kk.free_vars for kk in sc.k):
            raise ScenarioError("涡线坐标片只支持挤出型三维场景（S₀ 关于 z₀ 可分离，k 不含 z）")
        vars2, xvars2 = sc.x0_vars[:2], sc.x_vars[:2]
        S2 = sc.S0.subs({z0: 0}, vars=vars2)
        k2 = tuple(kk.with_vars(xvars2) for kk in sc.k)
        T2 = sc.T0.subs({z0: 0}, vars=vars2)
        return Scenario(d=2, S0=S2, V=Polynomial.constant(0, xvars2), k=k2, eps=sc.eps, T0=T2,
                        mode=sc.mode, name=f'{sc.name}-slice', box=tuple(sc.box[:2]), mu=sc.mu)

    def vortex_patch(self, sc: Scenario, t: float, branch: Optional[int] = None,
                     n_z: int = 21, path: Optional[WienerPath] = None) -> VortexPatch:
        """
        Maxwell 面坐标片：截面 Maxwell 曲线的 cool 分支 × z₀，并计算度量系数 h₁、h₂

        Raises:
            GeometryError: 坐标片不正交或 cool 点不足
        """
        if sc.d != 3:
            raise ScenarioError("涡线只对三维场景定义")
        slice_sc = self._slice_scenario(sc)
        curve = self.geometry.maxwell(slice_sc, t, path)
        cool = [p for p in curve.points if p.cool]
        if not cool:
            raise GeometryError(f"t={t} 时没有 cool Maxwell 点，无法构造坐标片")
        if branch is None:
            counts = {}
            for p in cool:
                counts[p.branch] = counts.get(p.branch, 0) + 1
            branch = max(counts, key=counts.get)
        pts2 = sorted((p for p in cool if p.branch == branch), key=lambda p: p.param)
        if len(pts2) < 5:
            raise GeometryError(f"分支 {branch} 只有 {len(pts2)} 个 cool 点，坐标片至少需要 5 个")
        lo, hi = sc.box[2]
        zs = np.linspace(lo, hi, n_z)
        grid: List[List[MaxwellPoint]] = []
        for p in pts2:
            row = []
            for z0 in zs:
                a = np.append(p.x0, z0)
                b = np.append(p.partner, z0)
                x = flow_map(sc, a, t, path).X
                mp = CurvePoint(param=p.param, x=x, x0=a, cool=True, velocity=p.velocity, partner=b)
                row.append(self.maxwell_velocity(sc, mp, t, path))
            grid.append(row)
        positions = np.array([[mp.x for mp in row] for row in grid])
        xi1 = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(positions[:, 0, :2], axis=0), axis=1))])
        d1 = np.gradient(positions, xi1, axis=0)
        d2 = np.gradient(positions, zs, axis=1)
        h1 = np.linalg.norm(d1, axis=2)
        h2 = np.linalg.norm(d2, axis=2)
        cosine = np.abs(np.sum(d1 * d2, axis=2)) / np.maximum(h1 * h2, 1e-300)
        if float(np.max(cosine)) > 1e-3:
            raise GeometryError(f"坐标片不正交 (max|cos|={float(np.max(cosine)):.2e})，请重新参数化")
        lhs = np.array([[mp.asymmetry * mp.normal_jump for mp in row] for row in grid]) * h1 * h2
        return VortexPatch(xi1=xi1, xi2=zs, points=grid, positions=positions, h1=h1, h2=h2, lhs=lhs)

    def vortex_lines(self, sc: Scenario, t: float, patch: Optional[VortexPatch] = None,
                     c_values: Sequence[float] = (0.0,), path: Optional[WienerPath] = None) -> List[ParamCurve]:
        """
        极限涡线: h₁h₂(√ρ̌ − √ρ)∂ₙ(f(x̌₀¹) − f(x₀¹))/(√ρ̌ + √ρ) = c 在 (ξ₁, ξ₂) 网格上的等值线
        """
        patch = patch or self.vortex_patch(sc, t, path=path)
        curves = []
        for c in c_values:
            curve = ParamCurve(label=f'vortex({c:g})', t=float(t))
            for b, contour in enumerate(measure.find_contours(patch.lhs, level=float(c))):
                coords = contour.T
                xyz = np.stack([map_coordinates(patch.positions[:, :, k], coords, order=1, mode='nearest')
                                for k in range(3)], axis=-1)
                s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xyz, axis=0), axis=1))])
                tangent = np.gradient(xyz, s, axis=0) if len(s) > 1 else np.zeros_like(xyz)
                for param, pos, tan, (i, j) in zip(s, xyz, tangent, contour):
                    ii, jj = int(round(i)), int(round(j))
                    mp = patch.points[ii][jj]
                    curve.points.append(CurvePoint(param=float(param), x=pos, x0=mp.x0, cool=True,
                                                   velocity=tan, branch=b, partner=mp.x0_check))
            self.logger.info(f"涡线 c={c:g}: {len(curve.branch_ids())} 条")
            curves.append(curve)
        return curves

    # ---------- 质量粘附 ----------

    def _noise_free(self, sc: Scenario) -> Scenario:
        if sc.d != 2:
            raise ScenarioError("质量粘附只支持二维场景")
        if not sc.is_free:
            raise ScenarioError("质量粘附需要 free-closed-form 模式")
        if sc.eps != 0:
            self.logger.info(f"场景 {sc.name} 的 ε={sc.eps}，质量粘附按无噪声动力学计算")
            return sc.with_eps(0.0)
        return sc

    def _contact_valid(self, family_t, x0: np.ndarray, u: np.ndarray, kind: str,
                       tie: float = 1e-7) -> np.ndarray:
        """
        x₀ 在 u 时刻是否处于 cool 接触（批量）

        kind = 'maxwell' 要求存在实配对（等作用量的另一实临界点）且 x₀ 为最小者；
        'caustic' 与 'cool' 只要求 x₀ 为最小者。
        """
        grad = initial_field(family_t.sc).grad(x0)
        X = x0 + u[:, None] * grad
        C = family_t.coefficient_arrays(X, u)
        lam = x0[:, 0]
        f_self = _row_polyval(C, lam)
        crit = batch_real_roots(_row_polyder(C))
        values = np.stack([np.where(np.isnan(crit[:, j]), np.nan, _row_polyval(C, np.nan_to_num(crit[:, j])))
                           for j in range(crit.shape[1])], axis=1) if crit.shape[1] else np.empty((len(u), 0))
        scale = np.maximum(1.0, np.abs(f_self))
        f_min = np.min(np.where(np.isnan(values), np.inf, values), axis=1) if values.shape[1] else np.full(len(u), np.inf)
        cool = f_self <= np.minimum(f_min, f_self) + tie * scale
        if kind != 'maxwell':
            return cool
        far = np.abs(crit - lam[:, None]) > 1e-5
        tied = np.abs(values - f_self[:, None]) < tie * scale[:, None]
        partner = np.any(far & tied & ~np.isnan(values), axis=1)
        return cool & partner

    def _tilde(self, family_t, x0: np.ndarray, t: float) -> bool:
        """x₀ 在所有检查点 u < t 都是最小原像（D.7 意义下未曾接触）"""
        k = max(2, int(math.ceil(self.checkpoints_per_unit * t)))
        u = np.arange(1, k) * (t / k)
        if u.size == 0:
            return True
        pts = np.broadcast_to(x0, (u.size, 2)).copy()
        return bool(np.all(self._contact_valid(family_t, pts, u, 'cool', tie=1e-9)))

    def _pre_maxwell_roots(self, coeff_fns, x0: float, t: float, box) -> List[float]:
        coeffs = [float(fn(x0, t)) for fn in coeff_fns]
        return numeric_real_roots(coeffs, box[1][0], box[1][1]).values

    def _rate_at(self, x0: float, t: float, coeff_fns, family_t, box, T: float) -> Tuple[float, float, int]:
        """固定 x₀¹ 的扫过率 Σ T₀²|∂x₀²/∂t|（有效根）、被 tilde 条件排除的部分与有效根数"""
        h = self.richardson_step * T
        field_ = initial_field(family_t.sc)
        rate = excluded = 0.0
        count = 0
        for y0 in self._pre_maxwell_roots(coeff_fns, x0, t, box):
            pt = np.array([[x0, y0]])
            if not self._contact_valid(family_t, pt, np.array([t]), 'maxwell')[0]:
                continue
            dy = self._richardson(coeff_fns, x0, t, y0, h, box)
            if dy is None:
                continue
            weight = float(field_.T0(pt[0])) ** 2 * abs(dy)
            if self._tilde(family_t, pt[0], t):
                rate += weight
                count += 1
            else:
                excluded += weight
        return rate, excluded, count

    def _richardson(self, coeff_fns, x0, t, y0, h, box) -> Optional[float]:
        def track(tt):
            roots = self._pre_maxwell_roots(coeff_fns, x0, tt, (box[0], (-np.inf, np.inf)))
            return min(roots, key=lambda r: abs(r - y0)) if roots else None

        vals = {}
        for step in (h, h / 2):
            if t - step <= 0:
                return None
            lo, hi = track(t - step), track(t + step)
            if lo is None or hi is None:
                return None
            vals[step] = (hi - lo) / (2 * step)
        return (4 * vals[h / 2] - vals[h]) / 3

    def _slice_rate(self, t: float, coeff_fns, family_t, box, T: float) -> Tuple[float, float]:
        """一个时间切片上的扫过率：有效根数变化处二分定位，分段复合 Simpson"""
        nodes = np.linspace(box[0][0], box[0][1], self.mass_nodes)
        evals = [self._rate_at(x, t, coeff_fns, family_t, box, T) for x in nodes]
        counts = [e[2] for e in evals]
        excluded = float(simpson([e[1] for e in evals], x=nodes))
        edges = [nodes[0]]
        for i in range(len(nodes) - 1):
            if counts[i] != counts[i + 1]:
                a, b = nodes[i], nodes[i + 1]
                ca = counts[i]
                for _ in range(30):
                    m = 0.5 * (a + b)
                    if self._rate_at(m, t, coeff_fns, family_t, box, T)[2] == ca:
                        a = m
                    else:
                        b = m
                edges.append(0.5 * (a + b))
        edges.append(nodes[-1])
        total = 0.0
        for a, b in zip(edges, edges[1:]):
            if b - a < 1e-12:
                continue
            inset = 1e-9 * (b - a)
            xs = np.linspace(a + inset, b - inset, 17)
            ys = [self._rate_at(x, t, coeff_fns, family_t, box, T)[0] for x in xs]
            if any(ys):
                total += float(simpson(ys, x=xs))
        return total, excluded

    def mass_accreted(self, sc: Scenario, T: float, slices: Optional[int] = None) -> MassLedger:
        """
        m₀(0,T) = ∫₀ᵀ (dt/2) ∫ T₀²|∂x₀²/∂t| dx₀¹，积分区域为 cool Maxwell 前像中尚未接触过的部分

        ∂x₀²/∂t 由符号时间的 Maxwell 前像上的根跟踪加 Richardson 外推得到；
        x₀¹ 方向分段 Simpson，t 方向梯形。
        """
        if T < 0:
            raise ValueError(f"T 必须非负: {T}")
        sc = self._noise_free(sc)
        ledger = MassLedger(T=float(T))
        if T == 0:
            ledger.rates = pd.DataFrame({'t': [0.0], 'rate': [0.0], 'excluded_rate': [0.0]})
            return ledger
        pre = self.geometry.pre_maxwell(sc, TIME)
        family_t = model_for(sc, TIME).reduced_family()
        x0v, y0v = sc.x0_vars
        if pre.is_empty or pre.poly.degree(y0v) < 1:
            self.logger.info("Maxwell 前像为空，m₀ = 0")
            ledger.rates = pd.DataFrame({'t': [0.0, T], 'rate': [0.0, 0.0], 'excluded_rate': [0.0, 0.0]})
            return ledger
        coeff_fns = [c.evaluator((x0v, TIME)) for c in pre.poly.coeffs_in(y0v)]
        n = slices or self.mass_slices
        ts = np.linspace(0.0, T, n + 1)
        rates = np.zeros(n + 1)
        excluded = np.zeros(n + 1)
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = {executor.submit(self._slice_rate, float(t), coeff_fns, family_t, sc.box, T): i
                       for i, t in enumerate(ts) if i > 0}
            for future in as_completed(futures):
                i = futures[future]
                try:
                    rates[i], excluded[i] = future.result()
                except Exception as e:
                    self.logger.error(f"t={ts[i]:.4g} 切片积分失败: {e}")
                    raise
        ledger.swept = float(trapezoid(rates, ts))
        ledger.m0 = 0.5 * ledger.swept
        ledger.excluded_mass = float(trapezoid(excluded, ts))
        ledger.rates = pd.DataFrame({'t': ts, 'rate': rates, 'excluded_rate': excluded})
        self.logger.info(f"质量粘附 T={T}: m₀={ledger.m0:.6g}, 扫过质量={ledger.swept:.6g}")
        return ledger

    # ---------- 粒子蒙特卡洛 ----------

    def _first_contact(self, roots: np.ndarray, x0: np.ndarray, family_t, kind: str, T: float) -> np.ndarray:
        """每个粒子最早的有效接触时间，没有则为 inf"""
        first = np.full(x0.shape[0], np.inf)
        for j in range(roots.shape[1]):
            u = roots[:, j]
            cand = np.isfinite(u) & (u > 1e-9) & (u <= T) & (u < first)
            if not np.any(cand):
                continue
            idx = np.flatnonzero(cand)
            ok = self._contact_valid(family_t, x0[idx], u[idx], kind)
            first[idx[ok]] = u[idx[ok]]
        return first

    def _mc_batch(self, sc, T, n, seed, substream, pre_fns, det_fns, family_t):
        rng = philox_generator(seed, substream)
        box = np.array(sc.box, dtype=float)
        x0 = box[:, 0] + rng.random((n, 2)) * (box[:, 1] - box[:, 0])
        volume = float(np.prod(box[:, 1] - box[:, 0]))
        w = initial_field(sc).T0(x0) ** 2 * volume
        args = (x0[:, 0], x0[:, 1])
        P = np.stack([np.broadcast_to(fn(*args), (n,)) for fn in pre_fns], axis=1)
        D = np.stack([np.broadcast_to(fn(*args), (n,)) for fn in det_fns], axis=1)
        t_max = self._first_contact(batch_real_roots(P), x0, family_t, 'maxwell', T) \
            if P.shape[1] > 1 else np.full(n, np.inf)
        t_cau = self._first_contact(batch_real_roots(D), x0, family_t, 'caustic', T) \
            if D.shape[1] > 1 else np.full(n, np.inf)
        adhered = np.isfinite(t_max) & (t_max <= t_cau)
        kinked = np.isfinite(t_cau) & (t_cau < t_max)
        free = ~(adhered | kinked)
        return {'w_adhered': w * adhered, 'kink': float(np.sum(w[kinked])), 'free': float(np.sum(w[free])),
                'total': float(np.sum(w)), 'n': n}

    def particle_adhesion_mc(self, sc: Scenario, T: float, n_particles: Optional[int] = None,
                             seed: int = 0) -> MassLedger:
        """
        粒子蒙特卡洛：x₀ 在 box 上均匀采样、权重 T₀²，沿经典路径运动，
        首次接触 cool Maxwell 集即粘附；先接触 cool 焦散的记为折点质量（不计入粘附）。

        接触时刻是 Maxwell 前像多项式与 det J 关于 t 的实根，按升序逐一验证 cool 条件。
        """
        n_particles = int(n_particles or self.mc_particles)
        if n_particles <= 0:
            raise ValueError("粒子数必须为正")
        sc = self._noise_free(sc)
        pre = self.geometry.pre_maxwell(sc, TIME)
        model_t = model_for(sc, TIME)
        family_t = model_t.reduced_family()
        x0v, y0v = sc.x0_vars
        if pre.is_empty:
            pre_fns = [Polynomial.constant(1, (x0v, y0v)).evaluator((x0v, y0v))]
        else:
            pre_fns = [c.evaluator((x0v, y0v)) for c in pre.poly.with_vars((x0v, y0v, TIME)).coeffs_in(TIME)]
        det = model_t.jacobian_det_poly()
        det_fns = [c.evaluator((x0v, y0v)) for c in det.with_vars((x0v, y0v, TIME)).coeffs_in(TIME)]
        sizes = [min(self.mc_batch, n_particles - k) for k in range(0, n_particles, self.mc_batch)]
        results: List[Optional[dict]] = [None] * len(sizes)
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = {executor.submit(self._mc_batch, sc, T, n, seed, i, pre_fns, det_fns, family_t): i
                       for i, n in enumerate(sizes)}
            for future in as_completed(futures):
                results[futures[future]] = future.result()
        w_adhered = np.concatenate([r['w_adhered'] for r in results])
        ledger = MassLedger(T=float(T), n_particles=n_particles)
        ledger.mc_estimate = float(np.mean(w_adhered))
        ledger.stderr = float(np.std(w_adhered, ddof=1) / math.sqrt(n_particles)) if n_particles > 1 else float('nan')
        ledger.kink_mass = sum(r['kink'] for r in results) / n_particles
        ledger.free_mass = sum(r['free'] for r in results) / n_particles
        ledger.total_mass = sum(r['total'] for r in results) / n_particles
        self.logger.info(f"粒子蒙特卡洛 T={T}: 粘附 {ledger.mc_estimate:.6g} ± {ledger.stderr:.2g}, "
                         f"折点质量 {ledger.kink_mass:.6g}")
        return ledger

    def compare_mass(self, quadrature: MassLedger, mc: MassLedger) -> MassLedger:
        """合并积分与蒙特卡洛两份账目，比对用 mc_agrees 与 lower_bound_holds"""
        merged = MassLedger(T=quadrature.T, m0=quadrature.m0, swept=quadrature.swept,
                            excluded_mass=quadrature.excluded_mass, mc_estimate=mc.mc_estimate,
                            stderr=mc.stderr, n_particles=mc.n_particles, kink_mass=mc.kink_mass,
                            free_mass=mc.free_mass, total_mass=mc.total_mass, rates=quadrature.rates)
        return merged

    def maxwell_table(self, points: Sequence[MaxwellPoint]) -> pd.DataFrame:
        if not points:
            return pd.DataFrame(columns=['t', 'x1', 'x2', 'rho', 'rho_check'])
        return pd.DataFrame([p.to_row() for p in points])


__all__ = ['ShockFlowAnalyzer', 'MaxwellPoint', 'MassLedger', 'VortexPatch']

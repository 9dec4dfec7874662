"""
几何模块

计算焦散、等值面、Maxwell集与Maxwell-Klein集及其前像，标注cool/hot，
检测广义尖点并验证尖点定理。
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import root

from .curves import (PRE_SPACE, TARGET_SPACE, CurvePoint, CuspReport, ImplicitCurve,
                     ParamCurve, TheoremCheck, TracedBranch, detect_cusps)
from .errors import EliminationError, GeometryError, NumericError, ScenarioError
from .polyalg import (Polynomial, discriminant, isolate_real_roots, numeric_real_roots, resultant,
                      square_cube_split, split_profile, symbol, to_rational)
from .scenario import (LAM, FreeActionModel, Scenario, general_flow, initial_field, model_for)
from .wiener import WienerPath


@dataclass
class FactorizationResult:
    """双重判别式 D^c(D^λ(f−c)) = k·B²·C³"""
    k: Fraction
    B: Polynomial
    C: Polynomial
    profile: Tuple[int, ...]
    caustic_match: bool


@dataclass
class LevelCrossing:
    """Maxwell点处等值面的自交"""
    c: float
    residual: float
    tangents: Tuple[np.ndarray, np.ndarray]
    transversal: bool


class GeometryEngine:
    """奇异几何计算引擎"""

    def __init__(self, config: Optional[Dict] = None):
        """
        初始化几何引擎

        Args:
            config: 配置字典，读取 geometry / scenario / polyalg 三节
        """
        self.config = config or {}
        geo = self.config.get('geometry', {})
        self.cusp_tol = float(geo.get('cusp_tol', 1e-6))
        self.grid_points = int(geo.get('grid_points', 241))
        self.newton_tol = float(geo.get('newton_tol', 1e-13))
        self.sample_spacing = float(geo.get('sample_spacing', 0.01))
        self.partner_tol = float(geo.get('partner_tol', 1e-9))
        self.terminal_partner_ratio = float(geo.get('terminal_partner_ratio', 1e-3))
        self.tie_tol = float(self.config.get('scenario', {}).get('action_tie_tol', 1e-12))
        poly_cfg = self.config.get('polyalg', {})
        self.max_dim = int(poly_cfg.get('max_sylvester_dim', 64))
        self.root_tol = float(poly_cfg.get('root_tol', 1e-12))
        self.logger = logging.getLogger(__name__)

    # ---------- 内部工具 ----------

    def _model(self, sc: Scenario, t: float, path: Optional[WienerPath]) -> FreeActionModel:
        if not sc.is_free:
            raise ScenarioError(f"场景 {sc.name} 为 {sc.mode} 模式，精确几何只支持 free-closed-form")
        if t <= 0:
            raise ValueError(f"时间必须为正: {t}")
        return model_for(sc, t, path)

    @staticmethod
    def _scale(sc: Scenario) -> float:
        return float(np.linalg.norm([hi - lo for lo, hi in sc.box]))

    def _action_gap(self, family, x: np.ndarray, lam: float) -> Tuple[float, float, np.ndarray]:
        """(f(λ), 全部实临界点上的最小f, 系数)"""
        coeffs = family.coefficient_arrays(np.asarray(x)[None, :])[0]
        roots = numeric_real_roots(np.polyder(coeffs)).values
        values = np.polyval(coeffs, np.array(list(roots) + [lam]))
        return float(np.polyval(coeffs, lam)), float(values.min()), coeffs

    def _is_cool(self, f_val: float, f_min: float) -> bool:
        return f_val <= f_min + self.tie_tol * max(1.0, abs(f_min))

    def _pre_curve_points(self, sc: Scenario, curve: ImplicitCurve, box=None) -> List[TracedBranch]:
        return curve.trace(box or sc.box, self.grid_points, self.sample_spacing, self.newton_tol)

    def eikonal(self, sc: Scenario, x0, t: float, path: Optional[WienerPath] = None) -> np.ndarray:
        """E(x₀) = 𝒜(x₀, Φ_t(x₀), t)，支持批量"""
        x0 = np.asarray(x0, dtype=float)
        if sc.is_free:
            model = self._model(sc, t, path)
            X, _, _ = model.flow_numeric(x0)
            return model.action_numeric(x0, X)
        flow = general_flow(sc)
        flat = x0.reshape(-1, sc.d)
        out = np.array([flow.action(p, flow.flow(p, t, path).X, t, path) for p in flat])
        return out.reshape(x0.shape[:-1])

    def eikonal_gradient(self, sc: Scenario, x0, t: float, path: Optional[WienerPath] = None) -> np.ndarray:
        """∇E = DΦ_tᵀ·Ẋ(t)"""
        if sc.is_free:
            _, Xdot, J = self._model(sc, t, path).flow_numeric(np.asarray(x0, float))
            return np.einsum('...ji,...j->...i', J, Xdot)
        st = general_flow(sc).flow(x0, t, path)
        return st.J.T @ st.Xdot

    # ---------- 前像曲线 ----------

    def pre_caustic(self, sc: Scenario, t, path: Optional[WienerPath] = None) -> ImplicitCurve:
        """det(I + t∇²S₀(x₀)) = 0；t 可以为符号 't'"""
        if not sc.is_free:
            raise ScenarioError("焦散前像需要 free-closed-form 模式")
        model = model_for(sc, t, path)
        return ImplicitCurve(model.jacobian_det_poly(), sc.x0_vars, PRE_SPACE, 'pre-caustic')

    def pre_level_surface(self, sc: Scenario, c: float, t: float,
                          path: Optional[WienerPath] = None) -> ImplicitCurve:
        """
        等值面前像 E(x₀) = c

        free模式为精确多项式；general模式在网格上积分特征线并做最小二乘多项式拟合。
        """
        label = f'pre-level({c:g})'
        if sc.is_free:
            E = self._model(sc, t, path).eikonal_poly()
            return ImplicitCurve(E - Polynomial.constant(to_rational(c), E.vars), sc.x0_vars, PRE_SPACE, label)
        return ImplicitCurve(self._fit_eikonal(sc, t, path) - to_rational(c), sc.x0_vars, PRE_SPACE, label)

    def _fit_eikonal(self, sc: Scenario, t: float, path: Optional[WienerPath], n: int = 21) -> Polynomial:
        axes = [np.linspace(lo, hi, n) for lo, hi in sc.box]
        grids = np.meshgrid(*axes, indexing='ij')
        pts = np.stack([g.ravel() for g in grids], axis=1)
        values = self.eikonal(sc, pts, t, path)
        degree = min(2 * sc.S0.total_degree, 10)
        exps = [e for e in np.ndindex(*([degree + 1] * sc.d)) if sum(e) <= degree]
        A = np.column_stack([np.prod([pts[:, i] ** e[i] for i in range(sc.d)], axis=0) for e in exps])
        coef, *_ = np.linalg.lstsq(A, values, rcond=None)
        residual = float(np.max(np.abs(A @ coef - values)))
        self.logger.info(f"数值等值面拟合: 次数={degree}, 残差={residual:.2e}")
        return Polynomial.from_terms(sc.x0_vars, {e: float(c) for e, c in zip(exps, coef)})

    def pre_maxwell(self, sc: Scenario, t, path: Optional[WienerPath] = None) -> ImplicitCurve:
        """
        Maxwell前像: D^λ((F(x₀¹) − F(λ))/(x₀¹ − λ)²) = 0，其中 x = Φ_t(x₀) 符号代入

        Raises:
            EliminationError: 整除余式非零（流映射与临界点对偶被破坏）
        """
        if not sc.is_free:
            raise ScenarioError("Maxwell前像需要 free-closed-form 模式")
        model = model_for(sc, t, path)
        family = model.reduced_family()
        first = sc.x0_vars[0]
        mapping = {v: p for v, p in zip(sc.x_vars, model.flow_polys())}
        extra = ('t',) if model.symbolic_t else ()
        G = family.poly.subs(mapping, vars=(LAM,) + tuple(sc.x0_vars) + extra)
        G_at = G.subs({LAM: Polynomial.variable(first)}, vars=G.vars)
        divisor = Polynomial.from_expr((symbol(first) - symbol(LAM)) ** 2, G.vars)
        try:
            q = (G_at - G).exact_div(divisor)
        except EliminationError as exc:
            self.logger.error(f"Maxwell前像构造失败: {exc}")
            raise EliminationError(f"F(x₀¹) − F(λ) 不能被 (x₀¹ − λ)² 整除，流映射与临界点对偶被破坏: {exc}")
        if q.degree(LAM) < 2:
            self.logger.info("约化作用量次数不足，Maxwell前像为空")
            return ImplicitCurve(Polynomial.constant(1, sc.x0_vars), sc.x0_vars, PRE_SPACE, 'pre-maxwell')
        disc = discriminant(q, LAM, max_dim=self.max_dim)
        return ImplicitCurve(disc, sc.x0_vars, PRE_SPACE, 'pre-maxwell')

    def caustic_implicit(self, sc: Scenario, t: float, path: Optional[WienerPath] = None) -> ImplicitCurve:
        """像空间焦散: D^λ(F′) 的无平方部分"""
        family = self._model(sc, t, path).reduced_family()
        fprime = family.poly.diff(LAM)
        if fprime.degree(LAM) < 2:
            return ImplicitCurve(Polynomial.constant(1, sc.x_vars), sc.x_vars, TARGET_SPACE, 'caustic')
        disc = discriminant(fprime, LAM, max_dim=self.max_dim)
        return ImplicitCurve(disc.with_vars(sc.x_vars), sc.x_vars, TARGET_SPACE, 'caustic')

    def maxwell_klein_split(self, sc: Scenario, t: float, path: Optional[WienerPath] = None) -> FactorizationResult:
        """
        D^c(D^λ(F − c)) 的平方-立方分解，C 与焦散隐式方程比对

        Raises:
            FactorizationError: 重数分布不是 {2, 3}
        """
        family = self._model(sc, t, path).reduced_family()
        vars = (LAM,) + tuple(sc.x_vars) + ('c',)
        shifted = family.poly.with_vars(vars) - Polynomial.variable('c', vars)
        d1 = discriminant(shifted, LAM, max_dim=self.max_dim)
        d2 = discriminant(d1, 'c', max_dim=self.max_dim)
        d2 = d2.with_vars(sc.x_vars)
        profile = split_profile(d2)
        k, B, C = square_cube_split(d2)
        caustic = self.caustic_implicit(sc, t, path)
        match = C.proportional_to(caustic.poly) if not C.is_constant else caustic.is_empty
        if not match:
            self.logger.warning(f"Maxwell-Klein分解的C因子与焦散方程不成比例: C={C.expr}")
        return FactorizationResult(k=k, B=B, C=C, profile=profile, caustic_match=match)

    def maxwell_klein(self, sc: Scenario, t: float, path: Optional[WienerPath] = None) -> ImplicitCurve:
        split = self.maxwell_klein_split(sc, t, path)
        return ImplicitCurve(split.B, sc.x_vars, TARGET_SPACE, 'maxwell-klein')

    # ---------- 像空间参数曲线 ----------

    def _build_curve(self, label: str, sc: Scenario, t: float, branches: List[TracedBranch], builder) -> ParamCurve:
        curve = ParamCurve(label=label, t=float(t))
        for b, branch in enumerate(branches):
            for param in branch.params:
                pt, tangent, gnorm = branch.evaluator(float(param))
                cp = builder(float(param), np.asarray(pt, float), np.asarray(tangent, float), float(gnorm), b)
                if cp is None:
                    curve.dropped += 1
                    continue
                curve.points.append(cp)

            def evaluate(param, branch=branch, b=b):
                pt, tangent, gnorm = branch.evaluator(float(param))
                return builder(float(param), pt, tangent, gnorm, b)
            curve.evaluators[b] = evaluate
        return curve

    def _critical_builder(self, sc: Scenario, t: float, path: Optional[WienerPath], label: str):
        """前像点即 f 的临界点（焦散、等值面共用）"""
        model = self._model(sc, t, path)
        family = model.reduced_family()

        def build(param, pt, tangent, gnorm, b):
            X, _, J = model.flow_numeric(pt[None, :])
            x = X[0]
            f_val, f_min, _ = self._action_gap(family, x, pt[0])
            return CurvePoint(param=param, x=x, x0=pt, cool=self._is_cool(f_val, f_min),
                              velocity=J[0] @ tangent, branch=b, action=f_val, grad_norm=gnorm)
        return build

    def _points_curve(self, sc: Scenario, t: float, path, curve: ImplicitCurve, label: str) -> ParamCurve:
        """一维：前像为孤立点"""
        model = self._model(sc, t, path)
        family = model.reduced_family()
        out = ParamCurve(label=label, t=float(t))
        if curve.is_empty:
            return out
        lo, hi = sc.box[0]
        roots = isolate_real_roots(curve.poly, lo, hi, self.root_tol)
        for i, (r, _) in enumerate(roots.roots):
            pt = np.array([r])
            X, _, J = model.flow_numeric(pt[None, :])
            f_val, f_min, _ = self._action_gap(family, X[0], r)
            out.points.append(CurvePoint(param=r, x=X[0], x0=pt, cool=self._is_cool(f_val, f_min),
                                         velocity=J[0] @ np.ones(1), branch=i, action=f_val))
        return out

    def _surface_curve(self, sc: Scenario, t: float, path, curve: ImplicitCurve, label: str) -> ParamCurve:
        """三维：曲面采样点映射到像空间，不做尖点分析"""
        model = self._model(sc, t, path)
        family = model.reduced_family()
        pts = curve.sample_surface(sc.box, grid_points=max(11, self.grid_points // 6), newton_tol=self.newton_tol)
        out = ParamCurve(label=label, t=float(t))
        if len(pts) == 0:
            return out
        X, _, _ = model.flow_numeric(pts)
        for i, (pt, x) in enumerate(zip(pts, X)):
            f_val, f_min, _ = self._action_gap(family, x, pt[0])
            out.points.append(CurvePoint(param=float(i), x=x, x0=pt, cool=self._is_cool(f_val, f_min),
                                         velocity=np.zeros(3), action=f_val))
        return out

    def caustic(self, sc: Scenario, t: float, path: Optional[WienerPath] = None) -> ParamCurve:
        """
        焦散 C_t：焦散前像按 x₀¹ 参数化后经流映射，dx/dλ 取前像单位切向的像
        """
        pre = self.pre_caustic(sc, t, path)
        if sc.d == 1:
            return self._points_curve(sc, t, path, pre, 'caustic')
        if sc.d == 3:
            return self._surface_curve(sc, t, path, pre, 'caustic')
        curve = self._build_curve('caustic', sc, t, self._pre_curve_points(sc, pre),
                                  self._critical_builder(sc, t, path, 'caustic'))
        self.logger.debug(f"焦散 t={t}: {len(curve)} 点, {len(curve.branch_ids())} 支")
        return curve

    def level_surface(self, sc: Scenario, c: float, t: float, path: Optional[WienerPath] = None,
                      box=None) -> ParamCurve:
        """等值面 H_t^c：等值前像的像，x₀ 为全局最小者时标记 cool"""
        pre = self.pre_level_surface(sc, c, t, path)
        label = f'level({c:g})'
        if sc.d == 3:
            return self._surface_curve(sc, t, path, pre, label)
        if sc.d == 1:
            return self._points_curve(sc, t, path, pre, label)
        return self._build_curve(label, sc, t, self._pre_curve_points(sc, pre, box),
                                 self._critical_builder(sc, t, path, label))

    def _maxwell_partner(self, model: FreeActionModel, family, pt: np.ndarray, tangent: np.ndarray):
        """
        在 x = Φ_t(x₀) 处寻找配对原像并细化

        q(λ) = (f(x₀¹) − f(λ))/(x₀¹ − λ)² 的二重根即配对参数 λ̌；
        对 (法向位移 s, λ̌) 联立 q = q′ = 0 求解，使点精确落在前像曲线上。
        """
        normal = np.array([-tangent[1], tangent[0]])

        def deflated(point):
            x = model.flow_numeric(point[None, :])[0][0]
            coeffs = family.coefficient_arrays(x[None, :])[0]
            a = point[0]
            g = -coeffs.copy()
            g[-1] += np.polyval(coeffs, a)
            q, _ = np.polydiv(g, np.array([1.0, -2.0 * a, a * a]))
            return q, coeffs, x

        q, _, _ = deflated(pt)
        if len(q) < 3:
            return None
        candidates = numeric_real_roots(np.polyder(q)).values
        if not candidates:
            return None
        lam0 = min(candidates, key=lambda l: abs(np.polyval(q, l)))

        def equations(z):
            qq, _, _ = deflated(pt + z[0] * normal)
            return [np.polyval(qq, z[1]), np.polyval(np.polyder(qq), z[1])]

        sol = root(equations, [0.0, lam0], method='hybr', options={'xtol': 1e-14})
        if not sol.success:
            sol = root(equations, [0.0, lam0], method='lm', options={'xtol': 1e-14})
        s, lam_p = float(sol.x[0]), float(sol.x[1])
        if abs(s) > 10 * self.sample_spacing or not np.all(np.isfinite(sol.x)):
            return None
        point = pt + s * normal
        qq, coeffs, x = deflated(point)
        scale_q = max(1.0, float(np.max(np.abs(qq))))
        if abs(np.polyval(qq, lam_p)) > 1e-9 * scale_q:
            return None
        f_val = float(np.polyval(coeffs, point[0]))
        f_partner = float(np.polyval(coeffs, lam_p))
        if abs(f_val - f_partner) > self.partner_tol * max(1.0, abs(f_val)):
            return None
        partner = family.reconstruct([lam_p], x)[0]
        return point, partner, x, coeffs, f_val

    def _maxwell_builder(self, sc: Scenario, t: float, path: Optional[WienerPath], pre: ImplicitCurve):
        model = self._model(sc, t, path)
        family = model.reduced_family()

        def build(param, pt, tangent, gnorm, b):
            found = self._maxwell_partner(model, family, pt, tangent)
            if found is None:
                return None
            point, partner, x, coeffs, f_val = found
            grad = pre.gradient(point[None, :])[0]
            gn = float(np.linalg.norm(grad))
            if gn > 0:
                tan = np.array([-grad[1], grad[0]]) / gn
                if tan @ tangent < 0:
                    tan = -tan
            else:
                tan = tangent
            J = model.flow_numeric(point[None, :])[2][0]
            roots = numeric_real_roots(np.polyder(coeffs)).values
            f_min = float(np.min(np.polyval(coeffs, np.array(list(roots) + [point[0]]))))
            return CurvePoint(param=param, x=x, x0=point, cool=self._is_cool(f_val, f_min), velocity=J @ tan,
                              branch=b, partner=partner, action=f_val, grad_norm=gn)
        return build

    def maxwell(self, sc: Scenario, t: float, path: Optional[WienerPath] = None) -> ParamCurve:
        """
        Maxwell集 M_t：Maxwell前像的像，每点携带配对原像 x̌₀

        找不到实配对的点（Maxwell-Klein复配对情形）被丢弃并计数。
        """
        if sc.d != 2:
            raise ScenarioError("Maxwell集参数化只支持二维场景")
        pre = self.pre_maxwell(sc, t, path)
        curve = self._build_curve('maxwell', sc, t, self._pre_curve_points(sc, pre),
                                  self._maxwell_builder(sc, t, path, pre))
        if curve.dropped:
            self.logger.warning(f"Maxwell集 t={t}: {curve.dropped} 个前像点没有实配对原像，已丢弃")
        return curve

    # ---------- 法向与导数 ----------

    def action_hessians(self, sc: Scenario, x0, t: float,
                        path: Optional[WienerPath] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        (∂²𝒜/∂x₀², ∂²𝒜/∂x₀∂x)，在 x = Φ_t(x₀) 处

        Raises:
            GeometryError: 混合Hessian奇异
        """
        x0 = np.asarray(x0, dtype=float)
        if sc.is_free:
            return self._model(sc, t, path).action_hessians(x0)
        flow = general_flow(sc)
        fld = initial_field(sc)
        p0 = fld.grad(x0)
        d = sc.d
        _, _, Jx, _, _ = flow.integrate(x0, p0, t, path)
        _, _, Jp, _, _ = flow.integrate(x0, p0, t, path, J0=np.zeros((d, d)), K0=np.eye(d))
        if abs(np.linalg.det(Jp)) < 1e-14:
            raise GeometryError(f"混合Hessian ∂²𝒜/∂x₀∂x 在 {x0.tolist()} 处奇异")
        Jp_inv = np.linalg.inv(Jp)
        return fld.hess(x0) + Jp_inv @ Jx, -Jp_inv

    def preimage_jacobian(self, sc: Scenario, x0, t: float, path: Optional[WienerPath] = None) -> np.ndarray:
        """DΦ_t = −(∂²𝒜/∂x₀∂x)⁻¹·∂²𝒜/∂x₀²"""
        A00, A0x = self.action_hessians(sc, x0, t, path)
        if abs(np.linalg.det(A0x)) < 1e-300:
            raise GeometryError("混合Hessian奇异")
        return -np.linalg.solve(A0x, A00)

    def normals(self, sc: Scenario, x0, which: str, t: float, path: Optional[WienerPath] = None,
                partner=None, normalize: bool = True) -> np.ndarray:
        """
        前像曲线法向 −(∂²𝒜/∂x₀²)(∂²𝒜/∂x₀∂x)⁻¹·v

        pre-level 取 v = Ẋ(t; x₀)，pre-maxwell 取 v = Ẋ(t; x₀) − Ẋ(t; x̌₀)。
        方向取 E(x₀) 增加的一侧；退化（范数过小）时返回零向量。
        """
        if which not in ('pre-level', 'pre-maxwell'):
            raise ValueError(f"未知的前像曲线类型: {which}")
        x0 = np.asarray(x0, dtype=float)
        A00, A0x = self.action_hessians(sc, x0, t, path)
        if abs(np.linalg.det(A0x)) < 1e-300:
            raise GeometryError("混合Hessian奇异")
        v = self._velocity(sc, x0, t, path)
        if which == 'pre-maxwell':
            if partner is None:
                raise GeometryError("pre-maxwell 法向需要配对原像")
            v = v - self._velocity(sc, np.asarray(partner, float), t, path)
        n = -A00 @ np.linalg.solve(A0x, v)
        grad_e = self.eikonal_gradient(sc, x0, t, path)
        floor = 1e-12 * max(1.0, float(np.linalg.norm(A00)) * float(np.linalg.norm(v)) * abs(t))
        norm = float(np.linalg.norm(n))
        if norm < floor:
            return np.zeros(sc.d)
        if n @ grad_e < 0:
            n = -n
        return n / norm if normalize else n

    def _velocity(self, sc: Scenario, x0: np.ndarray, t: float, path) -> np.ndarray:
        if sc.is_free:
            return self._model(sc, t, path).flow_numeric(x0)[1]
        return general_flow(sc).flow(x0, t, path).Xdot

    # ---------- 尖点 ----------

    def detect_cusps(self, curve: ParamCurve, cusp_tol: Optional[float] = None, scale: float = 1.0) -> CuspReport:
        return detect_cusps(curve, cusp_tol if cusp_tol is not None else self.cusp_tol,
                            self.terminal_partner_ratio, scale)

    def pre_curve_intersections(self, a: ImplicitCurve, b: ImplicitCurve,
                                box: Sequence[Tuple[float, float]]) -> np.ndarray:
        """
        两条二维前像曲线的交点：对第二坐标求结式，隔离第一坐标的实根后回代
        """
        if a.is_empty or b.is_empty:
            return np.empty((0, 2))
        u, v = a.coords
        pa, pb = a.poly.with_vars((u, v)), b.poly.with_vars((u, v))
        if pa.degree(v) == 0 or pb.degree(v) == 0:
            res = pa if pa.degree(v) == 0 else pb
            other = pb if res is pa else pa
            us = isolate_real_roots(res.with_vars((u,)), box[0][0], box[0][1], self.root_tol).values
            return self._back_solve(us, other, a, b, box, v, u)
        try:
            res = resultant(pa, pb, v, max_dim=self.max_dim)
        except EliminationError as exc:
            self.logger.warning(f"前像曲线交点结式失败: {exc}")
            return np.empty((0, 2))
        if res.is_zero:
            self.logger.warning("两条前像曲线有公共分支，交点不是孤立的")
            return np.empty((0, 2))
        us = isolate_real_roots(res.with_vars((u,)), box[0][0], box[0][1], self.root_tol).values
        return self._back_solve(us, pa, a, b, box, v, u)

    def _back_solve(self, us, poly, a: ImplicitCurve, b: ImplicitCurve, box, v, u) -> np.ndarray:
        out = []
        for uu in us:
            coeffs = [float(c.subs({u: to_rational(uu)}, vars=()).constant_value()) for c in poly.coeffs_in(v)]
            vs = numeric_real_roots(coeffs, box[1][0], box[1][1]).values
            for vv in vs:
                def equations(z):
                    return [float(a.value(np.array(z))), float(b.value(np.array(z)))]
                sol = root(equations, [uu, vv], method='hybr', options={'xtol': 1e-14})
                z = sol.x if np.all(np.isfinite(sol.x)) else np.array([uu, vv])
                scale_a = max(1.0, float(np.linalg.norm(a.gradient(z[None, :])[0])))
                scale_b = max(1.0, float(np.linalg.norm(b.gradient(z[None, :])[0])))
                if abs(a.value(z)) < 1e-8 * scale_a and abs(b.value(z)) < 1e-8 * scale_b:
                    if not any(np.linalg.norm(z - o) < 1e-8 for o in out):
                        out.append(np.asarray(z, float))
        return np.array(out) if out else np.empty((0, 2))

    def level_self_intersection(self, sc: Scenario, mp: CurvePoint, t: float,
                                path: Optional[WienerPath] = None) -> LevelCrossing:
        """Maxwell点是 c = 公共作用量 的等值面两支的交点"""
        if mp.partner is None:
            raise GeometryError("Maxwell点缺少配对原像")
        c = float(mp.action)
        pts = np.array([mp.x0, mp.partner])
        E = self.eikonal(sc, pts, t, path)
        residual = float(np.max(np.abs(E - c)))
        grads = self.eikonal_gradient(sc, pts, t, path)
        J = np.array([self.preimage_jacobian(sc, p, t, path) for p in pts])
        tangents = []
        for g, Jm in zip(grads, J):
            tau = Jm @ np.array([-g[1], g[0]])
            n = float(np.linalg.norm(tau))
            tangents.append(tau / n if n > 0 else tau)
        cross = abs(tangents[0][0] * tangents[1][1] - tangents[0][1] * tangents[1][0])
        return LevelCrossing(c=c, residual=residual, tangents=(tangents[0], tangents[1]), transversal=cross > 1e-8)

    # ---------- 定理验证 ----------

    def check_geometry_theorems(self, sc: Scenario, t: float, path: Optional[WienerPath] = None,
                                level_values: Optional[Sequence[float]] = None) -> CuspReport:
        """
        尖点定理的逐条验证，失败作为结果返回

        (a) 等值面尖点位于焦散上；(b) Maxwell集尖点位于 Maxwell前像∩焦散前像 的像；
        (c) 焦散尖点处等值前像与焦散前像相切；(d) Maxwell尖点的配对点是 Maxwell前像的奇点且在同一等值前像上；
        (e) 等值面的燕尾变换与焦散尖点一一对应。
        """
        if sc.d != 2:
            raise ScenarioError("尖点定理验证只支持二维场景")
        scale = self._scale(sc)
        report = CuspReport(label=f'theorems(t={t:g})')
        caustic = self.caustic(sc, t, path)
        caustic_cusps = self.detect_cusps(caustic, scale=scale)
        pre_c = self.pre_caustic(sc, t, path)
        try:
            maxwell = self.maxwell(sc, t, path)
            pre_m = self.pre_maxwell(sc, t, path)
        except (EliminationError, NumericError) as exc:
            self.logger.error(f"Maxwell集计算失败: {exc}")
            raise
        maxwell_cusps = self.detect_cusps(maxwell, scale=scale)
        report.cusps = caustic_cusps.cusps + maxwell_cusps.cusps
        report.warnings = caustic_cusps.warnings + maxwell_cusps.warnings

        checks = [
            ('a_level_cusps_on_caustic', lambda: self._check_level_cusps(sc, t, path, caustic, level_values, scale)),
            ('b_maxwell_cusps_at_precurve_intersections',
             lambda: self._check_maxwell_cusps(sc, t, path, maxwell_cusps, pre_m, pre_c)),
            ('c_caustic_cusp_tangency', lambda: self._check_tangency(sc, t, path, caustic, caustic_cusps, pre_c)),
            ('d_partner_on_premaxwell_singularity',
             lambda: self._check_partner_singular(sc, t, path, maxwell, maxwell_cusps, pre_m)),
            ('e_swallowtail_perestroika', lambda: self._check_perestroika(sc, t, path, caustic, caustic_cusps)),
        ]
        for name, fn in checks:
            try:
                result = fn()
            except (NumericError, EliminationError) as exc:
                self.logger.warning(f"定理检查 {name} 计算失败: {exc}")
                result = TheoremCheck(name, False, float('inf'), f'计算失败: {exc}')
            result.name = name
            report.checks.append(result)
            status = '通过' if result.passed else '失败'
            self.logger.info(f"定理检查 {name}: {status} (残差 {result.residual:.3e}) {result.detail}")
        return report

    def _level_values(self, sc, t, path, caustic: ParamCurve, level_values) -> List[float]:
        if level_values is not None:
            return list(level_values)
        if caustic.is_empty:
            return [0.0]
        actions = np.array([p.action for p in caustic.points])
        return [float(np.quantile(actions, q)) for q in (0.25, 0.5, 0.75)]

    def _check_level_cusps(self, sc, t, path, caustic, level_values, scale) -> TheoremCheck:
        worst = 0.0
        count = 0
        for c in self._level_values(sc, t, path, caustic, level_values):
            level = self.level_surface(sc, c, t, path)
            for cp in self.detect_cusps(level, scale=scale).cusps:
                J = self._model(sc, t, path).flow_numeric(cp.x0[None, :])[2][0]
                worst = max(worst, abs(float(np.linalg.det(J))) / max(1.0, float(np.linalg.norm(J)) ** 2))
                count += 1
        if count == 0:
            return TheoremCheck('', True, 0.0, '等值面没有尖点（空真）', applicable=False)
        return TheoremCheck('', worst < 1e-6, worst, f'{count} 个等值面尖点')

    def _check_maxwell_cusps(self, sc, t, path, cusps: CuspReport, pre_m, pre_c) -> TheoremCheck:
        proper = [c for c in cusps.cusps if c.kind == 'cusp']
        if not proper:
            return TheoremCheck('', True, 0.0, 'Maxwell集没有尖点（空真）', applicable=False)
        inter = self.pre_curve_intersections(pre_m, pre_c, sc.box)
        if len(inter) == 0:
            return TheoremCheck('', False, float('inf'), '前像曲线没有交点')
        images = self._model(sc, t, path).flow_numeric(inter)[0]
        worst = max(float(np.min(np.linalg.norm(images - c.x, axis=1))) for c in proper)
        return TheoremCheck('', worst < 1e-6, worst, f'{len(proper)} 个尖点, {len(inter)} 个前像交点')

    def _check_tangency(self, sc, t, path, caustic, cusps: CuspReport, pre_c) -> TheoremCheck:
        def residual(x0):
            ge = self.eikonal_gradient(sc, x0, t, path)
            gc = pre_c.gradient(np.asarray(x0)[None, :])[0]
            cross = abs(ge[0] * gc[1] - ge[1] * gc[0])
            return cross / (max(float(np.linalg.norm(gc)), 1e-300) * max(float(np.linalg.norm(ge)), 1.0))

        if not cusps.cusps:
            return TheoremCheck('', True, 0.0, '焦散没有尖点（空真）', applicable=False)
        at_cusps = max(residual(c.x0) for c in cusps.cusps)
        away = [p for p in caustic.points
                if min(np.linalg.norm(p.x0 - c.x0) for c in cusps.cusps) > 10 * self.sample_spacing]
        regular = min((residual(p.x0) for p in away), default=float('inf'))
        passed = at_cusps < 1e-6 and regular > 1e-6
        return TheoremCheck('', passed, at_cusps, f'正则点最小残差 {regular:.3e}')

    def _check_partner_singular(self, sc, t, path, maxwell: ParamCurve, cusps: CuspReport, pre_m) -> TheoremCheck:
        proper = [c for c in cusps.cusps if c.kind == 'cusp' and c.partner is not None]
        if not proper:
            return TheoremCheck('', True, 0.0, '没有Maxwell尖点（空真）', applicable=False)
        grads = np.array([p.grad_norm for p in maxwell.points]) if maxwell.points else np.ones(1)
        median = max(float(np.median(grads)), 1e-300)
        worst = 0.0
        for c in proper:
            # 配对点与尖点前像中恰有一个位于焦散前像上，另一个是Maxwell前像的奇点
            g = [float(np.linalg.norm(pre_m.gradient(np.asarray(p)[None, :])[0])) for p in (c.x0, c.partner)]
            E = self.eikonal(sc, np.array([c.x0, c.partner]), t, path)
            worst = max(worst, min(g) / median, abs(float(E[0] - E[1])))
        return TheoremCheck('', worst < 1e-6, worst, f'{len(proper)} 个Maxwell尖点')

    def _local_level_cusp_count(self, sc, t, path, x0c: np.ndarray, c: float, radius: float) -> int:
        box = [(x0c[0] - radius, x0c[0] + radius), (x0c[1] - radius, x0c[1] + radius)]
        level = self.level_surface(sc, c, t, path, box=box)
        return len(self.detect_cusps(level, scale=radius).cusps)

    def _check_perestroika(self, sc, t, path, caustic: ParamCurve, cusps: CuspReport,
                           radius: float = 0.2, delta: float = 1e-3) -> TheoremCheck:
        if not cusps.cusps:
            return TheoremCheck('', True, 0.0, '焦散没有尖点（空真）', applicable=False)
        worst = 0
        for cp in cusps.cusps:
            c = float(self.eikonal(sc, cp.x0, t, path))
            dc = delta * max(1.0, abs(c))
            diff = abs(self._local_level_cusp_count(sc, t, path, cp.x0, c + dc, radius)
                       - self._local_level_cusp_count(sc, t, path, cp.x0, c - dc, radius))
            worst = max(worst, abs(diff - 2))
        away = [p for p in caustic.points
                if min(np.linalg.norm(p.x0 - c.x0) for c in cusps.cusps) > 3 * radius]
        regular_diff = 0
        if away:
            p = away[len(away) // 2]
            c = float(p.action)
            dc = delta * max(1.0, abs(c))
            regular_diff = abs(self._local_level_cusp_count(sc, t, path, p.x0, c + dc, radius / 2)
                               - self._local_level_cusp_count(sc, t, path, p.x0, c - dc, radius / 2))
        passed = worst == 0 and regular_diff == 0
        return TheoremCheck('', passed, float(worst + regular_diff),
                            f'{len(cusps.cusps)} 个焦散尖点, 正则点尖点数变化 {regular_diff}')


__all__ = ['GeometryEngine', 'FactorizationResult', 'LevelCrossing']

"""
场景模块

定义问题实例（初始作用量S₀、势V、噪声耦合k、噪声强度ε、质量因子T₀），
提供经典/随机流映射、作用量、约化作用量函数与原像计算。

两种模式:
- free-closed-form: V≡0 且 k 关于 x 线性，流映射与作用量为闭式，消元精确；
- general-numeric: 辛蛙跳积分 + 变分方程，打靶求作用量，约化作用量为数值拟合。
"""

import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp

from .errors import EliminationError, GeometryError, NumericError, ScenarioError
from .polyalg import (Polynomial, RootSet, isolate_real_roots, numeric_real_roots,
                      symbol, to_rational)
from .wiener import WienerPath

logger = logging.getLogger(__name__)

X0_VARS = ('x0', 'y0', 'z0')
X_VARS = ('x', 'y', 'z')
LAM = 'lam'
TIME = 't'
MODES = ('free-closed-form', 'general-numeric')

TimeLike = Union[float, int, Fraction, str]

DEFAULT_SCENARIO_CONFIG = {
    'action_tie_tol': 1e-12,
    'shooting_starts': 20,
    'shooting_tol': 1e-8,
    'leapfrog_steps_per_unit': 2000,
    'fit_degree_margin': 4,
    'root_tol': 1e-12,
}


def initial_vars(d: int) -> Tuple[str, ...]:
    return X0_VARS[:d]


def target_vars(d: int) -> Tuple[str, ...]:
    return X_VARS[:d]


@dataclass(frozen=True)
class Scenario:
    """问题实例"""
    d: int
    S0: Polynomial
    V: Polynomial
    k: Tuple[Polynomial, ...] = ()
    eps: float = 0.0
    T0: Optional[Polynomial] = None
    mode: str = 'free-closed-form'
    name: str = ''
    box: Tuple[Tuple[float, float], ...] = ()
    mu: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ScenarioError(f"空间维数必须为1、2或3，实际为 {self.d}")
        if self.mode not in MODES:
            raise ScenarioError(f"不支持的模式: {self.mode}，可选: {', '.join(MODES)}")
        if self.eps < 0:
            raise ScenarioError(f"噪声强度 eps 必须非负: {self.eps}")
        x0v, xv = set(self.x0_vars), set(self.x_vars)
        if self.T0 is None:
            object.__setattr__(self, 'T0', Polynomial.constant(1, self.x0_vars))
        for label, poly, allowed in (('S0', self.S0, x0v), ('T0', self.T0, x0v), ('V', self.V, xv)):
            extra = set(poly.free_vars) - allowed
            if extra:
                raise ScenarioError(f"{label} 含有维数 {self.d} 不允许的变量: {sorted(extra)}")
        for i, kj in enumerate(self.k):
            extra = set(kj.free_vars) - xv
            if extra:
                raise ScenarioError(f"k[{i}] 含有维数 {self.d} 不允许的变量: {sorted(extra)}")
        if not self.box:
            object.__setattr__(self, 'box', tuple((-2.0, 2.0) for _ in range(self.d)))
        if len(self.box) != self.d:
            raise ScenarioError(f"box 需要 {self.d} 个区间，实际 {len(self.box)}")
        if self.mode == 'free-closed-form':
            if not self.V.is_zero:
                raise ScenarioError("free-closed-form 模式要求 V ≡ 0")
            for i, kj in enumerate(self.k):
                if kj.total_degree > 1:
                    raise ScenarioError(f"free-closed-form 模式要求 k 关于 x 线性，k[{i}] 次数为 {kj.total_degree}")
        self._check_T0_nonnegative()

    def _check_T0_nonnegative(self):
        axes = [np.linspace(lo, hi, 21) for lo, hi in self.box]
        grids = np.meshgrid(*axes, indexing='ij')
        values = np.asarray(self.T0.evaluator(self.x0_vars)(*grids), dtype=float)
        if np.any(values < 0):
            raise ScenarioError("T0 在定义域上出现负值")

    @property
    def x0_vars(self) -> Tuple[str, ...]:
        return initial_vars(self.d)

    @property
    def x_vars(self) -> Tuple[str, ...]:
        return target_vars(self.d)

    @property
    def noise_dim(self) -> int:
        return len(self.k)

    @property
    def is_free(self) -> bool:
        return self.mode == 'free-closed-form'

    def coupling_matrix(self) -> np.ndarray:
        """G[i, j] = ∂k_j/∂x_i（free模式下为常数）"""
        G = np.zeros((self.d, self.noise_dim))
        for j, kj in enumerate(self.k):
            for i, v in enumerate(self.x_vars):
                g = kj.diff(v)
                if g.is_constant:
                    G[i, j] = float(g.constant_value())
        return G

    def coupling_offsets(self) -> np.ndarray:
        zero = {v: 0 for v in self.x_vars}
        return np.array([float(kj.subs(zero).constant_value()) if kj.vars else float(kj.constant_value())
                         for kj in self.k])

    def with_eps(self, eps: float) -> 'Scenario':
        return replace(self, eps=float(eps))

    def with_mode(self, mode: str) -> 'Scenario':
        return replace(self, mode=mode)

    def with_T0(self, T0: Polynomial) -> 'Scenario':
        return replace(self, T0=T0)

    def box_grid(self, n: int) -> List[np.ndarray]:
        return [np.linspace(lo, hi, n) for lo, hi in self.box]


@dataclass
class FlowState:
    """流映射状态：位置、速度、雅可比 ∂X(t)/∂x₀"""
    x0: np.ndarray
    p0: np.ndarray
    t: float
    X: np.ndarray
    Xdot: np.ndarray
    J: np.ndarray
    detJ: float


@dataclass
class ReducedAction:
    """约化作用量 f_{(x,t)}(λ) = poly(λ)/scale"""
    at: Tuple[Tuple[float, ...], float, Optional[WienerPath]]
    poly: Polynomial
    scale: Fraction
    elimination_trace: Tuple[Tuple[str, Polynomial, Polynomial], ...]
    fit_residual: float = 0.0

    def coefficients(self) -> np.ndarray:
        """按降幂排列的浮点系数（已除以scale）"""
        return np.array([float(c.constant_value()) for c in self.poly.coeffs_in(LAM)]) / float(self.scale)

    def value(self, lam):
        return np.polyval(self.coefficients(), lam)

    def derivative(self, lam, order: int = 1):
        return np.polyval(np.polyder(self.coefficients(), order), lam)


@dataclass
class PreImage:
    x0: np.ndarray
    action: float
    kind: str  # min | max | inflection
    multiplicity: int = 1


@dataclass
class PreImageSet:
    """x 在 t 时刻的全部实原像"""
    x: np.ndarray
    t: float
    images: List[PreImage]
    minimizer_index: Optional[int]
    minimizer_unique: bool
    tied: Tuple[int, ...] = ()
    # 相距小于隔离容差而被合并报告的根簇
    merged_clusters: List[Tuple[float, ...]] = field(default_factory=list)

    @property
    def count(self) -> int:
        return sum(im.multiplicity for im in self.images)

    @property
    def minimizer(self) -> Optional[PreImage]:
        return None if self.minimizer_index is None else self.images[self.minimizer_index]

    @property
    def min_action(self) -> float:
        return min(im.action for im in self.images) if self.images else math.inf


def select_minimizer(actions: Sequence[float], tie_tol: float) -> Tuple[Optional[int], bool, Tuple[int, ...]]:
    """最小作用量索引；与最小值相差 tie_tol·max(1,|a|) 以内视为并列"""
    if not len(actions):
        return None, False, ()
    actions = np.asarray(actions, dtype=float)
    best = int(np.argmin(actions))
    tol = tie_tol * max(1.0, abs(actions[best]))
    tied = tuple(int(i) for i in np.flatnonzero(actions - actions[best] <= tol))
    return best, len(tied) == 1, tied


class InitialField:
    """S₀ 与 T₀ 的向量化求值（值、梯度、Hessian）"""

    def __init__(self, sc: Scenario):
        self.sc = sc
        names = sc.x0_vars
        self._value = sc.S0.evaluator(names)
        self._grad = [sc.S0.diff(v).evaluator(names) for v in names]
        self._hess = [[sc.S0.diff(a).diff(b).evaluator(names) for b in names] for a in names]
        self._T0 = sc.T0.evaluator(names)

    def _args(self, x0):
        x0 = np.asarray(x0, dtype=float)
        return [x0[..., i] for i in range(self.sc.d)]

    def value(self, x0):
        return np.asarray(self._value(*self._args(x0)), dtype=float)

    def grad(self, x0):
        args = self._args(x0)
        return np.stack([np.asarray(g(*args), dtype=float) for g in self._grad], axis=-1)

    def hess(self, x0):
        args = self._args(x0)
        rows = [np.stack([np.asarray(h(*args), dtype=float) for h in row], axis=-1) for row in self._hess]
        return np.stack(rows, axis=-2)

    def T0(self, x0):
        return np.asarray(self._T0(*self._args(x0)), dtype=float)


@lru_cache(maxsize=64)
def initial_field(sc: Scenario) -> InitialField:
    return InitialField(sc)


def normalize_time(t: TimeLike):
    if isinstance(t, str):
        if t != TIME:
            raise ScenarioError(f"符号时间只能是 '{TIME}'")
        return TIME
    return Fraction(t) if not isinstance(t, float) else Fraction(float(t))


class ReducedFamily:
    """
    约化作用量族：scale·f 作为 (λ, x[, t]) 的多项式，以及消元轨迹

    trace 按消元顺序记录 (变量, 分子, 分母)，重建原像时逆序回代。
    """

    def __init__(self, sc: Scenario, poly: Polynomial, scale: Polynomial,
                 trace: Tuple[Tuple[str, Polynomial, Polynomial], ...], symbolic_t: bool):
        self.sc = sc
        self.poly = poly
        self.scale = scale
        self.trace = trace
        self.symbolic_t = symbolic_t
        self.arg_names = tuple(sc.x_vars) + ((TIME,) if symbolic_t else ())
        coeffs = poly.coeffs_in(LAM)
        self._coeff_fns = [c.evaluator(self.arg_names) for c in coeffs]
        self._scale_fn = scale.evaluator(self.arg_names)
        self._trace_fns = [(var, num.evaluator((LAM,) + tuple(sc.x0_vars[1:]) + self.arg_names),
                            den.evaluator((LAM,) + tuple(sc.x0_vars[1:]) + self.arg_names))
                           for var, num, den in trace]

    @property
    def degree(self) -> int:
        return self.poly.degree(LAM)

    def coefficient_arrays(self, X: np.ndarray, t: Optional[float] = None) -> np.ndarray:
        """批量系数（降幂，已除以scale），X 形状 (N, d)，返回 (N, n+1)；符号时间族的 t 可为长度 N 的数组"""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        args = [X[:, i] for i in range(self.sc.d)]
        if self.symbolic_t:
            args.append(np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],)))
        scale = np.broadcast_to(np.asarray(self._scale_fn(*args), dtype=float), (X.shape[0],))
        cols = [np.broadcast_to(np.asarray(fn(*args), dtype=float), (X.shape[0],)) for fn in self._coeff_fns]
        return np.stack(cols, axis=1) / scale[:, None]

    def reconstruct(self, lam, X: np.ndarray, t: Optional[float] = None) -> np.ndarray:
        """由 λ 与目标点重建完整 x₀，支持批量"""
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        X = np.atleast_2d(np.asarray(X, dtype=float))
        X = np.broadcast_to(X, (lam.shape[0], self.sc.d))
        d = self.sc.d
        x0 = np.zeros((lam.shape[0], d))
        x0[:, 0] = lam
        extra = [X[:, i] for i in range(d)]
        if self.symbolic_t:
            extra.append(np.full(lam.shape[0], float(t)))
        for var, num_fn, den_fn in reversed(self._trace_fns):
            idx = self.sc.x0_vars.index(var)
            args = [x0[:, 0]] + [x0[:, i] for i in range(1, d)] + extra
            den = np.asarray(den_fn(*args), dtype=float)
            if np.any(np.abs(den) < 1e-300):
                raise EliminationError(f"回代 {var} 时分母为零")
            x0[:, idx] = np.asarray(num_fn(*args), dtype=float) / den
        return x0

    def at(self, x: Sequence[float], t_value: Optional[Fraction] = None) -> Tuple[Polynomial, Fraction]:
        """精确代入目标点，返回 λ 的一元多项式与scale"""
        mapping = {v: to_rational(float(xi)) if not isinstance(xi, Fraction) else xi
                   for v, xi in zip(self.sc.x_vars, x)}
        if self.symbolic_t:
            mapping[TIME] = t_value
        uni = self.poly.subs(mapping, vars=(LAM,))
        scale = self.scale.subs(mapping, vars=()).constant_value() if not self.scale.is_constant \
            else self.scale.constant_value()
        return uni, scale


class FreeActionModel:
    """
    free-closed-form 模式的精确模型

    2t·𝒜 = |x − x₀ + εI|² + 2t·S₀(x₀) − 2t·ε x·w(t) − t·ε²J₂ − 2t·ε c·W(t)
    其中 w = G·W 为有效噪声，I = ∫w，J₂ = ∫|w|²，c 为耦合常数项。
    t 可以是精确有理数，也可以是符号 't'（此时要求确定性）。
    """

    def __init__(self, sc: Scenario, t: TimeLike, path: Optional[WienerPath] = None):
        if not sc.is_free:
            raise ScenarioError("精确模型只适用于 free-closed-form 模式")
        self.sc = sc
        self.t_key = normalize_time(t)
        self.symbolic_t = self.t_key == TIME
        self.t_sym = symbol(TIME) if self.symbolic_t else to_rational(self.t_key)
        self.path = path
        d = sc.d
        self.shift = [sp.Integer(0)] * d
        self.wv = [sp.Integer(0)] * d
        self.noise_const = sp.Integer(0)
        self.shift_f = np.zeros(d)
        self.wv_f = np.zeros(d)
        noisy = path is not None and sc.eps > 0 and sc.noise_dim > 0
        if noisy:
            if self.symbolic_t:
                raise ScenarioError("符号时间模型只支持确定性情形")
            tf = float(self.t_key)
            G = sc.coupling_matrix()
            projected = path.project(G)
            w, I, J2 = projected.at(tf)
            Wraw, _, _ = path.at(tf)
            cW = float(sc.coupling_offsets() @ Wraw) if sc.noise_dim else 0.0
            self.shift_f = sc.eps * I
            self.wv_f = sc.eps * w
            self.shift = [to_rational(v) for v in self.shift_f]
            self.wv = [to_rational(v) for v in self.wv_f]
            self.noise_const = -self.t_sym * to_rational(sc.eps ** 2 * J2) - 2 * self.t_sym * to_rational(sc.eps * cW)
            self.J2 = J2
            self.cW = cW
        else:
            self.J2 = 0.0
            self.cW = 0.0
        self.field = initial_field(sc)
        self._family: Optional[ReducedFamily] = None
        self._eikonal: Optional[Polynomial] = None

    # ---------- 精确多项式 ----------

    @property
    def all_vars(self) -> Tuple[str, ...]:
        return tuple(self.sc.x0_vars) + tuple(self.sc.x_vars) + ((TIME,) if self.symbolic_t else ())

    @property
    def t_float(self) -> float:
        if self.symbolic_t:
            raise ScenarioError("符号时间模型没有数值时间")
        return float(self.t_key)

    def action2t_poly(self) -> Polynomial:
        """2t·𝒜(x₀, x, t)"""
        sc = self.sc
        t = self.t_sym
        x0s = [symbol(v) for v in sc.x0_vars]
        xs = [symbol(v) for v in sc.x_vars]
        expr = sum((xi - x0i + si) ** 2 for xi, x0i, si in zip(xs, x0s, self.shift))
        expr += 2 * t * sc.S0.expr
        expr -= 2 * t * sum(wi * xi for wi, xi in zip(self.wv, xs))
        expr += self.noise_const
        return Polynomial.from_expr(sp.expand(expr), self.all_vars)

    def flow_polys(self) -> List[Polynomial]:
        """Φ_t(x₀) 各分量"""
        sc = self.sc
        vars = tuple(sc.x0_vars) + ((TIME,) if self.symbolic_t else ())
        out = []
        for v, s in zip(sc.x0_vars, self.shift):
            expr = symbol(v) + self.t_sym * sc.S0.diff(v).expr - s
            out.append(Polynomial.from_expr(sp.expand(expr), vars))
        return out

    def velocity_polys(self) -> List[Polynomial]:
        """Ẋ(t; x₀) = ∇S₀(x₀) − εw(t)"""
        sc = self.sc
        return [Polynomial.from_expr(sc.S0.diff(v).expr - w, sc.x0_vars) for v, w in zip(sc.x0_vars, self.wv)]

    def jacobian_polys(self) -> List[List[Polynomial]]:
        """DΦ_t = I + t∇²S₀"""
        sc = self.sc
        vars = tuple(sc.x0_vars) + ((TIME,) if self.symbolic_t else ())
        rows = []
        for i, a in enumerate(sc.x0_vars):
            row = []
            for j, b in enumerate(sc.x0_vars):
                expr = (1 if i == j else 0) + self.t_sym * sc.S0.diff(a).diff(b).expr
                row.append(Polynomial.from_expr(sp.expand(expr), vars))
            rows.append(row)
        return rows

    def jacobian_det_poly(self) -> Polynomial:
        rows = self.jacobian_polys()
        M = sp.Matrix([[p.expr for p in row] for row in rows])
        vars = tuple(self.sc.x0_vars) + ((TIME,) if self.symbolic_t else ())
        return Polynomial.from_expr(sp.expand(M.det(method='berkowitz')), vars)

    def eikonal_poly(self) -> Polynomial:
        """E(x₀) = 𝒜(x₀, Φ_t(x₀), t)，精确；随模型缓存"""
        if self.symbolic_t:
            raise ScenarioError("等值前像需要数值时间")
        if self._eikonal is None:
            mapping = {v: p for v, p in zip(self.sc.x_vars, self.flow_polys())}
            e2t = self.action2t_poly().subs(mapping, vars=self.sc.x0_vars)
            self._eikonal = e2t.scale(Fraction(1) / (2 * self.t_key))
        return self._eikonal

    def reduced_family(self) -> ReducedFamily:
        if self._family is None:
            self._family = self._eliminate()
        return self._family

    def _eliminate(self) -> ReducedFamily:
        sc = self.sc
        A = self.action2t_poly()
        scale = Polynomial.from_expr(2 * self.t_sym, ((TIME,) if self.symbolic_t else ()))
        trace = []
        x0_free = set(sc.x0_vars)
        for var in reversed(sc.x0_vars[1:]):
            dA = A.diff(var)
            deg = dA.degree(var)
            if deg != 1:
                raise EliminationError(
                    f"消元坐标 {var}: ∂𝒜/∂{var} 关于 {var} 的次数为 {deg}，不满足线性消元假设")
            den, num_neg = dA.coeffs_in(var)
            if den.is_zero:
                raise EliminationError(f"消元坐标 {var}: ∂²𝒜/∂{var}² ≡ 0")
            if set(den.free_vars) & x0_free:
                raise EliminationError(f"消元坐标 {var}: ∂²𝒜/∂{var}² 依赖初始坐标 {den.free_vars}")
            num = -num_neg
            trace.append((var, num, den))
            x0_free.discard(var)
            expr = A.expr.xreplace({symbol(var): num.expr / den.expr})
            n_expr, d_expr = sp.fraction(sp.together(expr))
            remaining = tuple(v for v in A.vars if v != var)
            if sp.Poly(d_expr, *[symbol(v) for v in remaining]).is_ground:
                A = Polynomial.from_expr(sp.expand(expr), remaining)
            else:
                A = Polynomial.from_expr(sp.expand(n_expr * d_expr), remaining)
                scale = scale * Polynomial.from_expr(sp.expand(d_expr ** 2), scale.vars + tuple(
                    v for v in remaining if v not in scale.vars and v not in sc.x0_vars))
        reduced = A.subs({sc.x0_vars[0]: Polynomial.variable(LAM)},
                         vars=(LAM,) + tuple(sc.x_vars) + ((TIME,) if self.symbolic_t else ()))
        trace = tuple((var, self._rename_lam(num), self._rename_lam(den)) for var, num, den in trace)
        scale = scale.with_vars(tuple(v for v in scale.vars if v in set(sc.x_vars) | {TIME}))
        logger.debug(f"约化作用量消元完成: λ次数={reduced.degree(LAM)}")
        return ReducedFamily(sc, reduced, scale, trace, self.symbolic_t)

    def _rename_lam(self, p: Polynomial) -> Polynomial:
        first = self.sc.x0_vars[0]
        target = (LAM,) + tuple(self.sc.x0_vars[1:]) + tuple(self.sc.x_vars) + ((TIME,) if self.symbolic_t else ())
        if first in p.vars:
            return p.subs({first: Polynomial.variable(LAM)}, vars=target)
        return p.with_vars(target)

    # ---------- 数值 ----------

    def flow_numeric(self, x0: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """批量流映射：返回 X, Ẋ, J"""
        x0 = np.asarray(x0, dtype=float)
        t = self.t_float
        grad = self.field.grad(x0)
        X = x0 + t * grad - self.shift_f
        Xdot = grad - self.wv_f
        J = np.eye(self.sc.d) + t * self.field.hess(x0)
        return X, Xdot, J

    def action_numeric(self, x0: np.ndarray, x: np.ndarray) -> np.ndarray:
        """闭式作用量（浮点）"""
        x0 = np.asarray(x0, dtype=float)
        x = np.asarray(x, dtype=float)
        t = self.t_float
        eps = self.sc.eps
        diff = x - x0 + self.shift_f
        val = np.sum(diff * diff, axis=-1) / (2 * t) + self.field.value(x0)
        val = val - np.sum(self.wv_f * x, axis=-1)
        val = val - 0.5 * eps ** 2 * self.J2 - eps * self.cW
        return val

    def action_hessians(self, x0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(∂²𝒜/∂x₀², ∂²𝒜/∂x₀∂x) = (I/t + ∇²S₀, −I/t)"""
        t = self.t_float
        eye = np.eye(self.sc.d)
        return eye / t + self.field.hess(x0), -eye / t


@lru_cache(maxsize=128)
def free_model(sc: Scenario, t_key, path: Optional[WienerPath]) -> FreeActionModel:
    return FreeActionModel(sc, t_key, path)


def model_for(sc: Scenario, t: TimeLike, path: Optional[WienerPath] = None) -> FreeActionModel:
    """缓存的精确模型；确定性情形忽略路径"""
    key = normalize_time(t)
    use_path = path if (path is not None and sc.eps > 0 and sc.noise_dim > 0) else None
    return free_model(sc, key, use_path)


class GeneralFlow:
    """
    general-numeric 模式

    对称辛蛙跳积分 dẊ = −∇V dt − ε Σ∇k_j ∘dW_j，随机项按两端位置的梯形形式处理
    （Stratonovich一致），同时积分变分方程得到 ∂X/∂x₀ 或 ∂X/∂p₀。
    """

    def __init__(self, sc: Scenario, config: Optional[Dict] = None):
        self.sc = sc
        cfg = dict(DEFAULT_SCENARIO_CONFIG)
        cfg.update((config or {}).get('scenario', {}))
        self.steps_per_unit = int(cfg['leapfrog_steps_per_unit'])
        self.n_starts = int(cfg['shooting_starts'])
        self.shoot_tol = float(cfg['shooting_tol'])
        self.fit_margin = int(cfg['fit_degree_margin'])
        self.field = initial_field(sc)
        names = sc.x_vars
        self._V = sc.V.evaluator(names)
        self._gV = [sc.V.diff(v).evaluator(names) for v in names]
        self._hV = [[sc.V.diff(a).diff(b).evaluator(names) for b in names] for a in names]
        self._k = [kj.evaluator(names) for kj in sc.k]
        self._gk = [[kj.diff(v).evaluator(names) for v in names] for kj in sc.k]
        self._hk = [[[kj.diff(a).diff(b).evaluator(names) for b in names] for a in names] for kj in sc.k]
        self.logger = logging.getLogger(__name__)

    def _force(self, X, dt, dW):
        args = list(X)
        f = -dt * np.array([float(g(*args)) for g in self._gV])
        H = -dt * np.array([[float(h(*args)) for h in row] for row in self._hV])
        eps = self.sc.eps
        if eps > 0 and dW is not None:
            for j in range(self.sc.noise_dim):
                f -= eps * dW[j] * np.array([float(g(*args)) for g in self._gk[j]])
                H -= eps * dW[j] * np.array([[float(h(*args)) for h in row] for row in self._hk[j]])
        return f, H

    def _potential(self, X, dt, dW):
        args = list(X)
        val = dt * float(self._V(*args))
        eps = self.sc.eps
        if eps > 0 and dW is not None:
            val += eps * sum(dW[j] * float(self._k[j](*args)) for j in range(self.sc.noise_dim))
        return val

    def _steps(self, t: float, path: Optional[WienerPath]):
        if path is not None and self.sc.eps > 0 and self.sc.noise_dim > 0:
            steps, dW = path.increments(t)
            return steps, dW
        n = max(1, int(math.ceil(self.steps_per_unit * t)))
        return np.full(n, t / n), None

    def integrate(self, x0, p0, t: float, path: Optional[WienerPath] = None,
                  J0: Optional[np.ndarray] = None, K0: Optional[np.ndarray] = None,
                  trajectory: bool = False):
        """
        积分一条特征线

        Returns:
            (X, P, J, K, A[, traj])，A 为 ∫(½|Ẋ|² − V)ds − ε∫k∘dW
        """
        d = self.sc.d
        X = np.array(x0, dtype=float)
        P = np.array(p0, dtype=float)
        J = np.eye(d) if J0 is None else np.array(J0, dtype=float)
        K = np.zeros((d, d)) if K0 is None else np.array(K0, dtype=float)
        steps, dW = self._steps(t, path)
        A = 0.0
        traj = [(0.0, X.copy(), J.copy())] if trajectory else None
        s = 0.0
        for n, h in enumerate(steps):
            dWn = None if dW is None else dW[n]
            f, H = self._force(X, h, dWn)
            pot0 = self._potential(X, h, dWn)
            P_half = P + 0.5 * f
            K_half = K + 0.5 * H @ J
            X = X + h * P_half
            J = J + h * K_half
            f, H = self._force(X, h, dWn)
            pot1 = self._potential(X, h, dWn)
            P = P_half + 0.5 * f
            K = K_half + 0.5 * H @ J
            A += 0.5 * h * (P_half @ P_half) - 0.5 * (pot0 + pot1)
            s += h
            if not (np.all(np.isfinite(X)) and np.all(np.isfinite(J))):
                raise NumericError("特征线积分出现NaN/溢出", step=n)
            if trajectory:
                traj.append((s, X.copy(), J.copy()))
        if trajectory:
            return X, P, J, K, A, traj
        return X, P, J, K, A

    def flow(self, x0, t: float, path: Optional[WienerPath] = None) -> FlowState:
        x0 = np.asarray(x0, dtype=float)
        p0 = self.field.grad(x0)
        if t == 0:
            return FlowState(x0, p0, 0.0, x0.copy(), p0.copy(), np.eye(self.sc.d), 1.0)
        X, P, J, _, _ = self.integrate(x0, p0, t, path, K0=self.field.hess(x0))
        return FlowState(x0, p0, t, X, P, J, float(np.linalg.det(J)))

    def _start_momenta(self, x0, x, t):
        center = (np.asarray(x) - np.asarray(x0)) / t
        starts = [center]
        radius = max(1.0, float(np.linalg.norm(center)))
        d = self.sc.d
        rng = np.random.Generator(np.random.Philox(key=np.array([7, 11], dtype=np.uint64)))
        while len(starts) < self.n_starts:
            r = radius * (0.25 * (1 + len(starts) // 6))
            direction = rng.standard_normal(d)
            starts.append(center + r * direction / np.linalg.norm(direction))
        return starts

    def shoot(self, x0, x, t: float, path: Optional[WienerPath] = None) -> List[Tuple[np.ndarray, float]]:
        """
        多起点阻尼牛顿打靶：求所有使 X(t; x₀, p₀) = x 的 p₀

        Returns:
            [(p0, A)]，按作用量升序

        Raises:
            NumericError: 没有起点收敛，携带最佳残差
        """
        d = self.sc.d
        x = np.asarray(x, dtype=float)
        best = math.inf
        solutions: List[Tuple[np.ndarray, float]] = []
        for p in self._start_momenta(x0, x, t):
            p = np.array(p, dtype=float)
            try:
                X, _, Jp, _, A = self.integrate(x0, p, t, path, J0=np.zeros((d, d)), K0=np.eye(d))
            except NumericError:
                continue
            res = np.linalg.norm(X - x)
            for _ in range(60):
                if res < self.shoot_tol:
                    break
                try:
                    step = np.linalg.solve(Jp, X - x)
                except np.linalg.LinAlgError:
                    break
                alpha = 1.0
                improved = False
                while alpha > 1e-4:
                    trial = p - alpha * step
                    try:
                        Xt, _, Jt, _, At = self.integrate(x0, trial, t, path, J0=np.zeros((d, d)), K0=np.eye(d))
                    except NumericError:
                        alpha *= 0.5
                        continue
                    rt = np.linalg.norm(Xt - x)
                    if rt < res:
                        p, X, Jp, A, res = trial, Xt, Jt, At, rt
                        improved = True
                        break
                    alpha *= 0.5
                if not improved:
                    break
            best = min(best, res)
            if res < self.shoot_tol and not any(np.linalg.norm(p - q) < 1e-6 for q, _ in solutions):
                solutions.append((p, A))
        if not solutions:
            raise NumericError("打靶未能到达目标点（可能不唯一或时间过短）", residual=best)
        solutions.sort(key=lambda item: item[1])
        return solutions

    def action(self, x0, x, t: float, path: Optional[WienerPath] = None) -> float:
        sols = self.shoot(x0, x, t, path)
        return float(self.field.value(np.asarray(x0, dtype=float))) + sols[0][1]

    def preimage_newton(self, x0_guess, x, t, path=None, tol: float = 1e-11, max_iter: int = 40):
        """牛顿法求解 Φ_t(x₀) = x"""
        x0 = np.array(x0_guess, dtype=float)
        for _ in range(max_iter):
            st = self.flow(x0, t, path)
            r = st.X - np.asarray(x, dtype=float)
            if np.linalg.norm(r) < tol:
                return x0, st
            x0 = x0 - np.linalg.solve(st.J, r)
        st = self.flow(x0, t, path)
        if np.linalg.norm(st.X - x) > 1e-8:
            raise NumericError("原像牛顿迭代不收敛", residual=float(np.linalg.norm(st.X - x)))
        return x0, st

    def reduced_action(self, x, t: float, path: Optional[WienerPath] = None, n_samples: int = 41) -> ReducedAction:
        """
        数值约化作用量：对每个 λ 求解其余坐标使 ∂𝒜/∂x₀' = 0，再做多项式拟合
        """
        sc = self.sc
        d = sc.d
        x = np.asarray(x, dtype=float)
        lo, hi = sc.box[0]
        lams = np.linspace(lo, hi, n_samples)
        values = []
        rest = np.array([0.5 * (a + b) for a, b in sc.box[1:]])
        for lam in lams:
            def grad_rest(r):
                x0 = np.concatenate([[lam], r])
                p0 = self.shoot(x0, x, t, path)[0][0]
                return self.field.grad(x0)[1:] - p0[1:]
            r = rest.copy()
            for _ in range(30):
                g = grad_rest(r)
                if np.linalg.norm(g) < 1e-10 or d == 1:
                    break
                h = 1e-6
                Jm = np.column_stack([(grad_rest(r + h * e) - g) / h for e in np.eye(d - 1)])
                r = r - np.linalg.solve(Jm, g)
            x0 = np.concatenate([[lam], r])
            values.append(self.action(x0, x, t, path))
            rest = r
        degree = min(sc.S0.degree(sc.x0_vars[0]) + self.fit_margin, n_samples - 1)
        fit = np.polynomial.Polynomial.fit(lams, values, degree).convert()
        residual = float(np.max(np.abs(fit(lams) - np.asarray(values))))
        terms = {(i,): c for i, c in enumerate(fit.coef)}
        poly = Polynomial.from_terms((LAM,), terms)
        self.logger.info(f"数值约化作用量拟合完成: 次数={degree}, 残差={residual:.2e}")
        return ReducedAction(at=(tuple(x), float(t), path), poly=poly, scale=Fraction(1),
                             elimination_trace=(), fit_residual=residual)


@lru_cache(maxsize=16)
def general_flow(sc: Scenario) -> GeneralFlow:
    return GeneralFlow(sc)


# ---------- 对外操作 ----------

def flow_map(sc: Scenario, x0: Sequence[float], t: float, path: Optional[WienerPath] = None) -> FlowState:
    """
    流映射 Φ_t 及其导数

    free模式为闭式 X = x₀ + t∇S₀ − ε∫w，J = I + t∇²S₀；general模式为蛙跳积分。
    """
    if t < 0:
        raise ValueError(f"时间必须非负: {t}")
    x0 = np.asarray(x0, dtype=float)
    if sc.is_free:
        field_ = initial_field(sc)
        p0 = field_.grad(x0)
        if t == 0:
            return FlowState(x0, p0, 0.0, x0.copy(), p0.copy(), np.eye(sc.d), 1.0)
        model = model_for(sc, float(t), path)
        X, Xdot, J = model.flow_numeric(x0)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(J))):
            raise NumericError("流映射出现NaN/溢出")
        return FlowState(x0, p0, float(t), X, Xdot, J, float(np.linalg.det(J)))
    if path is not None and t > path.horizon + 1e-12:
        raise NumericError(f"时间 {t} 超出路径范围 {path.horizon}")
    return general_flow(sc).flow(x0, float(t), path)


def action(sc: Scenario, x0: Sequence[float], x: Sequence[float], t: float,
           path: Optional[WienerPath] = None) -> float:
    """作用量 𝒜(x₀, x, t)"""
    if t <= 0:
        raise ValueError(f"作用量要求 t > 0: {t}")
    if sc.is_free:
        return float(model_for(sc, float(t), path).action_numeric(np.asarray(x0, float), np.asarray(x, float)))
    return general_flow(sc).action(x0, x, float(t), path)


def reduced_action(sc: Scenario, x: Sequence[float], t: float,
                   path: Optional[WienerPath] = None) -> ReducedAction:
    """约化作用量 f_{(x,t)}(λ)"""
    if not sc.is_free:
        return general_flow(sc).reduced_action(x, float(t), path)
    model = model_for(sc, t, path)
    family = model.reduced_family()
    uni, scale = family.at(x)
    return ReducedAction(at=(tuple(float(v) for v in x), float(t), path), poly=uni, scale=scale,
                         elimination_trace=family.trace)


def _cauchy_bound(coeffs: np.ndarray) -> float:
    c = np.trim_zeros(np.asarray(coeffs, dtype=float), 'f')
    if c.size <= 1:
        return 1.0
    return 1.0 + float(np.max(np.abs(c[1:] / c[0])))


def _classify(coeffs: np.ndarray, root: float, multiplicity: int) -> str:
    order = multiplicity + 1
    deriv = np.polyval(np.polyder(coeffs, order), root) if order < len(coeffs) else 0.0
    if order % 2 == 1:
        return 'inflection'
    return 'min' if deriv > 0 else 'max'


def pre_images(sc: Scenario, x: Sequence[float], t: float, path: Optional[WienerPath] = None,
               tie_tol: float = 1e-12, root_tol: float = 1e-12) -> PreImageSet:
    """
    x 在 t 时刻的全部实原像：f′ 实根隔离 + 消元轨迹回代 + 作用量与分类
    """
    x = np.asarray(x, dtype=float)
    ra = reduced_action(sc, x, t, path)
    coeffs = ra.coefficients()
    fprime = ra.poly.diff(LAM)
    images: List[PreImage] = []
    merged: List[Tuple[float, ...]] = []
    if not fprime.is_zero and not fprime.is_constant:
        bound = _cauchy_bound(np.array([float(c.constant_value()) for c in fprime.coeffs_in(LAM)]))
        if sc.is_free:
            roots = isolate_real_roots(fprime, -bound, bound, root_tol, var=LAM)
        else:
            roots = numeric_real_roots(np.polyder(coeffs), -bound, bound)
        merged = roots.merged_clusters
        if sc.is_free:
            family = model_for(sc, t, path).reduced_family()
        for lam, mult in roots.roots:
            if sc.is_free:
                x0 = family.reconstruct([lam], x)[0]
                act = float(model_for(sc, t, path).action_numeric(x0, x))
            else:
                guess = np.concatenate([[lam], [0.5 * (a + b) for a, b in sc.box[1:]]])
                try:
                    x0, _ = general_flow(sc).preimage_newton(guess, x, t, path)
                except (NumericError, np.linalg.LinAlgError):
                    continue
                act = general_flow(sc).action(x0, x, t, path)
            images.append(PreImage(x0=x0, action=act, kind=_classify(coeffs, lam, mult), multiplicity=mult))
    best, unique, tied = select_minimizer([im.action for im in images], tie_tol)
    return PreImageSet(x=x, t=float(t), images=images, minimizer_index=best,
                       minimizer_unique=unique, tied=tied,
                       merged_clusters=merged)


def density_sqrt(sc: Scenario, x0: Sequence[float], t: float, path: Optional[WienerPath] = None) -> float:
    """√ρ_t = T₀(x₀)|det DΦ_t(x₀)|^{-½}"""
    st = flow_map(sc, x0, t, path)
    if abs(st.detJ) < 1e-14:
        raise GeometryError(f"原像 {np.asarray(x0).tolist()} 位于焦散前像上，密度奇异")
    return float(initial_field(sc).T0(np.asarray(x0, float))) / math.sqrt(abs(st.detJ))


__all__ = [
    'Scenario', 'FlowState', 'ReducedAction', 'PreImage', 'PreImageSet', 'ReducedFamily',
    'FreeActionModel', 'GeneralFlow', 'InitialField', 'initial_field', 'model_for',
    'flow_map', 'action', 'reduced_action', 'pre_images', 'density_sqrt', 'select_minimizer',
    'initial_vars', 'target_vars', 'X0_VARS', 'X_VARS', 'LAM', 'TIME', 'MODES',
]

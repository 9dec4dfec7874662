"""
曲线模块

隐式曲线（无平方多项式零点集）的追踪、参数曲线的表示，以及广义尖点检测。
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar
from skimage import measure

from .errors import ScenarioError
from .polyalg import Polynomial, square_free_part

logger = logging.getLogger(__name__)

PRE_SPACE = 'pre'
TARGET_SPACE = 'target'


@dataclass(frozen=True)
class ImplicitCurve:
    """多项式零点集，构造时取无平方部分"""
    poly: Polynomial
    coords: Tuple[str, ...]
    space: str
    label: str

    def __post_init__(self):
        if self.space not in (PRE_SPACE, TARGET_SPACE):
            raise ScenarioError(f"未知曲线空间: {self.space}")
        p = self.poly
        if not p.is_zero and not p.is_constant:
            p = square_free_part(p).primitive()
        object.__setattr__(self, 'poly', p.with_vars(self.coords) if set(p.free_vars) <= set(self.coords) else p)
        object.__setattr__(self, '_eval', None)

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def is_empty(self) -> bool:
        """常数非零多项式没有零点"""
        return self.poly.is_constant and not self.poly.is_zero

    def _evaluators(self):
        cached = object.__getattribute__(self, '_eval')
        if cached is None:
            value = self.poly.evaluator(self.coords)
            grads = [self.poly.diff(v).evaluator(self.coords) for v in self.coords]
            cached = (value, grads)
            object.__setattr__(self, '_eval', cached)
        return cached

    def value(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        value, _ = self._evaluators()
        return np.asarray(value(*[pts[..., i] for i in range(self.dim)]), dtype=float)

    def gradient(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        _, grads = self._evaluators()
        args = [pts[..., i] for i in range(self.dim)]
        return np.stack([np.broadcast_to(np.asarray(g(*args), dtype=float), pts.shape[:-1]) for g in grads], axis=-1)

    def project(self, pts: np.ndarray, tol: float = 1e-13, max_iter: int = 30) -> np.ndarray:
        """沿梯度方向的牛顿投影到零点集"""
        pts = np.array(pts, dtype=float)
        for _ in range(max_iter):
            val = self.value(pts)
            grad = self.gradient(pts)
            g2 = np.sum(grad * grad, axis=-1)
            ok = g2 > 1e-300
            if np.all(np.abs(val[ok]) <= tol * np.maximum(1.0, np.sqrt(g2[ok]))):
                break
            step = np.where(ok, val / np.where(ok, g2, 1.0), 0.0)
            pts = pts - step[..., None] * grad
        return pts

    def graph_form(self) -> Optional[Tuple[Polynomial, Polynomial]]:
        """二维且关于第二坐标一次时返回 (num, den)，第二坐标 = num/den"""
        if self.dim != 2 or self.is_empty or self.poly.is_zero:
            return None
        u, v = self.coords
        if self.poly.degree(v) != 1:
            return None
        a, b = self.poly.coeffs_in(v)
        if v in a.free_vars or v in b.free_vars:
            return None
        return (-b).with_vars((u,)), a.with_vars((u,))

    def trace(self, box: Sequence[Tuple[float, float]], grid_points: int = 241,
              sample_spacing: float = 0.01, newton_tol: float = 1e-13) -> List['TracedBranch']:
        """
        追踪框内的实分支

        关于第二坐标为一次的曲线按图像 v = num(u)/den(u) 精确参数化，
        其余用 marching squares 初值加牛顿投影。
        """
        if self.dim != 2:
            raise ScenarioError("曲线追踪只支持二维，三维请使用 sample_surface")
        if self.is_empty:
            return []
        graph = self.graph_form()
        if graph is not None:
            return _trace_graph(self, graph, box, sample_spacing)
        return _trace_contours(self, box, grid_points, newton_tol)

    def sample_surface(self, box: Sequence[Tuple[float, float]], grid_points: int = 41,
                       newton_tol: float = 1e-13) -> np.ndarray:
        """三维零点曲面的采样（marching cubes 顶点投影）"""
        if self.dim != 3:
            raise ScenarioError("曲面采样只适用于三维")
        if self.is_empty:
            return np.empty((0, 3))
        axes = [np.linspace(lo, hi, grid_points) for lo, hi in box]
        grids = np.meshgrid(*axes, indexing='ij')
        values = self.value(np.stack(grids, axis=-1))
        if values.min() > 0 or values.max() < 0:
            return np.empty((0, 3))
        spacing = tuple((hi - lo) / (grid_points - 1) for lo, hi in box)
        verts, _, _, _ = measure.marching_cubes(values, level=0.0, spacing=spacing)
        verts = verts + np.array([lo for lo, _ in box])
        return self.project(verts, tol=newton_tol)


@dataclass
class TracedBranch:
    """前像曲线的一支：参数、点、单位切向，evaluator(param) -> (点, 单位切向, |∇P|)"""
    params: np.ndarray
    points: np.ndarray
    tangents: np.ndarray
    evaluator: Callable[[float], Tuple[np.ndarray, np.ndarray, float]]
    kind: str = 'graph'


def _runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """连续 True 段的 [start, stop)"""
    runs = []
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(mask)))
    return runs


def _trace_graph(curve: ImplicitCurve, graph, box, spacing) -> List[TracedBranch]:
    num, den = graph
    u = curve.coords[0]
    fn_num, fn_den = num.evaluator((u,)), den.evaluator((u,))
    fn_dnum, fn_dden = num.diff(u).evaluator((u,)), den.diff(u).evaluator((u,))
    (lo, hi), (vlo, vhi) = box[0], box[1]
    n = max(3, int(round((hi - lo) / spacing)) + 1)
    lam = np.linspace(lo, hi, n)
    d = np.asarray(fn_den(lam), dtype=float) * np.ones_like(lam)
    with np.errstate(divide='ignore', invalid='ignore'):
        v = np.asarray(fn_num(lam), dtype=float) / d
    mask = np.isfinite(v) & (np.abs(d) > 1e-12) & (v >= vlo) & (v <= vhi)
    sign = np.sign(d)
    mask[1:] &= ~((sign[1:] != sign[:-1]) & mask[:-1])

    def evaluate(param: float):
        dd = float(fn_den(param))
        nn = float(fn_num(param))
        slope = (float(fn_dnum(param)) * dd - nn * float(fn_dden(param))) / (dd * dd)
        tangent = np.array([1.0, slope]) / np.hypot(1.0, slope)
        grad_norm = abs(dd) * np.hypot(1.0, slope)
        return np.array([param, nn / dd]), tangent, grad_norm

    branches = []
    for start, stop in _runs(mask):
        if stop - start < 2:
            continue
        params = lam[start:stop]
        pts = np.column_stack([params, v[start:stop]])
        tangents = np.array([evaluate(p)[1] for p in params])
        branches.append(TracedBranch(params, pts, tangents, evaluate, 'graph'))
    return branches


def _trace_contours(curve: ImplicitCurve, box, grid_points, newton_tol) -> List[TracedBranch]:
    axes = [np.linspace(lo, hi, grid_points) for lo, hi in box]
    U, V = np.meshgrid(*axes, indexing='ij')
    values = curve.value(np.stack([U, V], axis=-1))
    if values.min() > 0 or values.max() < 0:
        return []
    steps = np.array([(hi - lo) / (grid_points - 1) for lo, hi in box])
    origin = np.array([lo for lo, _ in box])
    branches = []
    for contour in measure.find_contours(values, 0.0):
        pts = origin + contour * steps
        pts = curve.project(pts, tol=newton_tol)
        keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-12])
        pts = pts[keep]
        if len(pts) < 3:
            continue
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        branches.append(_contour_branch(curve, s, pts, newton_tol))
    return branches


def _contour_branch(curve: ImplicitCurve, s: np.ndarray, pts: np.ndarray, newton_tol: float) -> TracedBranch:
    chord = np.gradient(pts, s, axis=0)

    def evaluate(param: float):
        guess = np.array([np.interp(param, s, pts[:, i]) for i in range(2)])
        point = curve.project(guess[None, :], tol=newton_tol)[0]
        grad = curve.gradient(point[None, :])[0]
        norm = float(np.linalg.norm(grad))
        direction = np.array([np.interp(param, s, chord[:, i]) for i in range(2)])
        if norm < 1e-300:
            tangent = direction / max(np.linalg.norm(direction), 1e-300)
        else:
            tangent = np.array([-grad[1], grad[0]]) / norm
            if tangent @ direction < 0:
                tangent = -tangent
        return point, tangent, norm

    tangents = np.array([evaluate(p)[1] for p in s])
    return TracedBranch(s, pts, tangents, evaluate, 'contour')


@dataclass
class CurvePoint:
    """参数曲线上的一点"""
    param: float
    x: np.ndarray
    x0: np.ndarray
    cool: bool
    velocity: np.ndarray
    branch: int = 0
    partner: Optional[np.ndarray] = None
    action: float = float('nan')
    grad_norm: float = 1.0

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.velocity))


@dataclass
class ParamCurve:
    """
    像空间参数曲线

    points 按分支、参数排序；evaluators 按分支编号给出 param -> CurvePoint，用于尖点细化。
    """
    label: str
    t: float
    points: List[CurvePoint] = field(default_factory=list)
    evaluators: Dict[int, Callable[[float], Optional[CurvePoint]]] = field(default_factory=dict, repr=False)
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.points)

    @property
    def is_empty(self) -> bool:
        return not self.points

    @property
    def dim(self) -> int:
        return len(self.points[0].x) if self.points else 0

    def branch_ids(self) -> List[int]:
        return sorted({p.branch for p in self.points})

    def branch(self, b: int) -> List[CurvePoint]:
        return [p for p in self.points if p.branch == b]

    def xs(self) -> np.ndarray:
        return np.array([p.x for p in self.points]) if self.points else np.empty((0, 0))

    def x0s(self) -> np.ndarray:
        return np.array([p.x0 for p in self.points]) if self.points else np.empty((0, 0))

    def cool_points(self) -> List[CurvePoint]:
        return [p for p in self.points if p.cool]

    def to_frame(self) -> pd.DataFrame:
        """CSV 列: label, t, lambda, x1..xd, cool, dx_dlambda_norm, branch"""
        d = self.dim
        columns = ['label', 't', 'lambda'] + [f'x{i + 1}' for i in range(d)] + ['cool', 'dx_dlambda_norm', 'branch']
        rows = [[self.label, self.t, p.param] + [float(v) for v in p.x] + [bool(p.cool), p.speed, p.branch]
                for p in self.points]
        return pd.DataFrame(rows, columns=columns)


@dataclass
class CuspPoint:
    param: float
    x: np.ndarray
    x0: np.ndarray
    kind: str  # cusp | terminal-regression
    speed: float
    branch: int = 0
    partner: Optional[np.ndarray] = None


@dataclass
class TheoremCheck:
    name: str
    passed: bool
    residual: float
    detail: str = ''
    applicable: bool = True


@dataclass
class CuspReport:
    label: str
    cusps: List[CuspPoint] = field(default_factory=list)
    checks: List[TheoremCheck] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def count(self, kind: str) -> int:
        return sum(1 for c in self.cusps if c.kind == kind)

    def to_frame(self) -> pd.DataFrame:
        rows = [[self.label, c.kind, c.branch, c.param] + [float(v) for v in c.x] + [c.speed] for c in self.cusps]
        d = len(self.cusps[0].x) if self.cusps else 2
        return pd.DataFrame(rows, columns=['label', 'kind', 'branch', 'lambda'] +
                            [f'x{i + 1}' for i in range(d)] + ['speed'])

    def checks_frame(self) -> pd.DataFrame:
        return pd.DataFrame([[c.name, c.applicable, c.passed, c.residual, c.detail] for c in self.checks],
                            columns=['check', 'applicable', 'passed', 'residual', 'detail'])


def detect_cusps(curve: ParamCurve, cusp_tol: float = 1e-6, terminal_partner_ratio: float = 1e-3,
                 scale: float = 1.0, singular_ratio: float = 1e-6) -> CuspReport:
    """
    广义尖点检测：‖dx/dλ‖ 的局部极小经有界Brent细化后低于 cusp_tol

    dx/dλ 按前像曲线的单位切向计算。配对原像与 x₀ 几乎重合的点记为
    terminal-regression（曲线折返到自身上）；前像曲线奇异点（|∇P|≈0）不计入。
    """
    report = CuspReport(label=curve.label)
    if curve.is_empty:
        return report
    if curve.dim != 2:
        raise ScenarioError("尖点检测只支持二维曲线")
    all_grad = np.array([p.grad_norm for p in curve.points])
    grad_floor = singular_ratio * float(np.median(all_grad)) if all_grad.size else 0.0
    found: List[CuspPoint] = []
    for b in curve.branch_ids():
        pts = curve.branch(b)
        if len(pts) < 2:
            continue
        params = np.array([p.param for p in pts])
        speeds = np.array([p.speed for p in pts])
        evaluator = curve.evaluators.get(b)
        n = len(pts)
        candidates = [i for i in range(1, n - 1) if speeds[i] <= speeds[i - 1] and speeds[i] <= speeds[i + 1]]
        candidates += [i for i in (0, n - 1) if speeds[i] < 10 * cusp_tol * max(1.0, float(np.median(speeds)))]
        for i in candidates:
            lo = params[max(i - 1, 0)]
            hi = params[min(i + 1, n - 1)]
            best = pts[i]
            if evaluator is not None and hi > lo:
                def objective(lam):
                    cp = evaluator(lam)
                    return 1e300 if cp is None else cp.speed ** 2
                res = minimize_scalar(objective, bounds=(lo, hi), method='bounded',
                                      options={'xatol': 1e-13, 'maxiter': 200})
                refined = evaluator(float(res.x))
                if refined is not None and refined.speed <= best.speed:
                    best = refined
            if best.speed >= cusp_tol:
                if speeds[i] < 1e-2 * min(speeds[max(i - 1, 0)], speeds[min(i + 1, n - 1)]):
                    msg = f"{curve.label} 分支{b} 在 λ≈{params[i]:.6g} 处速度骤降但未达到容差，建议加密采样"
                    logger.warning(msg)
                    report.warnings.append(msg)
                continue
            if best.grad_norm < grad_floor:
                continue
            kind = 'cusp'
            if best.partner is not None and np.linalg.norm(best.x0 - best.partner) < terminal_partner_ratio * scale:
                kind = 'terminal-regression'
            found.append(CuspPoint(param=best.param, x=np.asarray(best.x), x0=np.asarray(best.x0), kind=kind,
                                   speed=best.speed, branch=b, partner=best.partner))
    dedup_tol = max(1e-6 * scale, 1e-9)
    for cp in found:
        if any(np.linalg.norm(cp.x - other.x) < dedup_tol for other in report.cusps):
            continue
        report.cusps.append(cp)
    logger.debug(f"{curve.label}: 检测到 {report.count('cusp')} 个尖点, "
                 f"{report.count('terminal-regression')} 个折返点")
    return report


__all__ = ['ImplicitCurve', 'TracedBranch', 'CurvePoint', 'ParamCurve', 'CuspPoint', 'TheoremCheck',
           'CuspReport', 'detect_cusps', 'PRE_SPACE', 'TARGET_SPACE']

"""
多项式代数模块

精确有理系数多元多项式及消元工具：结式、判别式、平方-立方分解、实根隔离。
所有消元在有理数域上精确进行，浮点只出现在求值与数值根的边界上。
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp

from .errors import EliminationError, FactorizationError

logger = logging.getLogger(__name__)

Number = Union[int, Fraction, sp.Rational, float]

# 默认Sylvester矩阵维数上限与数值重根相对容差，可由配置覆盖
DEFAULT_MAX_SYLVESTER_DIM = 64
DEFAULT_MULTIPLICITY_RTOL = 1e-9


def symbol(name: str) -> sp.Symbol:
    """按名称取符号（全系统统一使用无假设符号）"""
    return sp.Symbol(name)


def to_rational(value: Number) -> sp.Rational:
    """把数值精确转换为sympy有理数，浮点按二进制值精确转换"""
    if isinstance(value, sp.Rational):
        return value
    if isinstance(value, (int, np.integer)):
        return sp.Integer(int(value))
    if isinstance(value, Fraction):
        return sp.Rational(value.numerator, value.denominator)
    frac = Fraction(float(value))
    return sp.Rational(frac.numerator, frac.denominator)


@lru_cache(maxsize=2048)
def _compile(expr: sp.Expr, names: Tuple[str, ...]) -> Callable:
    return sp.lambdify([symbol(n) for n in names], expr, modules='numpy')


@dataclass(frozen=True, eq=False)
class Polynomial:
    """
    精确多元多项式

    vars 为有序变量名，poly 为QQ上的sympy Poly，生成元与vars一一对应。
    """
    vars: Tuple[str, ...]
    poly: sp.Poly

    # ---------- 构造 ----------

    @classmethod
    def from_expr(cls, expr, vars: Sequence[str]) -> 'Polynomial':
        """从sympy表达式构造，表达式中的自由符号必须都在vars中"""
        vars = tuple(vars)
        gens = [symbol(v) for v in vars]
        expr = sp.sympify(expr)
        extra = {s.name for s in expr.free_symbols} - set(vars)
        if extra:
            raise EliminationError(f"表达式含有未声明变量: {sorted(extra)}")
        if not vars:
            value = sp.nsimplify(expr) if expr.is_Float else expr
            return cls((), sp.Poly(value, symbol('_c'), domain='QQ'))
        return cls(vars, sp.Poly(expr, *gens, domain='QQ'))

    @classmethod
    def from_terms(cls, vars: Sequence[str], terms: Mapping[Tuple[int, ...], Number]) -> 'Polynomial':
        vars = tuple(vars)
        gens = [symbol(v) for v in vars]
        expr = sp.Integer(0)
        for exps, coeff in terms.items():
            if len(exps) != len(vars):
                raise EliminationError(f"指数向量长度 {len(exps)} 与变量数 {len(vars)} 不一致")
            term = to_rational(coeff)
            for g, e in zip(gens, exps):
                term *= g ** int(e)
            expr += term
        return cls.from_expr(expr, vars)

    @classmethod
    def constant(cls, value: Number, vars: Sequence[str] = ()) -> 'Polynomial':
        return cls.from_expr(to_rational(value), vars)

    @classmethod
    def variable(cls, name: str, vars: Optional[Sequence[str]] = None) -> 'Polynomial':
        return cls.from_expr(symbol(name), vars if vars is not None else (name,))

    # ---------- 基本属性 ----------

    @property
    def expr(self) -> sp.Expr:
        return self.poly.as_expr()

    @property
    def terms(self) -> Dict[Tuple[int, ...], Fraction]:
        """指数向量 -> 有理系数（不含零系数项）"""
        if not self.vars:
            c = self.poly.as_expr()
            return {(): Fraction(int(c.p), int(c.q))} if c != 0 else {}
        out = {}
        for monom, coeff in self.poly.terms():
            if coeff != 0:
                out[tuple(int(e) for e in monom)] = Fraction(int(coeff.p), int(coeff.q))
        return out

    @property
    def total_degree(self) -> int:
        if self.is_zero:
            return -1
        return int(self.poly.total_degree()) if self.vars else 0

    @property
    def is_zero(self) -> bool:
        return self.poly.is_zero

    @property
    def is_constant(self) -> bool:
        return not self.free_vars

    @property
    def free_vars(self) -> Tuple[str, ...]:
        names = {s.name for s in self.expr.free_symbols}
        return tuple(v for v in self.vars if v in names)

    def degree(self, var: str) -> int:
        """var 的次数，零多项式为 -1，不含 var 为 0"""
        if self.is_zero:
            return -1
        if var not in self.vars:
            return 0
        return int(self.poly.degree(symbol(var)))

    def coeffs_in(self, var: str) -> List['Polynomial']:
        """按 var 的降幂排列的系数多项式（其余变量的多项式）"""
        others = tuple(v for v in self.vars if v != var)
        n = self.degree(var)
        if n < 0:
            return [Polynomial.constant(0, others)]
        collected = sp.Poly(self.expr, symbol(var)).all_coeffs()
        collected = [sp.Integer(0)] * (n + 1 - len(collected)) + list(collected)
        return [Polynomial.from_expr(c, others) for c in collected]

    def leading_coeff(self, var: str) -> 'Polynomial':
        return self.coeffs_in(var)[0]

    def constant_value(self) -> Fraction:
        if not self.is_constant:
            raise EliminationError(f"多项式不是常数: {self.expr}")
        c = sp.Rational(self.expr)
        return Fraction(int(c.p), int(c.q))

    # ---------- 算术 ----------

    def with_vars(self, vars: Sequence[str]) -> 'Polynomial':
        return Polynomial.from_expr(self.expr, vars)

    def _coerce(self, other) -> Tuple['Polynomial', 'Polynomial']:
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(other, self.vars)
        if other.vars == self.vars:
            return self, other
        merged = tuple(self.vars) + tuple(v for v in other.vars if v not in self.vars)
        return self.with_vars(merged), other.with_vars(merged)

    def __add__(self, other) -> 'Polynomial':
        a, b = self._coerce(other)
        return Polynomial.from_expr(a.expr + b.expr, a.vars)

    __radd__ = __add__

    def __sub__(self, other) -> 'Polynomial':
        a, b = self._coerce(other)
        return Polynomial.from_expr(a.expr - b.expr, a.vars)

    def __rsub__(self, other) -> 'Polynomial':
        a, b = self._coerce(other)
        return Polynomial.from_expr(b.expr - a.expr, a.vars)

    def __mul__(self, other) -> 'Polynomial':
        a, b = self._coerce(other)
        return Polynomial.from_expr(sp.expand(a.expr * b.expr), a.vars)

    __rmul__ = __mul__

    def __neg__(self) -> 'Polynomial':
        return Polynomial.from_expr(-self.expr, self.vars)

    def __pow__(self, n: int) -> 'Polynomial':
        if int(n) != n or n < 0:
            raise EliminationError(f"多项式只支持非负整数次幂: {n}")
        return Polynomial.from_expr(sp.expand(self.expr ** int(n)), self.vars)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            try:
                other = Polynomial.constant(other, self.vars)
            except (TypeError, ValueError):
                return NotImplemented
        return sp.expand(self.expr - other.expr) == 0

    def __hash__(self) -> int:
        return hash(sp.expand(self.expr))

    def __repr__(self) -> str:
        return f"Polynomial({self.expr}, vars={list(self.vars)})"

    def scale(self, factor: Number) -> 'Polynomial':
        return Polynomial.from_expr(self.expr * to_rational(factor), self.vars)

    def diff(self, var: str) -> 'Polynomial':
        return Polynomial.from_expr(sp.diff(self.expr, symbol(var)), self.vars)

    def subs(self, mapping: Mapping[str, Union['Polynomial', Number]],
             vars: Optional[Sequence[str]] = None) -> 'Polynomial':
        """
        复合代入：mapping 中的变量替换为多项式或精确数值

        Args:
            mapping: 变量名 -> 多项式/数值
            vars: 结果的变量列表，缺省为剩余变量并入代入多项式的变量
        """
        replacements = {}
        new_vars = [v for v in self.vars if v not in mapping]
        for name, value in mapping.items():
            if isinstance(value, Polynomial):
                replacements[symbol(name)] = value.expr
                new_vars.extend(v for v in value.vars if v not in new_vars)
            else:
                replacements[symbol(name)] = to_rational(value)
        expr = sp.expand(self.expr.xreplace(replacements))
        return Polynomial.from_expr(expr, vars if vars is not None else new_vars)

    def div(self, divisor: 'Polynomial', var: str) -> Tuple['Polynomial', 'Polynomial']:
        """把两者视为 var 的多项式（系数在其余变量的有理函数域）做带余除法"""
        a, b = self._coerce(divisor)
        q, r = sp.div(a.expr, b.expr, symbol(var))
        return Polynomial.from_expr(sp.expand(q), a.vars), Polynomial.from_expr(sp.expand(r), a.vars)

    def exact_div(self, divisor: 'Polynomial') -> 'Polynomial':
        """精确整除，余式非零时报错"""
        a, b = self._coerce(divisor)
        if b.is_zero:
            raise EliminationError("除以零多项式")
        gens = [symbol(v) for v in a.vars] or [symbol('_c')]
        q, r = sp.div(sp.Poly(a.expr, *gens, domain='QQ'), sp.Poly(b.expr, *gens, domain='QQ'))
        if not r.is_zero:
            raise EliminationError(f"多项式不能整除，余式: {r.as_expr()}")
        return Polynomial.from_expr(q.as_expr(), a.vars)

    def primitive(self) -> 'Polynomial':
        """去掉有理常数因子并使首项系数为正（用于相差常数的比较）"""
        if self.is_zero:
            return self
        if not self.vars:
            return Polynomial.constant(1)
        _, prim = self.poly.primitive()
        if prim.LC() < 0:
            prim = -prim
        return Polynomial(self.vars, prim)

    def proportional_to(self, other: 'Polynomial') -> bool:
        """两多项式是否只相差一个非零常数"""
        a, b = self._coerce(other)
        if a.is_zero or b.is_zero:
            return a.is_zero and b.is_zero
        return a.primitive() == b.primitive()

    # ---------- 求值 ----------

    def evaluator(self, order: Optional[Sequence[str]] = None) -> Callable:
        """按 order 排列参数的numpy向量化求值函数"""
        names = tuple(order) if order is not None else self.vars
        missing = set(self.free_vars) - set(names)
        if missing:
            raise EliminationError(f"求值缺少变量: {sorted(missing)}")
        fn = _compile(self.expr, names)

        def broadcast(*args):
            out = np.asarray(fn(*args), dtype=float)
            if args:
                shape = np.broadcast(*[np.asarray(a, dtype=float) for a in args]).shape
                if out.shape != shape:
                    out = np.broadcast_to(out, shape).copy()
            return out[()]
        return broadcast

    def __call__(self, *values):
        return self.evaluator()(*values)


@dataclass(frozen=True)
class RootSet:
    """
    实根隔离结果：升序 (值, 重数)

    clusters 与 roots 一一对应，记录合并进该根的各个隔离值；
    长度大于 1 的簇说明相距小于容差的不同根被报告成了一个高重根。
    """
    roots: Tuple[Tuple[float, int], ...]
    interval: Tuple[float, float]
    tol: float
    clusters: Tuple[Tuple[float, ...], ...] = ()

    @property
    def values(self) -> List[float]:
        return [r for r, _ in self.roots]

    @property
    def multiplicities(self) -> List[int]:
        return [m for _, m in self.roots]

    @property
    def merged_clusters(self) -> List[Tuple[float, ...]]:
        return [c for c in self.clusters if len(c) > 1]

    def __len__(self) -> int:
        return len(self.roots)


# ---------- 消元 ----------

def _univariate_view(p: Polynomial, var: str) -> Tuple[sp.Poly, Tuple[str, ...]]:
    others = tuple(v for v in p.vars if v != var)
    gens = [symbol(var)] + [symbol(v) for v in others]
    return sp.Poly(p.expr, *gens, domain='QQ'), others


def sylvester_matrix(p: Polynomial, q: Polynomial, var: str) -> sp.Matrix:
    """显式Sylvester矩阵，元素为其余变量的表达式"""
    cp = [c.expr for c in p.coeffs_in(var)]
    cq = [c.expr for c in q.coeffs_in(var)]
    m, n = len(cp) - 1, len(cq) - 1
    size = m + n
    rows = []
    for i in range(n):
        rows.append([sp.Integer(0)] * i + cp + [sp.Integer(0)] * (size - m - 1 - i))
    for i in range(m):
        rows.append([sp.Integer(0)] * i + cq + [sp.Integer(0)] * (size - n - 1 - i))
    return sp.Matrix(rows)


def resultant(p: Polynomial, q: Polynomial, var: str,
              max_dim: int = DEFAULT_MAX_SYLVESTER_DIM) -> Polynomial:
    """
    消去 var 的结式（等于Sylvester行列式）

    Args:
        p, q: 都以正次数含有 var 的多项式
        var: 被消去的变量
        max_dim: Sylvester矩阵维数上限

    Returns:
        其余变量的多项式
    """
    p, q = p._coerce(q)
    dp, dq = p.degree(var), q.degree(var)
    if dp <= 0 or dq <= 0:
        raise EliminationError(f"结式输入退化: {var} 的次数分别为 {dp}, {dq}")
    if dp + dq > max_dim:
        raise EliminationError(f"Sylvester矩阵维数 {dp + dq} 超过上限 {max_dim}")
    pp, others = _univariate_view(p, var)
    qq, _ = _univariate_view(q, var)
    res = pp.resultant(qq)
    expr = res.as_expr() if isinstance(res, sp.Poly) else sp.sympify(res)
    return Polynomial.from_expr(sp.expand(expr), others)


def discriminant(p: Polynomial, var: str, degree: Optional[int] = None,
                 max_dim: int = DEFAULT_MAX_SYLVESTER_DIM) -> Polynomial:
    """
    判别式 D^var(p) = (-1)^{n(n-1)/2} Res(p, p', var) / lc(p)

    该规范下 x²+bx+c 的判别式为 b²-4c；平方-立方分解只依赖零点集与重数结构，
    常数因子由分解中的 k 吸收。

    Args:
        degree: 调用方声明的次数；若该次项系数恒为零则报错
    """
    n = p.degree(var)
    if degree is not None and degree != n:
        raise EliminationError(
            f"{var}^{degree} 的首项系数恒为零，请先去掉退化的首项后再求判别式（实际次数 {n}）")
    if n < 2:
        raise EliminationError(f"判别式要求 {var} 的次数 ≥ 2，实际为 {n}")
    lc = p.leading_coeff(var)
    if lc.is_zero:
        raise EliminationError("首项系数恒为零，请先去掉退化的首项")
    res = resultant(p, p.diff(var), var, max_dim=max_dim)
    sign = -1 if (n * (n - 1) // 2) % 2 else 1
    return res.scale(sign).exact_div(lc)


def square_free_part(p: Polynomial) -> Polynomial:
    """无平方部分（保持零点集）"""
    if p.is_zero or p.is_constant:
        return p
    return Polynomial.from_expr(sp.sqf_part(p.expr, *[symbol(v) for v in p.vars]), p.vars)


def multiplicity_profile(p: Polynomial) -> Tuple[sp.Rational, List[Tuple[Polynomial, int]]]:
    """无平方分解：p = coeff · Π factor^mult"""
    if p.is_zero:
        raise EliminationError("零多项式没有无平方分解")
    if p.is_constant:
        return to_rational(p.constant_value()), []
    coeff, factors = sp.sqf_list(p.expr, *[symbol(v) for v in p.vars])
    return coeff, [(Polynomial.from_expr(f, p.vars), int(m)) for f, m in factors]


def square_cube_split(p: Polynomial) -> Tuple[Fraction, Polynomial, Polynomial]:
    """
    把 p 分解为 k·B²·C³，B、C 无平方

    重数2的因子归入B，重数3的归入C，重数5的同时归入两者。

    Raises:
        FactorizationError: 出现其它重数时，携带实际重数分布
    """
    coeff, factors = multiplicity_profile(p)
    profile: Dict[int, int] = {}
    for _, m in factors:
        profile[m] = profile.get(m, 0) + 1
    bad = [m for m in profile if m not in (2, 3, 5)]
    if bad:
        raise FactorizationError("多项式不具有 k·B²·C³ 结构", profile)
    B = Polynomial.constant(1, p.vars)
    C = Polynomial.constant(1, p.vars)
    for f, m in factors:
        if m in (2, 5):
            B = B * f
        if m in (3, 5):
            C = C * f
    k = Fraction(int(coeff.p), int(coeff.q))
    logger.debug(f"平方-立方分解完成: 重数分布 {profile}")
    return k, B, C


def split_profile(p: Polynomial) -> Tuple[int, ...]:
    """按升序列出出现的重数（如双重判别式应为 (2, 3)）"""
    _, factors = multiplicity_profile(p)
    return tuple(sorted({m for _, m in factors}))


# ---------- 实根 ----------

def isolate_real_roots(p: Polynomial, lo: float, hi: float, tol: float,
                       var: Optional[str] = None) -> RootSet:
    """
    在 [lo, hi] 上隔离一元多项式的全部实根

    对无平方分解的每个因子做精确区间隔离（Vincent-Akritas-Strzeboński），
    区间宽度细化到 tol 以下，重数来自分解。

    Raises:
        ValueError: tol ≤ 0 或 lo ≥ hi
        EliminationError: 零多项式或多于一个自由变量
    """
    if tol <= 0:
        raise ValueError(f"隔离容差必须为正: {tol}")
    if lo >= hi:
        raise ValueError(f"搜索区间无效: [{lo}, {hi}]")
    if p.is_zero:
        raise EliminationError("不能隔离零多项式的根")
    free = p.free_vars
    if len(free) > 1:
        raise EliminationError(f"实根隔离要求一元多项式，实际变量 {free}")
    if not free:
        return RootSet((), (lo, hi), tol)
    var = var or free[0]
    x = symbol(var)
    found: List[Tuple[float, int]] = []
    inf, sup = to_rational(lo), to_rational(hi)
    tol_q = to_rational(tol)
    _, factors = sp.sqf_list(p.expr, x)
    for factor, mult in factors:
        fpoly = sp.Poly(factor, x, domain='QQ')
        if fpoly.degree() < 1:
            continue
        for (a, b), _ in fpoly.intervals(inf=inf, sup=sup, eps=tol_q):
            found.append((float((a + b) / 2), int(mult)))
    found.sort()
    merged: List[Tuple[float, int]] = []
    clusters: List[List[float]] = []
    for value, mult in found:
        if merged and abs(value - merged[-1][0]) <= max(2 * tol, DEFAULT_MULTIPLICITY_RTOL * abs(value)):
            logger.warning(f"根 {merged[-1][0]:.12g} 与 {value:.12g} 间距小于隔离容差，已合并")
            prev, pm = merged[-1]
            merged[-1] = ((prev * pm + value * mult) / (pm + mult), pm + mult)
            clusters[-1].append(value)
        else:
            merged.append((value, mult))
            clusters.append([value])
    return RootSet(tuple(merged), (float(lo), float(hi)), float(tol),
                   tuple(tuple(c) for c in clusters))


def numeric_real_roots(coeffs: Sequence[float], lo: float = -np.inf, hi: float = np.inf,
                       rtol: float = DEFAULT_MULTIPLICITY_RTOL, imag_tol: float = 1e-7) -> RootSet:
    """
    浮点系数（降幂）多项式的实根，numpy求根后用牛顿法抛光并按相对容差聚类求重数

    供批量数值求值使用；精确问题应使用 isolate_real_roots。
    """
    c = np.trim_zeros(np.asarray(coeffs, dtype=float), 'f')
    if c.size <= 1:
        return RootSet((), (lo, hi), rtol)
    raw = np.roots(c)
    scale = max(1.0, float(np.max(np.abs(raw)))) if raw.size else 1.0
    candidates = np.sort(raw[np.abs(raw.imag) <= imag_tol * scale].real)
    dc = np.polyder(c)
    polished = []
    for r in candidates:
        for _ in range(3):
            d = np.polyval(dc, r)
            if d == 0:
                break
            step = np.polyval(c, r) / d
            if not np.isfinite(step) or abs(step) > 1e-3 * max(1.0, abs(r)):
                break
            r -= step
        polished.append(float(r))
    roots: List[Tuple[float, int]] = []
    groups: List[List[float]] = []
    cluster_tol = max(rtol, 1e-6)
    for r in polished:
        if roots and abs(r - roots[-1][0]) <= cluster_tol * max(1.0, abs(r)):
            prev, m = roots[-1]
            roots[-1] = ((prev * m + r) / (m + 1), m + 1)
            groups[-1].append(r)
        else:
            roots.append((r, 1))
            groups.append([r])
    keep = [i for i, (r, _) in enumerate(roots) if lo <= r <= hi]
    return RootSet(tuple(roots[i] for i in keep), (lo, hi), rtol, tuple(tuple(groups[i]) for i in keep))


def batch_real_roots(coeffs: np.ndarray, imag_tol: float = 1e-6) -> np.ndarray:
    """
    批量求实根：coeffs 形状 (N, n+1) 降幂且首项非零

    Returns:
        形状 (N, n) 的数组，非实根位置为 NaN，每行升序
    """
    coeffs = np.asarray(coeffs, dtype=float)
    n = coeffs.shape[1] - 1
    if n < 1:
        return np.empty((coeffs.shape[0], 0))
    monic = coeffs[:, 1:] / coeffs[:, :1]
    companion = np.zeros((coeffs.shape[0], n, n))
    companion[:, 0, :] = -monic
    if n > 1:
        companion[:, np.arange(1, n), np.arange(n - 1)] = 1.0
    eig = np.linalg.eigvals(companion)
    scale = np.maximum(1.0, np.abs(eig))
    real = np.where(np.abs(eig.imag) <= imag_tol * scale, eig.real, np.nan)
    return np.sort(real, axis=1)


__all__ = [
    'Polynomial', 'RootSet', 'symbol', 'to_rational', 'sylvester_matrix', 'resultant',
    'discriminant', 'square_free_part', 'multiplicity_profile', 'square_cube_split',
    'split_profile', 'isolate_real_roots', 'numeric_real_roots', 'batch_real_roots',
]

"""
场景文件解析模块

解析 key = value 格式的场景文件。多项式表达式只允许整数/小数/有理字面量、
+ - * / ^ 与括号，以及该键允许的变量名；错误携带行列位置。
"""

import os
import re
import logging
from tokenize import TokenError
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import chardet
import sympy as sp
from sympy.parsing.sympy_parser import (convert_xor, parse_expr, rationalize,
                                        standard_transformations)

from .errors import ScenarioParseError
from .polyalg import Polynomial, symbol
from .scenario import MODES, Scenario, initial_vars, target_vars

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
BUNDLED_DIR = Path(__file__).resolve().parent.parent / 'scenarios'

_TOKEN = re.compile(r'\s+|[A-Za-z_][A-Za-z0-9_]*|\d+(?:\.\d*)?|\.\d+|[-+*/^()]')
_IDENT = re.compile(r'[A-Za-z_][A-Za-z0-9_]*')
_LINE = re.compile(r'^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=(.*)$')
_TRANSFORMS = standard_transformations + (convert_xor, rationalize)

KNOWN_KEYS = ('version', 'name', 'dim', 'S0', 'V', 'k', 'eps', 'T0', 'mode', 'box', 'mu')
POLY_KEYS = {'S0': 'x0', 'T0': 'x0', 'V': 'x', 'k': 'x'}


def _detect_encoding(raw: bytes) -> str:
    if not raw:
        return 'utf-8'
    try:
        raw.decode('utf-8')
        return 'utf-8'
    except UnicodeDecodeError:
        guess = chardet.detect(raw)
        encoding = guess.get('encoding') or 'gbk'
        logger.warning(f"场景文件不是UTF-8，按 {encoding} 解码 (置信度: {guess.get('confidence', 0):.2f})")
        return encoding


def parse_polynomial(text: str, allowed: Tuple[str, ...], line: int = 0, column: int = 1) -> Polynomial:
    """
    解析单个多项式表达式

    Args:
        text: 表达式文本
        allowed: 允许出现的变量名
        line, column: text 在文件中的起始位置（用于报错）

    Raises:
        ScenarioParseError: 非法字符、未知变量、语法错误或不是多项式
    """
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ScenarioParseError(f"非法字符 '{text[pos]}'", line, column + pos)
        tok = m.group(0)
        if _IDENT.fullmatch(tok):
            if tok not in allowed:
                raise ScenarioParseError(f"未知变量 '{tok}'，允许: {', '.join(allowed)}", line, column + pos)
        pos = m.end()
    if not text.strip():
        raise ScenarioParseError("缺少表达式", line, column)
    local = {name: symbol(name) for name in allowed}
    try:
        expr = parse_expr(text, local_dict=local, transformations=_TRANSFORMS, evaluate=True)
    except (SyntaxError, TypeError, TokenError) as exc:
        raise ScenarioParseError(f"表达式语法错误: {text.strip()}", line, column + _syntax_offset(text, exc)) from exc
    try:
        return Polynomial.from_expr(sp.expand(expr), allowed)
    except Exception as exc:  # sympy对非多项式输入抛出的异常类型不统一
        raise ScenarioParseError(f"不是有理系数多项式: {text.strip()}", line, column) from exc


def _syntax_offset(text: str, exc: Exception) -> int:
    offset = getattr(exc, 'offset', None)
    if isinstance(offset, int) and 0 < offset <= len(text) + 1:
        return offset - 1
    stripped = text.rstrip()
    return max(len(stripped) - 1, 0)


def _split_list(value: str, col: int) -> List[Tuple[str, int]]:
    """按逗号切分，返回 (片段, 起始列)"""
    parts = []
    start = 0
    for i, ch in enumerate(value + ','):
        if ch == ',':
            parts.append((value[start:i], col + start))
            start = i + 1
    return parts


def _parse_float(text: str, line: int, col: int) -> float:
    try:
        return float(text.strip())
    except ValueError:
        raise ScenarioParseError(f"不是数值: '{text.strip()}'", line, col)


def parse_scenario(text: str, source: str = '<string>') -> Scenario:
    """
    解析场景文本

    格式:
        # 注释
        version = 1
        dim = 2
        S0 = x0^2*y0
        k = x, y
        eps = 0.1
        box = -2:2, -2:2

    Raises:
        ScenarioParseError: 语法错误（携带行列号）
        ScenarioError: 语义错误（如模式与V/k不符）
    """
    entries: Dict[str, Tuple[str, int, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split('#', 1)[0]
        if not body.strip():
            continue
        m = _LINE.match(body)
        if not m:
            raise ScenarioParseError("期望 key = value", lineno, len(body) - len(body.lstrip()) + 1)
        key = m.group(1)
        col = m.start(2) + 1
        if key not in KNOWN_KEYS:
            raise ScenarioParseError(f"未知键 '{key}'", lineno, m.start(1) + 1)
        if key in entries:
            raise ScenarioParseError(f"重复的键 '{key}'", lineno, m.start(1) + 1)
        entries[key] = (m.group(2), lineno, col)

    if 'version' in entries:
        value, ln, col = entries['version']
        if value.strip() != str(FORMAT_VERSION):
            raise ScenarioParseError(f"不支持的格式版本 '{value.strip()}'，当前版本为 {FORMAT_VERSION}", ln, col)
    for required in ('dim', 'S0'):
        if required not in entries:
            raise ScenarioParseError(f"缺少必需的键 '{required}'", 0, 0)

    value, ln, col = entries['dim']
    if value.strip() not in ('1', '2', '3'):
        raise ScenarioParseError(f"dim 必须为 1、2 或 3，实际为 '{value.strip()}'", ln, col)
    d = int(value.strip())
    allowed = {'x0': initial_vars(d), 'x': target_vars(d)}

    def poly(key: str, default: Optional[str] = None) -> Polynomial:
        if key not in entries:
            return parse_polynomial(default, allowed[POLY_KEYS[key]])
        value, ln, col = entries[key]
        return parse_polynomial(value, allowed[POLY_KEYS[key]], ln, col)

    S0 = poly('S0')
    V = poly('V', '0')
    T0 = poly('T0', '1')
    k: Tuple[Polynomial, ...] = ()
    if 'k' in entries:
        value, ln, col = entries['k']
        k = tuple(parse_polynomial(part, allowed['x'], ln, pcol) for part, pcol in _split_list(value, col))

    eps = 0.0
    if 'eps' in entries:
        value, ln, col = entries['eps']
        eps = _parse_float(value, ln, col)
        if eps < 0:
            raise ScenarioParseError(f"eps 必须非负: {eps}", ln, col)

    mode = 'free-closed-form'
    if 'mode' in entries:
        value, ln, col = entries['mode']
        mode = value.strip()
        if mode not in MODES:
            raise ScenarioParseError(f"未知模式 '{mode}'，可选: {', '.join(MODES)}", ln, col)

    box: Tuple[Tuple[float, float], ...] = ()
    if 'box' in entries:
        value, ln, col = entries['box']
        intervals = []
        for part, pcol in _split_list(value, col):
            bounds = part.split(':')
            if len(bounds) != 2:
                raise ScenarioParseError(f"区间格式应为 lo:hi，实际为 '{part.strip()}'", ln, pcol)
            lo, hi = (_parse_float(b, ln, pcol) for b in bounds)
            if lo >= hi:
                raise ScenarioParseError(f"区间下界必须小于上界: '{part.strip()}'", ln, pcol)
            intervals.append((lo, hi))
        if len(intervals) != d:
            raise ScenarioParseError(f"box 需要 {d} 个区间，实际 {len(intervals)}", ln, col)
        box = tuple(intervals)

    mu: Tuple[float, ...] = ()
    if 'mu' in entries:
        value, ln, col = entries['mu']
        mu = tuple(_parse_float(part, ln, pcol) for part, pcol in _split_list(value, col))
        if any(m <= 0 for m in mu):
            raise ScenarioParseError("mu 列表中的粘性必须为正", ln, col)

    name = entries['name'][0].strip() if 'name' in entries else Path(source).stem
    scenario = Scenario(d=d, S0=S0, V=V, k=k, eps=eps, T0=T0, mode=mode, name=name, box=box, mu=mu)
    logger.debug(f"场景解析完成: {name} (dim={d}, mode={mode}, eps={eps})")
    return scenario


def bundled_scenarios() -> List[str]:
    if not BUNDLED_DIR.is_dir():
        return []
    return sorted(p.stem for p in BUNDLED_DIR.glob('*.scn'))


def load_scenario(path_or_name: str) -> Scenario:
    """
    从文件或内置场景名加载场景

    Raises:
        FileNotFoundError: 文件不存在且不是内置场景名
    """
    path = Path(path_or_name)
    if not path.exists():
        candidate = BUNDLED_DIR / f"{path_or_name}.scn"
        if not candidate.exists():
            raise FileNotFoundError(
                f"场景文件不存在: {path_or_name}（内置场景: {', '.join(bundled_scenarios())}）")
        path = candidate
    raw = path.read_bytes()
    text = raw.decode(_detect_encoding(raw), errors='replace')
    logger.info(f"加载场景文件: {os.fspath(path)}")
    return parse_scenario(text, source=os.fspath(path))


__all__ = ['parse_scenario', 'parse_polynomial', 'load_scenario', 'bundled_scenarios', 'FORMAT_VERSION']

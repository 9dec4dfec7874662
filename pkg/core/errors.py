"""
异常定义模块

所有模块共用的异常层次结构，命令行根据异常类型决定退出码
"""

from typing import Dict, Optional, Sequence, Tuple


class BurgersError(Exception):
    """分析系统异常基类"""


class ScenarioError(BurgersError, ValueError):
    """场景定义错误（不支持的模式、维度不匹配等）"""


class ScenarioParseError(ScenarioError):
    """场景文件语法错误，携带行列位置"""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        if line:
            message = f"第{line}行第{column}列: {message}"
        super().__init__(message)


class EliminationError(BurgersError):
    """消元失败：退化的结式/判别式、超出Sylvester维数上限、除法余式非零"""


class FactorizationError(EliminationError):
    """无法写成 k·B²·C³ 形式，profile 为实际的重数分布"""

    def __init__(self, message: str, profile: Optional[Dict[int, int]] = None):
        self.profile = dict(profile or {})
        super().__init__(f"{message} (重数分布: {self.profile})")


class NumericError(BurgersError, ArithmeticError):
    """数值计算失败（NaN/溢出、打靶不收敛、正性丢失、稳定性条件不满足）"""

    def __init__(self, message: str, residual: Optional[float] = None, step: Optional[int] = None):
        self.residual = residual
        self.step = step
        details = []
        if residual is not None:
            details.append(f"残差={residual:.3e}")
        if step is not None:
            details.append(f"步={step}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class GeometryError(NumericError):
    """几何量无法计算（奇异Hessian、缺少配对原像、差分模板不足）"""


class AcceptanceError(BurgersError):
    """验收检查失败"""

    def __init__(self, message: str, failed: Sequence[Tuple[str, float]] = ()):
        self.failed = list(failed)
        super().__init__(message)


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SCENARIO = 2
EXIT_NUMERIC = 3
EXIT_ACCEPTANCE = 4


def exit_code_for(error: BaseException) -> int:
    """把异常映射为命令行退出码"""
    if isinstance(error, ScenarioError):
        return EXIT_SCENARIO
    if isinstance(error, AcceptanceError):
        return EXIT_ACCEPTANCE
    if isinstance(error, BurgersError):
        return EXIT_NUMERIC
    if isinstance(error, (ValueError, FileNotFoundError, FileExistsError)):
        return EXIT_USAGE
    return EXIT_NUMERIC

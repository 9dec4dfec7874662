"""
随机Burgers方程无粘极限奇异几何分析系统

主要功能:
1. 多项式消元：结式、判别式、平方-立方分解、实根隔离
2. 焦散、Hamilton-Jacobi 等值面、Maxwell集及其前像，cool/hot 标注与尖点定理
3. ζ 过程模拟与湍流时刻
4. Maxwell集上的速度、涡量与质量粘附
5. Hopf-Cole 粘性参照解与数值比对

Author: Burgers Analysis Team
Version: 1.0.0
"""

__version__ = "1.0.0"
__author__ = "Burgers Analysis Team"

from .core.scenario import Scenario
from .core.scenario_parser import load_scenario, parse_scenario
from .core.geometry import GeometryEngine
from .core.turbulence import ZetaSimulator
from .core.shockflow import ShockFlowAnalyzer
from .core.viscousref import ViscousReference
from .main_controller import BurgersAnalysisController, RunConfig, RunResult

__all__ = [
    'Scenario',
    'load_scenario',
    'parse_scenario',
    'GeometryEngine',
    'ZetaSimulator',
    'ShockFlowAnalyzer',
    'ViscousReference',
    'BurgersAnalysisController',
    'RunConfig',
    'RunResult',
]

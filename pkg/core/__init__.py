"""
核心模块
包含多项式消元、场景与流映射、奇异几何、ζ 过程、激波流与粘性参照等核心功能
"""

from .errors import BurgersError, ScenarioError, EliminationError, NumericError, GeometryError
from .scenario import Scenario, flow_map, action, reduced_action, pre_images
from .scenario_parser import parse_scenario, load_scenario
from .wiener import WienerPath
from .geometry import GeometryEngine
from .turbulence import ZetaSimulator
from .shockflow import ShockFlowAnalyzer
from .viscousref import ViscousReference
from .artifacts import ArtifactWriter

__all__ = [
    'BurgersError',
    'ScenarioError',
    'EliminationError',
    'NumericError',
    'GeometryError',
    'Scenario',
    'flow_map',
    'action',
    'reduced_action',
    'pre_images',
    'parse_scenario',
    'load_scenario',
    'WienerPath',
    'GeometryEngine',
    'ZetaSimulator',
    'ShockFlowAnalyzer',
    'ViscousReference',
    'ArtifactWriter',
]

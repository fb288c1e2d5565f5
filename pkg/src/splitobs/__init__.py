"""Split-spectrum distributed state estimation over fixed and switching networks."""

from .decomposition import Plant, decompose, decompose_agent, joint_observability, stack
from .designer import ContinuousDesign, DiscreteDesign, design_continuous, design_discrete
from .netgraph import NeighborGraph, NetworkSnapshot
from .simulator import Fault, Scenario, SimulationTrace, simulate
from .switching import SwitchingSignal

__all__ = [
    "ContinuousDesign", "DiscreteDesign", "Fault", "NeighborGraph", "NetworkSnapshot", "Plant",
    "Scenario", "SimulationTrace", "SwitchingSignal", "decompose", "decompose_agent",
    "design_continuous", "design_discrete", "joint_observability", "simulate", "stack",
]
__version__ = "0.1.0"

"""Bipartite experiment design and exposure-reweighted estimation toolkit.

A weighted bipartite graph connects outcome units (rows) to diversion units
(columns). Treatments are assigned to diversion units; each outcome unit
receives a weighted-average exposure. This package builds independent
cluster designs over the diversion units, computes exact exposure moments,
evaluates the exposure reweighted linear (ERL) estimator of the average
treatment effect, and replicates designed experiments in simulation.
"""

from bipx.graph_core import BipartiteGraph
from bipx.design import Clustering, DesignSpec, ExposureMoments
from bipx.estimator import OutcomeModel
from bipx.cluster_opt import LocalSearchConfig, ObjectiveValue
from bipx.simulate import ScenarioSpec, SimulationReport

__version__ = "0.1.0"

__all__ = [
    "BipartiteGraph",
    "Clustering",
    "DesignSpec",
    "ExposureMoments",
    "OutcomeModel",
    "LocalSearchConfig",
    "ObjectiveValue",
    "ScenarioSpec",
    "SimulationReport",
    "__version__",
]

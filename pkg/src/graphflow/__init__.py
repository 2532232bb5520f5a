"""Flow-score guided graph edge filtering, classical connectivity measures,
synthetic graph bundles, and a small dense GNN trainer."""

from . import connectivity, data_io, flow, graphs, model, rewiring
from .connectivity import EdgeScores, NodeScores
from .data_io import GraphBundle, load_bundle, save_bundle
from .flow import AggregationSpec, DeltaState, ScheduleK, ScoreParams
from .graphs import Graph, build_graph

__all__ = [
    "connectivity", "data_io", "flow", "graphs", "model", "rewiring",
    "Graph", "build_graph", "GraphBundle", "load_bundle", "save_bundle",
    "NodeScores", "EdgeScores", "AggregationSpec", "DeltaState",
    "ScoreParams", "ScheduleK",
]

__version__ = "0.1.0"

"""Retrieval of CAD models and their 9-DOF pose by Monte Carlo tree search over a
hierarchical object-clustering tree, scored by render-and-compare."""

from .geometry import OrientedBox, Pose, TriangleMesh, chamfer, single_direction_chamfer
from .hoctree import HocTree, build_tree, load_tree, save_tree
from .mcts import SearchConfig, SearchResult, exhaustive_search, greedy_search, hoc_search, nn_rerank, refine_pose
from .objective import make_objective
from .synth import SceneSpec, ShapeDatabase, gen_database, gen_scene

__version__ = "0.1.0"

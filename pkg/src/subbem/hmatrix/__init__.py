"""Hierarchical matrices for the collocation system."""
from .blocktree import Block, BlockClusterTree, admissible, box_distance, build_block_cluster_tree
from .cluster import Cluster, ClusterTree, build_cluster_tree, directional_tree
from .gmres import ConvergenceError, GmresResult, gmres_solve
from .hmat import DenseGenerator, Generator, HMatrix, HNode, build_hmatrix, coarsen
from .lowrank import RkMatrix, aca, recompress, truncate_dense
from .lu import HLU, FactorizationError, h_lu
from .system import HConfig, HSystem, rigid_body_sums_h, solve_hmatrix, support_boxes

__all__ = [
    "Block", "BlockClusterTree", "admissible", "box_distance", "build_block_cluster_tree",
    "Cluster", "ClusterTree", "build_cluster_tree", "directional_tree",
    "ConvergenceError", "GmresResult", "gmres_solve",
    "DenseGenerator", "Generator", "HMatrix", "HNode", "build_hmatrix", "coarsen",
    "RkMatrix", "aca", "recompress", "truncate_dense",
    "HLU", "FactorizationError", "h_lu",
    "HConfig", "HSystem", "rigid_body_sums_h", "solve_hmatrix", "support_boxes",
]

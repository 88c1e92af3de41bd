"""Weighted message passing with minimum-energy-flow weights for heterogeneous SBMs."""
from .model import SbmParams, BroadcastKernel, build_kernel, kernel_from_mean, second_eigvec, theta_bar_closed_form_k2
from .sbm import Graph, SideInfo, SideInfoMode, make_side_info, sample_graph
from .tree import LocalTree, broadcast_labels, extract_tree, sample_gw_tree
from .flow import FlowAssignment, effective_resistance, min_energy_flow, regular_tree_energy
from .wmp import classify_root, evolve_moments, init_messages, propagate, wmp_classify_graph

__version__ = "0.1.0"

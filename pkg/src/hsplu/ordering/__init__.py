"""Orderings: bottleneck matching, block triangular form, AMD and nested dissection."""

from .amd import amd_diagonal_blocks, amd_order
from .btf import btf_scc
from .matching import bottleneck_value, mwcm
from .nd import NdNode, NdTree, nd_order

__all__ = ["mwcm", "bottleneck_value", "btf_scc", "amd_order", "amd_diagonal_blocks",
           "nd_order", "NdTree", "NdNode"]

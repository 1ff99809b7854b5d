from .bsp import BspResult, bsp_pagerank, row_sets
from .csr import CsrMatrix, EndpointOutOfRange, build_csr
from .pagerank import (
    DAMPING, PageRankResult, PartitionSpec, leaf_ranges, next_ranks, oracle_pagerank, pagerank_driver,
    pagerank_task_count, split_point, tree_task_count,
)
from .rmat import RMAT_DEFAULTS, BadProbabilities, read_edge_list, rmat_generate, write_edge_list

__all__ = [
    "BspResult", "bsp_pagerank", "row_sets", "CsrMatrix", "EndpointOutOfRange", "build_csr", "DAMPING",
    "PageRankResult", "PartitionSpec", "leaf_ranges", "next_ranks", "oracle_pagerank", "pagerank_driver",
    "pagerank_task_count", "split_point", "tree_task_count", "RMAT_DEFAULTS", "BadProbabilities",
    "read_edge_list", "rmat_generate", "write_edge_list",
]

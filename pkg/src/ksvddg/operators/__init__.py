"""Matrix-free DG operators and element diagonal blocks."""

from .discretization import Discretization, LinearizedOperator, jacobian_apply, state_hash
from .blocks import (BlockTerms, block_terms, assemble_diag_block, shuffled_apply,
                     shuffled_apply_T, DEFAULT_ENTRY_BUDGET)

__all__ = [
    "Discretization", "LinearizedOperator", "jacobian_apply", "state_hash",
    "BlockTerms", "block_terms", "assemble_diag_block", "shuffled_apply", "shuffled_apply_T",
    "DEFAULT_ENTRY_BUDGET",
]

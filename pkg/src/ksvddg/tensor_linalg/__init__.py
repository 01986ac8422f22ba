"""Dense small-matrix and Kronecker-product kernels."""

from .kron import KroneckerSum, kron_apply, tensor_apply
from .shuffle import ShuffledOperator, shuffle_dense, unshuffle_dense, vec, unvec
from .lanczos import LanczosConfig, KsvdBatch, KsvdResult, lanczos_ksvd, lanczos_batch, dense_ksvd
from .schur import SchurPair, real_schur, diagonal_blocks, schur_eigenvalues
from .sylvester import sylvester_solve, sylvester_solve_batched
from .lu import LUHandle, lu_factor, lu_solve, lu_inverse, solve_along_axis

__all__ = [
    "KroneckerSum", "kron_apply", "tensor_apply",
    "ShuffledOperator", "shuffle_dense", "unshuffle_dense", "vec", "unvec",
    "LanczosConfig", "KsvdBatch", "KsvdResult", "lanczos_ksvd", "lanczos_batch", "dense_ksvd",
    "SchurPair", "real_schur", "diagonal_blocks", "schur_eigenvalues",
    "sylvester_solve", "sylvester_solve_batched",
    "LUHandle", "lu_factor", "lu_solve", "lu_inverse", "solve_along_axis",
]

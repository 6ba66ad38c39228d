"""structqr: composable structured-sparse QR and Levenberg-Marquardt solvers.

The package factors matrices whose sparsity is *known by construction*
(block diagonal, block banded, horizontal/vertical concatenations of those)
with blocked Householder QR, never materializing Q, and drives damped
least-squares (Levenberg-Marquardt) steps through either the QR route or a
normal-equations/Cholesky route for comparison.  The QR route stays accurate
in float32 where the normal equations -- whose conditioning is squared --
degrade; the benchmark CLI (`structqr ...`) measures exactly that.
"""

from . import _kernels
from .errors import (
    DimensionError,
    ParseError,
    ResidualError,
    SingularMatrixError,
    StructureError,
)
from .matrices import (
    BandedBlockMatrix,
    BlockDiagonalMatrix,
    DenseMatrix,
    HorzCatMatrix,
    Permutation,
    TripletMatrix,
    VertCatMatrix,
    apply_row_permutation,
    matmul,
    read_matrix_market,
    to_dense,
    write_matrix_market,
)
from .householder import (
    CompressedWYBlock,
    DenseQRFactor,
    apply_q,
    apply_q_transpose,
    dense_qr,
    solve_upper_triangular,
    wy_accumulate,
)
from .structured import (
    BlockBandedQR,
    BlockDiagonalQR,
    DenseQR,
    HorzCatQR,
    VertCatQR,
    factorize,
    get_num_threads,
    set_num_threads,
    solve_least_squares,
    solver_for,
)
from .ordering import (
    bandwidth,
    column_fill_reducing_permutation,
    lm_interleave_permutation,
    pattern_row_spans,
    row_banding_permutation,
)
from .levmar import (
    LMConfig,
    LMTrace,
    backtrack_lm,
    cholesky_lm,
    energy,
    finite_difference_jacobian,
    jacobian_consistency,
    more_lm,
    run_lm,
)
from . import problems

__version__ = "0.1.0"

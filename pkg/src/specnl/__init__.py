"""specnl: nonlocal blocks in the graph-spectral view.

Affinity kernels and normalizations, an exact graph-filter oracle with a
Chebyshev-polynomial fast path, the six nonlocal block variants as
instances of one generalized operator, hand-derived gradients verified by
finite differences, and a desk-scale training harness.
"""

from .affinity import (
    AffinityMatrix,
    CrissCrossMask,
    IndefiniteAffinityError,
    IsolatedNodeError,
    compute_affinity,
    criss_cross_mask,
    degree_matrix,
    normalize_masked_rw,
    normalize_rw,
    normalize_sym,
)
from .blocks import (
    BlockConfig,
    BlockOutput,
    BlockParams,
    block_backward,
    count_bn_params,
    count_flops,
    count_params,
    forward_block,
    forward_snl,
    forward_variant_reference,
    init_block_params,
    unified_operator,
)
from .spectral import (
    ChebCoeffs,
    GraphFilter,
    SpectralDecomposition,
    cheb_filter_response,
    cheb_recursion,
    chebyshev_filter,
    graph_fourier,
    inverse_graph_fourier,
    laplacian,
    spectral_filter_direct,
)
from .tensor import (
    ShapeMismatchError,
    SymmetryError,
    finite_diff_grad,
    matmul,
    softmax_rows,
    sym_eig,
)

__version__ = "0.1.0"

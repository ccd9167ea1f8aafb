"""Graph Fourier transform, direct spectral filtering, and Chebyshev machinery.

The direct path eigendecomposes the (symmetric) affinity and filters in the
eigenbasis; the Chebyshev path evaluates the same filter as a polynomial in
Ltilde = -A using only matrix-vector recursions. The two paths are developed
independently so each can serve as the oracle for the other.

Asymmetric affinities (random-walk and friends) have no guaranteed real
spectrum; the ops below reject them, and only the polynomial/spatial form
in :mod:`specnl.blocks` applies there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor
from .affinity import NORM_SYM, AffinityMatrix
from .tensor import ShapeMismatchError, SpectralDecomposition, SymmetryError, sym_eig

__all__ = [
    "SpectralDecomposition",
    "GraphFilter",
    "ChebCoeffs",
    "laplacian",
    "graph_fourier",
    "inverse_graph_fourier",
    "spectral_filter_direct",
    "cheb_recursion",
    "chebyshev_filter",
    "cheb_filter_response",
]


@dataclass(frozen=True)
class GraphFilter:
    """Diagonal spectral response, indexed against ascending eigenvalues of A."""

    omega: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.omega)):
            raise ValueError("graph filter responses must be finite")


@dataclass(frozen=True)
class ChebCoeffs:
    theta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.theta)
        if t.ndim != 1 or t.shape[0] < 1:
            raise ValueError(f"need at least one Chebyshev coefficient, got shape {t.shape}")

    @property
    def order(self) -> int:
        return len(self.theta)


def _require_symmetric(aff: AffinityMatrix, op: str) -> np.ndarray:
    if aff.norm != NORM_SYM:
        raise SymmetryError(
            f"{op} is defined only for symmetric-normalized affinities, got norm tag "
            f"{aff.norm!r}; asymmetric forms have no guaranteed real spectrum"
        )
    asym = float(np.abs(aff.m - aff.m.T).max())
    if asym > tensor.SYM_TOL:
        raise SymmetryError(f"{op}: affinity tagged symmetric but max |a_ij - a_ji| = {asym:.3e}")
    return aff.m


def laplacian(aff: AffinityMatrix) -> np.ndarray:
    """Graph Laplacian L = D_L - A with (D_L)_ii = sum_j A_ij.

    For non-negative symmetric A this is symmetric, diagonally dominant
    (hence PSD), with zero row sums.
    """
    a = _require_symmetric(aff, "laplacian")
    return np.diag(a.sum(axis=1)) - a


def graph_fourier(z: np.ndarray, u: np.ndarray) -> np.ndarray:
    """zhat = U^T z: expand node features in the eigenvector basis."""
    if u.shape[0] != z.shape[0]:
        raise ShapeMismatchError(f"basis has {u.shape[0]} nodes but signal has {z.shape[0]}")
    return u.T @ z


def inverse_graph_fourier(zhat: np.ndarray, u: np.ndarray) -> np.ndarray:
    """z = U zhat; exact inverse of :func:`graph_fourier` for orthonormal U."""
    if u.shape[1] != zhat.shape[0]:
        raise ShapeMismatchError(f"basis has {u.shape[1]} modes but spectrum has {zhat.shape[0]}")
    return u @ zhat


def spectral_filter_direct(aff: AffinityMatrix, z: np.ndarray, g: GraphFilter) -> np.ndarray:
    """Filter z through the eigenbasis of A: U diag(omega) U^T z.

    omega[i] scales the component along the eigenvector with the i-th
    smallest eigenvalue of A. This is the direct (oracle) evaluation; the
    Chebyshev path must agree with it for polynomial responses.
    """
    a = _require_symmetric(aff, "spectral_filter_direct")
    dec = sym_eig(a)
    omega = np.asarray(g.omega, dtype=np.float64)
    if omega.shape != (a.shape[0],):
        raise ShapeMismatchError(
            f"filter length {omega.shape} does not match node count {a.shape[0]}"
        )
    u = dec.eigenvectors
    return u @ (omega[:, None] * (u.T @ z))


def cheb_recursion(ltilde: np.ndarray, k: int) -> np.ndarray:
    """Materialize T_k(Ltilde): T_0 = I, T_1 = Ltilde, T_k = 2 Ltilde T_{k-1} - T_{k-2}."""
    if k < 0:
        raise ValueError(f"polynomial order must be >= 0, got {k}")
    n = ltilde.shape[0]
    t_prev = np.eye(n, dtype=ltilde.dtype)
    if k == 0:
        return t_prev
    t_cur = np.array(ltilde, copy=True)
    for _ in range(k - 1):
        t_prev, t_cur = t_cur, 2.0 * (ltilde @ t_cur) - t_prev
    return t_cur


def chebyshev_filter(aff: AffinityMatrix, z: np.ndarray, coeffs: ChebCoeffs) -> np.ndarray:
    """Sum_k theta_k T_k(-A) z via the three-term recursion on (matrix x signal)
    products; never materializes T_k or A^k. Cost O(K n^2 c).

    Ltilde = -A is the lambda_max = 2 rescaling convention for normalized
    Laplacians, adopted unconditionally as the definition of the operator.
    """
    a = _require_symmetric(aff, "chebyshev_filter")
    if a.shape[0] != z.shape[0]:
        raise ShapeMismatchError(f"affinity is {a.shape} but signal has {z.shape[0]} nodes")
    theta = np.asarray(coeffs.theta, dtype=np.float64)
    t_prev = z
    out = theta[0] * z
    if len(theta) == 1:
        return out
    t_cur = -(a @ z)
    out = out + theta[1] * t_cur
    for k in range(2, len(theta)):
        t_prev, t_cur = t_cur, -2.0 * (a @ t_cur) - t_prev
        out = out + theta[k] * t_cur
    return out


def cheb_filter_response(theta: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Scalar response omega_i = sum_k theta_k T_k(-lam_i).

    Feeding this into :func:`spectral_filter_direct` must reproduce
    :func:`chebyshev_filter` exactly (diagonalization commutes with
    polynomials); tests lean on that identity.
    """
    theta = np.asarray(theta, dtype=np.float64)
    x = -np.asarray(lam, dtype=np.float64)
    t_prev = np.ones_like(x)
    omega = theta[0] * t_prev
    if len(theta) == 1:
        return omega
    t_cur = x.copy()
    omega = omega + theta[1] * t_cur
    for k in range(2, len(theta)):
        t_prev, t_cur = t_cur, 2.0 * x * t_cur - t_prev
        omega = omega + theta[k] * t_cur
    return omega

"""Affinity matrices between feature-map positions and their normalizations.

A raw affinity M holds pairwise kernel responses M_ij = f(phi_i, psi_j).
Downstream graph operators consume a normalized form:

  random-walk         A = D^-1 M                (row-stochastic)
  symmetric           A = D^-1/2 Mhat D^-1/2,   Mhat = (M + M^T)/2
  masked-random-walk  A = D^-1 (C . M)          (criss-cross mask C)
  softmax-product     A = softmax_rows(P) @ softmax_cols(Q)^T, built elsewhere

Only the symmetric form guarantees a real spectrum and thus a graph
spectral domain; the others keep the row-stochastic convention of the
original attention-style blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeMismatchError

KERNELS = ("dot", "gaussian", "embedded-gaussian")

NORM_RAW = "raw"
NORM_RW = "random-walk"
NORM_SYM = "symmetric"
NORM_MASKED_RW = "masked-random-walk"
NORM_SOFTMAX_PRODUCT = "softmax-product"


class IsolatedNodeError(ValueError):
    """A zero (or non-positive) row sum makes degree normalization singular."""


class IndefiniteAffinityError(ValueError):
    """Affinity violates the non-negativity/symmetry precondition for a real
    spectral basis (only Gaussian-family kernels guarantee it)."""


@dataclass(frozen=True)
class AffinityMatrix:
    m: np.ndarray
    norm: str = NORM_RAW
    kernel: str = "none"

    def __post_init__(self):
        m = np.asarray(self.m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeMismatchError(f"affinity matrix must be square, got shape {m.shape}")

    @property
    def n(self) -> int:
        return self.m.shape[0]


@dataclass(frozen=True)
class CrissCrossMask:
    h: int
    w: int
    c: np.ndarray  # (h*w, h*w) of {0., 1.}


def compute_affinity(phi: np.ndarray, psi: np.ndarray, kernel: str,
                     eps: float = 0.0) -> AffinityMatrix:
    """Raw affinity M_ij = f(phi_i, psi_j) for the named kernel.

    'dot' is the plain inner product and may go negative; 'gaussian' and
    'embedded-gaussian' are exp(phi_i . psi_j) and differ only in what the
    caller feeds them (raw features vs learned embeddings). Row-softmax of
    the embedded-gaussian affinity reproduces standard attention.

    ``eps`` is an explicit additive floor for callers that must rule out
    zero row sums downstream; it is never applied silently.
    """
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}, expected one of {KERNELS}")
    phi = np.asarray(phi)
    psi = np.asarray(psi)
    if phi.shape != psi.shape or phi.ndim != 2:
        raise ShapeMismatchError(
            f"kernel features must be matching (n, cs) matrices, got {phi.shape} and {psi.shape}"
        )
    s = phi @ psi.T
    m = s if kernel == "dot" else np.exp(s)
    if eps:
        m = m + eps
    return AffinityMatrix(m=m, norm=NORM_RAW, kernel=kernel)


def degree_matrix(aff: AffinityMatrix) -> np.ndarray:
    """Diagonal degree matrix D_ii = sum_j M_ij."""
    d = aff.m.sum(axis=1)
    if np.any(d == 0.0):
        idx = int(np.flatnonzero(d == 0.0)[0])
        raise IsolatedNodeError(f"row {idx} has zero sum; degree inverse is singular")
    return np.diag(d)


def normalize_rw(aff: AffinityMatrix) -> AffinityMatrix:
    """Random-walk normalization A = D^-1 M; rows sum to 1."""
    d = aff.m.sum(axis=1)
    if np.any(d <= 0.0):
        idx = int(np.flatnonzero(d <= 0.0)[0])
        raise IsolatedNodeError(
            f"row {idx} has non-positive sum {d[idx]:.3e}; random-walk normalization needs "
            "strictly positive degrees"
        )
    return AffinityMatrix(m=aff.m / d[:, None], norm=NORM_RW, kernel=aff.kernel)


def normalize_sym(aff: AffinityMatrix, allow_negative: bool = False) -> AffinityMatrix:
    """Symmetric normalization A = D^-1/2 Mhat D^-1/2 of Mhat = (M + M^T)/2.

    Requires Mhat entrywise non-negative; then A is symmetric with all
    eigenvalues in [-1, 1], so a real graph spectral domain exists.
    ``allow_negative`` skips the non-negativity check for callers that
    explicitly accept an indefinite affinity and the loss of the spectral
    guarantees (degrees must still be positive).
    """
    mhat = (aff.m + aff.m.T) / 2.0
    lo = float(mhat.min()) if mhat.size else 0.0
    if lo < 0.0 and not allow_negative:
        raise IndefiniteAffinityError(
            f"symmetrized affinity has negative entry {lo:.3e}; a non-negative symmetric "
            "affinity is required for a real spectral basis (use a Gaussian-family kernel "
            "or map features to be non-negative first)"
        )
    d = mhat.sum(axis=1)
    if np.any(d <= 0.0):
        idx = int(np.flatnonzero(d <= 0.0)[0])
        raise IsolatedNodeError(
            f"row {idx} of symmetrized affinity has non-positive sum; cannot scale by D^-1/2"
        )
    inv_sqrt = 1.0 / np.sqrt(d)
    a = mhat * inv_sqrt[:, None] * inv_sqrt[None, :]
    return AffinityMatrix(m=a, norm=NORM_SYM, kernel=aff.kernel)


def criss_cross_mask(h: int, w: int) -> CrissCrossMask:
    """Binary mask keeping only position pairs sharing a row or a column."""
    if h < 1 or w < 1:
        raise ValueError(f"mask extents must be >= 1, got h={h}, w={w}")
    rows = np.repeat(np.arange(h), w)
    cols = np.tile(np.arange(w), h)
    c = ((rows[:, None] == rows[None, :]) | (cols[:, None] == cols[None, :]))
    return CrissCrossMask(h=h, w=w, c=c.astype(np.float64))


def normalize_masked_rw(aff: AffinityMatrix, mask: CrissCrossMask) -> AffinityMatrix:
    """Hadamard-mask the affinity, then random-walk normalize over the kept edges."""
    if mask.c.shape != aff.m.shape:
        raise ShapeMismatchError(
            f"mask shape {mask.c.shape} does not match affinity shape {aff.m.shape}"
        )
    masked = AffinityMatrix(m=aff.m * mask.c, norm=NORM_RAW, kernel=aff.kernel)
    rw = normalize_rw(masked)
    return AffinityMatrix(m=rw.m, norm=NORM_MASKED_RW, kernel=aff.kernel)

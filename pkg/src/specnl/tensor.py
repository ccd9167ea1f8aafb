"""Dense-array substrate: linear algebra with hand-derived adjoints.

Arrays are plain numpy ndarrays (row-major, rank 1-4) treated as immutable
once constructed; no op writes into its inputs. f64 is the default
precision; f32 is reserved for the training fast path and is rejected by
the eigensolver, which anchors the verification oracles.

Every differentiable op comes as a forward/backward pair. The backward
formula is stated in the backward function's docstring so it can be
checked against ``finite_diff_grad`` without reading the forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeMismatchError(ValueError):
    """Operand extents are incompatible for the requested op."""


class SymmetryError(ValueError):
    """A symmetric-matrix op received an asymmetric input."""


# ---------------------------------------------------------------------------
# elementary ops
# ---------------------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[-1] != b.shape[0]:
        raise ShapeMismatchError(
            f"matmul: inner extents differ, lhs shape {a.shape} vs rhs shape {b.shape}"
        )
    return a @ b


def matmul_backward(g: np.ndarray, a: np.ndarray, b: np.ndarray):
    """dA = G B^T, dB = A^T G."""
    return g @ b.T, a.T @ g


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by per-row max subtraction."""
    m = np.asarray(m)
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(g: np.ndarray, out: np.ndarray) -> np.ndarray:
    """dM = out * (G - sum_j(G * out) per row).

    The max-subtraction shift contributes zero gradient because the output
    is invariant under per-row constant shifts.
    """
    dot = (g * out).sum(axis=-1, keepdims=True)
    return out * (g - dot)


def exp(x: np.ndarray) -> np.ndarray:
    return np.exp(x)


def exp_backward(g: np.ndarray, out: np.ndarray) -> np.ndarray:
    """dX = G * exp(X), with exp(X) taken from the saved forward output."""
    return g * out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """dX = G on the active set {x > 0}, zero elsewhere."""
    return g * (x > 0)


# ---------------------------------------------------------------------------
# adjoint records
# ---------------------------------------------------------------------------

_FORWARD_BY_OP = {
    "matmul": matmul,
    "softmax_rows": softmax_rows,
    "exp": exp,
    "relu": relu,
}


@dataclass
class AdjointRecord:
    """Saved inputs of one forward evaluation, replayable bit-exactly.

    Ops are pure, so re-running the forward on the saved inputs must
    reproduce the original output exactly in f64; tests rely on this to
    validate saved-state bookkeeping.
    """

    op_id: str
    inputs: tuple
    output_grad: np.ndarray | None = field(default=None)

    def replay(self) -> np.ndarray:
        return _FORWARD_BY_OP[self.op_id](*self.inputs)


def record(op_id: str, *inputs) -> tuple[np.ndarray, AdjointRecord]:
    rec = AdjointRecord(op_id, tuple(np.asarray(x) for x in inputs))
    return rec.replay(), rec


# ---------------------------------------------------------------------------
# symmetric eigendecomposition (cyclic Jacobi)
# ---------------------------------------------------------------------------

SYM_TOL = 1e-12           # allowed max |s_ij - s_ji| on input
_OFF_TOL_SCALE = 1e-14    # sweep until off-diag Frobenius < scale * ||s||_F
_MAX_SWEEPS = 60


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues (ascending) and orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T


def sym_eig(s: np.ndarray) -> SpectralDecomposition:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Deterministic: fixed (p, q) sweep order, no pivot search, eigenvalues
    sorted ascending, each eigenvector's largest-magnitude component made
    positive. Converges unconditionally for symmetric input.
    """
    s = np.asarray(s)
    if s.dtype != np.float64:
        raise TypeError(f"sym_eig requires f64 input, got {s.dtype}")
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeMismatchError(f"sym_eig: expected square matrix, got shape {s.shape}")
    asym = float(np.abs(s - s.T).max()) if s.size else 0.0
    if asym > SYM_TOL:
        raise SymmetryError(f"sym_eig: input asymmetric, max |s_ij - s_ji| = {asym:.3e}")

    n = s.shape[0]
    a = (s + s.T) / 2.0
    v = np.eye(n)
    norm = float(np.linalg.norm(a))
    threshold = _OFF_TOL_SCALE * norm

    for _ in range(_MAX_SWEEPS):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= threshold / max(n * n, 1):
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                # smaller-magnitude root of t^2 + 2*theta*t - 1 = 0
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0)) if theta != 0.0 else 1.0
                c = 1.0 / np.hypot(t, 1.0)
                sn = t * c
                # a <- G^T a G on rows/cols p, q
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - sn * aq
                a[q, :] = sn * ap + c * aq
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - sn * aq
                a[:, q] = sn * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq
    else:
        raise RuntimeError("sym_eig: Jacobi sweeps did not converge")

    lam = np.diag(a).copy()
    order = np.argsort(lam, kind="stable")
    lam = lam[order]
    v = v[:, order]
    for j in range(n):
        k = int(np.argmax(np.abs(v[:, j])))
        if v[k, j] < 0:
            v[:, j] = -v[:, j]
    return SpectralDecomposition(eigenvalues=lam, eigenvectors=v)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def finite_diff_grad(f, x: np.ndarray, h) -> np.ndarray:
    """Central-difference gradient of a scalar function, coordinate by coordinate.

    ``h`` may be a scalar or an array of per-coordinate steps broadcastable
    to ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    h = np.broadcast_to(np.asarray(h, dtype=np.float64), x.shape)
    grad = np.empty_like(x)
    for idx in np.ndindex(*x.shape):
        step = h[idx]
        xp = x.copy()
        xp[idx] += step
        xm = x.copy()
        xm[idx] -= step
        grad[idx] = (f(xp) - f(xm)) / (2.0 * step)
    return grad


def grad_check_steps(x: np.ndarray) -> np.ndarray:
    """Per-coordinate step h_i = 1e-4 * max(1, |x_i|) used by all gradient checks."""
    x = np.asarray(x, dtype=np.float64)
    return 1e-4 * np.maximum(1.0, np.abs(x))


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max_i |a_i - n_i| / max(1, |n_i|), the gradient-check error metric."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.abs(numeric))
    if analytic.size == 0:
        return 0.0
    return float((np.abs(analytic - numeric) / denom).max())

"""The six nonlocal block variants as instances of one generalized operator.

Production paths are matrix-form and batched; ``forward_variant_reference``
holds straight-from-the-definition evaluators (per-position weighted means,
explicit loops) used as oracles by the equivalence suites. Backward passes
are hand-derived compositions of the op adjoints in :mod:`specnl.tensor`,
including the paths through affinity construction and normalization.

Variant taxonomy (affinity normalization / node feature / operator terms):

  NL    random-walk           Z = X Wg   A Z W
  NS    random-walk           Z = X Wg   (A - I) Z W
  A2    softmax-product       Z = X Wg   Mbar Z W
  CGNL  random-walk on vec    vec(Z)     A vec(Z), then W
  CC    masked random-walk    X          A X W
  SNL   symmetric             Z = X Wg   Z W1 + A Z W2
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .affinity import (
    KERNELS,
    NORM_MASKED_RW,
    NORM_RW,
    NORM_SOFTMAX_PRODUCT,
    NORM_SYM,
    AffinityMatrix,
    IndefiniteAffinityError,
    IsolatedNodeError,
    criss_cross_mask,
)
from .tensor import ShapeMismatchError, softmax_rows

VARIANTS = ("NL", "NS", "A2", "CGNL", "CC", "SNL")

#: variants whose backward pass is implemented (the ones the harness trains)
TRAINABLE_VARIANTS = ("NL", "NS", "SNL")


@dataclass(frozen=True)
class BlockConfig:
    variant: str
    c1: int
    cs: int
    kernel: str = "embedded-gaussian"
    k_order: int = 2
    spatial: tuple[int, int] | None = None
    allow_indefinite: bool = False
    affinity_eps: float = 0.0
    kernel_scale: float = 1.0  # multiplies pairwise responses before exp

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.cs < 1:
            raise ValueError(f"transferred channels must be >= 1, got cs={self.cs}")
        if self.c1 < self.cs:
            raise ValueError(f"need c1 >= cs, got c1={self.c1}, cs={self.cs}")
        if self.k_order < 1:
            raise ValueError(f"Chebyshev order must be >= 1, got {self.k_order}")
        if not self.kernel_scale > 0:
            raise ValueError(f"kernel scale must be positive, got {self.kernel_scale}")
        if self.variant == "SNL" and self.k_order != 2:
            raise ValueError("the SNL block is the complete first-order form; k_order must be 2")
        if self.variant == "CC" and self.spatial is None:
            raise ValueError("CC needs spatial=(h, w) to build its criss-cross mask")
        if self.variant == "SNL" and self.kernel == "dot" and not self.allow_indefinite:
            raise ValueError(
                "dot kernel can produce an indefinite affinity; SNL requires a Gaussian-family "
                "kernel unless allow_indefinite is set (which forfeits the spectral guarantees)"
            )


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1


@dataclass
class BlockParams:
    """Learnable state of one block; unused fields stay None for the variant."""

    w_phi: np.ndarray | None
    w_psi: np.ndarray | None
    w_g: np.ndarray | None
    w: list[np.ndarray]
    bn: BatchNormState


@dataclass
class BlockOutput:
    y: np.ndarray
    attention: AffinityMatrix | None


@dataclass
class BlockState:
    """Forward intermediates saved for the hand-derived backward."""

    cfg: BlockConfig
    saved: dict = field(default_factory=dict)


@dataclass
class BlockGrads:
    dx: np.ndarray
    dw_phi: np.ndarray | None
    dw_psi: np.ndarray | None
    dw_g: np.ndarray | None
    dw: list[np.ndarray]
    dgamma: np.ndarray
    dbeta: np.ndarray


def variant_matrix_shapes(cfg: BlockConfig) -> dict:
    """Weight-matrix shapes each variant owns (None for unused embeddings)."""
    c1, cs = cfg.c1, cfg.cs
    emb = (c1, cs)
    out = (cs, c1)
    if cfg.variant == "SNL":
        return {"w_phi": emb, "w_psi": emb, "w_g": emb, "w": [out, out]}
    if cfg.variant in ("NL", "NS", "A2"):
        return {"w_phi": emb, "w_psi": emb, "w_g": emb, "w": [out]}
    if cfg.variant == "CGNL":
        return {"w_phi": None, "w_psi": None, "w_g": emb, "w": [out]}
    # CC aggregates raw X, so its output map is square
    return {"w_phi": emb, "w_psi": emb, "w_g": None, "w": [(c1, c1)]}


def init_block_params(cfg: BlockConfig, rng: np.random.Generator,
                      dtype=np.float64) -> BlockParams:
    shapes = variant_matrix_shapes(cfg)

    def draw(shape):
        if shape is None:
            return None
        return (rng.standard_normal(shape) / np.sqrt(shape[0])).astype(dtype)

    bn = BatchNormState(
        gamma=np.ones(cfg.c1, dtype=dtype),
        beta=np.zeros(cfg.c1, dtype=dtype),
        running_mean=np.zeros(cfg.c1, dtype=dtype),
        running_var=np.ones(cfg.c1, dtype=dtype),
    )
    return BlockParams(
        w_phi=draw(shapes["w_phi"]),
        w_psi=draw(shapes["w_psi"]),
        w_g=draw(shapes["w_g"]),
        w=[draw(s) for s in shapes["w"]],
        bn=bn,
    )


# ---------------------------------------------------------------------------
# generalized operator
# ---------------------------------------------------------------------------

def unified_operator(a, z: np.ndarray, weights: list[np.ndarray]) -> np.ndarray:
    """Z W_1 + A Z W_2 + sum_{k>=2} A^k Z W_{k+1}, by iterated A @ (previous).

    ``a`` may be an AffinityMatrix of any normalization or a plain square
    array; A^k is never materialized.
    """
    a_m = a.m if isinstance(a, AffinityMatrix) else np.asarray(a)
    if len(weights) < 1:
        raise ValueError("unified operator needs at least one weight matrix")
    if a_m.shape[-1] != z.shape[-2]:
        raise ShapeMismatchError(f"affinity {a_m.shape} does not act on signal {z.shape}")
    p = z
    out = p @ weights[0]
    for wk in weights[1:]:
        p = a_m @ p
        out = out + p @ wk
    return out


# ---------------------------------------------------------------------------
# batched affinity construction (production path)
# ---------------------------------------------------------------------------

def _stabilized_kernel(s: np.ndarray, kernel: str, mode: str, eps: float):
    """Kernel response with overflow-safe exp shifts that leave the normalized
    affinity bit-for-bit invariant in exact arithmetic.

    'sym' shifts by the global max (symmetric normalization is invariant to
    a global scale of M), 'row' by per-row max (row-stochastic forms are
    invariant to row scales). Returns (m, m_exp) where m_exp excludes eps.
    """
    if kernel == "dot":
        m_exp = s
        m = s + eps if eps else s
        return m, m_exp
    if mode == "sym":
        shift = s.max(axis=(-2, -1), keepdims=True)
    else:
        shift = s.max(axis=-1, keepdims=True)
    m_exp = np.exp(s - shift)
    m = m_exp + eps if eps else m_exp
    return m, m_exp


def _batch_sym_normalize(m: np.ndarray, cfg: BlockConfig):
    """Vectorized symmetric normalization of a (b, n, n) stack; returns
    (a, d, inv_sqrt) with the degrees kept for the backward pass.

    Whole-module normalization semantics (checks, formulas) match
    :func:`specnl.affinity.normalize_sym`, which stays the single-instance
    reference; unit tests pin the two together.
    """
    mhat = (m + m.swapaxes(-1, -2)) * 0.5
    if cfg.kernel == "dot" and not cfg.allow_indefinite:
        lo = float(mhat.min())
        if lo < 0.0:
            raise IndefiniteAffinityError(
                f"symmetrized affinity has negative entry {lo:.3e}; use a Gaussian-family "
                "kernel or the explicit indefinite override"
            )
    d = mhat.sum(axis=-1)
    if np.any(d <= 0.0):
        raise IsolatedNodeError("symmetrized affinity has a non-positive degree")
    inv_sqrt = 1.0 / np.sqrt(d)
    a = mhat * inv_sqrt[..., :, None]
    a *= inv_sqrt[..., None, :]
    return a, d, inv_sqrt


def _batch_rw_normalize(m: np.ndarray):
    """Vectorized random-walk normalization of a (b, n, n) stack; returns (a, d)."""
    d = m.sum(axis=-1)
    if np.any(d <= 0.0):
        raise IsolatedNodeError("affinity has a non-positive row sum; cannot row-normalize")
    a = m / d[..., None]
    return a, d


def _ensure_batched(x: np.ndarray):
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ShapeMismatchError(f"block input must be (n, c1) or (b, n, c1), got shape {x.shape}")


# ---------------------------------------------------------------------------
# batch normalization over channels
# ---------------------------------------------------------------------------

def batchnorm_forward(h: np.ndarray, bn: BatchNormState, training: bool):
    c = h.shape[-1]
    flat = h.reshape(-1, c)
    if training:
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        bn.running_mean = ((1 - bn.momentum) * bn.running_mean + bn.momentum * mean).astype(
            bn.running_mean.dtype
        )
        bn.running_var = ((1 - bn.momentum) * bn.running_var + bn.momentum * var).astype(
            bn.running_var.dtype
        )
    else:
        mean = bn.running_mean
        var = bn.running_var
    inv_std = 1.0 / np.sqrt(var + bn.eps)
    xhat = (flat - mean) * inv_std
    out = (bn.gamma * xhat + bn.beta).reshape(h.shape)
    cache = {"xhat": xhat, "inv_std": inv_std, "training": training, "shape": h.shape}
    return out, cache


def batchnorm_backward(gout: np.ndarray, bn: BatchNormState, cache: dict):
    """Training-mode adjoint: with m rows, istd = 1/sqrt(var+eps),
    dH = istd/m * (m*dXhat - sum dXhat - Xhat * sum(dXhat*Xhat)), plus
    dGamma = sum G*Xhat, dBeta = sum G."""
    xhat = cache["xhat"]
    inv_std = cache["inv_std"]
    g = gout.reshape(xhat.shape)
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    if not cache["training"]:
        dh = g * (bn.gamma * inv_std)
        return dh.reshape(cache["shape"]), dgamma, dbeta
    m = xhat.shape[0]
    dxhat = g * bn.gamma
    dh = (inv_std / m) * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dh.reshape(cache["shape"]), dgamma, dbeta


# ---------------------------------------------------------------------------
# production forwards
# ---------------------------------------------------------------------------

def forward_block(x: np.ndarray, p: BlockParams, cfg: BlockConfig,
                  training: bool = False) -> tuple[BlockOutput, BlockState]:
    """Full block wiring: embeddings, affinity, aggregation, batch norm, residual."""
    xb, squeeze = _ensure_batched(x)
    if xb.shape[-1] != cfg.c1:
        raise ShapeMismatchError(f"input has {xb.shape[-1]} channels, config says c1={cfg.c1}")
    st = BlockState(cfg=cfg)
    s = st.saved
    s["x"] = xb
    s["squeeze"] = squeeze

    if cfg.variant == "SNL":
        h = _forward_snl_operator(xb, p, cfg, s)
    elif cfg.variant in ("NL", "NS"):
        h = _forward_nl_ns_operator(xb, p, cfg, s)
    elif cfg.variant == "A2":
        h = _forward_a2_operator(xb, p, cfg, s)
    elif cfg.variant == "CGNL":
        h = _forward_cgnl_operator(xb, p, cfg, s)
    else:
        h = _forward_cc_operator(xb, p, cfg, s)

    bn_out, bn_cache = batchnorm_forward(h, p.bn, training)
    s["bn_cache"] = bn_cache
    y = xb + bn_out

    attention = None
    if xb.shape[0] == 1:
        attention = AffinityMatrix(m=s["a"][0], norm=s["a_norm"], kernel=cfg.kernel)
    if squeeze:
        y = y[0]
    return BlockOutput(y=y, attention=attention), st


def forward_snl(x: np.ndarray, p: BlockParams, cfg: BlockConfig,
                training: bool = False) -> BlockOutput:
    """Y = X + BN(Z W1 + A Z W2) with the symmetric-normalized affinity."""
    if cfg.variant != "SNL":
        raise ValueError(f"forward_snl called with variant {cfg.variant!r}")
    out, _ = forward_block(x, p, cfg, training=training)
    return out


def _forward_snl_operator(xb, p, cfg, s):
    phi = xb @ p.w_phi
    psi = xb @ p.w_psi
    z = xb @ p.w_g
    score = cfg.kernel_scale * (phi @ psi.swapaxes(-1, -2))
    m, m_exp = _stabilized_kernel(score, cfg.kernel, "sym", cfg.affinity_eps)
    a, d, inv_sqrt = _batch_sym_normalize(m, cfg)
    agg = a @ z
    h = z @ p.w[0] + agg @ p.w[1]
    s.update(phi=phi, psi=psi, z=z, m_exp=m_exp, a=a, d=d, inv_sqrt=inv_sqrt,
             agg=agg, a_norm=NORM_SYM)
    return h


def _forward_nl_ns_operator(xb, p, cfg, s):
    phi = xb @ p.w_phi
    psi = xb @ p.w_psi
    z = xb @ p.w_g
    score = cfg.kernel_scale * (phi @ psi.swapaxes(-1, -2))
    m, m_exp = _stabilized_kernel(score, cfg.kernel, "row", cfg.affinity_eps)
    a, d = _batch_rw_normalize(m)
    agg = a @ z
    t = agg - z if cfg.variant == "NS" else agg
    h = t @ p.w[0]
    s.update(phi=phi, psi=psi, z=z, m_exp=m_exp, a=a, d=d, agg=agg, t=t, a_norm=NORM_RW)
    return h


def _forward_a2_operator(xb, p, cfg, s):
    z = xb @ p.w_g
    # gather weights: softmax over channels per position; distribution
    # weights: softmax over positions per channel
    pmat = softmax_rows(xb @ p.w_phi)
    qraw = xb @ p.w_psi
    qshift = qraw - qraw.max(axis=-2, keepdims=True)
    qexp = np.exp(qshift)
    qmat = qexp / qexp.sum(axis=-2, keepdims=True)
    mbar = pmat @ qmat.swapaxes(-1, -2)
    agg = mbar @ z
    h = agg @ p.w[0]
    s.update(z=z, a=mbar, agg=agg, a_norm=NORM_SOFTMAX_PRODUCT)
    return h


def _forward_cgnl_operator(xb, p, cfg, s):
    b, n, _ = xb.shape
    z = xb @ p.w_g
    zv = z.reshape(b, n * cfg.cs)
    score = cfg.kernel_scale * (zv[:, :, None] * zv[:, None, :])
    m, m_exp = _stabilized_kernel(score, cfg.kernel, "row", cfg.affinity_eps)
    a, d = _batch_rw_normalize(m)
    o = (a @ zv[:, :, None])[:, :, 0].reshape(b, n, cfg.cs)
    h = o @ p.w[0]
    s.update(z=z, m_exp=m_exp, a=a, d=d, o=o, a_norm=NORM_RW)
    return h


def _forward_cc_operator(xb, p, cfg, s):
    hgt, wid = cfg.spatial
    if hgt * wid != xb.shape[1]:
        raise ShapeMismatchError(
            f"spatial {cfg.spatial} covers {hgt * wid} positions but input has {xb.shape[1]}"
        )
    phi = xb @ p.w_phi
    psi = xb @ p.w_psi
    score = cfg.kernel_scale * (phi @ psi.swapaxes(-1, -2))
    m, m_exp = _stabilized_kernel(score, cfg.kernel, "row", cfg.affinity_eps)
    mask = criss_cross_mask(hgt, wid).c.astype(m.dtype)
    a, d = _batch_rw_normalize(m * mask)
    agg = a @ xb
    h = agg @ p.w[0]
    s.update(phi=phi, psi=psi, m_exp=m_exp, a=a, d=d, agg=agg, a_norm=NORM_MASKED_RW)
    return h


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def block_backward(grad_y: np.ndarray, p: BlockParams, st: BlockState) -> BlockGrads:
    """Exact adjoint of :func:`forward_block` for the trainable variants,
    including the paths through kernel evaluation and normalization (the
    affinity is never treated as a constant)."""
    cfg = st.cfg
    if cfg.variant not in TRAINABLE_VARIANTS:
        raise NotImplementedError(
            f"backward is implemented for {TRAINABLE_VARIANTS}; {cfg.variant} is forward-only"
        )
    s = st.saved
    g = np.asarray(grad_y)
    if s["squeeze"]:
        g = g[None]

    dh, dgamma, dbeta = batchnorm_backward(g, p.bn, s["bn_cache"])
    xb = s["x"]
    z = s["z"]

    if cfg.variant == "SNL":
        agg, a = s["agg"], s["a"]
        dw0 = _flat_outer(z, dh)
        dw1 = _flat_outer(agg, dh)
        dz = dh @ p.w[0].T
        dagg = dh @ p.w[1].T
        da = dagg @ z.swapaxes(-1, -2)
        dz = dz + a @ dagg                     # A symmetric: A^T = A
        dm = _sym_normalize_backward(da, a, s["d"], s["inv_sqrt"])
        dscore = dm * s["m_exp"] if cfg.kernel != "dot" else dm
        dw_list = [dw0, dw1]
    else:  # NL / NS
        a = s["a"]
        t = s["t"]
        dw0 = _flat_outer(t, dh)
        dt = dh @ p.w[0].T
        dagg = dt
        dz = a.swapaxes(-1, -2) @ dagg
        if cfg.variant == "NS":
            dz = dz - dt
        da = dagg @ z.swapaxes(-1, -2)
        dm = _rw_normalize_backward(da, a, s["d"])
        dscore = dm * s["m_exp"] if cfg.kernel != "dot" else dm
        dw_list = [dw0]

    if cfg.kernel_scale != 1.0:
        dscore = dscore * cfg.kernel_scale
    dphi = dscore @ s["psi"]
    dpsi = dscore.swapaxes(-1, -2) @ s["phi"]
    dx = g + dphi @ p.w_phi.T + dpsi @ p.w_psi.T + dz @ p.w_g.T
    dw_phi = _flat_outer(xb, dphi)
    dw_psi = _flat_outer(xb, dpsi)
    dw_g = _flat_outer(xb, dz)

    if s["squeeze"]:
        dx = dx[0]
    return BlockGrads(dx=dx, dw_phi=dw_phi, dw_psi=dw_psi, dw_g=dw_g, dw=dw_list,
                      dgamma=dgamma, dbeta=dbeta)


def _flat_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum over batch and node dims of a[..., c] outer b[..., d] -> (c, d)."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _sym_normalize_backward(da: np.ndarray, a: np.ndarray, d: np.ndarray,
                            inv_sqrt: np.ndarray) -> np.ndarray:
    """Adjoint of M -> D^-1/2 Mhat D^-1/2 with Mhat = (M+M^T)/2, d = Mhat 1.

    dMhat_pq = dA_pq / sqrt(d_p d_q) - u_p,
    u_p = sum_j (dA_pj + dA_jp) A_pj / (2 d_p),
    then dM = (dMhat + dMhat^T) / 2.
    Only d_p depends on row p of Mhat, hence the row-constant correction.
    """
    g_scaled = da * inv_sqrt[..., :, None]
    g_scaled *= inv_sqrt[..., None, :]
    u = ((da + da.swapaxes(-1, -2)) * a).sum(axis=-1) / (2.0 * d)
    dmhat = g_scaled - u[..., :, None]
    return (dmhat + dmhat.swapaxes(-1, -2)) * 0.5


def _rw_normalize_backward(da: np.ndarray, a: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Adjoint of M -> D^-1 M: dM_pq = (dA_pq - sum_j dA_pj A_pj) / d_p."""
    rowdot = (da * a).sum(axis=-1, keepdims=True)
    return (da - rowdot) / d[..., None]


# ---------------------------------------------------------------------------
# reference (definition-style) forwards
# ---------------------------------------------------------------------------

def _kernel_scalar(u: np.ndarray, v: np.ndarray, kernel: str, scale: float = 1.0) -> float:
    dot = scale * float(np.dot(u, v))
    return dot if kernel == "dot" else float(np.exp(dot))


def forward_variant_reference(x: np.ndarray, p: BlockParams, cfg: BlockConfig) -> BlockOutput:
    """Each variant evaluated straight from its defining weighted-mean form,
    position by position, with literal (unstabilized) kernels and no batch
    norm. Deliberately slow and structurally independent of the production
    matrix path; the equivalence suites compare the two.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatchError("reference paths are single-instance: x must be (n, c1)")
    n = x.shape[0]

    if cfg.variant == "SNL":
        phi, psi, z = x @ p.w_phi, x @ p.w_psi, x @ p.w_g
        m = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                m[i, j] = _kernel_scalar(phi[i], psi[j], cfg.kernel, cfg.kernel_scale)
        mhat = (m + m.T) / 2.0
        d = mhat.sum(axis=1)
        a = np.empty_like(mhat)
        for i in range(n):
            for j in range(n):
                a[i, j] = mhat[i, j] / np.sqrt(d[i] * d[j])
        y = x + z @ p.w[0] + (a @ z) @ p.w[1]
        return BlockOutput(y=y, attention=AffinityMatrix(a, NORM_SYM, cfg.kernel))

    if cfg.variant in ("NL", "NS"):
        phi, psi, z = x @ p.w_phi, x @ p.w_psi, x @ p.w_g
        f = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                f[i, j] = _kernel_scalar(phi[i], psi[j], cfg.kernel, cfg.kernel_scale)
        out = np.empty_like(z)
        for i in range(n):
            den = f[i].sum()
            if cfg.variant == "NL":
                num = sum(f[i, j] * z[j] for j in range(n))
            else:
                num = sum(f[i, j] * (z[j] - z[i]) for j in range(n))
            out[i] = num / den
        y = x + out @ p.w[0]
        return BlockOutput(y=y, attention=AffinityMatrix(f / f.sum(1)[:, None], NORM_RW, cfg.kernel))

    if cfg.variant == "A2":
        # gather global descriptors first, then distribute them back
        z = x @ p.w_g
        pmat = softmax_rows(x @ p.w_phi)
        qraw = x @ p.w_psi
        qshift = qraw - qraw.max(axis=0, keepdims=True)
        qexp = np.exp(qshift)
        qmat = qexp / qexp.sum(axis=0, keepdims=True)
        gathered = qmat.T @ z              # (cs, cs) global descriptors
        dist = pmat @ gathered             # distributed back per position
        y = x + dist @ p.w[0]
        return BlockOutput(y=y, attention=AffinityMatrix(pmat @ qmat.T, NORM_SOFTMAX_PRODUCT,
                                                         cfg.kernel))

    if cfg.variant == "CGNL":
        z = x @ p.w_g
        zv = z.reshape(-1)
        nv = zv.shape[0]
        o = np.empty(nv)
        for a_idx in range(nv):
            resp = np.array([_kernel_scalar(zv[a_idx:a_idx + 1], zv[b_idx:b_idx + 1], cfg.kernel, cfg.kernel_scale)
                             for b_idx in range(nv)])
            den = resp.sum()
            if den <= 0:
                raise IsolatedNodeError(f"vec node {a_idx} has non-positive degree {den:.3e}")
            o[a_idx] = (resp * zv).sum() / den
        y = x + o.reshape(n, cfg.cs) @ p.w[0]
        return BlockOutput(y=y, attention=None)

    # CC: aggregate only over same-row/same-column neighbours
    hgt, wid = cfg.spatial
    phi, psi = x @ p.w_phi, x @ p.w_psi
    out = np.empty_like(x)
    a = np.zeros((n, n))
    for i in range(n):
        ri, ci = divmod(i, wid)
        neigh = [j for j in range(n) if j // wid == ri or j % wid == ci]
        resp = np.array([_kernel_scalar(phi[i], psi[j], cfg.kernel, cfg.kernel_scale) for j in neigh])
        den = resp.sum()
        out[i] = sum(r * x[j] for r, j in zip(resp, neigh)) / den
        a[i, neigh] = resp / den
    y = x + out @ p.w[0]
    return BlockOutput(y=y, attention=AffinityMatrix(a, NORM_MASKED_RW, cfg.kernel))


# ---------------------------------------------------------------------------
# parameter and MAC accounting
# ---------------------------------------------------------------------------

def count_params(cfg: BlockConfig) -> int:
    """Learnable weight-matrix entries added by the block (batch-norm scale and
    shift are reported separately by :func:`count_bn_params`)."""
    total = 0
    for shape in _all_shapes(cfg):
        total += shape[0] * shape[1]
    return total


def count_bn_params(cfg: BlockConfig) -> int:
    return 2 * cfg.c1


def _all_shapes(cfg: BlockConfig):
    shapes = variant_matrix_shapes(cfg)
    out = [s for s in (shapes["w_phi"], shapes["w_psi"], shapes["w_g"]) if s is not None]
    out.extend(shapes["w"])
    return out


def count_flops(cfg: BlockConfig, h: int, w: int) -> int:
    """Multiply-accumulate count of one forward pass at spatial extent h x w.

    Convention: every matrix product is counted, including affinity
    construction and aggregation; elementwise work (exp, normalization,
    batch norm) is not. Reported by the CLI in G-MACs.
    """
    n = h * w
    c1, cs = cfg.c1, cfg.cs
    emb = n * c1 * cs
    if cfg.variant == "SNL":
        return 3 * emb + 2 * n * n * cs + 2 * n * cs * c1
    if cfg.variant in ("NL", "NS"):
        return 3 * emb + 2 * n * n * cs + n * cs * c1
    if cfg.variant == "A2":
        return 3 * emb + 2 * n * n * cs + n * cs * c1
    if cfg.variant == "CGNL":
        nv = n * cs
        return emb + 2 * nv * nv + n * cs * c1
    # CC: each position interacts with its h + w - 1 criss-cross neighbours
    neigh = h + w - 1
    return 2 * emb + n * neigh * cs + n * neigh * c1 + n * c1 * c1

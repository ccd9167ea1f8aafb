"""Executable correctness suites: spectral-oracle equivalence, variant
reduction identities, gradient checks, and affinity invariants.

Each suite runs randomized trials at the tolerances the package promises and
returns a :class:`SuiteResult`; the first failing trial's inputs are kept so
the CLI can serialize them for replay. The test suite and the ``verify``
subcommand both run through these functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import affinity as aff_mod
from . import blocks as blk
from .affinity import AffinityMatrix, compute_affinity
from .spectral import ChebCoeffs, GraphFilter, cheb_filter_response, chebyshev_filter, \
    spectral_filter_direct
from .tensor import finite_diff_grad, grad_check_steps, max_rel_err, softmax_rows, sym_eig

ORACLE_TOL = 1e-10
REDUCTION_TOL = 1e-12
GRADIENT_TOL = 1e-5
EIGENRANGE_TOL = 1e-10
SYMMETRY_TOL = 1e-12
PERMUTATION_TOL = 1e-12


@dataclass
class SuiteResult:
    name: str
    passed: bool
    trials: int
    worst: float
    tolerance: float
    detail: str = ""
    failure_payload: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        msg = f"{self.name:<12} {status}  trials={self.trials}  worst={self.worst:.3e}  tol={self.tolerance:.0e}"
        if self.detail:
            msg += f"  ({self.detail})"
        return msg


def _random_sym_affinity(rng: np.random.Generator, n: int, cs: int) -> AffinityMatrix:
    phi = rng.standard_normal((n, cs)) * 0.7
    psi = rng.standard_normal((n, cs)) * 0.7
    return aff_mod.normalize_sym(compute_affinity(phi, psi, "embedded-gaussian"))


# ---------------------------------------------------------------------------
# 1. Chebyshev path vs eigendecomposition oracle
# ---------------------------------------------------------------------------

def suite_oracle(trials: int = 200, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    orders = (1, 2, 3, 5)
    worst = 0.0
    for t in range(trials):
        n = int(rng.integers(2, 17))
        c = int(rng.integers(1, 9))
        k = orders[t % len(orders)]
        a = _random_sym_affinity(rng, n, min(c, 8))
        z = rng.standard_normal((n, c))
        theta = rng.standard_normal(k)
        dec = sym_eig(a.m)
        omega = cheb_filter_response(theta, dec.eigenvalues)
        direct = spectral_filter_direct(a, z, GraphFilter(omega))
        cheb = chebyshev_filter(a, z, ChebCoeffs(theta))
        err = float(np.abs(cheb - direct).max() / max(1.0, np.abs(direct).max()))
        worst = max(worst, err)
        if err >= ORACLE_TOL:
            return SuiteResult("oracle", False, t + 1, worst, ORACLE_TOL,
                               detail=f"trial {t}, n={n}, K={k}",
                               failure_payload={"a": a.m, "z": z, "theta": theta})
    return SuiteResult("oracle", True, trials, worst, ORACLE_TOL)


# ---------------------------------------------------------------------------
# 2. variant reduction identities (reference form == unified instantiation)
# ---------------------------------------------------------------------------

def _unified_instantiation(variant: str, x: np.ndarray, p: blk.BlockParams,
                           cfg: blk.BlockConfig) -> np.ndarray:
    """Build the variant's Table-of-variants affinity via the affinity module
    and evaluate the generalized operator with the listed weight slots."""
    zeros = np.zeros_like(p.w[0])
    if variant == "SNL":
        a = aff_mod.normalize_sym(compute_affinity(x @ p.w_phi, x @ p.w_psi, cfg.kernel))
        return x + blk.unified_operator(a, x @ p.w_g, [p.w[0], p.w[1]])
    if variant == "NL":
        a = aff_mod.normalize_rw(compute_affinity(x @ p.w_phi, x @ p.w_psi, cfg.kernel))
        return x + blk.unified_operator(a, x @ p.w_g, [zeros, p.w[0]])
    if variant == "NS":
        a = aff_mod.normalize_rw(compute_affinity(x @ p.w_phi, x @ p.w_psi, cfg.kernel))
        return x + blk.unified_operator(a, x @ p.w_g, [-p.w[0], p.w[0]])
    if variant == "A2":
        pmat = softmax_rows(x @ p.w_phi)
        qraw = x @ p.w_psi
        qexp = np.exp(qraw - qraw.max(axis=0, keepdims=True))
        qmat = qexp / qexp.sum(axis=0, keepdims=True)
        mbar = AffinityMatrix(pmat @ qmat.T, aff_mod.NORM_SOFTMAX_PRODUCT, cfg.kernel)
        return x + blk.unified_operator(mbar, x @ p.w_g, [zeros, p.w[0]])
    if variant == "CGNL":
        z = x @ p.w_g
        zv = z.reshape(-1, 1)
        raw = AffinityMatrix(np.exp(zv @ zv.T) if cfg.kernel != "dot" else zv @ zv.T,
                             aff_mod.NORM_RAW, cfg.kernel)
        a = aff_mod.normalize_rw(raw)
        one = np.ones((1, 1))
        o = blk.unified_operator(a, zv, [np.zeros((1, 1)), one])
        return x + o.reshape(z.shape) @ p.w[0]
    if variant == "CC":
        mask = aff_mod.criss_cross_mask(*cfg.spatial)
        raw = compute_affinity(x @ p.w_phi, x @ p.w_psi, cfg.kernel)
        a = aff_mod.normalize_masked_rw(raw, mask)
        zeros_cc = np.zeros_like(p.w[0])
        return x + blk.unified_operator(a, x, [zeros_cc, p.w[0]])
    raise ValueError(variant)


def _reduction_case(variant: str, rng: np.random.Generator):
    if variant == "CC":
        h = int(rng.integers(2, 5))
        w = int(rng.integers(2, 5))
        n = h * w
        spatial = (h, w)
    else:
        n = int(rng.integers(2, 13))
        spatial = None
    c1 = int(rng.integers(2, 9))
    cs = int(rng.integers(1, c1 + 1))
    kernel = "gaussian" if variant == "CGNL" else "embedded-gaussian"
    cfg = blk.BlockConfig(variant=variant, c1=c1, cs=cs, kernel=kernel, spatial=spatial)
    p = blk.init_block_params(cfg, rng)
    x = rng.standard_normal((n, c1)) * 0.6
    return cfg, p, x


def suite_reductions(trials: int = 200, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for variant in blk.VARIANTS:
        for t in range(trials):
            cfg, p, x = _reduction_case(variant, rng)
            ref = blk.forward_variant_reference(x, p, cfg).y
            uni = _unified_instantiation(variant, x, p, cfg)
            err = float(np.abs(ref - uni).max())
            worst = max(worst, err)
            if err >= REDUCTION_TOL:
                return SuiteResult("reductions", False, t + 1, worst, REDUCTION_TOL,
                                   detail=f"variant {variant}, trial {t}",
                                   failure_payload={"x": x})
    return SuiteResult("reductions", True, trials * len(blk.VARIANTS), worst, REDUCTION_TOL)


# ---------------------------------------------------------------------------
# 3. SNL gradients vs central finite differences
# ---------------------------------------------------------------------------

def _snl_instance(rng: np.random.Generator):
    n = int(rng.integers(4, 9))
    c1 = int(rng.integers(2, 5))
    cs = int(rng.integers(1, c1 + 1))
    cfg = blk.BlockConfig(variant="SNL", c1=c1, cs=cs)
    p = blk.init_block_params(cfg, rng)
    x = rng.standard_normal((n, c1)) * 0.8
    weighting = rng.standard_normal((n, c1))
    return cfg, p, x, weighting


def _clone_params(p: blk.BlockParams) -> blk.BlockParams:
    bn = blk.BatchNormState(gamma=p.bn.gamma.copy(), beta=p.bn.beta.copy(),
                            running_mean=p.bn.running_mean.copy(),
                            running_var=p.bn.running_var.copy(),
                            eps=p.bn.eps, momentum=p.bn.momentum)
    return blk.BlockParams(
        w_phi=None if p.w_phi is None else p.w_phi.copy(),
        w_psi=None if p.w_psi is None else p.w_psi.copy(),
        w_g=None if p.w_g is None else p.w_g.copy(),
        w=[w.copy() for w in p.w],
        bn=bn,
    )


def snl_gradient_errors(cfg, p, x, weighting) -> dict[str, float]:
    """Relative error of every analytic gradient of sum(weighting * Y) against
    central differences, including paths through kernel and normalization."""

    def loss_with(params: blk.BlockParams, xs: np.ndarray) -> float:
        out, _ = blk.forward_block(xs, params, cfg, training=True)
        return float((weighting * out.y).sum())

    out, st = blk.forward_block(x, p, cfg, training=True)
    grads = blk.block_backward(weighting, p, st)

    errs: dict[str, float] = {}

    def fd_param(name: str, analytic: np.ndarray, getter, setter):
        base = getter(p)

        def f(v):
            q = _clone_params(p)
            setter(q, v.reshape(base.shape))
            return loss_with(q, x)

        fd = finite_diff_grad(f, base, grad_check_steps(base))
        errs[name] = max_rel_err(analytic, fd)

    fd_param("w_phi", grads.dw_phi, lambda q: q.w_phi, lambda q, v: setattr(q, "w_phi", v))
    fd_param("w_psi", grads.dw_psi, lambda q: q.w_psi, lambda q, v: setattr(q, "w_psi", v))
    fd_param("w_g", grads.dw_g, lambda q: q.w_g, lambda q, v: setattr(q, "w_g", v))
    fd_param("w0", grads.dw[0], lambda q: q.w[0], lambda q, v: q.w.__setitem__(0, v))
    fd_param("w1", grads.dw[1], lambda q: q.w[1], lambda q, v: q.w.__setitem__(1, v))
    fd_param("bn_gamma", grads.dgamma, lambda q: q.bn.gamma,
             lambda q, v: setattr(q.bn, "gamma", v))
    fd_param("bn_beta", grads.dbeta, lambda q: q.bn.beta,
             lambda q, v: setattr(q.bn, "beta", v))

    fd_x = finite_diff_grad(lambda v: loss_with(p, v.reshape(x.shape)), x, grad_check_steps(x))
    errs["x"] = max_rel_err(grads.dx, fd_x)
    return errs


def suite_gradients(instances: int = 20, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(instances):
        cfg, p, x, weighting = _snl_instance(rng)
        errs = snl_gradient_errors(cfg, p, x, weighting)
        bad = max(errs.values())
        worst = max(worst, bad)
        if bad >= GRADIENT_TOL:
            name = max(errs, key=errs.get)
            return SuiteResult("gradients", False, t + 1, worst, GRADIENT_TOL,
                               detail=f"trial {t}, worst parameter {name}",
                               failure_payload={"x": x})
    return SuiteResult("gradients", True, instances, worst, GRADIENT_TOL)


# ---------------------------------------------------------------------------
# 4. affinity invariants, residual contract, permutation equivariance
# ---------------------------------------------------------------------------

def suite_invariants(trials: int = 500, seed: int = 0) -> SuiteResult:
    """On every SNL forward: attention symmetric within 1e-12, entrywise
    non-negative, eigenvalues within [-1, 1] (+1e-10); the induced normalized
    Laplacian I - A keeps its spectrum in [0, 2]."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(trials):
        n = int(rng.integers(2, 13))
        c1 = int(rng.integers(2, 7))
        cs = int(rng.integers(1, c1 + 1))
        cfg = blk.BlockConfig(variant="SNL", c1=c1, cs=cs)
        p = blk.init_block_params(cfg, rng)
        x = rng.standard_normal((n, c1))
        _, st = blk.forward_block(x, p, cfg, training=True)
        a = st.saved["a"][0]
        asym = float(np.abs(a - a.T).max())
        neg = max(0.0, float(-a.min()))
        lam = sym_eig(a).eigenvalues
        over = max(0.0, float(lam.max() - 1.0), float(-1.0 - lam.min()))
        lap = 1.0 - lam  # spectrum of I - A
        lap_over = max(0.0, float(lap.max() - 2.0), float(-lap.min()))
        # worst = largest measured/allowed ratio across the four constraints
        score = max(asym / SYMMETRY_TOL, over / EIGENRANGE_TOL, lap_over / EIGENRANGE_TOL)
        worst = max(worst, score)
        if asym > SYMMETRY_TOL or neg > 0.0 or over > EIGENRANGE_TOL or lap_over > EIGENRANGE_TOL:
            return SuiteResult("invariants", False, t + 1, worst, 1.0,
                               detail=f"trial {t}: asym={asym:.2e} neg={neg:.2e} "
                                      f"eig-over={over:.2e} lap-over={lap_over:.2e}",
                               failure_payload={"x": x, "a": a})
    return SuiteResult("invariants", True, trials, worst, 1.0,
                       detail="worst is max constraint ratio")


def suite_residual_permutation(trials: int = 500, seed: int = 0) -> SuiteResult:
    """Zero filter weights give Y == X bit-exactly (identity batch norm in
    inference mode); permuting nodes commutes with every unmasked variant."""
    rng = np.random.default_rng(seed)
    unmasked = ("NL", "NS", "A2", "CGNL", "SNL")
    worst = 0.0
    for t in range(trials):
        variant = unmasked[t % len(unmasked)]
        n = int(rng.integers(2, 11))
        c1 = int(rng.integers(2, 7))
        cs = int(rng.integers(1, c1 + 1))
        kernel = "gaussian" if variant == "CGNL" else "embedded-gaussian"
        cfg = blk.BlockConfig(variant=variant, c1=c1, cs=cs, kernel=kernel,
                              affinity_eps=1e-12)
        p = blk.init_block_params(cfg, rng)
        x = rng.standard_normal((n, c1))

        zeroed = _clone_params(p)
        zeroed.w = [np.zeros_like(w) for w in zeroed.w]
        out0, _ = blk.forward_block(x, zeroed, cfg, training=False)
        if not np.array_equal(out0.y, x):
            return SuiteResult("residual-perm", False, t + 1, np.inf, PERMUTATION_TOL,
                               detail=f"residual not bit-exact for {variant}, trial {t}",
                               failure_payload={"x": x})

        perm = rng.permutation(n)
        y1, _ = blk.forward_block(x, p, cfg, training=True)
        y2, _ = blk.forward_block(x[perm], p, cfg, training=True)
        err = float(np.abs(y1.y[perm] - y2.y).max())
        worst = max(worst, err)
        if err >= PERMUTATION_TOL:
            return SuiteResult("residual-perm", False, t + 1, worst, PERMUTATION_TOL,
                               detail=f"equivariance broken for {variant}, trial {t}",
                               failure_payload={"x": x, "perm": perm.astype(np.float64)})
    return SuiteResult("residual-perm", True, trials, worst, PERMUTATION_TOL)


SUITES = {
    "oracle": suite_oracle,
    "reductions": suite_reductions,
    "gradients": suite_gradients,
    "invariants": suite_invariants,
    "residual-perm": suite_residual_permutation,
}


def run_suites(names=None, trials: int | None = None, seed: int = 0) -> list[SuiteResult]:
    names = list(SUITES) if not names else list(names)
    results = []
    for name in names:
        fn = SUITES[name]
        results.append(fn(trials, seed) if trials else fn(seed=seed))
    return results

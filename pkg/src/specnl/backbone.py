"""Three-stage convolutional backbone with a pluggable nonlocal block.

Stand-in for a deep residual network at desk scale: each stage is one 3x3
stride-2 convolution + ReLU (widths 16/32/64), followed by global average
pooling and a linear head. The receptive field at stage 3 is 15x15, small
enough that widely separated image content can only interact through an
inserted block.

All layers are forward/backward pairs over plain float arrays; parameters
live in a flat name->array dict so the optimizer and checkpoint code stay
generic. Batch-norm running statistics live in a separate buffers dict.
"""

from __future__ import annotations

import numpy as np

from .blocks import (
    BatchNormState,
    BlockConfig,
    BlockParams,
    block_backward,
    forward_block,
    variant_matrix_shapes,
)

STAGE_WIDTHS = (16, 32, 64)


def _im2col(x: np.ndarray, stride: int):
    """Gather 3x3/pad-1 patches into one contiguous (b*ho*wo, ci*9) matrix."""
    bsz, ci, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho = (h + 2 - 3) // stride + 1
    wo = (wd + 2 - 3) // stride + 1
    sb, sc, sh, sw = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(bsz, ci, ho, wo, 3, 3),
        strides=(sb, sc, sh * stride, sw * stride, sh, sw), writeable=False)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(bsz * ho * wo, ci * 9), (ho, wo)


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int,
                    cols=None) -> np.ndarray:
    """3x3 convolution, padding 1, as a single im2col matmul."""
    bsz, ci = x.shape[:2]
    co = w.shape[0]
    if cols is None:
        cols, (ho, wo) = _im2col(x, stride)
    else:
        cols, (ho, wo) = cols
    out = cols @ w.reshape(co, ci * 9).T + b
    return out.reshape(bsz, ho, wo, co).transpose(0, 3, 1, 2)


def conv3x3_backward(g: np.ndarray, x: np.ndarray, w: np.ndarray, stride: int,
                     cols=None, need_dx: bool = True):
    bsz, ci, h, wd = x.shape
    co, _, _, _ = w.shape
    ho, wo = g.shape[2], g.shape[3]
    if cols is None:
        cols = _im2col(x, stride)
    cols = cols[0]
    gflat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, co)
    dw = (gflat.T @ cols).reshape(co, ci, 3, 3)
    db = gflat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (gflat @ w.reshape(co, ci * 9)).reshape(bsz, ho, wo, ci, 3, 3)
    # scatter channels-last so the innermost axis stays contiguous
    dxp = np.zeros((bsz, h + 2, wd + 2, ci), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            dxp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride, :] += \
                dcols[:, :, :, :, di, dj]
    return np.ascontiguousarray(dxp[:, 1:h + 1, 1:wd + 1, :].transpose(0, 3, 1, 2)), dw, db


def init_backbone(classes: int, block_cfg: BlockConfig | None, insertion_stage: int,
                  rng: np.random.Generator, dtype=np.float32):
    """He-initialized parameters and (for a block) batch-norm buffers."""
    params: dict[str, np.ndarray] = {}
    ci = 1
    for idx, co in enumerate(STAGE_WIDTHS, start=1):
        fan_in = ci * 9
        params[f"conv{idx}.w"] = (rng.standard_normal((co, ci, 3, 3))
                                  * np.sqrt(2.0 / fan_in)).astype(dtype)
        params[f"conv{idx}.b"] = np.zeros(co, dtype=dtype)
        ci = co
    params["head.w"] = (rng.standard_normal((STAGE_WIDTHS[-1], classes))
                        / np.sqrt(STAGE_WIDTHS[-1])).astype(dtype)
    params["head.b"] = np.zeros(classes, dtype=dtype)

    buffers: dict[str, np.ndarray] = {}
    if block_cfg is not None:
        if block_cfg.c1 != STAGE_WIDTHS[insertion_stage - 1]:
            raise ValueError(
                f"block c1={block_cfg.c1} must match stage {insertion_stage} width "
                f"{STAGE_WIDTHS[insertion_stage - 1]}"
            )
        shapes = variant_matrix_shapes(block_cfg)
        for name in ("w_phi", "w_psi", "w_g"):
            shp = shapes[name]
            if shp is not None:
                params[f"block.{name}"] = (rng.standard_normal(shp)
                                           / np.sqrt(shp[0])).astype(dtype)
        for k, shp in enumerate(shapes["w"]):
            params[f"block.w{k}"] = (rng.standard_normal(shp)
                                     / np.sqrt(shp[0])).astype(dtype)
        params["block.bn_gamma"] = np.ones(block_cfg.c1, dtype=dtype)
        params["block.bn_beta"] = np.zeros(block_cfg.c1, dtype=dtype)
        buffers["block.bn_mean"] = np.zeros(block_cfg.c1, dtype=dtype)
        buffers["block.bn_var"] = np.ones(block_cfg.c1, dtype=dtype)
    return params, buffers


def _block_params_view(params: dict, buffers: dict, cfg: BlockConfig) -> BlockParams:
    bn = BatchNormState(
        gamma=params["block.bn_gamma"],
        beta=params["block.bn_beta"],
        running_mean=buffers["block.bn_mean"],
        running_var=buffers["block.bn_var"],
    )
    shapes = variant_matrix_shapes(cfg)
    return BlockParams(
        w_phi=params.get("block.w_phi"),
        w_psi=params.get("block.w_psi"),
        w_g=params.get("block.w_g"),
        w=[params[f"block.w{k}"] for k in range(len(shapes["w"]))],
        bn=bn,
    )


def backbone_forward(params: dict, buffers: dict, x: np.ndarray, classes: int,
                     block_cfg: BlockConfig | None, insertion_stage: int,
                     training: bool):
    """Returns (logits, cache); feature maps are (b, c, h, w) throughout."""
    cache: dict = {"x": x, "block": None}
    h = x
    for idx in range(1, 4):
        cols = _im2col(h, 2)
        pre = conv3x3_forward(h, params[f"conv{idx}.w"], params[f"conv{idx}.b"],
                              stride=2, cols=cols)
        act = np.maximum(pre, 0.0)
        cache[f"in{idx}"] = h
        cache[f"cols{idx}"] = cols
        cache[f"pre{idx}"] = pre
        h = act
        if block_cfg is not None and insertion_stage == idx:
            bsz, c, fh, fw = h.shape
            nodes = h.transpose(0, 2, 3, 1).reshape(bsz, fh * fw, c)
            bp = _block_params_view(params, buffers, block_cfg)
            out, bst = forward_block(nodes, bp, block_cfg, training=training)
            # batchnorm_forward rebinds running stats rather than mutating
            buffers["block.bn_mean"] = bp.bn.running_mean
            buffers["block.bn_var"] = bp.bn.running_var
            cache["block"] = bst
            cache["block_spatial"] = (fh, fw)
            h = out.y.reshape(bsz, fh, fw, c).transpose(0, 3, 1, 2)
        cache[f"act{idx}"] = h
    pooled = h.mean(axis=(2, 3))
    cache["pooled_from"] = h.shape
    cache["pooled"] = pooled
    logits = pooled @ params["head.w"] + params["head.b"]
    return logits, cache


def backbone_backward(params: dict, buffers: dict, cache: dict, dlogits: np.ndarray,
                      block_cfg: BlockConfig | None, insertion_stage: int) -> dict:
    grads: dict[str, np.ndarray] = {}
    pooled = cache["pooled"]
    grads["head.w"] = pooled.T @ dlogits
    grads["head.b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ params["head.w"].T
    bsz, c, fh, fw = cache["pooled_from"]
    dh = np.broadcast_to(dpooled[:, :, None, None], (bsz, c, fh, fw)) / (fh * fw)
    dh = np.ascontiguousarray(dh, dtype=pooled.dtype)

    for idx in range(3, 0, -1):
        if block_cfg is not None and insertion_stage == idx:
            bfh, bfw = cache["block_spatial"]
            b2 = dh.shape[0]
            gnodes = dh.transpose(0, 2, 3, 1).reshape(b2, bfh * bfw, -1)
            bp = _block_params_view(params, buffers, block_cfg)
            bg = block_backward(gnodes, bp, cache["block"])
            for name, val in (("w_phi", bg.dw_phi), ("w_psi", bg.dw_psi), ("w_g", bg.dw_g)):
                if val is not None:
                    grads[f"block.{name}"] = val
            for k, val in enumerate(bg.dw):
                grads[f"block.w{k}"] = val
            grads["block.bn_gamma"] = bg.dgamma
            grads["block.bn_beta"] = bg.dbeta
            dh = bg.dx.reshape(b2, bfh, bfw, -1).transpose(0, 3, 1, 2)
        dpre = dh * (cache[f"pre{idx}"] > 0)
        dh, dw, db = conv3x3_backward(dpre, cache[f"in{idx}"], params[f"conv{idx}.w"],
                                      stride=2, cols=cache[f"cols{idx}"],
                                      need_dx=idx > 1)
        grads[f"conv{idx}.w"] = dw
        grads[f"conv{idx}.b"] = db
    return grads

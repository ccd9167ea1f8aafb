"""Desk-scale supervised training on a synthetic long-range dependency task.

Each image carries two small motif stamps in opposite halves, far enough
apart that no stage-3 receptive field of the plain backbone sees both. The
label is the graded mismatch (left_id - right_id) mod classes, a function
of the motif pair only, so any model beating chance-plus-epsilon has to
combine information across the gap.

Training is plain SGD with momentum and coupled weight decay
(v <- mu v + g + wd*theta; theta <- theta - lr v), a step-decay schedule,
and is bit-deterministic for a fixed seed when run single-threaded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .backbone import backbone_backward, backbone_forward, init_backbone
from .blocks import BlockConfig
from .config import ExperimentConfig, TaskSpec


class TrainingDiverged(RuntimeError):
    """Raised on non-finite loss or gradients; carries the last good state."""

    def __init__(self, message, epoch, history, state):
        super().__init__(message)
        self.epoch = epoch
        self.history = history
        self.state = state


@dataclass
class TrainState:
    params: dict
    buffers: dict
    velocity: dict
    step: int = 0
    epoch: int = 0
    seed: int = 0

    def snapshot(self) -> "TrainState":
        return TrainState(
            params={k: v.copy() for k, v in self.params.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
            velocity={k: v.copy() for k, v in self.velocity.items()},
            step=self.step,
            epoch=self.epoch,
            seed=self.seed,
        )


@dataclass
class TrainResult:
    history: list = field(default_factory=list)   # rows: (epoch, lr, loss, top1, top5)
    state: TrainState | None = None
    diverged: bool = False
    abort_reason: str = ""


# ---------------------------------------------------------------------------
# synthetic task
# ---------------------------------------------------------------------------

def motif_patterns(task: TaskSpec) -> np.ndarray:
    """The fixed bank of +-1 motif stamps, one per class, shared by every
    dataset drawn for this task."""
    rng = np.random.default_rng(task.pattern_seed)
    while True:
        pats = rng.choice([-1.0, 1.0], size=(task.classes, task.motif_size, task.motif_size))
        flat = {p.tobytes() for p in pats}
        if len(flat) == task.classes:
            return pats.astype(np.float32)


def _placement_regions(task: TaskSpec):
    """Top-left corner ranges for the two stamps. The horizontal span between
    the left stamp's last column and the right stamp's first column is kept
    > 15 px, so no 15x15 receptive field (stage 3 of the plain backbone) can
    cover parts of both."""
    s, ms = task.image_size, task.motif_size
    min_gap = 15
    rc1 = s - ms - 1
    rc0 = max(rc1 - 2, 1)
    left_hi = rc0 - min_gap - ms
    if left_hi < 1:
        raise ValueError(
            f"image_size={s} too small to separate two {ms}x{ms} motifs by {min_gap} px"
        )
    row_lo, row_hi = 1, s - ms - 1
    return (row_lo, row_hi, 1, left_hi), (row_lo, row_hi, rc0, rc1)


def generate_synth(task: TaskSpec, n: int, seed: int):
    """Reproducible dataset of (images (n,1,s,s) f32, labels (n,) i64).

    Labels are assigned round-robin, so class counts are balanced within 1.
    label = |left_motif - right_motif|, the mismatch degree of the pair;
    0 means the stamps match. The label is a function of both stamps and of
    neither alone.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 samples, got {n}")
    pats = motif_patterns(task)
    (lr0, lr1, lc0, lc1), (rr0, rr1, rc0, rc1) = _placement_regions(task)
    rng = np.random.default_rng(seed)
    s, ms = task.image_size, task.motif_size
    images = (task.noise * rng.standard_normal((n, 1, s, s))).astype(np.float32)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        label = i % task.classes
        lo = int(rng.integers(task.classes - label))
        pair = (lo, lo + label)
        if rng.integers(2):
            pair = (pair[1], pair[0])
        m_left, m_right = pair
        r1 = int(rng.integers(lr0, lr1 + 1))
        c1 = int(rng.integers(lc0, lc1 + 1))
        r2 = int(rng.integers(rr0, rr1 + 1))
        c2 = int(rng.integers(rc0, rc1 + 1))
        images[i, 0, r1:r1 + ms, c1:c1 + ms] += task.amplitude * pats[m_left]
        images[i, 0, r2:r2 + ms, c2:c2 + ms] += task.amplitude * pats[m_right]
        labels[i] = label
    return images, labels


# ---------------------------------------------------------------------------
# loss, metrics, optimizer
# ---------------------------------------------------------------------------

def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy from logits (log-sum-exp stabilized) and its gradient."""
    b = logits.shape[0]
    shift = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=1, keepdims=True))
    logp = shift - lse
    loss = -float(logp[np.arange(b), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(b), labels] -= 1.0
    return loss, (dlogits / b).astype(logits.dtype)


def evaluate_topk(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose label ranks in the top k logits.

    Ties resolve in favour of the lowest class index: a tied competitor
    outranks the label only if its index is lower.
    """
    if k > logits.shape[1]:
        raise ValueError(f"k={k} exceeds class count {logits.shape[1]}")
    rows = np.arange(logits.shape[0])
    target = logits[rows, labels]
    stronger = (logits > target[:, None]).sum(axis=1)
    tied_lower = ((logits == target[:, None]) & (np.arange(logits.shape[1]) < labels[:, None])).sum(axis=1)
    rank = stronger + tied_lower
    return float((rank < k).mean())


def sgd_step(params: dict, grads: dict, velocity: dict, lr: float,
             momentum: float, weight_decay: float) -> None:
    """v <- mu v + g + wd*theta; theta <- theta - lr v (in place, fixed key order)."""
    for name in sorted(params):
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name!r}")
        v = velocity[name]
        v *= momentum
        v += g + weight_decay * params[name]
        params[name] -= lr * v


def lr_at_epoch(opt, epoch: int) -> float:
    lr = opt.lr
    for e in opt.decay_epochs:
        if epoch >= e:
            lr *= opt.decay_factor
    return lr


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _block_config_from(cfg: ExperimentConfig) -> BlockConfig | None:
    if cfg.variant == "none":
        return None
    return BlockConfig(
        variant=cfg.variant,
        c1=cfg.c1,
        cs=cfg.cs,
        kernel=cfg.kernel,
        k_order=cfg.k_order,
        spatial=_cc_spatial(cfg) if cfg.variant == "CC" else None,
        allow_indefinite=cfg.allow_indefinite,
        affinity_eps=1e-12,
        kernel_scale=cfg.kernel_scale,
    )


def _cc_spatial(cfg: ExperimentConfig) -> tuple[int, int]:
    side = cfg.task.image_size
    for _ in range(cfg.insertion_stage):
        side = (side + 2 - 3) // 2 + 1
    return side, side


def evaluate_model(state: TrainState, images, labels, classes, block_cfg, stage,
                   batch: int = 256):
    hits1 = hits5 = 0
    for lo in range(0, images.shape[0], batch):
        xs = images[lo:lo + batch]
        ys = labels[lo:lo + batch]
        logits, _ = backbone_forward(state.params, state.buffers, xs, classes,
                                     block_cfg, stage, training=False)
        hits1 += evaluate_topk(logits, ys, 1) * len(ys)
        hits5 += evaluate_topk(logits, ys, min(5, classes)) * len(ys)
    n = images.shape[0]
    return hits1 / n, hits5 / n


def train(cfg: ExperimentConfig) -> TrainResult:
    """Run the configured experiment; returns per-epoch history and final state.

    Deterministic for a fixed config+seed; with strict_deterministic the
    whole loop runs under a single BLAS thread so metrics are bit-identical
    across runs.
    """
    limit = 1 if cfg.strict_deterministic else None
    with threadpool_limits(limits=limit):
        return _train_inner(cfg)


def _train_inner(cfg: ExperimentConfig) -> TrainResult:
    block_cfg = _block_config_from(cfg)
    stage = cfg.insertion_stage
    classes = cfg.task.classes

    ss = np.random.SeedSequence(cfg.seed)
    init_seed, data_seed, test_seed, shuffle_seed = ss.spawn(4)
    params, buffers = init_backbone(classes, block_cfg, stage,
                                    np.random.default_rng(init_seed))
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    state = TrainState(params=params, buffers=buffers, velocity=velocity, seed=cfg.seed)

    train_x, train_y = generate_synth(cfg.task, cfg.task.train_size, _seed_int(data_seed))
    test_x, test_y = generate_synth(cfg.task, cfg.task.test_size, _seed_int(test_seed))
    shuffle_rng = np.random.default_rng(shuffle_seed)

    result = TrainResult()
    last_good = state.snapshot()
    opt = cfg.optimizer
    for epoch in range(1, opt.epochs + 1):
        lr = lr_at_epoch(opt, epoch)
        order = shuffle_rng.permutation(cfg.task.train_size)
        losses = []
        try:
            for lo in range(0, cfg.task.train_size, opt.batch_size):
                idx = order[lo:lo + opt.batch_size]
                logits, cache = backbone_forward(state.params, state.buffers,
                                                 train_x[idx], classes, block_cfg,
                                                 stage, training=True)
                loss, dlogits = cross_entropy(logits, train_y[idx])
                if not np.isfinite(loss):
                    raise FloatingPointError(f"non-finite loss {loss!r}")
                grads = backbone_backward(state.params, state.buffers, cache, dlogits,
                                          block_cfg, stage)
                sgd_step(state.params, grads, state.velocity, lr,
                         opt.momentum, opt.weight_decay)
                state.step += 1
                losses.append(loss)
        except FloatingPointError as err:
            raise TrainingDiverged(
                f"training aborted at epoch {epoch}, step {state.step}: {err}",
                epoch=epoch, history=result.history, state=last_good,
            ) from err
        state.epoch = epoch
        top1, top5 = evaluate_model(state, test_x, test_y, classes, block_cfg, stage)
        result.history.append((epoch, lr, float(np.mean(losses)) if losses else 0.0,
                               top1, top5))
        last_good = state.snapshot()
    result.state = state
    return result


def _seed_int(seed_seq: np.random.SeedSequence) -> int:
    return int(seed_seq.generate_state(1, dtype=np.uint64)[0])

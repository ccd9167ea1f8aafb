"""Atomic file writes, per-directory lockfiles, metrics CSV, and PGM heatmaps."""

from __future__ import annotations

import contextlib
import os
import tempfile

import numpy as np

METRICS_HEADER = "epoch,lr,train_loss,top1,top5"


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write-temp-then-rename so interrupted runs never leave torn files."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class OutputDirLocked(RuntimeError):
    pass


@contextlib.contextmanager
def output_lock(directory: str):
    """Exclusive per-directory lock (O_CREAT|O_EXCL sentinel holding the pid)."""
    os.makedirs(directory, exist_ok=True)
    lock_path = os.path.join(directory, ".specnl.lock")
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputDirLocked(
            f"output directory {directory!r} is locked by another run "
            f"(remove {lock_path} if that run is dead)"
        )
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(OSError):
            os.unlink(lock_path)


def format_metrics_csv(history) -> str:
    """Stable CSV schema: epoch,lr,train_loss,top1,top5 (column order is API)."""
    lines = [METRICS_HEADER]
    for epoch, lr, loss, top1, top5 in history:
        lines.append(f"{epoch},{lr!r},{loss!r},{top1!r},{top5!r}")
    return "\n".join(lines) + "\n"


def write_metrics_csv(path: str, history) -> None:
    atomic_write_text(path, format_metrics_csv(history))


def write_pgm(path: str, image: np.ndarray) -> None:
    """Binary PGM (P5), 8-bit, min-max scaled; a constant image maps to mid-gray."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM export needs a 2-d image, got shape {img.shape}")
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        scaled = np.round((img - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.full_like(img, 128.0)
    data = scaled.astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + data.tobytes())


def export_attention_maps(a: np.ndarray, h: int, w: int, positions, out_dir: str,
                          prefix: str = "attn") -> list[str]:
    """One PGM heatmap + one raw-value CSV per query position.

    Row ``i`` of the affinity is reshaped to the (h, w) feature-map grid.
    Returns the list of files written.
    """
    a = np.asarray(a)
    n = h * w
    if a.shape != (n, n):
        raise ValueError(f"affinity shape {a.shape} does not match {h}x{w} grid")
    written = []
    for pos in positions:
        if not 0 <= pos < n:
            raise ValueError(f"position {pos} out of range; valid range is 0..{n - 1}")
        heat = a[pos].reshape(h, w)
        pgm_path = os.path.join(out_dir, f"{prefix}_pos{pos}.pgm")
        csv_path = os.path.join(out_dir, f"{prefix}_pos{pos}.csv")
        write_pgm(pgm_path, heat)
        rows = "\n".join(",".join(repr(float(v)) for v in row) for row in heat)
        atomic_write_text(csv_path, rows + "\n")
        written.extend([pgm_path, csv_path])
    return written

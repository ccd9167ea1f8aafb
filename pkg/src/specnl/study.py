"""Desk-scale benefit study: plain backbone vs NL vs SNL over several seeds.

Runs are independent and seeded, so they can execute in parallel worker
processes without affecting results. Each worker pins its BLAS pool to one
thread; the matrices here are small enough that parallelism across runs
beats parallelism inside them.
"""

from __future__ import annotations

import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context

from threadpoolctl import threadpool_limits

from .config import config_from_dict
from .train import train

STUDY_VARIANTS = ("none", "NL", "SNL")

#: experiment used by the study; block attends over the 7x7 stage-2 grid,
#: kernel responses tempered so attention stays trainable from cold start
STUDY_BASE = {
    "output_dir": "unused",
    "insertion_stage": 2,
    "kernel_scale": 0.1,
    "task": {"image_size": 28, "classes": 10, "train_size": 8000, "test_size": 2000},
    "optimizer": {"epochs": 30},
}


def study_config(variant: str, seed: int, train_size: int | None = None,
                 test_size: int | None = None, epochs: int | None = None) -> dict:
    doc = {
        "seed": seed,
        "variant": variant,
        **{k: (dict(v) if isinstance(v, dict) else v) for k, v in STUDY_BASE.items()},
    }
    if variant != "none":
        doc["c1"] = 32
        doc["cs"] = 16
    if train_size is not None:
        doc["task"]["train_size"] = train_size
    if test_size is not None:
        doc["task"]["test_size"] = test_size
    if epochs is not None:
        doc["optimizer"]["epochs"] = epochs
    return doc


@dataclass
class StudyRun:
    variant: str
    seed: int
    final_top1: float
    final_top5: float
    history: list


@dataclass
class StudyResult:
    runs: list[StudyRun] = field(default_factory=list)

    def median_top1(self, variant: str) -> float:
        return statistics.median(r.final_top1 for r in self.runs if r.variant == variant)

    def history_matrix(self, variant: str):
        return [r.history for r in self.runs if r.variant == variant]

    def summary_lines(self) -> list[str]:
        lines = []
        for variant in STUDY_VARIANTS:
            runs = [r for r in self.runs if r.variant == variant]
            if not runs:
                continue
            tops = ", ".join(f"{r.final_top1:.4f}" for r in runs)
            lines.append(f"{variant:5s} median top1 = {self.median_top1(variant):.4f}"
                         f"  (seeds: {tops})")
        return lines


def _run_one(args) -> StudyRun:
    variant, seed, sizes = args
    with threadpool_limits(limits=1):
        cfg = config_from_dict(study_config(variant, seed, *sizes))
        res = train(cfg)
    last = res.history[-1]
    return StudyRun(variant=variant, seed=seed, final_top1=last[3], final_top5=last[4],
                    history=res.history)


def run_study(seeds=(0, 1, 2, 3, 4), variants=STUDY_VARIANTS, jobs: int = 2,
              train_size: int | None = None, test_size: int | None = None,
              epochs: int | None = None) -> StudyResult:
    work = [(v, s, (train_size, test_size, epochs)) for v in variants for s in seeds]
    result = StudyResult()
    if jobs <= 1:
        for item in work:
            result.runs.append(_run_one(item))
    else:
        # fork, not spawn: workers must not re-import __main__ (the study is
        # driven from pytest and ad-hoc scripts alike)
        with ProcessPoolExecutor(max_workers=jobs, mp_context=get_context("fork")) as pool:
            for run in pool.map(_run_one, work):
                result.runs.append(run)
    result.runs.sort(key=lambda r: (r.variant, r.seed))
    return result

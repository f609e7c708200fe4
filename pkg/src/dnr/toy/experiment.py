"""End-to-end runs, the component ablation table, and the bad-teacher sweep."""

from __future__ import annotations

import functools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import stats

from .task import SyntheticTaskSpec, generate_task
from .teacher import TeacherSpec, build_teacher
from .train import (
    DNR,
    NO_KD,
    TABLE3_VARIANTS,
    VANILLA_KD,
    EvalReport,
    LinearStudent,
    TrainConfig,
    TrainingDivergedError,
    Variant,
    evaluate,
    finetune_all,
    train_base,
)


@functools.lru_cache(maxsize=64)
def _base_student(spec: SyntheticTaskSpec, lr_base: float, iters_base: int, batch_size: int, seed: int):
    # Stage one does not depend on the teacher or the variant; share it across runs.
    task = generate_task(spec)
    cfg = TrainConfig(lr_base=lr_base, iters_base=iters_base, batch_size=batch_size, seed=seed)
    return train_base(LinearStudent.zeros(spec.n_classes, spec.feature_dim), task.base_train, cfg, spec)


def run_pipeline(spec: SyntheticTaskSpec, t_spec: TeacherSpec, cfg: TrainConfig,
                 history: list | None = None) -> EvalReport:
    """generate -> teacher -> base training -> fine-tuning -> evaluation."""
    task = generate_task(spec)
    teacher = build_teacher(task, t_spec)
    base = _base_student(spec, cfg.lr_base, cfg.iters_base, cfg.batch_size, cfg.seed)
    student = finetune_all(base, task.all_train, teacher, cfg, spec, history=history)
    return evaluate(student, task.eval_set, spec)


def seeded(spec: SyntheticTaskSpec, t_spec: TeacherSpec, cfg: TrainConfig, seed: int):
    return replace(spec, seed=seed), replace(t_spec, seed=seed), replace(cfg, seed=seed)


@dataclass(frozen=True)
class RunResult:
    variant: str
    seed: int
    report: EvalReport | None
    error: str | None = None

    @property
    def novel_accuracy(self) -> float:
        return self.report.novel_mean if self.report else float("nan")


def _run_cell(args) -> RunResult:
    spec, t_spec, cfg, variant, seed = args
    s, t, c = seeded(spec, t_spec, replace(cfg, variant=variant), seed)
    try:
        return RunResult(variant.name, seed, run_pipeline(s, t, c))
    except TrainingDivergedError as exc:
        return RunResult(variant.name, seed, None, str(exc))


def run_grid(spec, t_spec, cfg, variants: Sequence[Variant], seeds: Sequence[int],
             workers: int = 1) -> list[RunResult]:
    """Every (variant, seed) run, ordered by variant then seed regardless of scheduling."""
    cells = [(spec, t_spec, cfg, v, s) for v in variants for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_cell, cells))
    return [_run_cell(c) for c in cells]


@dataclass(frozen=True)
class AblationRow:
    variant: str
    seeds: tuple[int, ...]
    novel_accuracy: tuple[float, ...]  # nan marks a failed run
    failures: int

    @property
    def mean(self) -> float:
        ok = [a for a in self.novel_accuracy if np.isfinite(a)]
        return float(np.mean(ok)) if ok else float("nan")

    @property
    def stderr(self) -> float:
        ok = [a for a in self.novel_accuracy if np.isfinite(a)]
        if len(ok) < 2:
            return 0.0 if ok else float("nan")
        return float(np.std(ok, ddof=1) / np.sqrt(len(ok)))


@dataclass(frozen=True)
class AblationTable:
    rows: tuple[AblationRow, ...]
    corruption_rate: float

    def row(self, variant: Variant | str) -> AblationRow:
        name = variant.name if isinstance(variant, Variant) else Variant.parse(variant).name
        for r in self.rows:
            if r.variant == name:
                return r
        raise KeyError(name)


def _rows(results: list[RunResult], variants, seeds) -> tuple[AblationRow, ...]:
    rows = []
    for v in variants:
        cells = [r for r in results if r.variant == v.name]
        rows.append(AblationRow(v.name, tuple(seeds), tuple(r.novel_accuracy for r in cells),
                                sum(r.report is None for r in cells)))
    return tuple(rows)


def run_ablation(spec: SyntheticTaskSpec, t_spec: TeacherSpec, cfg: TrainConfig,
                 variants: Sequence[Variant] = TABLE3_VARIANTS, seeds: Sequence[int] = range(20),
                 workers: int = 1) -> AblationTable:
    variants, seeds = list(variants), list(seeds)
    if not variants or not seeds:
        raise ValueError("need at least one variant and one seed")
    results = run_grid(spec, t_spec, cfg, variants, seeds, workers)
    return AblationTable(_rows(results, variants, seeds), t_spec.corruption_rate)


PARADOX_VARIANTS = (NO_KD, VANILLA_KD, DNR)


def run_paradox(spec: SyntheticTaskSpec, t_spec: TeacherSpec, cfg: TrainConfig,
                rhos: Sequence[float], seeds: Sequence[int], workers: int = 1) -> list[AblationTable]:
    """One three-row table (no KD, vanilla KD, D&R) per teacher corruption rate."""
    return [run_ablation(spec, replace(t_spec, corruption_rate=float(r)), cfg, PARADOX_VARIANTS, seeds, workers)
            for r in rhos]


@dataclass(frozen=True)
class PairedTest:
    mean_difference: float
    statistic: float
    p_value: float

    def significant(self, level: float = 0.05) -> bool:
        return bool(self.p_value < level)


def paired_greater(a: Sequence[float], b: Sequence[float]) -> PairedTest:
    """One-sided paired t-test of H1: mean(a - b) > 0."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    ok = np.isfinite(a) & np.isfinite(b)
    a, b = a[ok], b[ok]
    diff = a - b
    if diff.size < 2 or np.all(diff == diff[0]):
        p = 0.0 if diff.size and diff[0] > 0 else 1.0
        return PairedTest(float(diff.mean()) if diff.size else float("nan"), float("nan"), p)
    res = stats.ttest_rel(a, b, alternative="greater")
    return PairedTest(float(diff.mean()), float(res.statistic), float(res.pvalue))

"""Two-stage training of a linear student: base classes first, then all classes with distillation."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from ..core_math import logsumexp
from ..kd_losses import (
    DnRHyperparams,
    SampleBatch,
    TermSelection,
    remerged_loss_and_gradient,
    vanilla_kd_grouped,
    vanilla_kd_gradient,
)
from .task import Dataset, SyntheticTaskSpec
from .teacher import Teacher


_COMPONENT = re.compile(r"(tdd|fbd\+|fbd-|fcd)(?:\+(?=.)|$)")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class Variant:
    """Distillation choice for fine-tuning: none, vanilla KD, or a set of disentangled terms."""

    use_kd_vanilla: bool = False
    use_tdd: bool = False
    use_fbd_pos: bool = False
    use_fbd_neg: bool = False
    use_fcd: bool = False

    def __post_init__(self):
        if self.use_kd_vanilla and self.uses_terms:
            raise ValueError("vanilla KD cannot be combined with disentangled terms")

    @property
    def uses_terms(self) -> bool:
        return self.use_tdd or self.use_fbd_pos or self.use_fbd_neg or self.use_fcd

    @property
    def distills(self) -> bool:
        return self.use_kd_vanilla or self.uses_terms

    @property
    def terms(self) -> TermSelection:
        return TermSelection(self.use_tdd, self.use_fbd_pos, self.use_fbd_neg, self.use_fcd)

    @property
    def name(self) -> str:
        if self.use_kd_vanilla:
            return "kd"
        parts = [n for n, on in (("tdd", self.use_tdd), ("fbd+", self.use_fbd_pos),
                                 ("fbd-", self.use_fbd_neg), ("fcd", self.use_fcd)) if on]
        return "+".join(parts) if parts else "none"

    @classmethod
    def parse(cls, name: str) -> "Variant":
        name = name.strip().lower()
        if name in VARIANT_ALIASES:
            return VARIANT_ALIASES[name]
        flags = {"tdd": "use_tdd", "fbd+": "use_fbd_pos", "fbd-": "use_fbd_neg", "fcd": "use_fcd"}
        # components are joined by '+', which also ends "fbd+": tokenize left to right
        kwargs, pos = {}, 0
        while pos < len(name):
            m = _COMPONENT.match(name, pos)
            if not m:
                raise ValueError(f"cannot parse variant {name!r} at position {pos}")
            kwargs[flags[m.group(1)]] = True
            pos = m.end()
        if not kwargs:
            raise ValueError("empty variant name")
        return cls(**kwargs)


NO_KD = Variant()
VANILLA_KD = Variant(use_kd_vanilla=True)
DNR = Variant(use_fbd_pos=True, use_fbd_neg=True, use_fcd=True)
DNR_WITH_TDD = Variant(use_tdd=True, use_fbd_pos=True, use_fbd_neg=True, use_fcd=True)

# Row order of the component ablation: no KD, vanilla KD, then term combinations.
TABLE3_VARIANTS = (
    NO_KD,
    VANILLA_KD,
    Variant(use_fbd_pos=True, use_fbd_neg=True),
    Variant(use_fcd=True),
    DNR_WITH_TDD,
    Variant(use_fbd_neg=True, use_fcd=True),
    Variant(use_fbd_pos=True, use_fcd=True),
    DNR,
)

VARIANT_ALIASES = {"none": NO_KD, "no-kd": NO_KD, "kd": VANILLA_KD, "vanilla": VANILLA_KD, "dnr": DNR}


@dataclass(frozen=True)
class TrainConfig:
    lr_base: float = 0.1
    lr_all: float = 0.05
    iters_base: int = 2000
    iters_all: int = 1000
    batch_size: int = 32
    hyper: DnRHyperparams = field(default_factory=lambda: DnRHyperparams.preset("coco"))
    variant: Variant = DNR
    balanced: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lr_base <= 0 or self.lr_all <= 0:
            raise ValueError("learning rates must be positive")
        if self.iters_base < 0 or self.iters_all < 0 or self.batch_size < 1:
            raise ValueError("iteration counts must be non-negative and batch_size positive")


@dataclass
class LinearStudent:
    """Logits ``W @ [x, 1]``; the last column of ``weights`` is the bias."""

    weights: np.ndarray

    @classmethod
    def zeros(cls, n_classes: int, feature_dim: int) -> "LinearStudent":
        return cls(np.zeros((n_classes, feature_dim + 1)))

    def copy(self) -> "LinearStudent":
        return LinearStudent(self.weights.copy())

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights[:, :-1].T + self.weights[:, -1]

    def predict(self, features: np.ndarray) -> np.ndarray:
        # np.argmax returns the first maximal index: ties go to the lowest class id
        return np.argmax(self.logits(features), axis=1)


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def cross_entropy(logits: np.ndarray, labels: np.ndarray, allowed: np.ndarray | None = None):
    """Mean CE and its gradient w.r.t. logits, softmax taken over ``allowed`` classes only."""
    n, c = logits.shape
    mask = np.ones((n, c), dtype=bool) if allowed is None else np.broadcast_to(allowed, (n, c))
    lse = logsumexp(logits, axis=1, where=mask)
    rows = np.arange(n)
    loss = float(np.mean(lse - logits[rows, labels]))
    p = np.where(mask, np.exp(np.where(mask, logits, -np.inf) - lse[:, None]), 0.0)
    p[rows, labels] -= 1.0
    return loss, p / n


def dataset_loss(student: LinearStudent, data: Dataset, allowed: np.ndarray | None = None) -> float:
    return cross_entropy(student.logits(data.features), data.labels, allowed)[0]


def _check_finite(value: float, step: int, stage: str):
    if not np.isfinite(value):
        raise TrainingDivergedError(f"{stage}: non-finite loss at step {step}")


def train_base(student: LinearStudent, base_train: Dataset, cfg: TrainConfig,
               spec: SyntheticTaskSpec) -> LinearStudent:
    """Minibatch SGD on cross-entropy over base classes and background."""
    student = student.copy()
    allowed = np.zeros(spec.n_classes, dtype=bool)
    allowed[list(spec.base_ids)] = True
    allowed[spec.background_index] = True
    x = _augment(base_train.features)
    rng = np.random.default_rng([cfg.seed, 10])
    n = len(base_train)
    bs = min(cfg.batch_size, n)
    for step in range(cfg.iters_base):
        idx = rng.choice(n, size=bs, replace=False)
        xb = x[idx]
        with np.errstate(over="ignore", invalid="ignore"):
            loss, g = cross_entropy(xb @ student.weights.T, base_train.labels[idx], allowed)
        _check_finite(loss, step, "base training")
        student.weights -= cfg.lr_base * (g.T @ xb)
    return student


def distillation_loss_and_grad(batch: SampleBatch, variant: Variant, hyper: DnRHyperparams):
    if variant.use_kd_vanilla:
        T = hyper.temperature
        return vanilla_kd_grouped(batch, T), vanilla_kd_gradient(batch, T, grouped=True)
    if variant.uses_terms:
        return remerged_loss_and_gradient(batch, hyper, variant.terms)
    return 0.0, np.zeros_like(batch.student_logits)


def _balanced_indices(by_class: list[np.ndarray], size: int, rng: np.random.Generator) -> np.ndarray:
    # uniform over classes, then uniform within the class
    cls = rng.integers(0, len(by_class), size=size)
    pos = rng.random(size)
    return np.array([by_class[c][int(p * len(by_class[c]))] for c, p in zip(cls, pos)])


def finetune_all(student: LinearStudent, all_train: Dataset, teacher: Teacher, cfg: TrainConfig,
                 spec: SyntheticTaskSpec, history: list | None = None) -> LinearStudent:
    """Cross-entropy over every class plus ``lambda`` times the selected distillation loss.

    Teacher logits are computed once for the whole training set and stay
    frozen. When ``history`` is a list, ``(ce, distill)`` is appended per step.
    """
    student = student.copy()
    x = _augment(all_train.features)
    teacher_logits = teacher.teach(all_train)
    rng = np.random.default_rng([cfg.seed, 20])
    n = len(all_train)
    bs = min(cfg.batch_size, n)
    lam = cfg.hyper.loss_weight
    bg = np.full(bs, spec.background_index)
    by_class = [np.flatnonzero(all_train.labels == c) for c in np.unique(all_train.labels)]
    for step in range(cfg.iters_all):
        if cfg.balanced:
            idx = _balanced_indices(by_class, bs, rng)
        else:
            idx = rng.choice(n, size=bs, replace=False)
        xb, yb = x[idx], all_train.labels[idx]
        with np.errstate(over="ignore", invalid="ignore"):
            logits = xb @ student.weights.T
            if not np.all(np.isfinite(logits)):
                raise TrainingDivergedError(f"fine-tuning: non-finite logits at step {step}")
            ce, g = cross_entropy(logits, yb)
            distill = 0.0
            if cfg.variant.distills and lam > 0:
                batch = SampleBatch(teacher_logits[idx], logits, yb, bg)
                distill, gd = distillation_loss_and_grad(batch, cfg.variant, cfg.hyper)
                g = g + lam * gd
        _check_finite(ce + lam * distill, step, "fine-tuning")
        if history is not None:
            history.append((ce, distill))
        student.weights -= cfg.lr_all * (g.T @ xb)
    return student


@dataclass(frozen=True)
class EvalReport:
    per_class_accuracy: dict[int, float]
    novel_mean: float
    base_mean: float
    background_accuracy: float
    overall: float

    def to_record(self) -> dict:
        return {
            "per_class_accuracy": {str(k): v for k, v in sorted(self.per_class_accuracy.items())},
            "novel_mean": self.novel_mean,
            "base_mean": self.base_mean,
            "background_accuracy": self.background_accuracy,
            "overall": self.overall,
        }


def evaluate_predictions(pred: np.ndarray, labels: np.ndarray, spec: SyntheticTaskSpec) -> EvalReport:
    per_class = {}
    for c in range(spec.n_classes):
        m = labels == c
        if m.any():
            per_class[c] = float(np.mean(pred[m] == c))

    def mean_of(ids):
        vals = [per_class[c] for c in ids if c in per_class]
        return float(np.mean(vals)) if vals else float("nan")

    return EvalReport(
        per_class_accuracy=per_class,
        novel_mean=mean_of(spec.novel_ids),
        base_mean=mean_of(spec.base_ids),
        background_accuracy=per_class.get(spec.background_index, float("nan")),
        overall=float(np.mean(pred == labels)) if labels.size else float("nan"),
    )


def evaluate(student: LinearStudent, eval_set: Dataset, spec: SyntheticTaskSpec) -> EvalReport:
    return evaluate_predictions(student.predict(eval_set.features), eval_set.labels, spec)

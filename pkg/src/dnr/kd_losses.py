"""Vanilla KD, its disentangled decomposition, and the remerged D&R loss.

For a foreground sample with target ``t`` and background class ``bg`` the
full KL between teacher and student splits exactly into

    KD = TDD + p_not_t * FBD+ + p_not_t * p_not_bg * FCD+

where TDD is the binary [target, rest] KL, FBD+ the binary [bg, rest] KL
over the target-excluded softmax, and FCD+ the KL over the remaining
foreground classes. A background sample splits as

    KD = FBD- + p_not_bg * FCD-

The p_* weights are teacher probabilities and are treated as constants.
D&R drops TDD and reweights the rest with ``alpha`` and ``beta``; foreground
and background samples are averaged separately before summing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core_math import InvalidInputError, logsumexp

BACKGROUND = "bg"


@dataclass(frozen=True)
class DnRHyperparams:
    alpha: float = 1.0
    beta: float = 1.0
    temperature: float = 1.0
    loss_weight: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "loss_weight"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidInputError(f"{name} must be a finite non-negative real, got {v}")
        if not np.isfinite(self.temperature) or self.temperature <= 0:
            raise InvalidInputError(f"temperature must be positive, got {self.temperature}")

    @classmethod
    def preset(cls, name: str) -> "DnRHyperparams":
        try:
            return PRESETS[name.lower()]
        except KeyError:
            raise InvalidInputError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


PRESETS = {
    "coco": DnRHyperparams(alpha=4.0, beta=0.5, temperature=5.0, loss_weight=5.0),
    "voc": DnRHyperparams(alpha=10.0, beta=2.0, temperature=10.0, loss_weight=1.0),
}


@dataclass(frozen=True)
class TermSelection:
    """Which disentangled terms enter a remerged loss. ``fcd`` covers FCD+ and FCD-."""

    tdd: bool = False
    fbd_pos: bool = True
    fbd_neg: bool = True
    fcd: bool = True


DNR_TERMS = TermSelection()
ALL_TERMS = TermSelection(tdd=True)


@dataclass(frozen=True)
class SampleBatch:
    """Teacher/student logits with labels.

    ``labels[i] == background_index[i]`` marks a background sample; any other
    label is the foreground target class.
    """

    teacher_logits: np.ndarray
    student_logits: np.ndarray
    labels: np.ndarray
    background_index: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.teacher_logits, dtype=np.float64)
        s = np.asarray(self.student_logits, dtype=np.float64)
        if t.ndim != 2 or t.shape != s.shape:
            raise InvalidInputError(f"teacher {t.shape} and student {s.shape} must be equal 2-d shapes")
        n, c = t.shape
        if c < 2:
            raise InvalidInputError("need at least two classes")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(s))):
            raise InvalidInputError("logits must be finite")
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        bg = np.broadcast_to(np.asarray(self.background_index, dtype=np.int64), (n,)).copy()
        if labels.shape != (n,):
            raise InvalidInputError(f"expected {n} labels, got {labels.shape[0]}")
        if np.any((labels < 0) | (labels >= c)) or np.any((bg < 0) | (bg >= c)):
            raise InvalidInputError("label or background index out of range")
        object.__setattr__(self, "teacher_logits", t)
        object.__setattr__(self, "student_logits", s)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "background_index", bg)

    @classmethod
    def from_labels(cls, teacher, student, labels: Sequence, background_index=None) -> "SampleBatch":
        """Build a batch where background rows are labelled with ``"bg"``.

        ``background_index`` defaults to the last class.
        """
        teacher = np.atleast_2d(np.asarray(teacher, dtype=np.float64))
        n, c = teacher.shape
        bg = np.broadcast_to(c - 1 if background_index is None else background_index, (n,))
        out = np.empty(n, dtype=np.int64)
        for i, (lab, b) in enumerate(zip(labels, bg)):
            if isinstance(lab, str):
                if lab != BACKGROUND:
                    raise InvalidInputError(f"label must be an integer or {BACKGROUND!r}, got {lab!r}")
                out[i] = b
            else:
                if int(lab) == int(b):
                    raise InvalidInputError(f"foreground label {lab} collides with background index")
                out[i] = int(lab)
        return cls(teacher, np.atleast_2d(student), out, bg)

    @property
    def n_samples(self) -> int:
        return self.teacher_logits.shape[0]

    @property
    def n_classes(self) -> int:
        return self.teacher_logits.shape[1]

    @property
    def is_foreground(self) -> np.ndarray:
        return self.labels != self.background_index

    def with_student(self, student_logits) -> "SampleBatch":
        return replace(self, student_logits=np.asarray(student_logits, dtype=np.float64))


@dataclass(frozen=True)
class LossDecomposition:
    """Per-sample disentangled terms.

    Terms that do not apply to a row (e.g. TDD on a background sample) are
    stored as 0, as are the matching coefficients.
    """

    is_foreground: np.ndarray
    tdd: np.ndarray
    fbd_pos: np.ndarray
    fbd_neg: np.ndarray
    fcd_pos: np.ndarray
    fcd_neg: np.ndarray
    p_not_target: np.ndarray
    p_not_bg_pos: np.ndarray
    p_not_bg_neg: np.ndarray
    vanilla_kd: np.ndarray
    temperature: float = field(default=1.0)

    @property
    def n_foreground(self) -> int:
        return int(self.is_foreground.sum())

    @property
    def n_background(self) -> int:
        return int((~self.is_foreground).sum())

    def recombined(self) -> np.ndarray:
        """Per-sample KD rebuilt from the decomposed terms."""
        fg = self.tdd + self.p_not_target * self.fbd_pos + self.p_not_target * self.p_not_bg_pos * self.fcd_pos
        bg = self.fbd_neg + self.p_not_bg_neg * self.fcd_neg
        return np.where(self.is_foreground, fg, bg)

    def identity_residual(self) -> float:
        if self.vanilla_kd.size == 0:
            return 0.0
        return float(np.max(np.abs(self.recombined() - self.vanilla_kd)))

    def group_means(self) -> dict[str, float]:
        """Batch aggregates: each term averaged over the group it belongs to."""
        fg, bg = self.is_foreground, ~self.is_foreground
        return {
            "tdd": _group_mean(self.tdd, fg),
            "fbd_pos": _group_mean(self.fbd_pos, fg),
            "fcd_pos": _group_mean(self.fcd_pos, fg),
            "fbd_neg": _group_mean(self.fbd_neg, bg),
            "fcd_neg": _group_mean(self.fcd_neg, bg),
            "vanilla_kd": float(self.vanilla_kd.mean()) if self.vanilla_kd.size else 0.0,
        }


def _group_mean(values: np.ndarray, mask: np.ndarray) -> float:
    n = int(mask.sum())
    return float(values[mask].sum() / n) if n else 0.0


# -- vectorized kernels -----------------------------------------------------

def _masked_log_softmax(scaled: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax over ``mask``; -inf outside it (and on empty rows)."""
    lse = logsumexp(scaled, axis=1, where=mask)
    with np.errstate(invalid="ignore"):
        out = np.where(mask, scaled - lse[:, None], -np.inf)
    return out


def _kl_masked(log_t: np.ndarray, log_s: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise KL between two log-distributions supported on ``mask``."""
    live = mask & np.isfinite(log_t)
    diff = np.where(live, log_t - np.where(live, log_s, 0.0), 0.0)
    return np.sum(np.where(live, np.exp(np.where(live, log_t, 0.0)), 0.0) * diff, axis=1)


def _group_log_mass(log_p: np.ndarray, group: np.ndarray) -> np.ndarray:
    return logsumexp(log_p, axis=1, where=group & np.isfinite(log_p))


class _BinaryTerm:
    """KL between [mass(A), mass(B)] of teacher and student over a common softmax."""

    def __init__(self, log_t, log_s, group_a, group_b):
        self.group_a, self.group_b = group_a, group_b
        self.la_t, self.lb_t = _group_log_mass(log_t, group_a), _group_log_mass(log_t, group_b)
        self.la_s, self.lb_s = _group_log_mass(log_s, group_a), _group_log_mass(log_s, group_b)
        # D3: an empty side leaves nothing to distill.
        self.live = np.isfinite(self.la_t) & np.isfinite(self.lb_t)
        self.log_s = log_s

    def value(self) -> np.ndarray:
        la_t = np.where(self.live, self.la_t, 0.0)
        lb_t = np.where(self.live, self.lb_t, 0.0)
        la_s = np.where(self.live, self.la_s, 0.0)
        lb_s = np.where(self.live, self.lb_s, 0.0)
        kl = np.exp(la_t) * (la_t - la_s) + np.exp(lb_t) * (lb_t - lb_s)
        return np.where(self.live, np.maximum(kl, 0.0), 0.0)

    def mass_b_teacher(self) -> np.ndarray:
        return np.where(np.isfinite(self.lb_t), np.exp(np.where(np.isfinite(self.lb_t), self.lb_t, 0.0)), 0.0)

    def grad(self, T: float) -> np.ndarray:
        # d/ds_i = q_i / T * (1 - teacher_mass(g)/student_mass(g)), g the group holding i
        live = self.live[:, None]
        la_t, lb_t, la_s, lb_s = (np.where(self.live, v, 0.0) for v in (self.la_t, self.lb_t, self.la_s, self.lb_s))
        ratio_a = np.exp(la_t - la_s)[:, None]
        ratio_b = np.exp(lb_t - lb_s)[:, None]
        q = np.exp(self.log_s)
        ratio = np.where(self.group_a, ratio_a, np.where(self.group_b, ratio_b, 1.0))
        return np.where(live & (self.group_a | self.group_b), q * (1.0 - ratio) / T, 0.0)


class _MultiTerm:
    """KL between teacher and student softmaxes restricted to ``mask``."""

    def __init__(self, scaled_t, scaled_s, mask):
        self.mask = mask
        self.log_t = _masked_log_softmax(scaled_t, mask)
        self.log_s = _masked_log_softmax(scaled_s, mask)
        # D3: fewer than two classes leaves nothing to distill.
        self.live = mask.sum(axis=1) >= 2

    def value(self) -> np.ndarray:
        kl = _kl_masked(self.log_t, self.log_s, self.mask)
        return np.where(self.live, np.maximum(kl, 0.0), 0.0)

    def grad(self, T: float) -> np.ndarray:
        q_s = np.where(self.mask, np.exp(self.log_s), 0.0)
        q_t = np.where(self.mask, np.exp(self.log_t), 0.0)
        return np.where(self.live[:, None] & self.mask, (q_s - q_t) / T, 0.0)


class _Terms:
    """All disentangled terms of a batch, computed once and shared by value/grad."""

    def __init__(self, batch: SampleBatch, T: float):
        self.T = float(T)
        n, c = batch.n_samples, batch.n_classes
        rows = np.arange(n)
        target = np.zeros((n, c), dtype=bool)
        target[rows, batch.labels] = True
        bg = np.zeros((n, c), dtype=bool)
        bg[rows, batch.background_index] = True
        full = np.ones((n, c), dtype=bool)
        self.fg = batch.is_foreground

        st = batch.teacher_logits / self.T
        ss = batch.student_logits / self.T
        log_t_full = _masked_log_softmax(st, full)
        log_s_full = _masked_log_softmax(ss, full)
        self.kd = _MultiTerm(st, ss, full)

        # Full-softmax binary split [target, rest]; on background rows target == bg,
        # so the same object is FBD- there.
        self.first = _BinaryTerm(log_t_full, log_s_full, target, ~target)
        # Target-excluded softmax split [bg, rest] (FBD+); degenerate on background rows.
        excl = ~target
        log_t_excl = _masked_log_softmax(st, excl)
        log_s_excl = _masked_log_softmax(ss, excl)
        self.second = _BinaryTerm(log_t_excl, log_s_excl, excl & bg, excl & ~bg)
        # Softmax over classes that are neither target nor background (FCD+ / FCD-).
        self.third = _MultiTerm(st, ss, ~target & ~bg)

        self.w_first = self.first.mass_b_teacher()
        self.w_second = self.second.mass_b_teacher()

    def decomposition(self) -> LossDecomposition:
        fg, bg = self.fg, ~self.fg
        first, second, third = self.first.value(), self.second.value(), self.third.value()
        zero = np.zeros_like(first)
        return LossDecomposition(
            is_foreground=fg.copy(),
            tdd=np.where(fg, first, zero),
            fbd_pos=np.where(fg, second, zero),
            fcd_pos=np.where(fg, third, zero),
            fbd_neg=np.where(bg, first, zero),
            fcd_neg=np.where(bg, third, zero),
            p_not_target=np.where(fg, self.w_first, zero),
            p_not_bg_pos=np.where(fg, self.w_second, zero),
            p_not_bg_neg=np.where(bg, self.w_first, zero),
            vanilla_kd=self.kd.value(),
            temperature=self.T,
        )

    def row_weights(self, h: DnRHyperparams, terms: TermSelection):
        """Per-row multipliers of the first/second/third term in the remerged loss."""
        fg = self.fg
        n_fg, n_bg = int(fg.sum()), int((~fg).sum())
        inv = np.where(fg, 1.0 / max(n_fg, 1), 1.0 / max(n_bg, 1))
        c_first = np.where(fg, float(terms.tdd), h.beta * float(terms.fbd_neg))
        c_second = np.where(fg, h.alpha * float(terms.fbd_pos) * self.w_first, 0.0)
        c_third = float(terms.fcd) * np.where(fg, self.w_first * self.w_second, self.w_first)
        return inv * c_first, inv * c_second, inv * c_third

    def remerged(self, h, terms) -> float:
        a, b, c = self.row_weights(h, terms)
        return float(np.sum(a * self.first.value() + b * self.second.value() + c * self.third.value()))

    def remerged_grad(self, h, terms) -> np.ndarray:
        a, b, c = self.row_weights(h, terms)
        T = self.T
        return (a[:, None] * self.first.grad(T) + b[:, None] * self.second.grad(T)
                + c[:, None] * self.third.grad(T))


# -- public operations ------------------------------------------------------

def per_sample_vanilla_kd(batch: SampleBatch, T: float) -> np.ndarray:
    return _Terms(batch, T).kd.value()


def vanilla_kd(batch: SampleBatch, T: float) -> float:
    """Mean over samples of KL(softmax(teacher/T) || softmax(student/T))."""
    if batch.n_samples == 0:
        return 0.0
    return float(per_sample_vanilla_kd(batch, T).mean())


def vanilla_kd_grouped(batch: SampleBatch, T: float) -> float:
    """Vanilla KD averaged within foreground and background rows, then summed."""
    kd = per_sample_vanilla_kd(batch, T)
    fg = batch.is_foreground
    return _group_mean(kd, fg) + _group_mean(kd, ~fg)


def vanilla_kd_gradient(batch: SampleBatch, T: float, grouped: bool = False) -> np.ndarray:
    terms = _Terms(batch, T)
    g = terms.kd.grad(T)
    fg = batch.is_foreground
    if grouped:
        w = np.where(fg, 1.0 / max(int(fg.sum()), 1), 1.0 / max(int((~fg).sum()), 1))
    else:
        w = np.full(batch.n_samples, 1.0 / max(batch.n_samples, 1))
    return w[:, None] * g


def decompose(batch: SampleBatch, T: float) -> LossDecomposition:
    return _Terms(batch, T).decomposition()


def remerge(dec: LossDecomposition, h: DnRHyperparams, terms: TermSelection = DNR_TERMS) -> float:
    """Group-averaged weighted sum of the selected terms."""
    fg, bg = dec.is_foreground, ~dec.is_foreground
    total = 0.0
    if terms.tdd:
        total += _group_mean(dec.tdd, fg)
    if terms.fbd_pos:
        total += h.alpha * _group_mean(dec.p_not_target * dec.fbd_pos, fg)
    if terms.fbd_neg:
        total += h.beta * _group_mean(dec.fbd_neg, bg)
    if terms.fcd:
        total += _group_mean(dec.p_not_target * dec.p_not_bg_pos * dec.fcd_pos, fg)
        total += _group_mean(dec.p_not_bg_neg * dec.fcd_neg, bg)
    return float(total)


def dnr_loss(dec: LossDecomposition, h: DnRHyperparams) -> float:
    """The remerged loss with TDD removed (before the ``loss_weight`` factor)."""
    return remerge(dec, h, DNR_TERMS)


def dnr_with_tdd(dec: LossDecomposition, h: DnRHyperparams, include_tdd: bool) -> float:
    return remerge(dec, h, ALL_TERMS if include_tdd else DNR_TERMS)


def remerged_loss_and_gradient(batch: SampleBatch, h: DnRHyperparams,
                               terms: TermSelection = DNR_TERMS) -> tuple[float, np.ndarray]:
    t = _Terms(batch, h.temperature)
    return t.remerged(h, terms), t.remerged_grad(h, terms)


def dnr_gradient(batch: SampleBatch, h: DnRHyperparams) -> np.ndarray:
    """Analytic d(dnr_loss)/d(student logits); teacher weights held constant."""
    return remerged_loss_and_gradient(batch, h, DNR_TERMS)[1]


def dnr_loss_from_batch(batch: SampleBatch, h: DnRHyperparams) -> float:
    return dnr_loss(decompose(batch, h.temperature), h)


def finite_difference_gradient(loss_fn: Callable[[SampleBatch, DnRHyperparams], float],
                               batch: SampleBatch, h: DnRHyperparams,
                               step: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn`` with respect to each student logit."""
    if not step > 0:
        raise InvalidInputError("step must be positive")
    s0 = batch.student_logits
    grad = np.zeros_like(s0)
    for idx in np.ndindex(*s0.shape):
        plus, minus = s0.copy(), s0.copy()
        plus[idx] += step
        minus[idx] -= step
        grad[idx] = (loss_fn(batch.with_student(plus), h) - loss_fn(batch.with_student(minus), h)) / (2 * step)
    return grad


def gradient_relative_error(analytic: np.ndarray, reference: np.ndarray) -> float:
    """max |a - b| scaled by the largest gradient entry of either argument."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(reference), initial=0.0)))
    diff = float(np.max(np.abs(analytic - reference), initial=0.0))
    if scale == 0.0:
        return diff
    return diff / scale


def random_batch(rng: np.random.Generator, n_samples: int, n_classes: int, scale: float = 2.0,
                 background_fraction: float | None = None) -> SampleBatch:
    """Gaussian logits with standard deviation ``scale``; background is the last class.

    ``background_fraction`` of None draws each label uniformly over all classes,
    so single-group and empty batches occur naturally.
    """
    teacher = rng.normal(0.0, scale, size=(n_samples, n_classes))
    student = rng.normal(0.0, scale, size=(n_samples, n_classes))
    bg = n_classes - 1
    if background_fraction is None:
        labels = rng.integers(0, n_classes, size=n_samples)
    else:
        fg = rng.integers(0, bg, size=n_samples)
        labels = np.where(rng.random(n_samples) < background_fraction, bg, fg)
    return SampleBatch(teacher, student, labels, np.full(n_samples, bg))

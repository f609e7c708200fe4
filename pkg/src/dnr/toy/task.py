"""Synthetic few-shot classification with a background class.

Class indices: ``0..base-1`` base classes, ``base..base+novel-1`` novel
classes, and the last index is background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SyntheticTaskSpec:
    feature_dim: int = 16
    base_classes: int = 6
    novel_classes: int = 3
    shots_per_novel: int = 3
    samples_per_base: int = 200
    class_center_scale: float = 3.0
    noise_scale: float = 1.0
    background_scale: float = 1.0
    background_fraction: float = 0.5
    eval_per_class: int = 100
    # fine-tune on every base sample instead of K per base class
    full_base_finetune: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.base_classes < 0 or self.novel_classes < 0 or self.base_classes + self.novel_classes < 1:
            raise ValueError("need at least one foreground class")
        if min(self.feature_dim, self.shots_per_novel, self.samples_per_base, self.eval_per_class) < 1:
            raise ValueError("dimensions and sample counts must be positive")
        if self.shots_per_novel > self.samples_per_base:
            raise ValueError("shots_per_novel cannot exceed samples_per_base")
        if min(self.class_center_scale, self.noise_scale, self.background_scale) <= 0:
            raise ValueError("scales must be positive")
        if not 0 < self.background_fraction < 1:
            raise ValueError("background_fraction must lie in (0, 1)")

    @property
    def n_classes(self) -> int:
        return self.base_classes + self.novel_classes + 1

    @property
    def background_index(self) -> int:
        return self.n_classes - 1

    @property
    def base_ids(self) -> tuple[int, ...]:
        return tuple(range(self.base_classes))

    @property
    def novel_ids(self) -> tuple[int, ...]:
        return tuple(range(self.base_classes, self.base_classes + self.novel_classes))

    def n_background_for(self, n_foreground: int) -> int:
        f = self.background_fraction
        return int(round(n_foreground * f / (1.0 - f)))


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.vstack([self.features, other.features]), np.concatenate([self.labels, other.labels]))

    def counts(self, n_classes: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=n_classes)


@dataclass(frozen=True)
class Task:
    spec: SyntheticTaskSpec
    centers: np.ndarray  # (foreground classes, feature_dim)
    base_train: Dataset
    novel_train: Dataset
    eval_set: Dataset

    @property
    def all_train(self) -> Dataset:
        """Fine-tuning set: K samples of every base class, the K novel shots, and background
        in the configured proportion. ``full_base_finetune`` keeps all base samples instead.
        """
        spec = self.spec
        if spec.full_base_finetune:
            return self.base_train.concat(self.novel_train)
        labels = self.base_train.labels
        k = spec.shots_per_novel
        keep = np.concatenate([np.flatnonzero(labels == c)[:k] for c in spec.base_ids]).astype(np.int64)
        n_fg = keep.size + len(self.novel_train)
        bg_rows = np.flatnonzero(labels == spec.background_index)[: spec.n_background_for(n_fg)]
        base = Dataset(self.base_train.features[keep], labels[keep])
        bg = Dataset(self.base_train.features[bg_rows], labels[bg_rows])
        return base.concat(self.novel_train).concat(bg)

    def sample(self, counts: dict[int, int], rng: np.random.Generator) -> Dataset:
        """Draw ``counts[c]`` points of each class ``c`` (background included)."""
        xs, ys = [], []
        bg = self.spec.background_index
        for c in sorted(counts):
            n = counts[c]
            if n <= 0:
                continue
            if c == bg:
                x = rng.normal(0.0, self.spec.background_scale, size=(n, self.spec.feature_dim))
            else:
                x = self.centers[c] + rng.normal(0.0, self.spec.noise_scale, size=(n, self.spec.feature_dim))
            xs.append(x)
            ys.append(np.full(n, c, dtype=np.int64))
        if not xs:
            return Dataset(np.zeros((0, self.spec.feature_dim)), np.zeros(0, dtype=np.int64))
        return Dataset(np.vstack(xs), np.concatenate(ys))


def _centers(spec: SyntheticTaskSpec, rng: np.random.Generator) -> np.ndarray:
    n_fg = spec.base_classes + spec.novel_classes
    raw = rng.normal(size=(n_fg, spec.feature_dim))
    return spec.class_center_scale * raw / np.linalg.norm(raw, axis=1, keepdims=True)


def generate_task(spec: SyntheticTaskSpec) -> Task:
    """Seeded task: Gaussian class clusters around centers of norm ``class_center_scale``."""
    rng = np.random.default_rng([spec.seed, 0])
    centers = _centers(spec, rng)
    shell = Task(spec, centers, *(Dataset(np.zeros((0, spec.feature_dim)), np.zeros(0, np.int64)),) * 3)
    bg = spec.background_index

    base_counts = {c: spec.samples_per_base for c in spec.base_ids}
    base_counts[bg] = spec.n_background_for(spec.samples_per_base * spec.base_classes)
    base_train = shell.sample(base_counts, np.random.default_rng([spec.seed, 1]))

    novel_train = shell.sample({c: spec.shots_per_novel for c in spec.novel_ids},
                               np.random.default_rng([spec.seed, 2]))

    fg = spec.base_ids + spec.novel_ids
    eval_counts = {c: spec.eval_per_class for c in fg}
    eval_counts[bg] = spec.n_background_for(spec.eval_per_class * len(fg))
    eval_set = shell.sample(eval_counts, np.random.default_rng([spec.seed, 3]))

    return Task(spec, centers, base_train, novel_train, eval_set)

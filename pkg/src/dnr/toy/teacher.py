"""A frozen nearest-centroid teacher with controllable target-class errors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .task import Dataset, Task


@dataclass(frozen=True)
class TeacherSpec:
    corruption_rate: float = 0.0
    temperature: float = 1.0
    seed: int = 0
    fit_per_class: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise ValueError("corruption_rate must lie in [0, 1]")
        if self.temperature <= 0 or self.fit_per_class < 1:
            raise ValueError("temperature and fit_per_class must be positive")


@dataclass(frozen=True)
class Teacher:
    """Logits are ``-||x - centroid_c||^2 / (2 * temperature)`` over every class."""

    centroids: np.ndarray
    temperature: float
    corruption_rate: float
    seed: int
    foreground_ids: tuple[int, ...]

    def clean_logits(self, features: np.ndarray) -> np.ndarray:
        d2 = ((features[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=-1)
        return -d2 / (2.0 * self.temperature)

    def corrupt(self, logits: np.ndarray, labels: np.ndarray, rng: np.random.Generator):
        """Swap each foreground sample's target logit with a random other foreground logit, w.p. rho.

        Returns the corrupted copy and the boolean mask of swapped rows.
        """
        out = logits.copy()
        n = labels.shape[0]
        fg_ids = np.asarray(self.foreground_ids)
        is_fg = np.isin(labels, fg_ids)
        draws = rng.random(n)
        # partner index drawn among the other foreground classes
        partner_pos = rng.integers(0, max(len(fg_ids) - 1, 1), size=n)
        swapped = is_fg & (draws < self.corruption_rate) & (len(fg_ids) > 1)
        rows = np.flatnonzero(swapped)
        for i in rows:
            others = fg_ids[fg_ids != labels[i]]
            j = others[partner_pos[i]]
            t = labels[i]
            out[i, t], out[i, j] = logits[i, j], logits[i, t]
        return out, swapped

    def teach(self, data: Dataset, stream: int = 0) -> np.ndarray:
        """Frozen logits for ``data``; corruption is a fixed function of seed and stream."""
        rng = np.random.default_rng([self.seed, 100 + stream])
        return self.corrupt(self.clean_logits(data.features), data.labels, rng)[0]

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(self.clean_logits(features), axis=1)


def build_teacher(task: Task, t_spec: TeacherSpec) -> Teacher:
    """Fit class centroids on a large held-out sample drawn from the task's generator."""
    spec = task.spec
    counts = {c: t_spec.fit_per_class for c in range(spec.n_classes)}
    fit = task.sample(counts, np.random.default_rng([t_spec.seed, spec.seed, 1]))
    centroids = np.stack([fit.features[fit.labels == c].mean(axis=0) for c in range(spec.n_classes)])
    return Teacher(centroids, float(t_spec.temperature), float(t_spec.corruption_rate), t_spec.seed,
                   spec.base_ids + spec.novel_ids)

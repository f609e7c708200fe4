"""Probability kernels shared by the loss and training code.

Everything here works in double precision with the natural logarithm.
Softmaxes use the max-shift log-sum-exp trick, since logits are unbounded.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np


class InvalidInputError(ValueError):
    """Non-finite logits, a non-positive temperature, or malformed vectors."""


class DegenerateGroupError(ValueError):
    """A restricted softmax was asked for over an empty index set."""


class InfiniteDivergenceError(ValueError):
    """KL(p || q) is infinite because q vanishes where p does not."""


class InvalidSplitError(ValueError):
    """A binary split whose first group is empty or covers every index."""


def _as_logits(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise InvalidInputError(f"expected a non-empty 1-d logit vector, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits must be finite")
    return z


def _check_temperature(T: float) -> float:
    T = float(T)
    if not np.isfinite(T) or T <= 0:
        raise InvalidInputError(f"temperature must be a positive real, got {T}")
    return T


def _index_set(keep: Iterable[int], n: int) -> np.ndarray:
    idx = np.unique(np.fromiter((int(i) for i in keep), dtype=np.int64))
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise InvalidInputError(f"indices {idx.tolist()} out of range for length {n}")
    return idx


def logsumexp(x: np.ndarray, axis: int = -1, where: np.ndarray | None = None) -> np.ndarray:
    """Stable log(sum(exp(x))) along ``axis``, optionally over a boolean mask.

    Rows whose mask is entirely False give -inf.
    """
    x = np.asarray(x, dtype=np.float64)
    if where is None:
        where = np.ones(x.shape, dtype=bool)
    masked = np.where(where, x, -np.inf)
    m = np.max(masked, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        s = np.log(np.sum(np.where(where, np.exp(masked - m_safe), 0.0), axis=axis, keepdims=True))
    return np.squeeze(s + m_safe, axis=axis)


def log_softmax(z, T: float = 1.0) -> np.ndarray:
    z = _as_logits(z)
    T = _check_temperature(T)
    s = z / T
    return s - logsumexp(s)


def softmax(z, T: float = 1.0) -> np.ndarray:
    """Temperature softmax ``exp(z_i/T) / sum_j exp(z_j/T)``."""
    p = np.exp(log_softmax(z, T))
    # exp of a max-shifted log-softmax already sums to 1 up to rounding; renormalize the last ulp.
    return p / p.sum()


def masked_softmax(z, keep: Iterable[int], T: float = 1.0) -> np.ndarray:
    """Softmax of the sub-vector ``z[keep]`` (indices sorted ascending).

    Raises DegenerateGroupError when ``keep`` is empty.
    """
    z = _as_logits(z)
    idx = _index_set(keep, z.size)
    if idx.size == 0:
        raise DegenerateGroupError("cannot take a softmax over an empty index set")
    return softmax(z[idx], T)


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats, with 0 * log(0/q) taken as 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise InvalidInputError(f"shape mismatch: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise InvalidInputError("probabilities must be non-negative")
    support = p > 0
    if np.any(q[support] == 0):
        raise InfiniteDivergenceError("q has zero mass where p is positive")
    ps, qs = p[support], q[support]
    return max(float(np.sum(ps * (np.log(ps) - np.log(qs)))), 0.0)


def binary_split(p, group_a: Iterable[int]) -> np.ndarray:
    """Collapse ``p`` into ``[mass on group_a, mass elsewhere]``."""
    p = np.asarray(p, dtype=np.float64)
    idx = _index_set(group_a, p.size)
    if idx.size == 0 or idx.size == p.size:
        raise InvalidSplitError("group must be a non-empty proper subset of the indices")
    mask = np.zeros(p.size, dtype=bool)
    mask[idx] = True
    return np.array([p[mask].sum(), p[~mask].sum()])

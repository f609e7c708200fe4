"""Exact inference on discrete structural causal models.

A model is a DAG plus one conditional probability table per node. All
queries enumerate the full joint, so state spaces are capped at
``MAX_STATES`` assignments.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping

import numpy as np

from .dag import CausalDag, GraphError

MAX_STATES = 10**6
CPT_TOL = 1e-12


class ScmError(ValueError):
    pass


class ConditioningError(ScmError):
    """Conditioning on an event of probability zero."""


class StateSpaceError(ScmError):
    pass


@dataclass(frozen=True)
class Cpt:
    """P(node | parents). ``table`` has one axis per parent (in ``parents`` order) plus a last axis for the node."""

    parents: tuple[str, ...]
    table: np.ndarray


@dataclass(frozen=True)
class DiscreteScm:
    dag: CausalDag
    domains: Mapping[str, tuple[Hashable, ...]]
    cpts: Mapping[str, Cpt]

    def __post_init__(self):
        domains = {n: tuple(v) for n, v in self.domains.items()}
        if set(domains) != set(self.dag.nodes) or set(self.cpts) != set(self.dag.nodes):
            raise ScmError("every node needs a domain and a CPT")
        cpts = {}
        for n in self.dag.topological_order:
            if not domains[n]:
                raise ScmError(f"empty domain for {n}")
            cpt = self.cpts[n]
            if set(cpt.parents) != set(self.dag.parents[n]) or len(cpt.parents) != len(set(cpt.parents)):
                raise ScmError(f"CPT parents of {n} {cpt.parents} do not match graph parents {sorted(self.dag.parents[n])}")
            table = np.asarray(cpt.table, dtype=np.float64)
            shape = tuple(len(domains[p]) for p in cpt.parents) + (len(domains[n]),)
            if table.shape != shape:
                raise ScmError(f"CPT of {n} has shape {table.shape}, expected {shape}")
            if np.any(table < 0) or not np.all(np.isfinite(table)):
                raise ScmError(f"CPT of {n} has negative or non-finite entries")
            if np.any(np.abs(table.sum(axis=-1) - 1.0) > CPT_TOL):
                raise ScmError(f"CPT rows of {n} do not sum to 1")
            cpts[n] = Cpt(tuple(cpt.parents), table)
        object.__setattr__(self, "domains", domains)
        object.__setattr__(self, "cpts", cpts)

    @property
    def order(self) -> tuple[str, ...]:
        return self.dag.topological_order

    def value_index(self, node: str, value) -> int:
        try:
            return self.domains[node].index(value)
        except (KeyError, ValueError):
            raise ScmError(f"value {value!r} not in domain of {node!r}") from None


@dataclass(frozen=True)
class JointTable:
    """Dense joint distribution; axis ``i`` corresponds to ``nodes[i]``."""

    nodes: tuple[str, ...]
    domains: Mapping[str, tuple]
    probs: np.ndarray

    def axis(self, node: str) -> int:
        return self.nodes.index(node)

    def items(self):
        """Yield ``(assignment dict, probability)`` over every full assignment."""
        for idx in itertools.product(*(range(len(self.domains[n])) for n in self.nodes)):
            yield {n: self.domains[n][i] for n, i in zip(self.nodes, idx)}, float(self.probs[idx])

    def marginal(self, keep: Iterable[str]) -> np.ndarray:
        """Marginal over ``keep``, axes in the order given."""
        keep = list(keep)
        drop = tuple(i for i, n in enumerate(self.nodes) if n not in keep)
        m = self.probs.sum(axis=drop)
        remaining = [n for n in self.nodes if n in keep]
        return np.transpose(m, [remaining.index(n) for n in keep])


def joint_distribution(scm: DiscreteScm) -> JointTable:
    nodes = scm.order
    shape = tuple(len(scm.domains[n]) for n in nodes)
    if int(np.prod(shape, dtype=np.float64)) > MAX_STATES:
        raise StateSpaceError(f"{np.prod(shape, dtype=np.float64):.0f} joint states exceed {MAX_STATES}")
    probs = np.ones(shape)
    for n in nodes:
        cpt = scm.cpts[n]
        axes = [nodes.index(p) for p in cpt.parents] + [nodes.index(n)]
        # lay the CPT out along its own axes, broadcast over the rest
        perm = np.argsort(axes)
        view_shape = [1] * len(nodes)
        for a in axes:
            view_shape[a] = shape[a]
        probs = probs * np.transpose(cpt.table, perm).reshape(view_shape)
    return JointTable(nodes, scm.domains, probs)


def _evidence_index(scm: DiscreteScm, joint: JointTable, evidence: Mapping[str, Hashable]):
    idx: list = [slice(None)] * len(joint.nodes)
    for node, value in evidence.items():
        if node not in joint.nodes:
            raise ScmError(f"unknown node {node!r}")
        idx[joint.axis(node)] = scm.value_index(node, value)
    return tuple(idx)


def _conditional_from_joint(scm: DiscreteScm, joint: JointTable, target: str,
                            evidence: Mapping[str, Hashable]) -> np.ndarray:
    if target in evidence:
        raise ScmError(f"target {target!r} is also in the evidence")
    sub = joint.probs[_evidence_index(scm, joint, evidence)]
    # remaining axes: nodes not fixed by evidence, in joint order
    remaining = [n for n in joint.nodes if n not in evidence]
    t_axis = remaining.index(target)
    marg = sub.sum(axis=tuple(i for i in range(len(remaining)) if i != t_axis))
    total = marg.sum()
    if not total > 0:
        raise ConditioningError(f"P({', '.join(f'{k}={v}' for k, v in evidence.items())}) = 0")
    return marg / total


def conditional(scm: DiscreteScm, target: str, evidence: Mapping[str, Hashable] | None = None) -> np.ndarray:
    """Exact P(target | evidence) as a vector over the target's domain."""
    return _conditional_from_joint(scm, joint_distribution(scm), target, dict(evidence or {}))


def intervene(scm: DiscreteScm, assignments: Mapping[str, Hashable]) -> DiscreteScm:
    """Mutilated model: each assigned node loses its parents and becomes a point mass."""
    dag = scm.dag.without_incoming(assignments)
    cpts = dict(scm.cpts)
    for node, value in assignments.items():
        if node not in scm.dag.nodes:
            raise ScmError(f"unknown node {node!r}")
        point = np.zeros(len(scm.domains[node]))
        point[scm.value_index(node, value)] = 1.0
        cpts[node] = Cpt((), point)
    return DiscreteScm(dag, scm.domains, cpts)


def interventional(scm: DiscreteScm, target: str, do: Mapping[str, Hashable],
                   evidence: Mapping[str, Hashable] | None = None) -> np.ndarray:
    """P(target | do(...), evidence), evaluated in the mutilated model."""
    return conditional(intervene(scm, do), target, evidence)


def backdoor_adjust(scm: DiscreteScm, x: str, x_value: Hashable, y: str,
                    z: Iterable[str] = (), w: Mapping[str, Hashable] | None = None) -> np.ndarray:
    """sum_z P(y | x, w, z) P(z | w) as a vector over the domain of ``y``.

    With empty ``w`` this is the standard backdoor adjustment formula; with
    empty ``z`` it reduces to P(y | x, w).
    """
    z = list(z)
    w = dict(w or {})
    if len(set(z)) != len(z):
        raise ScmError("duplicate node in adjustment set")
    if set(z) & ({x, y} | set(w)) or x == y or x in w or y in w:
        raise ScmError("adjustment set must be disjoint from x, y and the covariates")
    for n in [x, y, *z, *w]:
        if n not in scm.dag.nodes:
            raise GraphError(f"unknown node {n!r}")
    joint = joint_distribution(scm)
    out = np.zeros(len(scm.domains[y]))
    if not z:
        return _conditional_from_joint(scm, joint, y, {**w, x: x_value})
    # P(z | w) over all strata at once
    pw = joint.probs[_evidence_index(scm, joint, w)].sum() if w else 1.0
    if not pw > 0:
        raise ConditioningError("covariate assignment has probability zero")
    for values in itertools.product(*(scm.domains[n] for n in z)):
        stratum = dict(zip(z, values))
        p_z = joint.probs[_evidence_index(scm, joint, {**w, **stratum})].sum() / pw
        if p_z == 0:
            continue
        out += _conditional_from_joint(scm, joint, y, {**w, **stratum, x: x_value}) * p_z
    return out


def conditional_mutual_information(scm: DiscreteScm, x: str, y: str, z: Iterable[str] = ()) -> float:
    """Exact I(x; y | z) in nats."""
    z = list(z)
    joint = joint_distribution(scm)
    pxyz = joint.marginal([x, y, *z])
    pxz = pxyz.sum(axis=1, keepdims=True)
    pyz = pxyz.sum(axis=0, keepdims=True)
    pz = pxyz.sum(axis=(0, 1), keepdims=True)
    live = pxyz > 0
    num = np.where(live, pxyz * pz, 1.0)
    den = np.where(live, pxz * pyz, 1.0)
    return float(np.sum(np.where(live, pxyz * np.log(num / den), 0.0)))


def random_scm(dag: CausalDag, seed: int, domain_size: int = 2,
               low: float = 0.05, high: float = 0.95) -> DiscreteScm:
    """Model on ``dag`` with CPT entries drawn from [low, high] and renormalized.

    For binary domains P(node=1 | parents) is drawn uniformly from [low, high]
    directly, so every probability stays inside that band.
    """
    rng = np.random.default_rng(seed)
    domains = {n: tuple(range(domain_size)) for n in dag.nodes}
    cpts = {}
    for n in dag.topological_order:
        parents = tuple(sorted(dag.parents[n]))
        shape = tuple(domain_size for _ in parents)
        if domain_size == 2:
            p1 = rng.uniform(low, high, size=shape)
            table = np.stack([1.0 - p1, p1], axis=-1)
        else:
            raw = rng.uniform(low, high, size=shape + (domain_size,))
            table = raw / raw.sum(axis=-1, keepdims=True)
        cpts[n] = Cpt(parents, table)
    return DiscreteScm(dag, domains, cpts)

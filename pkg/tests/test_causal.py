import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dnr.causal import (
    CapacityError,
    CausalDag,
    ConditioningError,
    Cpt,
    CycleError,
    DiscreteScm,
    GraphError,
    PathKind,
    ScmError,
    StateSpaceError,
    backdoor_adjust,
    classic_backdoor_paths,
    classify_paths,
    conditional,
    conditional_mutual_information,
    enumerate_paths,
    general_backdoor_paths,
    intervene,
    interventional,
    is_d_separated,
    is_path_blocked,
    joint_distribution,
    all_fixtures,
    random_scm,
    satisfies_backdoor_criterion,
)

FIG2 = all_fixtures()["fig2"].dag
FIG3B = all_fixtures()["fig3b"].dag


@st.composite
def dags(draw, min_nodes=2, max_nodes=7):
    n = draw(st.integers(min_nodes, max_nodes))
    names = [f"V{i}" for i in range(n)]
    pairs = [(names[i], names[j]) for i in range(n) for j in range(i + 1, n)]
    keep = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return CausalDag(names, [p for p, k in zip(pairs, keep) if k])


def to_nx(g: CausalDag) -> nx.DiGraph:
    d = nx.DiGraph()
    d.add_nodes_from(g.nodes)
    d.add_edges_from(g.edges)
    return d


def brute_force_paths(g: CausalDag, x: str, y: str) -> set[str]:
    """Every ordering of every subset of the other nodes, kept when consecutive nodes are adjacent."""
    others = sorted(g.nodes - {x, y})
    out = set()
    for r in range(len(others) + 1):
        for mid in itertools.permutations(others, r):
            seq = (x, *mid, y)
            parts = [x]
            ok = True
            for a, b in zip(seq, seq[1:]):
                if g.has_edge(a, b):
                    parts += ["->", b]
                elif g.has_edge(b, a):
                    parts += ["<-", b]
                else:
                    ok = False
                    break
            if ok:
                out.add(" ".join(parts))
    return out


# -- graphs --------------------------------------------------------------------

def test_fixture_edges():
    assert FIG2.edges == {("X", "Y"), ("X", "K"), ("K", "Y"), ("P", "K"), ("P", "F"), ("F", "Y")}
    assert FIG3B.edges == {("X", "Y"), ("X", "W"), ("Z", "W"), ("T", "Z"), ("T", "Y")}
    for f in all_fixtures().values():
        assert len(f.dag.topological_order) == len(f.dag.nodes)


def test_cycle_and_self_loop_rejected():
    with pytest.raises(CycleError):
        CausalDag.from_edges("A->B", "B->C", "C->A")
    with pytest.raises(GraphError):
        CausalDag.from_edges("A->A")


def test_capacity():
    g = CausalDag([f"N{i}" for i in range(21)], [("N0", "N1")])
    with pytest.raises(CapacityError):
        enumerate_paths(g, "N0", "N1")


def test_chain_single_path():
    g = CausalDag.from_edges("A->B", "B->C")
    assert [str(p) for p in enumerate_paths(g, "A", "C")] == ["A -> B -> C"]


def test_fig2_paths():
    assert sorted(str(p) for p in enumerate_paths(FIG2, "X", "Y")) == [
        "X -> K -> Y", "X -> K <- P -> F -> Y", "X -> Y"]


def test_fig3b_paths():
    assert sorted(str(p) for p in enumerate_paths(FIG3B, "X", "Y")) == ["X -> W <- Z <- T -> Y", "X -> Y"]


def test_blocking_rules():
    chain = CausalDag.from_edges("A->B", "B->C")
    (p,) = enumerate_paths(chain, "A", "C")
    assert is_path_blocked(chain, p, {"B"}) and not is_path_blocked(chain, p)
    coll = CausalDag.from_edges("A->B", "C->B", "B->D")
    (p,) = enumerate_paths(coll, "A", "C")
    assert is_path_blocked(coll, p) and not is_path_blocked(coll, p, {"D"})


def test_fig2_collider_at_k():
    (p,) = [q for q in enumerate_paths(FIG2, "X", "P") if len(q) == 2 and q.nodes[1] == "K"]
    assert is_path_blocked(FIG2, p) and not is_path_blocked(FIG2, p, {"K"})
    assert is_d_separated(FIG2, "X", "P")
    assert not is_d_separated(FIG2, "X", "P", {"K"})


def test_fork_separation():
    g = CausalDag.from_edges("B->A", "B->C")
    assert is_d_separated(g, "A", "C", {"B"}) and not is_d_separated(g, "A", "C")


def test_endpoint_in_conditioning_set():
    with pytest.raises(GraphError):
        is_d_separated(FIG2, "X", "Y", {"X"})


def test_classic_backdoor():
    g = CausalDag.from_edges("T->X", "T->Y", "X->Y")
    assert [str(p) for p in classic_backdoor_paths(g, "X", "Y")] == ["X <- T -> Y"]
    assert satisfies_backdoor_criterion(g, "X", "Y", {"T"})
    assert not satisfies_backdoor_criterion(g, "X", "Y")
    assert classic_backdoor_paths(FIG3B, "X", "Y") == []
    assert classic_backdoor_paths(FIG2, "X", "Y") == []
    med = CausalDag.from_edges("X->M", "M->Y")
    assert not satisfies_backdoor_criterion(med, "X", "Y", {"M"})


def test_general_backdoor_fig3c():
    (c,) = general_backdoor_paths(FIG3B, "X", "Y", {"W"})
    assert str(c.path) == "X -> W <- Z <- T -> Y"
    assert c.confounder == "T" and c.kind is PathKind.GENERAL_BACKDOOR


def test_general_backdoor_fig2_given_k():
    (c,) = general_backdoor_paths(FIG2, "X", "Y", {"K"})
    assert str(c.path) == "X -> K <- P -> F -> Y" and c.confounder == "P"
    assert general_backdoor_paths(FIG2, "X", "Y") == []


def test_classic_path_is_reported_as_classic():
    g = CausalDag.from_edges("T->X", "T->Y", "X->Y")
    (c,) = general_backdoor_paths(g, "X", "Y")
    assert c.kind is PathKind.CLASSIC_BACKDOOR and c.confounder == "T"


def test_direct_collider_is_spurious_not_backdoor():
    g = CausalDag.from_edges("X->W", "Y->W")
    (c,) = classify_paths(g, "X", "Y", {"W"})
    assert c.kind is PathKind.SPURIOUS and c.confounder is None
    assert general_backdoor_paths(g, "X", "Y", {"W"}) == []


@given(dags(), st.data())
def test_paths_match_brute_force(g, data):
    x, y = data.draw(st.sampled_from(sorted(itertools.permutations(sorted(g.nodes), 2))))
    found = [str(p) for p in enumerate_paths(g, x, y)]
    assert len(found) == len(set(found))
    assert set(found) == brute_force_paths(g, x, y)


@given(dags(), st.data())
def test_d_separation_matches_networkx(g, data):
    x, y = data.draw(st.sampled_from(sorted(itertools.permutations(sorted(g.nodes), 2))))
    z = data.draw(st.sets(st.sampled_from(sorted(g.nodes - {x, y})))) if len(g.nodes) > 2 else set()
    assert is_d_separated(g, x, y, z) == nx.is_d_separator(to_nx(g), {x}, {y}, set(z))


@given(dags(max_nodes=6), st.data())
def test_open_paths_are_never_directed_when_backdoor(g, data):
    x, y = data.draw(st.sampled_from(sorted(itertools.permutations(sorted(g.nodes), 2))))
    for c in general_backdoor_paths(g, x, y):
        assert c.open_given_conditioning and not c.is_directed_causal
        assert c.confounder is not None and c.confounder != x
        if c.kind is PathKind.GENERAL_BACKDOOR:
            assert c.confounder != y


# -- discrete SCMs -------------------------------------------------------------

def single(p1=0.3):
    return DiscreteScm(CausalDag(["A"]), {"A": (0, 1)}, {"A": Cpt((), np.array([1 - p1, p1]))})


def test_single_node_joint():
    np.testing.assert_allclose(joint_distribution(single()).probs, [0.7, 0.3])


def test_independent_product():
    g = CausalDag(["A", "B"])
    scm = DiscreteScm(g, {"A": (0, 1), "B": (0, 1)},
                      {"A": Cpt((), np.array([0.2, 0.8])), "B": Cpt((), np.array([0.6, 0.4]))})
    j = joint_distribution(scm)
    np.testing.assert_allclose(j.marginal(["A", "B"]), np.outer([0.2, 0.8], [0.6, 0.4]), rtol=1e-15)


def test_joint_normalized_and_enumeration_oracle():
    scm = random_scm(CausalDag.from_edges("A->B", "A->C", "B->D", "C->D"), seed=4)
    j = joint_distribution(scm)
    assert j.probs.sum() == pytest.approx(1.0, abs=1e-12)
    for assignment, p in j.items():
        prod = 1.0
        for n in scm.order:
            cpt = scm.cpts[n]
            idx = tuple(scm.value_index(q, assignment[q]) for q in cpt.parents) + (scm.value_index(n, assignment[n]),)
            prod *= cpt.table[idx]
        assert p == pytest.approx(prod, rel=1e-14)


def test_conditional_by_enumeration():
    scm = random_scm(CausalDag.from_edges("A->B", "B->C"), seed=1)
    num = np.zeros(2)
    for a, p in joint_distribution(scm).items():
        if a["C"] == 1:
            num[a["A"]] += p
    np.testing.assert_allclose(conditional(scm, "A", {"C": 1}), num / num.sum(), rtol=1e-13)


def test_zero_probability_conditioning():
    with pytest.raises(ConditioningError):
        conditional(single(1.0).__class__(CausalDag(["A", "B"]), {"A": (0, 1), "B": (0, 1)},
                                          {"A": Cpt((), np.array([1.0, 0.0])), "B": Cpt((), np.array([.5, .5]))}),
                    "B", {"A": 1})


def test_cpt_validation():
    g = CausalDag.from_edges("A->B")
    with pytest.raises(ScmError):
        DiscreteScm(g, {"A": (0, 1), "B": (0, 1)},
                    {"A": Cpt((), np.array([0.5, 0.5])), "B": Cpt((), np.array([0.5, 0.5]))})
    with pytest.raises(ScmError):
        DiscreteScm(g, {"A": (0, 1), "B": (0, 1)},
                    {"A": Cpt((), np.array([0.5, 0.6])), "B": Cpt(("A",), np.full((2, 2), 0.5))})


def test_state_space_cap():
    g = CausalDag([f"N{i}" for i in range(7)])
    scm = random_scm(g, 0, domain_size=8)
    with pytest.raises(StateSpaceError):
        joint_distribution(scm)


def test_intervene_on_root_equals_conditioning():
    scm = random_scm(FIG2, seed=5)
    for xv in (0, 1):
        np.testing.assert_allclose(interventional(scm, "Y", {"X": xv}), conditional(scm, "Y", {"X": xv}),
                                   rtol=0, atol=1e-14)


def test_intervene_truncated_factorization():
    g = CausalDag.from_edges("T->X", "T->Y", "X->Y")
    scm = random_scm(g, seed=11)
    pt = conditional(scm, "T")
    for xv in (0, 1):
        expect = sum(conditional(scm, "Y", {"X": xv, "T": t}) * pt[t] for t in (0, 1))
        np.testing.assert_allclose(interventional(scm, "Y", {"X": xv}), expect, atol=1e-14)
        np.testing.assert_allclose(backdoor_adjust(scm, "X", xv, "Y", ["T"]), expect, atol=1e-14)
        mut = intervene(scm, {"X": xv})
        assert joint_distribution(mut).probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert mut.dag.parents["X"] == frozenset()


def test_empty_adjustment_is_conditional():
    scm = random_scm(FIG3B, seed=2)
    np.testing.assert_allclose(backdoor_adjust(scm, "X", 1, "Y"), conditional(scm, "Y", {"X": 1}), atol=1e-15)


def test_adjustment_set_must_be_disjoint():
    scm = random_scm(FIG3B, seed=2)
    with pytest.raises(ScmError):
        backdoor_adjust(scm, "X", 1, "Y", ["X"])


def test_cmi_zero_for_independent_and_positive_for_dependent():
    scm = random_scm(FIG2, seed=3)
    assert abs(conditional_mutual_information(scm, "X", "P")) < 1e-12
    assert conditional_mutual_information(scm, "X", "P", ["K"]) > 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_covariate_conditional_adjustment_fig2(seed):
    # Weighting the F strata by P(f | x, k) recovers P(Y | do(X=x), K=k).
    scm = random_scm(FIG2, seed)
    for x, k in itertools.product((0, 1), (0, 1)):
        pf = conditional(scm, "F", {"X": x, "K": k})
        est = sum(conditional(scm, "Y", {"X": x, "K": k, "F": f}) * pf[f] for f in (0, 1))
        oracle = interventional(scm, "Y", {"X": x}, {"K": k})
        np.testing.assert_allclose(est, oracle, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_unconditioned_stratum_weights_give_joint_intervention(seed):
    # Weighting the F strata by the marginal P(f) gives P(Y | do(X=x, K=k)).
    scm = random_scm(FIG2, seed)
    pf = conditional(scm, "F")
    for x, k in itertools.product((0, 1), (0, 1)):
        est = sum(conditional(scm, "Y", {"X": x, "K": k, "F": f}) * pf[f] for f in (0, 1))
        np.testing.assert_allclose(est, interventional(scm, "Y", {"X": x, "K": k}), rtol=0, atol=1e-12)


@given(dags(max_nodes=5), st.integers(0, 10**6), st.data())
def test_backdoor_soundness_on_random_graphs(g, seed, data):
    x, y = data.draw(st.sampled_from(sorted(itertools.permutations(sorted(g.nodes), 2))))
    z = sorted(data.draw(st.sets(st.sampled_from(sorted(g.nodes - {x, y})))) if len(g.nodes) > 2 else set())
    if not satisfies_backdoor_criterion(g, x, y, z):
        return
    scm = random_scm(g, seed)
    for xv in (0, 1):
        np.testing.assert_allclose(backdoor_adjust(scm, x, xv, y, z), interventional(scm, y, {x: xv}),
                                   rtol=0, atol=1e-12)


@given(dags(max_nodes=5), st.integers(0, 10**6), st.data())
def test_d_separation_implies_zero_cmi(g, seed, data):
    x, y = data.draw(st.sampled_from(sorted(itertools.permutations(sorted(g.nodes), 2))))
    z = sorted(data.draw(st.sets(st.sampled_from(sorted(g.nodes - {x, y})))) if len(g.nodes) > 2 else set())
    if is_d_separated(g, x, y, z):
        assert conditional_mutual_information(random_scm(g, seed), x, y, z) < 1e-9

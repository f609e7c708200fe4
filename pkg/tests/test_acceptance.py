"""Acceptance criteria, each checked at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary at the end
lists one PASS/FAIL line per criterion (criterion 7 reports WARN instead of
failing).
"""

import itertools
import json
import time
import warnings

import numpy as np
import pytest
from scipy.special import rel_entr, softmax

from dnr.causal import (
    backdoor_adjust,
    classic_backdoor_paths,
    conditional_mutual_information,
    general_backdoor_paths,
    interventional,
    is_d_separated,
    all_fixtures,
    satisfies_backdoor_criterion,
)
from dnr.cli import main as cli_main
from dnr.kd_losses import (
    DnRHyperparams,
    SampleBatch,
    decompose,
    dnr_gradient,
    dnr_loss_from_batch,
    dnr_with_tdd,
    finite_difference_gradient,
    gradient_relative_error,
)
from dnr.toy import (
    DNR,
    DNR_WITH_TDD,
    NO_KD,
    TABLE3_VARIANTS,
    VANILLA_KD,
    SyntheticTaskSpec,
    TeacherSpec,
    TrainConfig,
    paired_greater,
    run_ablation,
)

TEMPERATURES = (1.0, 5.0, 10.0)
LOGIT_STD = 2.0
N_SEEDS_CAUSAL = 50


def direct_kd(teacher, student, T):
    """Per-row KL(softmax(t/T) || softmax(s/T)) evaluated straight from the definition."""
    return rel_entr(softmax(teacher / T, axis=1), softmax(student / T, axis=1)).sum(axis=1)


def draw_batch(rng, n, c, mode="mixed"):
    teacher = rng.normal(0.0, LOGIT_STD, size=(n, c))
    student = rng.normal(0.0, LOGIT_STD, size=(n, c))
    bg = c - 1
    if mode == "foreground":
        labels = rng.integers(0, bg, size=n)
    elif mode == "background":
        labels = np.full(n, bg)
    else:
        labels = rng.integers(0, c, size=n)
    return SampleBatch(teacher, student, labels, np.full(n, bg))


def test_criterion_1_decomposition_identity(criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        b = draw_batch(rng, int(rng.integers(1, 9)), int(rng.integers(3, 11)))
        T = float(rng.choice(TEMPERATURES))
        dec = decompose(b, T)
        worst = max(worst, float(np.max(np.abs(dec.recombined() - direct_kd(b.teacher_logits, b.student_logits, T)))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 5.0
    criterion("criterion 1 (decomposition identity)", ok,
              f"max residual {worst:.2e} (< 1e-9) over 1000 batches in {elapsed:.2f}s (< 5s)")
    assert ok


def test_criterion_2_gradient(criterion):
    rng = np.random.default_rng(202)
    base = DnRHyperparams.preset("coco")
    t0 = time.perf_counter()
    worst, degenerate = 0.0, 0
    for i in range(100):
        # every fourth batch has an empty group, and N_C = 3 leaves FCD with a single class
        mode = ("mixed", "foreground", "background", "mixed")[i % 4]
        c = 3 if i % 5 == 0 else int(rng.integers(3, 11))
        b = draw_batch(rng, int(rng.integers(1, 9)), c, mode)
        degenerate += mode != "mixed" or c == 3
        h = DnRHyperparams(base.alpha, base.beta, float(rng.choice(TEMPERATURES)), base.loss_weight)
        fd = finite_difference_gradient(dnr_loss_from_batch, b, h, step=1e-5)
        worst = max(worst, gradient_relative_error(dnr_gradient(b, h), fd))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 10.0
    criterion("criterion 2 (gradient vs finite differences)", ok,
              f"max relative error {worst:.2e} (< 1e-5) over 100 batches ({degenerate} degenerate) "
              f"in {elapsed:.2f}s (< 10s)")
    assert ok


def test_criterion_3_vanilla_bridge(criterion):
    rng = np.random.default_rng(303)
    worst, n_bg = 0.0, 0
    for i in range(1000):
        c = int(rng.integers(3, 11))
        b = draw_batch(rng, 1, c, "background" if i % 2 else "foreground")
        n_bg += i % 2
        T = float(rng.choice(TEMPERATURES))
        loss = dnr_with_tdd(decompose(b, T), DnRHyperparams(1.0, 1.0, T), include_tdd=True)
        worst = max(worst, abs(loss - float(direct_kd(b.teacher_logits, b.student_logits, T)[0])))
    ok = worst < 1e-9
    criterion("criterion 3 (alpha=beta=1 + TDD equals vanilla KD)", ok,
              f"max |diff| {worst:.2e} (< 1e-9) over 1000 samples ({1000 - n_bg} fg, {n_bg} bg)")
    assert ok


def _subsets(items):
    items = sorted(items)
    return itertools.chain.from_iterable(itertools.combinations(items, r) for r in range(len(items) + 1))


def test_criterion_4a_dsep_implies_independence(criterion):
    t0 = time.perf_counter()
    worst, checks = 0.0, 0
    for fixture in all_fixtures().values():
        g = fixture.dag
        queries = [(x, y, z) for x, y in itertools.combinations(sorted(g.nodes), 2)
                   for z in _subsets(g.nodes - {x, y}) if is_d_separated(g, x, y, z)]
        for seed in range(N_SEEDS_CAUSAL):
            scm = fixture.scm(seed)
            for x, y, z in queries:
                worst = max(worst, conditional_mutual_information(scm, x, y, z))
                checks += 1
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9
    criterion("criterion 4a (d-separation implies zero CMI)", ok,
              f"max CMI {worst:.2e} (< 1e-9) over {checks} separated triples x {N_SEEDS_CAUSAL} seeds "
              f"in {elapsed:.1f}s")
    assert ok


def test_criterion_4b_backdoor_soundness(criterion):
    t0 = time.perf_counter()
    worst, checks = 0.0, 0
    for fixture in all_fixtures().values():
        g = fixture.dag
        queries = [(x, y, z) for x, y in itertools.permutations(sorted(g.nodes), 2)
                   for z in _subsets(g.nodes - {x, y}) if satisfies_backdoor_criterion(g, x, y, z)]
        for seed in range(N_SEEDS_CAUSAL):
            scm = fixture.scm(seed)
            for x, y, z in queries:
                for xv in scm.domains[x]:
                    diff = np.max(np.abs(backdoor_adjust(scm, x, xv, y, z) - interventional(scm, y, {x: xv})))
                    worst = max(worst, float(diff))
                    checks += 1
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-12
    criterion("criterion 4b (backdoor adjustment matches intervention)", ok,
              f"max |diff| {worst:.2e} (< 1e-12) over {checks} adjustments in {elapsed:.1f}s")
    assert ok


def test_criterion_4c_covariate_specific_adjustment(criterion):
    # sum_f P(y | x, k, f) P(f | k) against P(Y | do(X=x), K=k), both exact.
    fixture = all_fixtures()["fig2"]
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(N_SEEDS_CAUSAL):
        scm = fixture.scm(seed)
        for x, k in itertools.product(scm.domains["X"], scm.domains["K"]):
            est = backdoor_adjust(scm, "X", x, "Y", ["F"], {"K": k})
            oracle = interventional(scm, "Y", {"X": x}, {"K": k})
            worst = max(worst, float(np.max(np.abs(est - oracle))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-12 and elapsed < 30.0
    criterion("criterion 4c (covariate-specific adjustment over F given K)", ok,
              f"max |diff| {worst:.2e} (< 1e-12) over {N_SEEDS_CAUSAL} seeds in {elapsed:.1f}s")
    assert ok


def test_criterion_5_structural_motivation(criterion):
    fx = all_fixtures()
    fig2, fig3b = fx["fig2"].dag, fx["fig3b"].dag
    general = general_backdoor_paths(fig2, "X", "Y", {"K"})
    fig3c = general_backdoor_paths(fx["fig3c"].dag, "X", "Y", set(fx["fig3c"].conditioning))
    checks = {
        "fig2 has no classic backdoor path": classic_backdoor_paths(fig2, "X", "Y") == [],
        "fig2 given K flags exactly X->K<-P->F->Y":
            [str(c.path) for c in general] == ["X -> K <- P -> F -> Y"],
        "fig3b accepts the empty set": satisfies_backdoor_criterion(fig3b, "X", "Y", ()),
        "fig3c flags X->W<-Z<-T->Y with confounder T":
            [(str(c.path), c.confounder) for c in fig3c] == [("X -> W <- Z <- T -> Y", "T")],
    }
    ok = all(checks.values())
    criterion("criterion 5 (structural reproduction)", ok,
              "; ".join(f"{k}: {'yes' if v else 'NO'}" for k, v in checks.items()))
    assert ok


@pytest.fixture(scope="module")
def toy_defaults():
    return SyntheticTaskSpec(), TeacherSpec(), TrainConfig()


@pytest.mark.slow
def test_criterion_6_paradox_direction(criterion, toy_defaults):
    spec, t_spec, cfg = toy_defaults
    seeds = range(20)
    t0 = time.perf_counter()
    bad = run_ablation(spec, TeacherSpec(corruption_rate=0.4), cfg, [NO_KD, VANILLA_KD, DNR], seeds)
    clean = run_ablation(spec, TeacherSpec(corruption_rate=0.0), cfg, [NO_KD, VANILLA_KD, DNR], seeds)
    elapsed = time.perf_counter() - t0
    test = paired_greater(bad.row(DNR).novel_accuracy, bad.row(VANILLA_KD).novel_accuracy)
    kd_clean, none_clean = clean.row(VANILLA_KD).mean, clean.row(NO_KD).mean
    ok_bad = bad.row(DNR).mean > bad.row(VANILLA_KD).mean and test.p_value < 0.05
    ok_clean = kd_clean >= none_clean
    ok = ok_bad and ok_clean and elapsed < 300
    criterion("criterion 6 (paradox direction)", ok,
              f"rho=0.4: D&R {bad.row(DNR).mean:.4f} vs KD {bad.row(VANILLA_KD).mean:.4f}, "
              f"paired one-sided p={test.p_value:.2e} (< 0.05); rho=0: KD {kd_clean:.4f} >= none "
              f"{none_clean:.4f}; {elapsed:.0f}s (< 300s)")
    assert ok


@pytest.mark.slow
def test_criterion_7_tdd_ablation_soft(criterion, toy_defaults):
    spec, _, cfg = toy_defaults
    table = run_ablation(spec, TeacherSpec(corruption_rate=0.4), cfg, TABLE3_VARIANTS, range(20))
    with_tdd, without = table.row(DNR_WITH_TDD), table.row(DNR)
    test = paired_greater(with_tdd.novel_accuracy, without.novel_accuracy)
    ok = with_tdd.mean <= without.mean
    rows = ", ".join(f"{r.variant} {r.mean:.4f}" for r in table.rows)
    criterion("criterion 7 (adding TDD does not help, soft)", ok,
              f"D&R+TDD {with_tdd.mean:.4f} vs D&R {without.mean:.4f}, p(TDD improves)={test.p_value:.2e}; "
              f"rows: {rows}", soft=True)
    if not ok:
        warnings.warn("adding TDD improved mean novel accuracy in the toy ablation", stacklevel=1)


def test_criterion_8_cli_determinism(criterion, tmp_path):
    batch = tmp_path / "batch.jsonl"
    batch.write_text('{"teacher": [2.0, 0.5, -1.0, 0.3], "student": [1.0, 1.0, 0.0, -0.5], "label": 0}\n'
                     '{"teacher": [0.1, -0.4, 0.2, 1.5], "student": [0.0, 0.3, -0.2, 0.4], "label": "bg"}\n')
    graph = tmp_path / "g.txt"
    graph.write_text("T -> X\nT -> Y\nX -> Y\n")
    commands = {
        "decompose": ["decompose", str(batch)],
        "gradcheck": ["gradcheck", "--trials", "20"],
        "causal dsep": ["causal", "--fixture", "fig2", "dsep", "X", "P", "--given", "K"],
        "causal backdoor": ["causal", "--graph", str(graph), "backdoor", "X", "Y", "--set", "T"],
        "causal general-backdoor": ["causal", "--fixture", "fig3b", "general-backdoor", "X", "Y", "--given", "W"],
        "causal adjust": ["causal", "--fixture", "fig2", "adjust", "X", "Y", "--given", "K=1", "--set", "F"],
        "toy": ["toy", "--rho", "0.4"],
        "ablate": ["ablate", "--seeds", "2"],
        "paradox": ["paradox", "--rhos", "0,0.4", "--seeds", "2"],
    }
    mismatched = []
    for name, argv in commands.items():
        for fmt in ("records", "csv", "table"):
            outs = []
            for rep in range(2):
                path = tmp_path / f"{name.replace(' ', '_')}.{fmt}.{rep}"
                code = cli_main([*argv, "--format", fmt, "--output", str(path)])
                assert code == 0, (name, code)
                outs.append(path.read_bytes())
            if outs[0] != outs[1]:
                mismatched.append(f"{name}/{fmt}")
        json.loads((tmp_path / f"{name.replace(' ', '_')}.records.0").read_text())
    ok = not mismatched
    criterion("criterion 8 (CLI determinism)", ok,
              f"{len(commands)} subcommand invocations x 3 formats rerun byte-identical"
              + (f"; mismatched: {mismatched}" if mismatched else ""))
    assert ok

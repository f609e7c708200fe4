"""Built-in graphs: the knowledge-distillation SCM and the worked backdoor examples.

``fig2`` nodes: X image data, Y label, K task-specific classification
knowledge, P pre-trained open-set knowledge, F foreground/background
discriminant knowledge.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dag import CausalDag
from .scm import DiscreteScm, random_scm


@dataclass(frozen=True)
class Fixture:
    name: str
    dag: CausalDag
    conditioning: frozenset[str]
    description: str

    def scm(self, seed: int, domain_size: int = 2) -> DiscreteScm:
        return random_scm(self.dag, seed, domain_size)


_FIG2 = CausalDag.from_edges("X->Y", "X->K", "K->Y", "P->K", "P->F", "F->Y")
_FIG3A = CausalDag.from_edges("T->X", "T->Y", "X->Y")
_FIG3B = CausalDag.from_edges("X->Y", "X->W", "Z->W", "T->Z", "T->Y")


def all_fixtures() -> dict[str, Fixture]:
    return {
        "fig2": Fixture("fig2", _FIG2, frozenset(),
                        "distillation SCM; conditioning on K opens X -> K <- P"),
        "fig2-given-k": Fixture("fig2-given-k", _FIG2, frozenset({"K"}),
                                "distillation SCM with the task knowledge K held fixed"),
        "fig3a": Fixture("fig3a", _FIG3A, frozenset(), "textbook confounder T of X and Y"),
        "fig3b": Fixture("fig3b", _FIG3B, frozenset(),
                         "collider W blocks Y <- T -> Z -> W <- X"),
        "fig3c": Fixture("fig3c", _FIG3B, frozenset({"W"}),
                         "fig3b conditioned on W: the collider path opens"),
        # The X - Z dependence drawn for this case has no generative edge; it is
        # the dependence induced by conditioning on W.
        "fig3d": Fixture("fig3d", _FIG3B, frozenset({"W"}),
                         "fig3c read through the induced X - Z dependence; T confounds X and Y"),
    }


def get_fixture(name: str) -> Fixture:
    fixtures = all_fixtures()
    try:
        return fixtures[name]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(fixtures)}") from None

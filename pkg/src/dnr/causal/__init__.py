from .dag import (
    BACKDOOR_KINDS,
    CapacityError,
    CausalDag,
    CycleError,
    GraphError,
    NodePath,
    PathClassification,
    PathKind,
    classic_backdoor_paths,
    classify_path,
    classify_paths,
    enumerate_paths,
    general_backdoor_paths,
    is_d_separated,
    is_path_blocked,
    open_paths,
    satisfies_backdoor_criterion,
)
from .fixtures import Fixture, get_fixture, all_fixtures
from .scm import (
    ConditioningError,
    Cpt,
    DiscreteScm,
    JointTable,
    ScmError,
    StateSpaceError,
    backdoor_adjust,
    conditional,
    conditional_mutual_information,
    intervene,
    interventional,
    joint_distribution,
    random_scm,
)

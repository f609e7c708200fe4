from .experiment import (
    PARADOX_VARIANTS,
    AblationRow,
    AblationTable,
    PairedTest,
    RunResult,
    paired_greater,
    run_ablation,
    run_grid,
    run_paradox,
    run_pipeline,
    seeded,
)
from .task import Dataset, SyntheticTaskSpec, Task, generate_task
from .teacher import Teacher, TeacherSpec, build_teacher
from .train import (
    DNR,
    DNR_WITH_TDD,
    NO_KD,
    TABLE3_VARIANTS,
    VANILLA_KD,
    EvalReport,
    LinearStudent,
    TrainConfig,
    TrainingDivergedError,
    Variant,
    cross_entropy,
    evaluate,
    finetune_all,
    train_base,
)

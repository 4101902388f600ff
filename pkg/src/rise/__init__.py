"""Distillation engine with text-embedding distance regularizers.

Trains a small projection student against a frozen vision-language teacher
using four combinable loss terms (cross-entropy, softened-KL hint, absolute
and relative text-embedding distances), evaluates it leave-one-domain-out,
and ships a synthetic multi-domain benchmark plus gradient-check and
ablation tooling.
"""

__version__ = "0.1.0"

from .data import (Dataset, LabeledSample, SynthParams, generate_synthetic,
                   read_dataset, write_dataset, zero_shot_teacher_accuracy)
from .errors import (ConfigError, DegenerateVector, DimError, EmptyInput,
                     FormatError, IoError, RiseError, TrainingDiverged)
from .losses import LossBreakdown, LossConfig, loss_gradients, total_loss
from .student import StudentModel, forward, init_student, load_student, predict, save_student
from .teacher import (TeacherTable, derive_teacher_variant, load_teacher_table,
                      save_teacher_table, supervision_target, teacher_logits,
                      teacher_soft_targets)
from .training import (EvalReport, TrainConfig, ablation_sweep, evaluate_ensemble,
                       leave_one_domain_out, mix_teacher_sweep, split_train_val, train)

__all__ = [
    "__version__",
    "ConfigError", "DegenerateVector", "DimError", "EmptyInput",
    "FormatError", "IoError", "RiseError", "TrainingDiverged",
    "Dataset", "LabeledSample", "SynthParams", "generate_synthetic",
    "read_dataset", "write_dataset", "zero_shot_teacher_accuracy",
    "LossBreakdown", "LossConfig", "loss_gradients", "total_loss",
    "StudentModel", "forward", "init_student", "load_student", "predict",
    "save_student",
    "TeacherTable", "derive_teacher_variant", "load_teacher_table",
    "save_teacher_table", "supervision_target", "teacher_logits",
    "teacher_soft_targets",
    "EvalReport", "TrainConfig", "ablation_sweep", "evaluate_ensemble",
    "leave_one_domain_out", "mix_teacher_sweep", "split_train_val", "train",
]

"""Quorum-voted early-exit ensemble inference with exact MACs accounting.

The library is organized around a small pipeline: load or train an ensemble
of early-exit classifiers, run per-sample adaptive inference (incremental
cost-ordered voting, statistically validated exits), account latency/energy
proxies exactly, and report calibration/diversity/usage metrics. A toy
architecture search (relaxed categorical sampling, variational fitting,
repulsive particle sampling) closes the loop end to end.
"""

from .bundle import (
    Bundle,
    BundleValidationError,
    CostModel,
    LabelVector,
    PredictionTensor,
    read_bundle,
    write_bundle,
)
from .engine import (
    DatasetSummary,
    InferenceTrace,
    StageRecord,
    infer_dataset,
    infer_sample,
)
from .gate import (
    CriterionKind,
    ExitCriterion,
    GateDecision,
    evaluate_gate,
    t_critical,
)
from .metrics import (
    CalibrationReport,
    DiversityReport,
    SweepRow,
    UsageReport,
    calibration_by_exit,
    diversity_report,
    ece,
    ppd,
    sweep,
    usage_report,
)
from .search import (
    ArchParams,
    Particle,
    SVGDConfig,
    elbo_step,
    fit_posterior,
    gumbel_sample,
    init_swarm,
    kl_uniform,
    macs_penalty,
    make_logits_posterior,
    run_svgd,
    select_ensemble,
    svgd_rd_step,
)
from .supernet import ToySupernet, build_supernet
from .toytrain import (
    JointLossConfig,
    SyntheticTask,
    TaskData,
    ToyLearner,
    ensemble_bundle,
    export_ensemble,
    gen_task,
    train_joint,
)
from .voting import (
    OutcomeKind,
    QuorumOutcome,
    QuorumState,
    cast_vote,
    quorum_size,
    run_quorum,
    vote_order,
)

__version__ = "0.1.0"

__all__ = [
    "Bundle",
    "BundleValidationError",
    "CostModel",
    "LabelVector",
    "PredictionTensor",
    "read_bundle",
    "write_bundle",
    "DatasetSummary",
    "InferenceTrace",
    "StageRecord",
    "infer_dataset",
    "infer_sample",
    "CriterionKind",
    "ExitCriterion",
    "GateDecision",
    "evaluate_gate",
    "t_critical",
    "CalibrationReport",
    "DiversityReport",
    "SweepRow",
    "UsageReport",
    "calibration_by_exit",
    "diversity_report",
    "ece",
    "ppd",
    "sweep",
    "usage_report",
    "ArchParams",
    "Particle",
    "SVGDConfig",
    "elbo_step",
    "fit_posterior",
    "gumbel_sample",
    "init_swarm",
    "kl_uniform",
    "macs_penalty",
    "make_logits_posterior",
    "run_svgd",
    "select_ensemble",
    "svgd_rd_step",
    "ToySupernet",
    "build_supernet",
    "JointLossConfig",
    "SyntheticTask",
    "TaskData",
    "ToyLearner",
    "ensemble_bundle",
    "export_ensemble",
    "gen_task",
    "train_joint",
    "OutcomeKind",
    "QuorumOutcome",
    "QuorumState",
    "cast_vote",
    "quorum_size",
    "run_quorum",
    "vote_order",
]

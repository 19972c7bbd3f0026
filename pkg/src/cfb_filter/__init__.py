"""Open-set pseudo-label filtering with class-wise feature banks."""

from .bank import BankSnapshot, ClassFeatureBank, FeatureBankSet, new_bank_set, restore, snapshot
from .exceptions import (
    CFBError,
    ConfigurationError,
    FormatError,
    JoinError,
    RangeError,
    SizeError,
    UnknownClassError,
    ValidationError,
    WarmupError,
)
from .filtering import (
    FilterDecision,
    PseudoPrediction,
    baseline_filter,
    decisions_to_jsonl,
    energy_score,
    entropy_score,
    filter_predictions,
    msp_score,
)
from .metrics import FilterConfusion, auroc, filter_confusion, pseudo_purity
from .scoring import cosine_distance, k_from_ratio, knn_indices, ood_score, ood_scores, prototype_scores
from .threshold import (
    BetaSchedule,
    ClassStats,
    ThresholdPolicy,
    ThresholdTracker,
    beta_at,
    class_stats,
    threshold,
    thresholds_for_bank,
)

from .estimator import CFBOODDetector
from .sim import (
    FilterConfig,
    SimState,
    StreamConfig,
    SurrogateDetector,
    TrainConfig,
    ema_update,
    gen_stream,
    predict,
    run_burn_in,
    run_mutual_learning,
    simulate,
    student_update,
)

__version__ = "0.1.0"

"""Constraint-aware random hot deck multiple imputation for weekly panels."""

from .counts import CountDraw, count_evidence, impute_counts, impute_counts_sequential
from .donors import (
    DonorPool,
    MatchLadder,
    MatchPredicate,
    NoDonors,
    PredicateKind,
    Rung,
    abb_resample,
    build_pool,
    count_ladder,
    frequency_ladder,
    sport_ladder,
    window,
)
from .engine import (
    PooledEstimate,
    ReplicateResult,
    RunConfig,
    analyze,
    pool_estimates,
    run_imputations,
)
from .files import ConfigError, ParseError, ValidationError, load_panel, save_completed, save_panel
from .frequency import FrequencyDraw, FrequencyMethod, impute_frequency, median_class_frequency
from .panel import (
    PainLevel,
    PanelDataset,
    Subject,
    ValidationReport,
    WeekRecord,
    missingness_profile,
    validate_completed,
    validate_record,
)
from .sports import EmptyEvidence, SportProbabilityTable, impute_sports, sport_proportions

__version__ = "0.1.0"

"""optbias: a numerical laboratory for the implicit bias of mini-batch optimizers.

Builds mini-batch Adam and momentum SGD, their memory-free approximations with
second-order correction terms, exact and closed-form permutation expectations
of the induced noise statistics, and a batch-size regime advisor driven by the
gradient-noise scale.
"""

from .advisor import (
    NoiseScaleEstimate,
    Regime,
    RegimeAdvice,
    b_simple,
    b_simple_trace,
    batch_thresholds,
    lambda_ratio,
    recommend,
)
from .coefficients import (
    BetaPair,
    CoefficientSet,
    Direction,
    SeriesId,
    assemble_expected_correction,
    c_total,
    compose_constants_from_series,
    constants,
    monotone_direction,
    mu_nu,
    series_partial_and_limit,
    verify_smallness_lemma,
)
from .expansions import ExpansionId, OrderFitReport, expansion_value, remainder_order
from .memoryless import (
    AuxiliaryTerms,
    ClosenessReport,
    adam_correction_term,
    adam_main_term,
    closeness_scaling,
    run_memoryless,
    sgdm_main_correction,
)
from .optimizers import Algo, AdamState, HyperParams, Trajectory, adam_step, run_epoch, sgdm_step
from .permstats import (
    Factor,
    MomentResult,
    MomentSpec,
    bruteforce_expected_correction,
    closed_form_moment,
    exact_moment,
    mc_moment,
)
from .problems import (
    DegenerateGradientError,
    EmpiricalCovariance,
    FullBatch,
    Logistic2D,
    NoiseTensors,
    PartitionSpec,
    PerSampleProblem,
    RandomPSDQuadratic,
    ShiftedQuadratic,
    TeacherStudentMLP,
    empirical_covariance,
    full_loss_grad,
    minibatch_noise,
    problem_from_config,
    scale_noise,
)

__version__ = "0.1.0"

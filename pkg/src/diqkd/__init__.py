"""Device-independent QKD rates for two heralded photonic entanglement schemes.

Closed-form statistics (heralded states, displaced on-off measurements,
CHSH values, asymptotic and finite-size key rates) cross-validated
against truncated Fock-space numerics.
"""

from .bell import (
    ChshResult,
    OptimizerOptions,
    chsh,
    chsh_from_settings,
    chsh_qform,
    correlator,
    detection_threshold,
    optimize_chsh,
    visibility_threshold,
)
from .finite_key import (
    FiniteCurvePoint,
    FiniteKeyParams,
    MinTradeoff,
    finite_distance_sweep,
    finite_key_rate,
    tangent_min_tradeoff,
)
from .fock import (
    FockOperator,
    TruncationPolicy,
    TwoModeState,
    arrival_distribution_1ph,
    arrival_distribution_2ph,
    displacement_matrix,
    herald_single_click_1ph,
    herald_single_click_2ph,
    loss_channel,
    multiphoton_ratio_1ph,
    multiphoton_ratio_2ph,
    noclick_povm,
    numeric_marginal,
    numeric_probability,
    tmsv_coefficients,
    trace_distance,
)
from .keyrate import (
    NoisyPreprocessing,
    RateResult,
    binary_entropy,
    distance_sweep,
    ec_entropy,
    eve_entropy_term,
    optimize_rate,
    rate_chsh_np,
    result_vector,
)
from .measurement import (
    BehaviorTable,
    ConsistencyError,
    DisplacementSetting,
    MeasurementSettings,
    VisibilityModel,
    behavior_table,
    p1ph_joint,
    p1ph_marginal,
    p2ph_joint,
    p2ph_marginal_alice,
    p2ph_marginal_bob,
    povm_matrix_element,
)
from .sources import (
    ChannelModel,
    OnePhotonParams,
    TwoPhotonParams,
    herald_prob_1ph,
    herald_prob_2ph,
    loss_parameter,
    rho_1ph_closed,
    rho_2ph_closed,
)
from .validation import CHECK_NAMES, CheckResult, perturb_report, run_validation

__version__ = "0.1.0"

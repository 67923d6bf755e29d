"""Identification of serial cascade dynamic networks with sensor noise.

The package provides weighted null-space fitting (a three-step weighted
least-squares estimator) for the two-input / two-output serial cascade, a
prediction-error baseline on the same structured parametrization, the data
simulator, and a Monte Carlo benchmarking harness with a CLI.
"""

from .bench import (
    ExperimentConfig,
    ResultRow,
    default_model,
    emit_csv,
    emit_summary,
    run_monte_carlo,
    theta_mse,
)
from .errors import (
    ConditioningError,
    ConfigError,
    DimensionError,
    ExcitationError,
    IdentifiabilityError,
    InstabilityError,
    InsufficientDataError,
    NumericalError,
    ParameterError,
)
from .fir import FirCovariance, FirEstimate, build_normal_equations, estimate_fir, fir_covariance
from .lti import (
    OrderSpec,
    TransferFunction,
    filt,
    impulse_response,
    is_stable,
    poly_mul,
    toeplitz_lower,
)
from .netsim import (
    CascadeModel,
    DataRecord,
    InputSpec,
    ThetaVector,
    gen_inputs,
    generate_dataset,
    load_record_csv,
    save_record_csv,
    simulate_network,
    white_noise,
)
from .pem import PemResult, pem_cost, pem_minimize, predict_errors
from .wnsf import (
    EstimateReport,
    Variant,
    WnsfConfig,
    build_q_cascade,
    build_q_siso,
    build_t_cascade,
    residual_covariance,
    step2_ls,
    step3_wls,
    wnsf_identify,
    wnsf_siso,
)

__version__ = "0.1.0"

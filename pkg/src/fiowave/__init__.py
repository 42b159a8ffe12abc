"""fiowave: wave propagation in randomly perturbed elastic media.

Fast spectral sensor-point solvers, a finite-difference reference solver,
statistical hyperparameter estimation with bias-correcting calibration
curves, and Monte-Carlo hypothesis tests for damage detection.
"""

from .random_field import (
    RandomFieldSpec,
    GridSpec,
    FieldRealization,
    FieldSampler,
    CovarianceFactorizationError,
    exp_autocov,
    sample_field,
    field_at,
    derive_seed,
)
from .fio import (
    GPA,
    MaterialParams,
    Excitation,
    QuadratureGrid,
    SensorArray,
    SignalRecord,
    StochasticMedium,
    wave_speeds,
    speeds_from_constants,
    solve_deterministic,
    solve_stochastic,
    dft_spectrum,
    default_sensors,
)

__version__ = "0.1.0"

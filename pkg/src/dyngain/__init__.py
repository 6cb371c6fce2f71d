"""Dynamic-gain disturbance observer for Euler-Lagrange plants."""

from dyngain.bounds import (
    BoundCertificate,
    SupNorms,
    check_trajectory_bound,
    d_dot_m_bound,
    predefined_bound,
    sigma_tilde_from_sigma,
)
from dyngain.errors import (
    ConfigError,
    DynGainError,
    NumericError,
    RejectedInput,
    SimulationAborted,
    ValidationError,
)
from dyngain.gain_schedule import (
    ExpGain,
    ExponentialKf,
    LinearGain,
    LinearKf,
    LogisticKf,
    alpha_eval,
    alpha_rate,
    kf_validate,
    min_admissible_c,
    mu_eval,
    mu_rate,
    verify_gain_condition,
)
from dyngain.observer import (
    error_rate_oracle,
    observer_init,
    observer_output,
    xi_rate,
)
from dyngain.plants import (
    FloatingTrunk,
    GeneralizedState,
    TwoLinkManipulator,
    certify_property1,
    eval_matrices,
    plant_accel,
    verify_property2,
)
from dyngain.sim import (
    Scenario,
    TrajectoryLog,
    measure_sup_norms,
    rk4_step,
    simulate,
    simulate_baseline,
)

__version__ = "0.1.0"

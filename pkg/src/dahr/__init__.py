"""Communication-efficient distributed adaptive Huber regression."""
from .estimators import (
    centralized_ahr,
    dc_ahr,
    dc_ols,
    distributed_ahr,
    distributed_ols,
    self_tuned_ahr,
    tune_kappa,
    tune_tau_global,
)
from .highdim import LambdaSchedule, dc_l1_ahr, dist_reg_ahr, l1_ahr_fit, lasso_fit
from .inference import conf_intervals, distributed_variance
from .model_core import (
    DegenerateInputError,
    InvalidArgumentError,
    NumericFailure,
    RobustConfig,
    Shard,
    SingularDesignError,
    huber_loss,
    huber_psi,
)
from .runtime import CommLedger, gather_gradients
from .synth import GenConfig, generate

__version__ = "0.1.0"

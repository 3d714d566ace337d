"""Perfect (coupling-from-the-past) posterior sampling for Bayesian normal mixtures."""

from .cftp import (
    CoalescenceRecord,
    PerfectSample,
    forward_gibbs,
    run_cftp_dp,
    run_cftp_known,
    run_cftp_two_component,
)
from .dp import DPMixtureSpec, DPState
from .errors import (
    ConfigError,
    InstabilityError,
    InvalidArgumentError,
    InvariantViolationError,
    NoCoalescenceError,
    NumericalDegeneracyError,
    PerfmixError,
    SamplerStallError,
    UsageError,
)
from .estimators import PerfectDPMixture, PerfectFiniteMixture
from .finite import Dataset, FiniteMixtureSpec, FiniteMixtureState
from .harness import (
    SampleSet,
    compare_distributions,
    gibbs_baseline,
    oracle_exact_posterior,
    pilot_bounds,
)
from .io import RunConfig, read_dataset
from .ledger import RandomLedger

__version__ = "0.1.0"

__all__ = [
    "CoalescenceRecord", "ConfigError", "DPMixtureSpec", "DPState", "Dataset", "FiniteMixtureSpec",
    "FiniteMixtureState", "InstabilityError", "InvalidArgumentError", "InvariantViolationError",
    "NoCoalescenceError", "NumericalDegeneracyError", "PerfectDPMixture", "PerfectFiniteMixture",
    "PerfectSample", "PerfmixError", "RandomLedger", "RunConfig", "SampleSet", "SamplerStallError",
    "UsageError", "compare_distributions", "forward_gibbs", "gibbs_baseline", "oracle_exact_posterior",
    "pilot_bounds", "read_dataset", "run_cftp_dp", "run_cftp_known", "run_cftp_two_component",
]

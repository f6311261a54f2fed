"""Photon statistics and entanglement of dissipatively coupled nondegenerate OPOs.

Submodules
----------
model        rates, threshold, pump ramp and noise conventions
analytic     closed-form stationary moments and linearized fluctuations
sde          phase-space stochastic engines (positive-P and truncated Wigner)
fock         Fock-basis density-matrix solvers
observables  moment estimators, g2, Mandel Q and the HZ1 witness
runner       run plans, steady records and sweeps
config, cli  configuration files and the ``nopo`` command
"""

__version__ = "0.1.0"

from .model import NetworkConfig, NopoParams, pump_schedule, threshold_epsilon  # noqa: E402
from .runner import ObservableRecord, RunPlan, run, sweep  # noqa: E402

__all__ = [
    "__version__",
    "NopoParams",
    "NetworkConfig",
    "pump_schedule",
    "threshold_epsilon",
    "RunPlan",
    "ObservableRecord",
    "run",
    "sweep",
]

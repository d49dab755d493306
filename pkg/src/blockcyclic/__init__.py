"""SGD on block-cyclic data streams: consensus, per-component and pluralistic training."""

__version__ = "0.1.0"

from .core import ScheduleConfig, Sample, StochasticProblem, make_rng
from .engine import ChainState, SGDConfig, ogd_regret_bound, project, step
from .errors import (BlockCyclicError, ChainDivergedError, ConfigError, ContractViolation,
                     IngestionError, SolverError)
from .strategies import (run_consensus, run_per_component, run_pluralistic_averaging,
                         run_pluralistic_hedging, run_sgd_average)

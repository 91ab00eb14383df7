"""Selection Kalman model: Kalman-type inversion with a selection-Gaussian initial state."""

from .gaussian import (
    GaussianDist,
    IntervalUnion,
    NumericalError,
    SelectionSet,
    condition,
    log_density,
    marginalize,
    rect_probability,
    sample,
)
from .recursion import (
    ProcessModel,
    posterior_r0_selection,
    posterior_r0_traditional,
    run_selection,
    run_traditional,
)
from .selection import ChainConfig, gibbs_truncated, marginal_mixture_density, sample_selection_gaussian

__version__ = "0.1.0"

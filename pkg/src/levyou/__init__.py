"""Degenerate Levy-driven Ornstein-Uhlenbeck semigroups at desk scale.

Subpackages map onto the pipeline: :mod:`levyou.kalman` analyzes the
drift/embedding pair, :mod:`levyou.geometry` carries the induced
anisotropic distance and Holder probes, :mod:`levyou.levy` the driving
jump measures and their symbols, :mod:`levyou.semigroup` the transition
semigroup by characteristic-function inversion, :mod:`levyou.solver` the
elliptic/parabolic representations, :mod:`levyou.harness` the empirical
verification of the quantitative regularity claims, and :mod:`levyou.cli`
the config-driven entry point.
"""

from . import errors
from .kalman import (
    KalmanDecomposition,
    SystemPair,
    compute_decomposition,
    reduced_resolvent,
    resolvent_ode,
    scaling_matrix,
)
from .geometry import (
    Anisotropy,
    HolderEstimate,
    distance,
    estimate_holder,
    parabolic_distance,
    third_difference,
)
from .levy import (
    LevyModel,
    SphericalMeasure,
    levy_symbol,
    levy_symbol_batch,
    nondegeneracy_constant,
    radial_density,
    sample_increment,
    sample_increments,
)

__version__ = "0.1.0"

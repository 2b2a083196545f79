"""Off-critical loop-erased random walks: lattice Monte Carlo, exact half-plane
correlators, Loewner evolution and first-order perturbation theory."""

import warnings

# numba probes an old TBB at import of its parallel backend; the warning is harmless
warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

__version__ = "0.1.0"

from .geometry import BoundaryInterval, DomainError, excursion_kernel, green_h, \
    harmonic_measure_h, partition_chordal, partition_dipolar  # noqa: E402
from .nu import NuField, NuSpecError, QuadratureError  # noqa: E402

"""Frequency-split observability and reconstruction for NLS on flat tori."""

__version__ = "0.1.0"

from .spectral import (  # noqa: F401
    FrequencySplit,
    ObservationWindow,
    ShapeError,
    SobolevScale,
    SpectralField,
    TorusGeometry,
)
from .dynamics import (  # noqa: F401
    BlowUpError,
    DampingSpec,
    LinearizedFlow,
    NonlinearitySpec,
    PotentialPath,
    evolve_damped,
    evolve_galerkin,
    evolve_nls,
)
from .observability import (  # noqa: F401
    ObservabilityError,
    ObservedCauchySolver,
    ObservedTrace,
    assemble_observation,
    gramian,
)
from .reconstruction import (  # noqa: F401
    ContractionError,
    ReconstructionConfig,
    Reconstructor,
    verify_reconstruction,
)
from .gcc import RaySampling, gcc_ray_check  # noqa: F401

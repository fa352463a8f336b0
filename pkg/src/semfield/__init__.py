"""Joint appearance/geometry/semantics radiance fields on the CPU.

Train an implicit field from posed images with sparse, noisy or partial
semantic labels, then render denoised / super-resolved / propagated labels,
depth, entropy maps and semantic meshes.
"""

__version__ = "0.1.0"

from semfield.errors import ConfigError, DataError, DomainError, TrainingDiverged

__all__ = [
    "ConfigError",
    "DataError",
    "DomainError",
    "TrainingDiverged",
    "__version__",
]

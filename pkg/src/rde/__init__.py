"""Adversarial input detection via robust density estimation.

The package fits class-conditional Gaussian densities on classifier
feature vectors -- optionally after a kernel-PCA projection, optionally
with a minimum-covariance-determinant robust covariance -- and flags
inputs whose log-likelihood under their predicted class falls below a
threshold chosen for a target false-positive rate.
"""

from .detector import DetectorConfig, RdeModel, VARIANTS, detect
from .errors import NumericError, RdeError, ValidationError
from .gaussian import GaussianParams, SpectrumReport
from .kpca import KernelConfig, KpcaModel
from .mcd import McdConfig, McdFit
from .metrics import DetectionReport, RocCurve

__version__ = "0.1.0"

__all__ = [
    "DetectionReport",
    "DetectorConfig",
    "GaussianParams",
    "KernelConfig",
    "KpcaModel",
    "McdConfig",
    "McdFit",
    "NumericError",
    "RdeError",
    "RdeModel",
    "RocCurve",
    "SpectrumReport",
    "VARIANTS",
    "ValidationError",
    "detect",
    "__version__",
]

"""Ear-identification evaluation toolkit.

Hand-crafted texture descriptors (uniform LBP, HOG, PHOG, intuitionistic
fuzzy LBP, biorthogonal-wavelet block energies), all-vs-all similarity
scoring with score-level fusion, dataset/protocol handling, and CMC-based
identification analysis.
"""

from .descriptors import FeatureVector
from .errors import DataError, FormatError
from .imagecore import GrayImage
from .matching import SimilarityMatrix
from .protocol import DatasetManifest, ImageRecord

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DatasetManifest",
    "FeatureVector",
    "FormatError",
    "GrayImage",
    "ImageRecord",
    "SimilarityMatrix",
    "__version__",
]

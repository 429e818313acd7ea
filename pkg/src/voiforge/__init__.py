"""voiforge: how tumour VOI delineation variability propagates through radiomics.

Library + CLI covering VOI perturbation operators, 102-feature radiomics
extraction, ICC robustness analysis, two-stage feature selection, and
cross-validated ensemble evaluation.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, VoiforgeError

__all__ = ["ConfigError", "DataError", "VoiforgeError", "__version__"]

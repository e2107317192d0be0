"""chrononet: unsupervised circadian phase prediction from omics snapshots.

The package orders unlabeled samples around the clock with a small
autoencoder whose two-unit code is read as an angle, fits per-protein cosine
models jointly with the sample phases, screens outliers by signed
reconstruction residuals, and calls rhythmic proteins through a cosinor
F-test with BH correction.
"""

__version__ = "0.1.0"

from .dataio import (
    DataError,
    ExpressionMatrix,
    MissingnessPolicy,
    NormalizedMatrix,
    apply_missingness,
    load_matrix,
    select_features,
    write_matrix,
    zscore,
)

__all__ = [
    "DataError",
    "ExpressionMatrix",
    "MissingnessPolicy",
    "NormalizedMatrix",
    "apply_missingness",
    "load_matrix",
    "select_features",
    "write_matrix",
    "zscore",
    "__version__",
]

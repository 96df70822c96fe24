"""Bivariate spatial prediction with basis-embedded neural networks, cokriging baselines,
bootstrap-ensemble prediction intervals and a random-field simulator."""

__version__ = "0.1.0"

from .basis import BasisConfig, embed, wendland
from .covariance import CovarianceModel, LMCParams, MaternParams, assemble, cholesky, cross_cov
from .deepkriging import Architecture, DeepKrigingModel, fit, predict
from .errors import (ArgumentError, ConfigurationError, DeepKrigingError, FitError,
                     IncompatibleVersionError, ModelFormatError, NumericError, SingularityError,
                     TrainingDivergenceError)
from .spatial import BivariateObservations, SiteSet, read_csv, write_csv

__all__ = [
    "ArgumentError", "Architecture", "BasisConfig", "BivariateObservations", "ConfigurationError",
    "CovarianceModel", "DeepKrigingError", "DeepKrigingModel", "FitError", "IncompatibleVersionError",
    "LMCParams", "MaternParams", "ModelFormatError", "NumericError", "SingularityError", "SiteSet",
    "TrainingDivergenceError", "assemble", "cholesky", "cross_cov", "embed", "fit", "predict",
    "read_csv", "wendland", "write_csv",
]

"""Model zoo: logistic regression, AR(1) with Student-t errors, and
discrete-time Weibull survival with random effects, plus synthetic
generators and the shared model contract."""

from ..errors import InvalidConfigError
from .ar import AR1Model, t_log_density
from .base import Model
from .data import ARData, LogisticData, SurvivalData, file_sha256, load_dataset
from .logistic import LogisticModel
from .normal import NormalLocationModel
from .synthetic import (
    generate_ar1,
    generate_dataset,
    generate_logistic,
    generate_normal,
    generate_weibull_panels,
)
from .weibull import WeibullSurvivalModel

__all__ = [
    "Model",
    "AR1Model",
    "LogisticModel",
    "NormalLocationModel",
    "WeibullSurvivalModel",
    "ARData",
    "LogisticData",
    "SurvivalData",
    "t_log_density",
    "load_dataset",
    "file_sha256",
    "generate_dataset",
    "generate_logistic",
    "generate_ar1",
    "generate_weibull_panels",
    "generate_normal",
    "build_model",
]


def build_model(kind, data, options=None):
    """Construct a model of the given kind from its dataset container."""
    options = dict(options or {})
    kind = kind.lower()
    if kind == "logistic":
        return LogisticModel(
            data.y, data.x,
            prior_variance=options.get("prior_variance", 10.0),
            subsample_ones=options.get("subsample_ones", False),
        )
    if kind == "ar1":
        return AR1Model(
            data.y,
            parameterization=options.get("parameterization", "m1"),
            nu=options.get("nu", 5.0),
        )
    if kind == "weibull":
        return WeibullSurvivalModel(
            data,
            step_h=options.get("step_h", 0.01),
            coarse_h=options.get("coarse_h", 0.5),
            halfwidth=options.get("halfwidth", 6.0),
            prior_variance=options.get("prior_variance", 10.0),
        )
    if kind == "normal":
        return NormalLocationModel(
            data.y,
            sigma2=options.get("sigma2", 1.0),
            prior_mean=options.get("prior_mean", 0.0),
            prior_variance=options.get("prior_variance", 10.0),
        )
    raise InvalidConfigError(f"unknown model kind {kind!r}")

"""Forecasting model zoo."""

from fxcast.errors import ConfigError
from fxcast.models.base import (
    ARCHITECTURES,
    FULL_HPARAMS,
    ForecastModel,
    ModelConfig,
    toy_hparams,
)
from fxcast.models.fedformer import FEDformerLite
from fxcast.models.mlp import MLPForecaster
from fxcast.models.recurrent import LSTMForecaster
from fxcast.models.tcn import TCNForecaster
from fxcast.models.transformers import (
    ITransformerForecaster,
    PatchTSTForecaster,
    TransformerForecaster,
)
from fxcast.models.tsmixer import TSMixerForecaster

REGISTRY = {
    "mlp": MLPForecaster,
    "lstm": LSTMForecaster,
    "tcn": TCNForecaster,
    "tsmixer": TSMixerForecaster,
    "transformer": TransformerForecaster,
    "patchtst": PatchTSTForecaster,
    "itransformer": ITransformerForecaster,
    "fedformer_lite": FEDformerLite,
}


def build(config: ModelConfig) -> ForecastModel:
    """Instantiate and initialize the architecture named by ``config.arch``."""
    try:
        cls = REGISTRY[config.arch]
    except KeyError:
        raise ConfigError(f"unknown architecture {config.arch!r}") from None
    return cls(config)


__all__ = [
    "ARCHITECTURES", "FULL_HPARAMS", "REGISTRY", "ForecastModel", "ModelConfig", "build",
    "toy_hparams",
]

"""Edge-conditional node-update graph neural network for multivariate
time-series anomaly detection, on a small numpy autodiff core."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CheckpointError,
    ContractError,
    DataError,
    DimensionError,
    EcnuError,
    ParseError,
    TrainingError,
)
from .model import ECNUGNN, ModelConfig  # noqa: E402
from .train import TrainConfig, fit  # noqa: E402

__all__ = [
    "CheckpointError",
    "ContractError",
    "DataError",
    "DimensionError",
    "ECNUGNN",
    "EcnuError",
    "ModelConfig",
    "ParseError",
    "TrainConfig",
    "TrainingError",
    "fit",
    "__version__",
]

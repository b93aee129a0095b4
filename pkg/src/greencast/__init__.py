"""ConvLSTM vegetation greenness forecasting on synthetic minicubes."""

__version__ = "0.1.0"

from .minicube import ForecastConfig, Minicube, load_minicube, save_minicube
from .model import ConvLstmParams, load_checkpoint, predict, save_checkpoint
from .synthgen import GeneratorConfig, generate_dataset, generate_minicube
from .training import train

__all__ = [
    "ForecastConfig", "Minicube", "load_minicube", "save_minicube",
    "ConvLstmParams", "load_checkpoint", "predict", "save_checkpoint",
    "GeneratorConfig", "generate_dataset", "generate_minicube", "train",
    "__version__",
]

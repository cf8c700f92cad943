"""Self-supervised audio-visual localization: training, inference, evaluation."""

from .config import Config, load_config
from .errors import (
    AVGroundError,
    ConfigError,
    DegenerateParameterError,
    InputError,
    ProviderError,
    ProviderTimeout,
    TrainingAbort,
)
from .model import AudioVisualGrounder

__version__ = "0.1.0"

__all__ = [
    "AudioVisualGrounder",
    "AVGroundError",
    "Config",
    "ConfigError",
    "DegenerateParameterError",
    "InputError",
    "ProviderError",
    "ProviderTimeout",
    "TrainingAbort",
    "load_config",
    "__version__",
]

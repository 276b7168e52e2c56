"""Hardware-aware joint tuning of quantized-model fine-tuning and deployment kernels."""

from hwtune.space import Configuration, ParamSpec, SearchSpace, load_preset, load_space

__version__ = "0.1.0"

__all__ = ["Configuration", "ParamSpec", "SearchSpace", "load_preset", "load_space", "__version__"]

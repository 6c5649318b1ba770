"""Two-stream contrast-based salient object detection with an attentional
fusion module and an optional contour-guided dense-CRF refinement step."""

from .config import PipelineConfig, load_config, parse_config
from .kernels import BACKEND
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = ["Tensor", "PipelineConfig", "load_config", "parse_config",
           "BACKEND", "__version__"]
